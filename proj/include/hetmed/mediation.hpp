#pragma once

#include "hetmed/core_model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace hetmed {

struct AsymptoticCovariance;

/// Conditional average indirect effect 2(b0 + b1 t) a1'z.
double caie(const ThetaParams& theta, const VectorXd& z, int t);
/// Conditional average direct effect 2 g1'z + 2 b1 (a0'z + a1'z t).
double cade(const ThetaParams& theta, const VectorXd& z, int t);
/// Conditional total effect 2 g1'z + 2 b0 a1'z + 2 b1 a0'z.
double tau(const ThetaParams& theta, const VectorXd& z);

/// Where the standard errors and intervals of an EffectTable came from.
enum class IntervalSource { none, wald, split };

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return lo <= x && x <= hi; }
  bool excludes_zero() const { return lo > 0.0 || hi < 0.0; }
};

struct EffectRow {
  Index row_id = 0;
  int arm = 1;
  double caie = 0.0;
  double cade = 0.0;
  /// Effects at the opposite arm, so both decompositions of tau can be checked.
  double caie_other = 0.0;
  double cade_other = 0.0;
  double tau = 0.0;
  std::optional<double> se_caie;
  std::optional<double> se_cade;
  std::optional<Interval> ci_caie;
  std::optional<Interval> ci_cade;
  bool significant_caie = false;
};

struct EffectTable {
  int t = 1;
  double level = 0.95;
  IntervalSource source = IntervalSource::none;
  /// Arm the rows were restricted to, if any.
  std::optional<int> arm_filter;
  std::vector<EffectRow> rows;
};

struct EffectTableOptions {
  int t = 1;
  double level = 0.95;
  std::optional<int> arm;
  /// Wald intervals from this covariance when set.
  const AsymptoticCovariance* covariance = nullptr;
};

/// One row per unit of d (or per unit of the chosen arm), evaluated at the
/// unit's own covariates.
EffectTable effect_table(const ThetaParams& theta, const Dataset& d, const EffectTableOptions& opts = {});

/// Mean effects over the rows of Z, computed from the model at the mean
/// profile. A model-based summary, not a nonparametric average effect.
struct PopulationEffects {
  double caie = 0.0;
  double cade = 0.0;
  double tau = 0.0;
  Index n = 0;
};
PopulationEffects population_average(const ThetaParams& theta, const MatrixXd& Z, int t);

std::string to_string(IntervalSource source);

}  // namespace hetmed
