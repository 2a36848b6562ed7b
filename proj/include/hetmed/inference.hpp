#pragma once

#include "hetmed/mediation.hpp"
#include "hetmed/solvers.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace hetmed {

/// Covariance used for the mediator-equation block of vec(Theta).
enum class MediatorCovariance {
  /// [Z,U] block of the joint Q_X^{-1}.
  joint,
  /// (Z,U)'(Z,U)/n inverted on its own, padded with zeros at (M,V).
  structural,
};

/// Plug-in pieces of the asymptotic covariance Sigma (x) Q_X^{-1}.
struct AsymptoticCovariance {
  MatrixXd qx_inv;
  /// Matrix multiplying sigma_m2 in the mediator block; equals qx_inv in joint mode.
  MatrixXd mediator_inv;
  double sigma_m2 = 0.0;
  double sigma_y2 = 0.0;
  Index n = 0;
  Index p = 0;
  MediatorCovariance mode = MediatorCovariance::structural;
};

AsymptoticCovariance estimate_covariance(const Dataset& d, const ThetaParams& theta,
                                         MediatorCovariance mode = MediatorCovariance::structural);

/// Covariance of sqrt(n) vec(Theta_hat): block diagonal with the mediator
/// block first, each block of size 2p+2.
MatrixXd kron_covariance(const AsymptoticCovariance& cov);

/// Gradients of caie and cade with respect to vec(Theta).
VectorXd caie_gradient(const ThetaParams& theta, const VectorXd& z, int t);
VectorXd cade_gradient(const ThetaParams& theta, const VectorXd& z, int t);

struct WaldResult {
  double caie = 0.0;
  double se_caie = 0.0;
  Interval ci_caie;
  double cade = 0.0;
  double se_cade = 0.0;
  Interval ci_cade;
};

WaldResult wald_ci(const ThetaParams& theta, const AsymptoticCovariance& cov, const VectorXd& z, int t,
                   double level = 0.95);

/// Two-sided standard normal critical value for the given level.
double normal_critical_value(double level);

/// Type-7 sample quantile; sorts a copy.
double sample_quantile(std::vector<double> values, double prob);

/// Stream seed for split b (or replication r) derived from a base seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// A selected-then-refitted model: theta in the full covariate layout plus
/// the selected covariate flags of each equation.
struct SelectionFit {
  ThetaParams theta;
  std::vector<bool> selected_mediator;
  std::vector<bool> selected_outcome;
  double lambda_mediator = 0.0;
  double lambda_outcome = 0.0;
};

/// Cp-tuned generalized lasso on `select`, then a ridge refit of the selected
/// columns on `refit`.
SelectionFit select_and_refit(const Dataset& select, const Dataset& refit, const SolverOptions& opts = {});

struct SplitOptions {
  int B = 500;
  std::uint64_t seed = 0;
  double level = 0.95;
  int t = 1;
  SolverOptions solver;
  /// Profiles to evaluate; unset means the rows of the dataset.
  std::optional<MatrixXd> eval_Z;
  int max_retries = 100;
};

struct SplitInference {
  int B = 0;
  std::uint64_t seed = 0;
  double level = 0.95;
  int t = 1;
  /// B x n_eval per-split estimates at t and at -t.
  MatrixXd caie;
  MatrixXd cade;
  MatrixXd caie_other;
  MatrixXd cade_other;
  /// Per-unit medians and quantile intervals across splits.
  VectorXd caie_hat;
  VectorXd cade_hat;
  VectorXd tau_hat;
  std::vector<Interval> ci_caie;
  std::vector<Interval> ci_cade;
  /// Fraction of splits selecting each covariate (intercept included).
  VectorXd selection_frequency;
  VectorXd selection_frequency_mediator;
  VectorXd selection_frequency_outcome;
  std::vector<std::uint64_t> split_seeds;
};

SplitInference split_inference(const Dataset& d, int B, std::uint64_t seed, const SolverOptions& opts = {},
                               double level = 0.95);
SplitInference split_inference(const Dataset& d, const SplitOptions& opts);
/// Uses the given per-split seeds verbatim (B = seeds.size()).
SplitInference split_inference_with_seeds(const Dataset& d, std::span<const std::uint64_t> seeds,
                                          const SplitOptions& opts);

/// Stratified half split used by split inference: the first half gets
/// ceil(n_a / 2) units of each arm.
std::pair<std::vector<Index>, std::vector<Index>> stratified_halves(const Dataset& d, std::uint64_t seed);

/// Effect table backed by split-inference aggregates. Requires the split run
/// to have been evaluated at the rows of d.
EffectTable effect_table(const SplitInference& split, const Dataset& d, std::optional<int> arm = std::nullopt);

}  // namespace hetmed
