#pragma once

#include "hetmed/inference.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace hetmed {

/// Data-generating process for the simulation study. p counts covariates
/// without the intercept, so Z has p + 1 columns.
struct DgpConfig {
  Index n = 200;
  Index p = 100;
  Index n_continuous = 50;
  Index n_binary = 50;
  double sparsity = 0.95;
  double noise_sd = 0.5;
  double beta0 = 1.0;
  double beta1 = 0.5;
  /// Nonzero coefficients are uniform on [-hi, -lo] U [lo, hi].
  double coef_lo = 0.5;
  double coef_hi = 1.5;
  std::uint64_t seed = 1;

  void check() const;
  /// round((1 - sparsity) p)
  Index nonzero_count() const;
};

struct SimulatedData {
  Dataset data;
  ThetaParams theta;
  /// True effects per unit, at t = +1 and t = -1.
  VectorXd caie_pos;
  VectorXd caie_neg;
  VectorXd cade_pos;
  VectorXd cade_neg;
};

/// Draws coefficients: each of alpha0, alpha1, gamma0, gamma1 gets a random
/// intercept and exactly nonzero_count() random nonzero covariate entries.
ThetaParams draw_theta(const DgpConfig& cfg, std::mt19937_64& rng);

/// Covariate rows drawn from the study law (intercept, normals, Bernoullis).
MatrixXd draw_covariates(const DgpConfig& cfg, Index rows, std::mt19937_64& rng);

/// Simulates (Z, T, M, Y) from the structural equations for a given theta.
SimulatedData simulate_dataset(const DgpConfig& cfg, const ThetaParams& theta, std::mt19937_64& rng);

/// Fresh theta and dataset from cfg.seed.
SimulatedData generate(const DgpConfig& cfg);

enum class StudyMethod { ols, genlasso };
std::string to_string(StudyMethod m);

struct StudyConfig {
  std::vector<StudyMethod> methods{StudyMethod::ols, StudyMethod::genlasso};
  std::vector<Index> ns{200, 1000, 2000};
  int replications = 200;
  DgpConfig dgp;
  int B = 500;
  double level = 0.95;
  /// Sample sizes at which genlasso uses split inference. Elsewhere it
  /// reports Cp-tuned, ridge-refitted point estimates without intervals.
  std::vector<Index> split_ns{200, 1000, 2000};
  /// When positive, effects are evaluated at this many fixed profiles shared
  /// by all replications instead of at each replication's own units.
  Index test_profiles = 0;
  MediatorCovariance wald_mode = MediatorCovariance::structural;
  SolverOptions solver;

  void check() const;
};

/// Summary statistics of one effect over all (unit, replication) pairs.
struct EffectMetrics {
  double bias = 0.0;
  /// Standard error of the bias, from the spread of per-replication mean errors.
  double bias_se = 0.0;
  double mse = 0.0;
  double median_abs_error = 0.0;
  /// Bias and MSE scaled by each replication's standard deviation of true effects.
  double scaled_bias = 0.0;
  double scaled_mse = 0.0;
  /// Interval metrics; NaN when the cell produced no intervals.
  double ci_width = 0.0;
  double coverage = 0.0;
  Index pairs = 0;
  Index covered = 0;
};

struct SimCell {
  StudyMethod method = StudyMethod::ols;
  Index n = 0;
  bool infeasible = false;
  bool split = false;
  int replications = 0;
  int completed = 0;
  int failures = 0;
  EffectMetrics caie;
  EffectMetrics cade;
  /// Wall-clock seconds; kept out of serialized reports.
  double seconds = 0.0;
};

struct SimReport {
  StudyConfig config;
  std::vector<SimCell> cells;

  const SimCell* find(StudyMethod method, Index n) const;
};

/// Outputs of one replication, used by the study runner and by tests.
struct ReplicationResult {
  VectorXd caie_true;
  VectorXd cade_true;
  VectorXd caie_est;
  VectorXd cade_est;
  std::vector<Interval> ci_caie;
  std::vector<Interval> ci_cade;
  bool has_intervals = false;
};

ReplicationResult run_replication(const StudyConfig& cfg, StudyMethod method, Index n, int r,
                                  const MatrixXd* profiles = nullptr);

/// Fixed evaluation profiles for a study (empty when test_profiles = 0).
MatrixXd study_profiles(const StudyConfig& cfg);

/// OLS feasibility of the outcome model: n > 2 (p + 1) + 2.
bool ols_feasible(Index n, Index p);

SimReport run_study(const StudyConfig& cfg);

}  // namespace hetmed
