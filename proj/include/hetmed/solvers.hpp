#pragma once

#include "hetmed/stacker.hpp"

#include <optional>
#include <utility>
#include <vector>

namespace hetmed {

enum class FitMethod { ols, genlasso, ridge };

enum class GenlassoAlgorithm {
  /// Coordinate descent when D has full row rank, ADMM otherwise.
  automatic,
  coordinate_descent,
  admm,
};

struct SolverOptions {
  double kkt_tol = 1e-6;
  double zero_tol = 1e-8;
  int max_iter = 50000;
  int grid_size = 50;
  /// Smallest grid value as a fraction of lambda_max.
  double grid_ratio = 1e-4;
  /// Ridge penalty for refits; unset means 1e-4 * mean(diag(S~'S~)).
  std::optional<double> ridge_eps;
  GenlassoAlgorithm algorithm = GenlassoAlgorithm::automatic;
  /// ADMM stopping tolerances.
  double abs_tol = 1e-8;
  double rel_tol = 1e-6;
};

/// Result of one fit of the stacked model.
///
/// kkt_residual is ||S~'(S~ phi - R~)||_inf for OLS and ridge. For the
/// generalized lasso it is the stationarity residual of the best dual
/// certificate v, divided by (1 + ||S~'R~||_inf), so it is directly
/// comparable with kkt_tol.
struct FitResult {
  VectorXd phi;
  FitMethod method = FitMethod::ols;
  double lambda = 0.0;
  double rss = 0.0;
  double df = 0.0;
  double kkt_residual = 0.0;
  bool converged = true;
  int iterations = 0;
};

struct TuningTrace {
  std::vector<double> lambdas;
  std::vector<double> cp_values;
  std::vector<double> df_values;
  std::vector<double> rss_values;
  /// Grid points whose fit did not converge; they are excluded from selection.
  std::vector<bool> failed;
  Index chosen_index = 0;
  double sigma2 = 0.0;
};

/// Least squares on the stacked design. Throws Underdetermined when n <= 2q
/// and SingularDesign when an arm's Gram matrix has condition number > 1e12.
FitResult fit_ols(const StackedDesign& sd);

/// Minimizes 0.5 ||R~ - S~ phi||^2 + lambda ||D phi||_1. Entries of D phi
/// below opts.zero_tol are exact zeros in the coordinate-descent route. A run
/// that hits max_iter is returned with converged = false.
FitResult fit_genlasso(const StackedDesign& sd, double lambda, const SolverOptions& opts = {});

/// Smallest lambda at which D phi_hat = 0.
double lambda_max(const StackedDesign& sd);

/// Mallows' Cp over a log grid from lambda_max to grid_ratio * lambda_max.
std::pair<FitResult, TuningTrace> tune_cp(const StackedDesign& sd, int grid_size, double sigma2_hat,
                                          const SolverOptions& opts = {});

/// Residual variance anchor for Cp: the OLS fit when n > 2q, otherwise the
/// smallest-lambda generalized-lasso fit with denominator max(n - df, 1).
double estimate_sigma2(const StackedDesign& sd, const SolverOptions& opts = {});

/// tune_cp with sigma2 from estimate_sigma2 and the grid size from opts.
std::pair<FitResult, TuningTrace> tune_cp(const StackedDesign& sd, const SolverOptions& opts = {});

/// Minimizes 0.5 ||R~ - S~ phi||^2 + 0.5 eps ||P phi||^2, P dropping both intercepts.
FitResult fit_ridge(const StackedDesign& sd, double ridge_eps);
double default_ridge_eps(const StackedDesign& sd);

double genlasso_objective(const StackedDesign& sd, const VectorXd& phi, double lambda);

/// Relative KKT residual of phi for the generalized-lasso problem at lambda.
double kkt_residual(const StackedDesign& sd, const VectorXd& phi, double lambda, double zero_tol = 1e-8);

/// D phi with entries of magnitude <= zero_tol set to zero.
VectorXd penalty_image(const StackedDesign& sd, const VectorXd& phi, double zero_tol = 1e-8);

/// Degrees of freedom of a generalized-lasso fit: rank of S~ restricted to
/// null(D_B), where B indexes the zero entries of D phi.
double genlasso_df(const StackedDesign& sd, const VectorXd& phi, double zero_tol = 1e-8);

}  // namespace hetmed
