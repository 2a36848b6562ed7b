#pragma once

#include "hetmed/core_model.hpp"

#include <span>
#include <vector>

namespace hetmed {

enum class ModelKind { mediator, outcome };

/// Per-arm stacked regression R~ = S~ phi + e.
///
/// Intervention rows come first, each arm keeps the dataset's row order, and
/// S~ is block diagonal so phi = (phi_case, phi_ctrl). For the outcome model
/// the mediator is the last column of S.
struct StackedDesign {
  VectorXd R_tilde;
  MatrixXd S_tilde;
  MatrixXd D;
  Index q = 0;
  Index n_treated = 0;
  /// arm_index[r] is the dataset row placed at stacked row r.
  std::vector<Index> arm_index;
  ModelKind which = ModelKind::mediator;
  /// Columns of Z that make up S (the mediator column is implicit for the outcome model).
  std::vector<Index> z_columns;

  Index n() const { return R_tilde.size(); }
  Index n_control() const { return n() - n_treated; }

  auto case_block() const { return S_tilde.topLeftCorner(n_treated, q); }
  auto ctrl_block() const { return S_tilde.bottomRightCorner(n_control(), q); }

  /// S~ phi, exploiting the block structure.
  VectorXd fitted(const VectorXd& phi) const;
  /// Block-diagonal Gram matrix S~'S~.
  MatrixXd gram() const;
  /// S~'R~.
  VectorXd cross() const;
  /// Reorders a stacked vector back to dataset row order.
  VectorXd unstack(const VectorXd& stacked) const;
};

/// Main-effect and treatment-interaction coefficients of one equation.
struct PhiPair {
  VectorXd phi0;
  VectorXd phi1;
};

StackedDesign stack_model(const Dataset& d, ModelKind which);
/// Stacks only the given Z columns; column 0 (intercept) must be among them.
StackedDesign stack_model(const Dataset& d, ModelKind which, std::span<const Index> z_columns);

/// D = [[0, I, 0, I], [0, I, 0, -I]] over (phi_case, phi_ctrl); both intercepts unpenalized.
MatrixXd build_penalty(Index q);

PhiPair recover_phi(const VectorXd& phi_case, const VectorXd& phi_ctrl);
/// Splits a stacked coefficient vector of length 2q and recovers (phi0, phi1).
PhiPair recover_phi(const VectorXd& stacked);

/// Expands a pair fitted on a column subset back to the full covariate layout;
/// unselected covariates get zero coefficients.
PhiPair expand_phi(const PhiPair& reduced, std::span<const Index> z_columns, Index p, ModelKind which);

ThetaParams theta_from_fits(const PhiPair& phi_mediator, const PhiPair& phi_outcome);

}  // namespace hetmed
