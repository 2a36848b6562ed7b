#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace hetmed::detail {

using Eigen::Index;

// Change of variables phi = N c + D^+ w for a penalty matrix D. When D has
// full row rank, D phi = w, so the generalized lasso becomes a lasso in w
// with the null-space coordinates c left unpenalized.
struct PenaltyBasis {
  Index dim = 0;
  Index null_dim = 0;
  bool full_row_rank = false;
  Eigen::MatrixXd null_basis;
  // [N | D^+], square when full_row_rank.
  Eigen::SparseMatrix<double> transform;
};

PenaltyBasis make_penalty_basis(const Eigen::MatrixXd& D);

}  // namespace hetmed::detail
