#include "penalty_basis.hpp"

#include <Eigen/QR>
#include <Eigen/LU>

#include <cmath>
#include <vector>

namespace hetmed::detail {

namespace {

Eigen::MatrixXd orthonormal_kernel(const Eigen::MatrixXd& D) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(D);
  Eigen::MatrixXd ker = lu.kernel();
  if (ker.cols() == 1 && ker.norm() == 0.0) return Eigen::MatrixXd(D.cols(), 0);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(ker);
  return qr.householderQ() * Eigen::MatrixXd::Identity(ker.rows(), ker.cols());
}

// Fast path: rows of D mutually orthogonal and the null space spanned by the
// all-zero columns. This covers the sum/difference penalty used for the
// stacked model.
bool try_orthogonal_rows(const Eigen::MatrixXd& D, PenaltyBasis& basis) {
  const Index r = D.rows();
  const Index dim = D.cols();
  const Eigen::SparseMatrix<double> Dsp = D.sparseView();
  const Eigen::SparseMatrix<double> DDt = Dsp * Dsp.transpose();
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(r);
  for (Index k = 0; k < DDt.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(DDt, k); it; ++it) {
      if (it.row() == it.col()) {
        diag(it.row()) = it.value();
      } else if (it.value() != 0.0) {
        return false;
      }
    }
  }
  if ((diag.array() <= 0.0).any()) return false;

  std::vector<Index> zero_cols;
  for (Index j = 0; j < dim; ++j) {
    if (D.col(j).cwiseAbs().maxCoeff() == 0.0) zero_cols.push_back(j);
  }
  if (static_cast<Index>(zero_cols.size()) != dim - r) return false;

  basis.dim = dim;
  basis.null_dim = dim - r;
  basis.full_row_rank = true;
  basis.null_basis = Eigen::MatrixXd::Zero(dim, basis.null_dim);
  std::vector<Eigen::Triplet<double>> triplets;
  for (Index k = 0; k < basis.null_dim; ++k) {
    basis.null_basis(zero_cols[static_cast<std::size_t>(k)], k) = 1.0;
    triplets.emplace_back(zero_cols[static_cast<std::size_t>(k)], k, 1.0);
  }
  // D^+ = D' diag(DD')^{-1}
  for (Index k = 0; k < Dsp.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(Dsp, k); it; ++it) {
      triplets.emplace_back(it.col(), basis.null_dim + it.row(), it.value() / diag(it.row()));
    }
  }
  basis.transform.resize(dim, dim);
  basis.transform.setFromTriplets(triplets.begin(), triplets.end());
  return true;
}

}  // namespace

PenaltyBasis make_penalty_basis(const Eigen::MatrixXd& D) {
  PenaltyBasis basis;
  if (D.rows() > 0 && try_orthogonal_rows(D, basis)) return basis;

  const Index dim = D.cols();
  basis.dim = dim;
  basis.null_basis = orthonormal_kernel(D);
  basis.null_dim = basis.null_basis.cols();
  const Index rank = dim - basis.null_dim;
  basis.full_row_rank = rank == D.rows();
  if (!basis.full_row_rank) return basis;

  Eigen::MatrixXd dense(dim, dim);
  dense.leftCols(basis.null_dim) = basis.null_basis;
  const Eigen::MatrixXd DDt = D * D.transpose();
  dense.rightCols(D.rows()) = D.transpose() * DDt.llt().solve(Eigen::MatrixXd::Identity(D.rows(), D.rows()));
  basis.transform = dense.sparseView();
  return basis;
}

}  // namespace hetmed::detail
