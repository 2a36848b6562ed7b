#include "hetmed/solvers.hpp"

#include "hetmed/errors.hpp"
#include "penalty_basis.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>

namespace hetmed {

namespace {

using detail::PenaltyBasis;

double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double max_abs(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

// Numerical rank of a symmetric positive semidefinite matrix.
Index psd_rank(const MatrixXd& A) {
  if (A.rows() == 0) return 0;
  Eigen::LLT<MatrixXd> llt(A);
  if (llt.info() == Eigen::Success) {
    const VectorXd d = llt.matrixLLT().diagonal();
    if (d.minCoeff() > 1e-7 * d.maxCoeff()) return A.rows();
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  return qr.rank();
}

void require_valid_design(const StackedDesign& sd) {
  if (sd.S_tilde.rows() != sd.R_tilde.size() || sd.S_tilde.cols() != 2 * sd.q || sd.D.cols() != 2 * sd.q) {
    fail(ErrorKind::DimensionMismatch, "stacked design blocks have inconsistent shapes");
  }
}

struct PathState {
  VectorXd x;  // coordinate-descent variables (null coordinates, then D phi)
  VectorXd phi;
  VectorXd u;  // ADMM split variable, u = D phi at convergence
  VectorXd w;  // scaled ADMM dual
  bool initialized = false;
};

// Shared precomputation for fits of one stacked design at many lambdas.
//
// In the coordinate-descent route phi = N c + D^+ w. The unpenalized
// coordinates c are profiled out exactly (a Schur complement, which amounts to
// centring each arm's columns), leaving a plain lasso in w = D phi.
class GenlassoProblem {
 public:
  GenlassoProblem(const StackedDesign& sd, const SolverOptions& opts)
      : sd_(sd), opts_(opts), gram_(sd.gram()), cross_(sd.cross()), yy_(sd.R_tilde.squaredNorm()),
        basis_(detail::make_penalty_basis(sd.D)) {
    switch (opts.algorithm) {
      case GenlassoAlgorithm::automatic: use_cd_ = basis_.full_row_rank; break;
      case GenlassoAlgorithm::coordinate_descent:
        if (!basis_.full_row_rank) {
          fail(ErrorKind::InvalidDimension, "coordinate descent requires a penalty matrix of full row rank");
        }
        use_cd_ = true;
        break;
      case GenlassoAlgorithm::admm: use_cd_ = false; break;
    }
    k_ = basis_.null_dim;
    MatrixXd NtGN;
    if (use_cd_) {
      const MatrixXd gram_t = gram_ * basis_.transform;
      MatrixXd full = basis_.transform.transpose() * gram_t;
      full = 0.5 * (full + full.transpose()).eval();
      const VectorXd bfull = basis_.transform.transpose() * cross_;
      const Index m = full.cols() - k_;
      NtGN = full.topLeftCorner(k_, k_);
      G_ = full.bottomRightCorner(m, m);
      b_ = bfull.tail(m);
      H_ = MatrixXd::Zero(k_, m);
      h_ = VectorXd::Zero(k_);
      if (k_ > 0 && null_regular(NtGN)) {
        const Eigen::LLT<MatrixXd> llt(NtGN);
        H_ = llt.solve(full.topRightCorner(k_, m));
        h_ = llt.solve(bfull.head(k_));
        G_ -= full.bottomLeftCorner(m, k_) * H_;
        G_ = 0.5 * (G_ + G_.transpose()).eval();
        b_ -= full.bottomLeftCorner(m, k_) * h_;
      }
    } else {
      NtGN = basis_.null_basis.transpose() * gram_ * basis_.null_basis;
    }
    null_ok_ = k_ == 0 || null_regular(NtGN);
    if (!use_cd_ && k_ > 0 && null_ok_) {
      c_null_ = NtGN.llt().solve(basis_.null_basis.transpose() * cross_);
    }
  }

  const MatrixXd& gram() const { return gram_; }
  const VectorXd& cross() const { return cross_; }

  double lambda_max() {
    require_null();
    if (use_cd_) return max_abs(b_);
    if (sd_.D.rows() == 0) return 0.0;
    const VectorXd g = gram_ * (basis_.null_basis * c_null_) - cross_;
    const VectorXd v = sd_.D.transpose().completeOrthogonalDecomposition().solve(-g);
    return v.cwiseAbs().maxCoeff();
  }

  // Least-squares fit restricted to null(D); the solution for every lambda >= lambda_max.
  PathState initial_state() {
    require_null();
    PathState st;
    if (use_cd_) {
      st.x = VectorXd::Zero(G_.cols());
      st.phi = phi_from(st.x);
    } else {
      st.phi = k_ > 0 ? VectorXd(basis_.null_basis * c_null_) : VectorXd::Zero(2 * sd_.q);
      st.u = VectorXd::Zero(sd_.D.rows());
      st.w = VectorXd::Zero(sd_.D.rows());
    }
    st.initialized = true;
    return st;
  }

  FitResult solve(double lambda, PathState& st) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
      fail(ErrorKind::InvalidLambda, "lambda must be a finite nonnegative number");
    }
    if (!st.initialized) st = initial_state();
    FitResult fit;
    fit.method = FitMethod::genlasso;
    fit.lambda = lambda;
    bool converged = false;
    if (use_cd_) {
      // Loose sweeps usually find the support; the polish then solves exactly.
      Index rank = -1;
      bool polished = false;
      int sweeps = 0;
      if (st.x.any() && active_set(lambda, st.x, rank)) {
        polished = true;
        converged = true;
      }
      for (double rel : {1e-6, 1e-9, 1e-12, 1e-15}) {
        if (polished) break;
        const double tol2 = rel * rel * std::max(yy_, std::numeric_limits<double>::min());
        sweeps += coordinate_descent(lambda, st.x, tol2, opts_.max_iter - sweeps, converged);
        if (polish_cd(lambda, st.x, rank)) {
          polished = true;
          break;
        }
        if (sweeps >= opts_.max_iter) break;
      }
      converged = converged || polished;
      fit.iterations = sweeps;
      st.phi = phi_from(st.x);
      fit.df = static_cast<double>(k_ + (polished ? rank : cd_rank(st.x)));
    } else {
      fit.iterations = admm(lambda, st, converged);
      polish_admm(lambda, st);
      fit.df = genlasso_df(sd_, st.phi, opts_.zero_tol);
    }
    fit.phi = st.phi;
    fit.rss = (sd_.R_tilde - sd_.fitted(fit.phi)).squaredNorm();
    fit.kkt_residual = kkt(fit.phi, lambda);
    fit.converged = converged && fit.kkt_residual <= opts_.kkt_tol;
    return fit;
  }

  double kkt(const VectorXd& phi, double lambda) const {
    const double scale = 1.0 + cross_.cwiseAbs().maxCoeff();
    const VectorXd g = gram_ * phi - cross_;
    if (lambda == 0.0 || sd_.D.rows() == 0) return g.cwiseAbs().maxCoeff() / scale;
    const MatrixXd& D = sd_.D;
    const VectorXd Dphi = D * phi;
    const Index r = D.rows();
    VectorXd v(r);
    if (basis_.full_row_rank) {
      v = -(basis_.transform.rightCols(r).transpose() * g) / lambda;
    } else {
      std::vector<Index> zero_rows;
      VectorXd rhs = -g / lambda;
      for (Index j = 0; j < r; ++j) {
        if (std::abs(Dphi(j)) > opts_.zero_tol) {
          rhs -= sign_of(Dphi(j)) * D.row(j).transpose();
        } else {
          zero_rows.push_back(j);
        }
      }
      v.setZero();
      if (!zero_rows.empty()) {
        MatrixXd DBt(D.cols(), static_cast<Index>(zero_rows.size()));
        for (std::size_t i = 0; i < zero_rows.size(); ++i) DBt.col(static_cast<Index>(i)) = D.row(zero_rows[i]).transpose();
        const VectorXd vb = DBt.completeOrthogonalDecomposition().solve(rhs);
        for (std::size_t i = 0; i < zero_rows.size(); ++i) v(zero_rows[i]) = vb(static_cast<Index>(i));
      }
    }
    for (Index j = 0; j < r; ++j) {
      if (std::abs(Dphi(j)) > opts_.zero_tol) {
        v(j) = sign_of(Dphi(j));
      } else {
        v(j) = std::clamp(v(j), -1.0, 1.0);
      }
    }
    const VectorXd res = g + lambda * (D.transpose() * v);
    return res.cwiseAbs().maxCoeff() / scale;
  }

 private:
  static bool null_regular(const MatrixXd& NtGN) {
    if (NtGN.rows() == 0) return true;
    Eigen::LLT<MatrixXd> llt(NtGN);
    return llt.info() == Eigen::Success && psd_rank(NtGN) == NtGN.rows();
  }

  void require_null() const {
    if (!null_ok_) fail(ErrorKind::SingularDesign, "regression on the unpenalized directions is degenerate");
  }

  VectorXd phi_from(const VectorXd& w) const {
    VectorXd x(k_ + w.size());
    x.head(k_) = h_ - H_ * w;
    x.tail(w.size()) = w;
    return basis_.transform * x;
  }

  int coordinate_descent(double lambda, VectorXd& x, double tol2, int budget, bool& converged) const {
    const Index m = G_.cols();
    VectorXd grad = b_ - G_ * x;
    std::vector<char> active(static_cast<std::size_t>(m), 0);
    for (Index j = 0; j < m; ++j) active[static_cast<std::size_t>(j)] = x(j) != 0.0 ? 1 : 0;

    auto update = [&](Index j) -> double {
      const double gjj = G_(j, j);
      if (gjj <= 0.0) return 0.0;
      const double old = x(j);
      const double next = soft_threshold(grad(j) + gjj * old, lambda) / gjj;
      const double delta = next - old;
      if (delta == 0.0) return 0.0;
      x(j) = next;
      grad.noalias() -= delta * G_.col(j);
      return delta * delta * gjj;
    };

    converged = false;
    int sweeps = 0;
    while (sweeps < budget) {
      double worst = 0.0;
      for (Index j = 0; j < m; ++j) {
        worst = std::max(worst, update(j));
        if (x(j) != 0.0) active[static_cast<std::size_t>(j)] = 1;
      }
      ++sweeps;
      if (worst <= tol2) {
        converged = true;
        break;
      }
      while (sweeps < budget) {
        double inner = 0.0;
        for (Index j = 0; j < m; ++j) {
          if (active[static_cast<std::size_t>(j)]) inner = std::max(inner, update(j));
        }
        ++sweeps;
        if (inner <= tol2) break;
      }
    }
    return sweeps;
  }

  static std::vector<Index> support_of(const VectorXd& x) {
    std::vector<Index> support;
    for (Index j = 0; j < x.size(); ++j) {
      if (x(j) != 0.0) support.push_back(j);
    }
    return support;
  }

  MatrixXd gram_on(const std::vector<Index>& support) const {
    const auto s = static_cast<Index>(support.size());
    MatrixXd GA(s, s);
    for (Index a = 0; a < s; ++a) {
      for (Index c = 0; c < s; ++c) GA(a, c) = G_(support[static_cast<std::size_t>(a)], support[static_cast<std::size_t>(c)]);
    }
    return GA;
  }

  // Re-solves the stationarity equations on the current support with fixed
  // signs; accepted only if the result is a certified optimum. A singular
  // support system (more active columns than rows) is solved in the
  // least-squares sense and must be consistent.
  bool polish_cd(double lambda, VectorXd& x, Index& rank) const {
    const Index m = G_.cols();
    const std::vector<Index> support = support_of(x);
    const auto s = static_cast<Index>(support.size());
    VectorXd candidate = VectorXd::Zero(m);
    rank = 0;
    if (s > 0) {
      const MatrixXd GA = gram_on(support);
      VectorXd rhs(s);
      for (Index a = 0; a < s; ++a) {
        const Index ja = support[static_cast<std::size_t>(a)];
        rhs(a) = b_(ja) - lambda * sign_of(x(ja));
      }
      VectorXd y;
      Eigen::LLT<MatrixXd> llt(GA);
      const VectorXd d = llt.matrixLLT().diagonal();
      if (llt.info() == Eigen::Success && d.minCoeff() > 1e-7 * d.maxCoeff()) {
        y = llt.solve(rhs);
        rank = s;
      } else {
        Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(GA);
        cod.setThreshold(1e-10);
        y = cod.solve(rhs);
        rank = cod.rank();
        if ((GA * y - rhs).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + rhs.cwiseAbs().maxCoeff())) return false;
      }
      if (!y.allFinite()) return false;
      for (Index a = 0; a < s; ++a) {
        const Index ja = support[static_cast<std::size_t>(a)];
        if (lambda > 0.0 && y(a) * sign_of(x(ja)) <= 0.0) return false;
        candidate(ja) = y(a);
      }
    }
    const VectorXd grad = b_ - G_ * candidate;
    const double slack = lambda * (1.0 + 1e-9) + 1e-12 * (1.0 + max_abs(b_));
    for (Index j = 0; j < m; ++j) {
      if (candidate(j) == 0.0 && std::abs(grad(j)) > slack) return false;
    }
    x = candidate;
    return true;
  }

  // Solves G_AA y = rhs. Large supports go through the inverse of the whole
  // (positive definite) matrix and a small system on the complement.
  bool solve_on_support(const std::vector<Index>& support, const VectorXd& rhs, VectorXd& y) const {
    const Index m = G_.cols();
    const auto ns = static_cast<Index>(support.size());
    if (2 * ns > m && inverse_ready()) {
      std::vector<Index> rest;
      std::vector<char> in(static_cast<std::size_t>(m), 0);
      for (Index j : support) in[static_cast<std::size_t>(j)] = 1;
      for (Index j = 0; j < m; ++j) {
        if (!in[static_cast<std::size_t>(j)]) rest.push_back(j);
      }
      const auto nr = static_cast<Index>(rest.size());
      MatrixXd K_AA(ns, ns);
      MatrixXd K_IA(nr, ns);
      MatrixXd K_II(nr, nr);
      for (Index c = 0; c < ns; ++c) {
        const Index jc = support[static_cast<std::size_t>(c)];
        for (Index a = 0; a < ns; ++a) K_AA(a, c) = Ginv_(support[static_cast<std::size_t>(a)], jc);
        for (Index a = 0; a < nr; ++a) K_IA(a, c) = Ginv_(rest[static_cast<std::size_t>(a)], jc);
      }
      for (Index c = 0; c < nr; ++c) {
        for (Index a = 0; a < nr; ++a) K_II(a, c) = Ginv_(rest[static_cast<std::size_t>(a)], rest[static_cast<std::size_t>(c)]);
      }
      y = K_AA * rhs;
      if (nr > 0) {
        Eigen::LLT<MatrixXd> small(K_II);
        if (small.info() != Eigen::Success) return false;
        y -= K_IA.transpose() * small.solve(K_IA * rhs);
      }
      return y.allFinite();
    }
    const MatrixXd GA = gram_on(support);
    Eigen::LLT<MatrixXd> llt(GA);
    if (llt.info() != Eigen::Success) return false;
    const VectorXd d = llt.matrixLLT().diagonal();
    if (d.minCoeff() <= 1e-7 * d.maxCoeff()) return false;
    y = llt.solve(rhs);
    return y.allFinite();
  }

  // Lazily inverts G_ when it is well conditioned.
  bool inverse_ready() const {
    if (inverse_state_ == 0) {
      inverse_state_ = -1;
      Eigen::LLT<MatrixXd> llt(G_);
      if (llt.info() == Eigen::Success) {
        const VectorXd d = llt.matrixLLT().diagonal();
        if (d.minCoeff() > 1e-4 * d.maxCoeff()) {
          Ginv_ = llt.solve(MatrixXd::Identity(G_.rows(), G_.cols()));
          inverse_state_ = 1;
        }
      }
    }
    return inverse_state_ == 1;
  }

  // Primal active-set iterations started from the sign pattern of x. Cheap
  // when consecutive grid points share most of their support.
  bool active_set(double lambda, VectorXd& x, Index& rank) const {
    const Index m = G_.cols();
    VectorXd s = x.unaryExpr([](double v) { return sign_of(v); });
    for (int it = 0; it < 8; ++it) {
      std::vector<Index> support;
      for (Index j = 0; j < m; ++j) {
        if (s(j) != 0.0) support.push_back(j);
      }
      const auto ns = static_cast<Index>(support.size());
      VectorXd candidate = VectorXd::Zero(m);
      if (ns > 0) {
        VectorXd rhs(ns);
        for (Index a = 0; a < ns; ++a) rhs(a) = b_(support[static_cast<std::size_t>(a)]) - lambda * s(support[static_cast<std::size_t>(a)]);
        VectorXd y;
        if (!solve_on_support(support, rhs, y)) return false;
        bool dropped = false;
        for (Index a = 0; a < ns; ++a) {
          const Index j = support[static_cast<std::size_t>(a)];
          if (y(a) * s(j) <= 0.0) {
            s(j) = 0.0;
            dropped = true;
          }
          candidate(j) = y(a);
        }
        if (dropped) continue;
      }
      const VectorXd grad = b_ - G_ * candidate;
      const double slack = lambda * (1.0 + 1e-9) + 1e-12 * (1.0 + max_abs(b_));
      bool added = false;
      for (Index j = 0; j < m; ++j) {
        if (s(j) == 0.0 && std::abs(grad(j)) > slack) {
          s(j) = sign_of(grad(j));
          added = true;
        }
      }
      if (!added) {
        x = candidate;
        rank = ns;
        return true;
      }
    }
    return false;
  }

  Index cd_rank(const VectorXd& x) const { return psd_rank(gram_on(support_of(x))); }

  int admm(double lambda, PathState& st, bool& converged) const {
    const MatrixXd& D = sd_.D;
    const Index r = D.rows();
    const Index dim = D.cols();
    const MatrixXd DtD = D.transpose() * D;
    double rho = std::max(gram_.diagonal().mean(), 1e-8) / std::max(DtD.diagonal().mean(), 1e-12);
    Eigen::LLT<MatrixXd> factor(gram_ + rho * DtD);
    if (factor.info() != Eigen::Success) fail(ErrorKind::SingularDesign, "ADMM system matrix is not positive definite");
    if (st.u.size() != r) {
      st.u = D * st.phi;
      st.w = VectorXd::Zero(r);
    }
    converged = false;
    int it = 0;
    for (; it < opts_.max_iter; ++it) {
      st.phi = factor.solve(cross_ + rho * (D.transpose() * (st.u - st.w)));
      const VectorXd Dphi = D * st.phi;
      const VectorXd u_old = st.u;
      for (Index j = 0; j < r; ++j) st.u(j) = soft_threshold(Dphi(j) + st.w(j), lambda / rho);
      st.w += Dphi - st.u;
      const double r_pri = (Dphi - st.u).norm();
      const double r_dual = rho * (D.transpose() * (st.u - u_old)).norm();
      const double eps_pri = std::sqrt(static_cast<double>(r)) * opts_.abs_tol +
                             opts_.rel_tol * std::max(Dphi.norm(), st.u.norm());
      const double eps_dual = std::sqrt(static_cast<double>(dim)) * opts_.abs_tol +
                              opts_.rel_tol * rho * (D.transpose() * st.w).norm();
      if (r_pri <= eps_pri && r_dual <= eps_dual) {
        converged = true;
        ++it;
        break;
      }
      if (it % 25 == 24) {
        double scale = 1.0;
        if (r_pri > 10.0 * r_dual) scale = 2.0;
        if (r_dual > 10.0 * r_pri) scale = 0.5;
        if (scale != 1.0) {
          rho *= scale;
          st.w /= scale;
          factor.compute(gram_ + rho * DtD);
        }
      }
    }
    return it;
  }

  // Equality-constrained refinement: D_B phi = 0 on the zero set of u, signs
  // fixed elsewhere. Kept only if the multipliers certify optimality.
  void polish_admm(double lambda, PathState& st) const {
    const MatrixXd& D = sd_.D;
    const Index dim = D.cols();
    std::vector<Index> zero_rows;
    VectorXd rhs_top = cross_;
    for (Index j = 0; j < D.rows(); ++j) {
      if (st.u(j) == 0.0) {
        zero_rows.push_back(j);
      } else {
        rhs_top -= lambda * sign_of(st.u(j)) * D.row(j).transpose();
      }
    }
    const auto nb = static_cast<Index>(zero_rows.size());
    MatrixXd K = MatrixXd::Zero(dim + nb, dim + nb);
    K.topLeftCorner(dim, dim) = gram_;
    for (Index i = 0; i < nb; ++i) {
      K.block(0, dim + i, dim, 1) = D.row(zero_rows[static_cast<std::size_t>(i)]).transpose();
      K.block(dim + i, 0, 1, dim) = D.row(zero_rows[static_cast<std::size_t>(i)]);
    }
    VectorXd rhs = VectorXd::Zero(dim + nb);
    rhs.head(dim) = rhs_top;
    const VectorXd sol = K.completeOrthogonalDecomposition().solve(rhs);
    if (!sol.allFinite()) return;
    const VectorXd phi = sol.head(dim);
    const VectorXd Dphi = D * phi;
    for (Index j = 0; j < D.rows(); ++j) {
      if (st.u(j) != 0.0 && Dphi(j) * sign_of(st.u(j)) <= opts_.zero_tol) return;
    }
    if (lambda > 0.0 && nb > 0 && (sol.tail(nb) / lambda).cwiseAbs().maxCoeff() > 1.0 + 1e-9) return;
    if (kkt(phi, lambda) > kkt(st.phi, lambda)) return;
    st.phi = phi;
  }

  const StackedDesign& sd_;
  SolverOptions opts_;
  MatrixXd gram_;
  VectorXd cross_;
  double yy_;
  PenaltyBasis basis_;
  bool use_cd_ = true;
  Index k_ = 0;
  bool null_ok_ = true;
  VectorXd c_null_;
  MatrixXd G_;
  VectorXd b_;
  MatrixXd H_;
  VectorXd h_;
  mutable int inverse_state_ = 0;
  mutable MatrixXd Ginv_;
};

std::vector<double> log_grid(double lmax, int size, double ratio) {
  std::vector<double> grid;
  if (!(lmax > 0.0)) return {0.0};
  grid.reserve(static_cast<std::size_t>(size));
  for (int k = 0; k < size; ++k) {
    const double frac = static_cast<double>(k) / static_cast<double>(size - 1);
    grid.push_back(lmax * std::pow(ratio, frac));
  }
  return grid;
}

FitResult ols_from_gram(const StackedDesign& sd, const MatrixXd& gram, const VectorXd& cross) {
  const Index q = sd.q;
  if (sd.n() <= 2 * q) {
    fail(ErrorKind::Underdetermined, "OLS needs n > 2q (n = " + std::to_string(sd.n()) +
                                         ", 2q = " + std::to_string(2 * q) + ")");
  }
  FitResult fit;
  fit.method = FitMethod::ols;
  fit.phi.resize(2 * q);
  for (Index arm = 0; arm < 2; ++arm) {
    const MatrixXd Ga = gram.block(arm * q, arm * q, q, q);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Ga, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > 1e12) {
      fail(ErrorKind::SingularDesign, std::string(arm == 0 ? "intervention" : "control") +
                                          " arm design is singular or ill-conditioned");
    }
    fit.phi.segment(arm * q, q) = Ga.llt().solve(cross.segment(arm * q, q));
  }
  fit.rss = (sd.R_tilde - sd.fitted(fit.phi)).squaredNorm();
  fit.df = static_cast<double>(2 * q);
  fit.kkt_residual = (gram * fit.phi - cross).cwiseAbs().maxCoeff();
  return fit;
}

double sigma2_with(const StackedDesign& sd, GenlassoProblem& problem, const SolverOptions& opts) {
  const double n = static_cast<double>(sd.n());
  double sigma2 = std::numeric_limits<double>::quiet_NaN();
  if (sd.n() > 2 * sd.q) {
    try {
      const FitResult ols = ols_from_gram(sd, problem.gram(), problem.cross());
      sigma2 = ols.rss / (n - static_cast<double>(2 * sd.q));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SingularDesign) throw;
    }
  }
  if (!std::isfinite(sigma2)) {
    PathState st = problem.initial_state();
    const FitResult fit = problem.solve(problem.lambda_max() * opts.grid_ratio, st);
    sigma2 = fit.rss / std::max(n - fit.df, 1.0);
  }
  const double mean_sq = sd.R_tilde.squaredNorm() / n;
  const double floor = mean_sq > 0.0 ? 1e-12 * mean_sq : 1e-12;
  return std::max(sigma2, floor);
}

std::pair<FitResult, TuningTrace> tune_with(const StackedDesign& sd, GenlassoProblem& problem, int grid_size,
                                            double sigma2_hat, const SolverOptions& opts) {
  if (grid_size < 2) fail(ErrorKind::InvalidConfig, "grid_size must be at least 2");
  if (!(sigma2_hat > 0.0) || !std::isfinite(sigma2_hat)) {
    fail(ErrorKind::InvalidConfig, "sigma2_hat must be positive");
  }
  TuningTrace trace;
  trace.sigma2 = sigma2_hat;
  trace.lambdas = log_grid(problem.lambda_max(), grid_size, opts.grid_ratio);
  const double n = static_cast<double>(sd.n());

  PathState st = problem.initial_state();
  FitResult best;
  double best_cp = std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t k = 0; k < trace.lambdas.size(); ++k) {
    FitResult fit = problem.solve(trace.lambdas[k], st);
    const double cp = fit.rss - n * sigma2_hat + 2.0 * sigma2_hat * fit.df;
    trace.cp_values.push_back(cp);
    trace.df_values.push_back(fit.df);
    trace.rss_values.push_back(fit.rss);
    trace.failed.push_back(!fit.converged);
    if (!fit.converged) continue;
    // Later grid points have smaller lambda, so <= breaks ties toward less shrinkage.
    if (cp <= best_cp) {
      best_cp = cp;
      best = std::move(fit);
      trace.chosen_index = static_cast<Index>(k);
      any = true;
    }
  }
  if (!any) fail(ErrorKind::MaxIterations, "no grid point converged");
  return {std::move(best), std::move(trace)};
}

}  // namespace

FitResult fit_ols(const StackedDesign& sd) {
  require_valid_design(sd);
  if (sd.n() <= 2 * sd.q) {
    fail(ErrorKind::Underdetermined, "OLS needs n > 2q (n = " + std::to_string(sd.n()) +
                                         ", 2q = " + std::to_string(2 * sd.q) + ")");
  }
  return ols_from_gram(sd, sd.gram(), sd.cross());
}

FitResult fit_genlasso(const StackedDesign& sd, double lambda, const SolverOptions& opts) {
  require_valid_design(sd);
  if (!(lambda >= 0.0)) fail(ErrorKind::InvalidLambda, "lambda must be nonnegative");
  GenlassoProblem problem(sd, opts);
  PathState st;
  return problem.solve(lambda, st);
}

double lambda_max(const StackedDesign& sd) {
  require_valid_design(sd);
  GenlassoProblem problem(sd, SolverOptions{});
  return problem.lambda_max();
}

std::pair<FitResult, TuningTrace> tune_cp(const StackedDesign& sd, int grid_size, double sigma2_hat,
                                          const SolverOptions& opts) {
  require_valid_design(sd);
  GenlassoProblem problem(sd, opts);
  return tune_with(sd, problem, grid_size, sigma2_hat, opts);
}

double estimate_sigma2(const StackedDesign& sd, const SolverOptions& opts) {
  require_valid_design(sd);
  GenlassoProblem problem(sd, opts);
  return sigma2_with(sd, problem, opts);
}

std::pair<FitResult, TuningTrace> tune_cp(const StackedDesign& sd, const SolverOptions& opts) {
  require_valid_design(sd);
  GenlassoProblem problem(sd, opts);
  const double sigma2 = sigma2_with(sd, problem, opts);
  return tune_with(sd, problem, opts.grid_size, sigma2, opts);
}

FitResult fit_ridge(const StackedDesign& sd, double ridge_eps) {
  require_valid_design(sd);
  if (!(ridge_eps > 0.0) || !std::isfinite(ridge_eps)) {
    fail(ErrorKind::InvalidLambda, "ridge_eps must be positive");
  }
  const Index q = sd.q;
  const MatrixXd gram = sd.gram();
  const VectorXd cross = sd.cross();
  FitResult fit;
  fit.method = FitMethod::ridge;
  fit.lambda = ridge_eps;
  fit.phi.resize(2 * q);
  VectorXd penalty = VectorXd::Constant(2 * q, ridge_eps);
  penalty(0) = 0.0;
  penalty(q) = 0.0;
  double df = 0.0;
  for (Index arm = 0; arm < 2; ++arm) {
    const MatrixXd Ga = gram.block(arm * q, arm * q, q, q);
    MatrixXd A = Ga;
    A.diagonal() += penalty.segment(arm * q, q);
    Eigen::LLT<MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) fail(ErrorKind::SingularDesign, "ridge system is not positive definite");
    fit.phi.segment(arm * q, q) = llt.solve(cross.segment(arm * q, q));
    df += llt.solve(Ga).trace();
  }
  if (!fit.phi.allFinite()) fail(ErrorKind::SingularDesign, "ridge solution is not finite");
  fit.rss = (sd.R_tilde - sd.fitted(fit.phi)).squaredNorm();
  fit.df = df;
  fit.kkt_residual = (gram * fit.phi - cross + penalty.cwiseProduct(fit.phi)).cwiseAbs().maxCoeff();
  return fit;
}

double default_ridge_eps(const StackedDesign& sd) {
  double total = 0.0;
  total += sd.case_block().colwise().squaredNorm().sum();
  total += sd.ctrl_block().colwise().squaredNorm().sum();
  return 1e-4 * total / static_cast<double>(2 * sd.q);
}

double genlasso_objective(const StackedDesign& sd, const VectorXd& phi, double lambda) {
  return 0.5 * (sd.R_tilde - sd.fitted(phi)).squaredNorm() + lambda * (sd.D * phi).lpNorm<1>();
}

double kkt_residual(const StackedDesign& sd, const VectorXd& phi, double lambda, double zero_tol) {
  SolverOptions opts;
  opts.zero_tol = zero_tol;
  GenlassoProblem problem(sd, opts);
  return problem.kkt(phi, lambda);
}

VectorXd penalty_image(const StackedDesign& sd, const VectorXd& phi, double zero_tol) {
  VectorXd Dphi = sd.D * phi;
  for (Index j = 0; j < Dphi.size(); ++j) {
    if (std::abs(Dphi(j)) <= zero_tol) Dphi(j) = 0.0;
  }
  return Dphi;
}

double genlasso_df(const StackedDesign& sd, const VectorXd& phi, double zero_tol) {
  const VectorXd Dphi = sd.D * phi;
  std::vector<Index> zero_rows;
  for (Index j = 0; j < Dphi.size(); ++j) {
    if (std::abs(Dphi(j)) <= zero_tol) zero_rows.push_back(j);
  }
  const Index dim = sd.D.cols();
  MatrixXd basis;
  if (zero_rows.empty()) {
    basis = MatrixXd::Identity(dim, dim);
  } else {
    MatrixXd DB(static_cast<Index>(zero_rows.size()), dim);
    for (std::size_t i = 0; i < zero_rows.size(); ++i) DB.row(static_cast<Index>(i)) = sd.D.row(zero_rows[i]);
    Eigen::FullPivLU<MatrixXd> lu(DB);
    basis = lu.kernel();
    if (basis.cols() == 1 && basis.norm() == 0.0) return 0.0;
  }
  const MatrixXd restricted = basis.transpose() * sd.gram() * basis;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(restricted);
  qr.setThreshold(1e-10);
  return static_cast<double>(qr.rank());
}

}  // namespace hetmed
