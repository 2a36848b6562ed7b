#include "hetmed/stacker.hpp"

#include "hetmed/errors.hpp"

#include <numeric>

namespace hetmed {

VectorXd StackedDesign::fitted(const VectorXd& phi) const {
  VectorXd out(n());
  out.head(n_treated).noalias() = case_block() * phi.head(q);
  out.tail(n_control()).noalias() = ctrl_block() * phi.tail(q);
  return out;
}

MatrixXd StackedDesign::gram() const {
  MatrixXd g = MatrixXd::Zero(2 * q, 2 * q);
  g.topLeftCorner(q, q).selfadjointView<Eigen::Lower>().rankUpdate(case_block().transpose());
  g.bottomRightCorner(q, q).selfadjointView<Eigen::Lower>().rankUpdate(ctrl_block().transpose());
  g.topLeftCorner(q, q).triangularView<Eigen::StrictlyUpper>() = g.topLeftCorner(q, q).transpose();
  g.bottomRightCorner(q, q).triangularView<Eigen::StrictlyUpper>() = g.bottomRightCorner(q, q).transpose();
  return g;
}

VectorXd StackedDesign::cross() const {
  VectorXd c(2 * q);
  c.head(q).noalias() = case_block().transpose() * R_tilde.head(n_treated);
  c.tail(q).noalias() = ctrl_block().transpose() * R_tilde.tail(n_control());
  return c;
}

VectorXd StackedDesign::unstack(const VectorXd& stacked) const {
  VectorXd out(stacked.size());
  for (Index r = 0; r < stacked.size(); ++r) out(arm_index[static_cast<std::size_t>(r)]) = stacked(r);
  return out;
}

StackedDesign stack_model(const Dataset& d, ModelKind which) {
  std::vector<Index> all(static_cast<std::size_t>(d.p()));
  std::iota(all.begin(), all.end(), Index{0});
  return stack_model(d, which, all);
}

StackedDesign stack_model(const Dataset& d, ModelKind which, std::span<const Index> z_columns) {
  if (z_columns.empty() || z_columns.front() != 0) {
    fail(ErrorKind::InvalidDimension, "stacked design must start with the intercept column");
  }
  StackedDesign sd;
  sd.which = which;
  sd.z_columns.assign(z_columns.begin(), z_columns.end());
  const auto pz = static_cast<Index>(z_columns.size());
  sd.q = which == ModelKind::outcome ? pz + 1 : pz;
  const Index n = d.n();
  const Index q = sd.q;

  sd.arm_index.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    if (d.T(i) > 0) sd.arm_index.push_back(i);
  }
  sd.n_treated = static_cast<Index>(sd.arm_index.size());
  for (Index i = 0; i < n; ++i) {
    if (d.T(i) < 0) sd.arm_index.push_back(i);
  }

  const VectorXd& response = which == ModelKind::outcome ? d.Y : d.M;
  sd.R_tilde.resize(n);
  sd.S_tilde = MatrixXd::Zero(n, 2 * q);
  for (Index r = 0; r < n; ++r) {
    const Index i = sd.arm_index[static_cast<std::size_t>(r)];
    const Index offset = r < sd.n_treated ? 0 : q;
    sd.R_tilde(r) = response(i);
    for (Index j = 0; j < pz; ++j) sd.S_tilde(r, offset + j) = d.Z(i, z_columns[static_cast<std::size_t>(j)]);
    if (which == ModelKind::outcome) sd.S_tilde(r, offset + q - 1) = d.M(i);
  }
  sd.D = build_penalty(q);
  return sd;
}

MatrixXd build_penalty(Index q) {
  if (q < 1) fail(ErrorKind::InvalidDimension, "penalty matrix needs q >= 1, got " + std::to_string(q));
  const Index k = q - 1;
  MatrixXd D = MatrixXd::Zero(2 * k, 2 * q);
  for (Index j = 0; j < k; ++j) {
    D(j, 1 + j) = 1.0;
    D(j, q + 1 + j) = 1.0;
    D(k + j, 1 + j) = 1.0;
    D(k + j, q + 1 + j) = -1.0;
  }
  return D;
}

PhiPair recover_phi(const VectorXd& phi_case, const VectorXd& phi_ctrl) {
  if (phi_case.size() != phi_ctrl.size()) {
    fail(ErrorKind::LengthMismatch, "per-arm coefficient vectors differ in length");
  }
  return {0.5 * (phi_case + phi_ctrl), 0.5 * (phi_case - phi_ctrl)};
}

PhiPair recover_phi(const VectorXd& stacked) {
  if (stacked.size() % 2 != 0) fail(ErrorKind::LengthMismatch, "stacked coefficient vector has odd length");
  const Index q = stacked.size() / 2;
  return recover_phi(stacked.head(q), stacked.tail(q));
}

PhiPair expand_phi(const PhiPair& reduced, std::span<const Index> z_columns, Index p, ModelKind which) {
  const auto pz = static_cast<Index>(z_columns.size());
  const Index q_red = which == ModelKind::outcome ? pz + 1 : pz;
  const Index q_full = which == ModelKind::outcome ? p + 1 : p;
  if (reduced.phi0.size() != q_red || reduced.phi1.size() != q_red) {
    fail(ErrorKind::LengthMismatch, "reduced coefficients do not match the selected columns");
  }
  PhiPair full{VectorXd::Zero(q_full), VectorXd::Zero(q_full)};
  for (Index j = 0; j < pz; ++j) {
    const Index dst = z_columns[static_cast<std::size_t>(j)];
    full.phi0(dst) = reduced.phi0(j);
    full.phi1(dst) = reduced.phi1(j);
  }
  if (which == ModelKind::outcome) {
    full.phi0(q_full - 1) = reduced.phi0(q_red - 1);
    full.phi1(q_full - 1) = reduced.phi1(q_red - 1);
  }
  return full;
}

ThetaParams theta_from_fits(const PhiPair& phi_mediator, const PhiPair& phi_outcome) {
  const Index p = phi_mediator.phi0.size();
  if (phi_mediator.phi1.size() != p || phi_outcome.phi0.size() != p + 1 || phi_outcome.phi1.size() != p + 1) {
    fail(ErrorKind::LengthMismatch, "outcome coefficients must have one more entry than mediator coefficients");
  }
  ThetaParams theta;
  theta.alpha0 = phi_mediator.phi0;
  theta.alpha1 = phi_mediator.phi1;
  theta.gamma0 = phi_outcome.phi0.head(p);
  theta.gamma1 = phi_outcome.phi1.head(p);
  theta.beta0 = phi_outcome.phi0(p);
  theta.beta1 = phi_outcome.phi1(p);
  return theta;
}

}  // namespace hetmed
