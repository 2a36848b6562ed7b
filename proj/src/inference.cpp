#include "hetmed/inference.hpp"

#include "hetmed/errors.hpp"

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>

namespace hetmed {

namespace {

MatrixXd inverse_checked(const MatrixXd& Q, const char* what) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Q);
  if (eig.info() != Eigen::Success) fail(ErrorKind::SingularDesign, std::string(what) + ": eigensolver failed");
  const VectorXd& ev = eig.eigenvalues();
  const double lo = ev.minCoeff();
  const double hi = ev.maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12) {
    fail(ErrorKind::SingularDesign, std::string(what) + " is singular or ill-conditioned");
  }
  MatrixXd inv = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (inv + inv.transpose());
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::vector<bool> selected_columns(const FitResult& fit, const StackedDesign& sd, double zero_tol) {
  const Index p = static_cast<Index>(sd.z_columns.size());
  const PhiPair pair = recover_phi(fit.phi);
  std::vector<bool> keep(static_cast<std::size_t>(p), false);
  keep[0] = true;
  for (Index j = 1; j < p; ++j) {
    keep[static_cast<std::size_t>(j)] = std::abs(pair.phi0(j)) > zero_tol || std::abs(pair.phi1(j)) > zero_tol;
  }
  return keep;
}

std::vector<Index> kept_indices(const std::vector<bool>& keep) {
  std::vector<Index> idx;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    if (keep[j]) idx.push_back(static_cast<Index>(j));
  }
  return idx;
}

PhiPair ridge_refit(const Dataset& d, ModelKind which, const std::vector<Index>& cols, const SolverOptions& opts) {
  const StackedDesign sd = stack_model(d, which, cols);
  const double eps = opts.ridge_eps.value_or(default_ridge_eps(sd));
  const FitResult fit = fit_ridge(sd, eps);
  return expand_phi(recover_phi(fit.phi), cols, d.p(), which);
}

bool arms_present(const Dataset& d) {
  return d.n_treated() >= 1 && d.n_control() >= 1;
}

struct SplitDraw {
  ThetaParams theta;
  std::vector<bool> sel_m;
  std::vector<bool> sel_y;
  std::uint64_t seed = 0;
};

SplitDraw run_split(const Dataset& d, std::uint64_t seed, const SplitOptions& opts) {
  std::string last_error = "unknown failure";
  for (int attempt = 0; attempt < opts.max_retries; ++attempt) {
    const std::uint64_t sub = attempt == 0 ? seed : derive_seed(seed, static_cast<std::uint64_t>(attempt));
    const auto [first, second] = stratified_halves(d, sub);
    const Dataset d1 = subset_rows(d, first);
    const Dataset d2 = subset_rows(d, second);
    if (!arms_present(d1) || !arms_present(d2)) {
      last_error = "a half has an empty arm";
      continue;
    }
    try {
      SelectionFit fit = select_and_refit(d1, d2, opts.solver);
      return {std::move(fit.theta), std::move(fit.selected_mediator), std::move(fit.selected_outcome), sub};
    } catch (const Error& e) {
      if (!e.is_numerical()) throw;
      last_error = e.what();
    }
  }
  fail(ErrorKind::SplitDegenerate, "no usable split after " + std::to_string(opts.max_retries) +
                                       " attempts (" + last_error + ")");
}

}  // namespace

AsymptoticCovariance estimate_covariance(const Dataset& d, const ThetaParams& theta, MediatorCovariance mode) {
  const Index n = d.n();
  const Index p = d.p();
  if (theta.p() != p) fail(ErrorKind::DimensionMismatch, "theta does not match the dataset's covariates");
  if (n <= 2 * p + 2) {
    fail(ErrorKind::Underdetermined, "Wald covariance needs n > 2p + 2 (n = " + std::to_string(n) +
                                         ", 2p + 2 = " + std::to_string(2 * p + 2) + ")");
  }
  const JointDesign jd = build_joint_design(d);
  const MatrixXd& X = jd.X;
  const double nd = static_cast<double>(n);
  MatrixXd Q = MatrixXd::Zero(X.cols(), X.cols());
  Q.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose(), 1.0 / nd);
  Q.triangularView<Eigen::StrictlyUpper>() = Q.transpose();

  AsymptoticCovariance cov;
  cov.n = n;
  cov.p = p;
  cov.mode = mode;
  cov.qx_inv = inverse_checked(Q, "joint design second-moment matrix");
  if (mode == MediatorCovariance::joint) {
    cov.mediator_inv = cov.qx_inv;
  } else {
    cov.mediator_inv = MatrixXd::Zero(X.cols(), X.cols());
    cov.mediator_inv.topLeftCorner(2 * p, 2 * p) = inverse_checked(Q.topLeftCorner(2 * p, 2 * p),
                                                                   "mediator design second-moment matrix");
  }
  const MatrixXd U = X.middleCols(p, p);
  const VectorXd rm = d.M - d.Z * theta.alpha0 - U * theta.alpha1;
  const VectorXd ry = d.Y - d.Z * theta.gamma0 - U * theta.gamma1 - theta.beta0 * d.M -
                      theta.beta1 * d.T.cwiseProduct(d.M);
  cov.sigma_m2 = rm.squaredNorm() / (nd - 2.0 * static_cast<double>(p));
  cov.sigma_y2 = ry.squaredNorm() / (nd - 2.0 * static_cast<double>(p) - 2.0);
  return cov;
}

MatrixXd kron_covariance(const AsymptoticCovariance& cov) {
  const Index k = cov.qx_inv.rows();
  MatrixXd out = MatrixXd::Zero(2 * k, 2 * k);
  out.topLeftCorner(k, k) = cov.sigma_m2 * cov.mediator_inv;
  out.bottomRightCorner(k, k) = cov.sigma_y2 * cov.qx_inv;
  return out;
}

VectorXd caie_gradient(const ThetaParams& theta, const VectorXd& z, int t) {
  const Index p = theta.p();
  if (z.size() != p) fail(ErrorKind::LengthMismatch, "covariate profile does not match theta");
  const Index k = 2 * p + 2;
  const double a1z = theta.alpha1.dot(z);
  VectorXd h = VectorXd::Zero(2 * k);
  h.segment(p, p) = 2.0 * (theta.beta0 + theta.beta1 * t) * z;
  h(k + 2 * p) = 2.0 * a1z;
  h(k + 2 * p + 1) = 2.0 * t * a1z;
  return h;
}

VectorXd cade_gradient(const ThetaParams& theta, const VectorXd& z, int t) {
  const Index p = theta.p();
  if (z.size() != p) fail(ErrorKind::LengthMismatch, "covariate profile does not match theta");
  const Index k = 2 * p + 2;
  VectorXd h = VectorXd::Zero(2 * k);
  h.segment(0, p) = 2.0 * theta.beta1 * z;
  h.segment(p, p) = 2.0 * theta.beta1 * t * z;
  h.segment(k + p, p) = 2.0 * z;
  h(k + 2 * p + 1) = 2.0 * (theta.alpha0.dot(z) + theta.alpha1.dot(z) * t);
  return h;
}

double normal_critical_value(double level) {
  if (!(level > 0.0 && level < 1.0)) fail(ErrorKind::InvalidConfig, "level must lie in (0,1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - (1.0 - level) / 2.0);
}

WaldResult wald_ci(const ThetaParams& theta, const AsymptoticCovariance& cov, const VectorXd& z, int t, double level) {
  if (theta.p() != cov.p) fail(ErrorKind::DimensionMismatch, "theta does not match the covariance estimate");
  const Index k = 2 * cov.p + 2;
  const double n = static_cast<double>(cov.n);
  const double crit = normal_critical_value(level);
  auto variance = [&](const VectorXd& h) {
    const auto hm = h.head(k);
    const auto hy = h.tail(k);
    const double v = (cov.sigma_m2 * hm.dot(cov.mediator_inv * hm) + cov.sigma_y2 * hy.dot(cov.qx_inv * hy)) / n;
    return std::max(v, 0.0);
  };
  WaldResult r;
  r.caie = caie(theta, z, t);
  r.cade = cade(theta, z, t);
  r.se_caie = std::sqrt(variance(caie_gradient(theta, z, t)));
  r.se_cade = std::sqrt(variance(cade_gradient(theta, z, t)));
  r.ci_caie = {r.caie - crit * r.se_caie, r.caie + crit * r.se_caie};
  r.ci_cade = {r.cade - crit * r.se_cade, r.cade + crit * r.se_cade};
  return r;
}

double sample_quantile(std::vector<double> values, double prob) {
  if (values.empty()) fail(ErrorKind::InvalidDimension, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

SelectionFit select_and_refit(const Dataset& select, const Dataset& refit, const SolverOptions& opts) {
  if (select.p() != refit.p()) fail(ErrorKind::DimensionMismatch, "selection and refit data differ in covariates");
  SelectionFit out;
  const StackedDesign sm = stack_model(select, ModelKind::mediator);
  const auto [fit_m, trace_m] = tune_cp(sm, opts);
  out.selected_mediator = selected_columns(fit_m, sm, opts.zero_tol);
  out.lambda_mediator = fit_m.lambda;

  const StackedDesign sy = stack_model(select, ModelKind::outcome);
  const auto [fit_y, trace_y] = tune_cp(sy, opts);
  out.selected_outcome = selected_columns(fit_y, sy, opts.zero_tol);
  out.lambda_outcome = fit_y.lambda;

  const PhiPair pm = ridge_refit(refit, ModelKind::mediator, kept_indices(out.selected_mediator), opts);
  const PhiPair py = ridge_refit(refit, ModelKind::outcome, kept_indices(out.selected_outcome), opts);
  out.theta = theta_from_fits(pm, py);
  return out;
}

std::pair<std::vector<Index>, std::vector<Index>> stratified_halves(const Dataset& d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Index> first;
  std::vector<Index> second;
  for (int arm : {1, -1}) {
    std::vector<Index> units;
    for (Index i = 0; i < d.n(); ++i) {
      if ((d.T(i) > 0) == (arm > 0)) units.push_back(i);
    }
    std::shuffle(units.begin(), units.end(), rng);
    const std::size_t half = (units.size() + 1) / 2;
    first.insert(first.end(), units.begin(), units.begin() + static_cast<std::ptrdiff_t>(half));
    second.insert(second.end(), units.begin() + static_cast<std::ptrdiff_t>(half), units.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {std::move(first), std::move(second)};
}

SplitInference split_inference(const Dataset& d, int B, std::uint64_t seed, const SolverOptions& opts, double level) {
  SplitOptions so;
  so.B = B;
  so.seed = seed;
  so.solver = opts;
  so.level = level;
  return split_inference(d, so);
}

SplitInference split_inference(const Dataset& d, const SplitOptions& opts) {
  if (opts.B < 2) fail(ErrorKind::InvalidConfig, "split inference needs B >= 2");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(opts.B));
  for (int b = 0; b < opts.B; ++b) seeds[static_cast<std::size_t>(b)] = derive_seed(opts.seed, static_cast<std::uint64_t>(b));
  SplitInference out = split_inference_with_seeds(d, seeds, opts);
  out.seed = opts.seed;
  return out;
}

SplitInference split_inference_with_seeds(const Dataset& d, std::span<const std::uint64_t> seeds,
                                          const SplitOptions& opts) {
  const auto B = static_cast<int>(seeds.size());
  if (B < 2) fail(ErrorKind::InvalidConfig, "split inference needs B >= 2");
  if (d.n() < 8) fail(ErrorKind::InvalidDimension, "split inference needs n >= 8");
  if (!(opts.level > 0.0 && opts.level < 1.0)) fail(ErrorKind::InvalidConfig, "level must lie in (0,1)");
  if (opts.t != 1 && opts.t != -1) fail(ErrorKind::InvalidConfig, "evaluation arm must be +1 or -1");
  const MatrixXd& Z = opts.eval_Z ? *opts.eval_Z : d.Z;
  if (Z.cols() != d.p()) fail(ErrorKind::DimensionMismatch, "evaluation profiles do not match the covariates");
  const Index ne = Z.rows();
  const Index p = d.p();

  SplitInference out;
  out.B = B;
  out.level = opts.level;
  out.t = opts.t;
  out.caie.resize(B, ne);
  out.cade.resize(B, ne);
  out.caie_other.resize(B, ne);
  out.cade_other.resize(B, ne);
  out.split_seeds.assign(seeds.begin(), seeds.end());
  MatrixXd sel_m = MatrixXd::Zero(B, p);
  MatrixXd sel_y = MatrixXd::Zero(B, p);
  MatrixXd sel_any = MatrixXd::Zero(B, p);

  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (int b = 0; b < B; ++b) {
    try {
      const SplitDraw draw = run_split(d, seeds[static_cast<std::size_t>(b)], opts);
      const ThetaParams& th = draw.theta;
      const VectorXd a0 = Z * th.alpha0;
      const VectorXd a1 = Z * th.alpha1;
      const VectorXd g1 = Z * th.gamma1;
      const double t = opts.t;
      for (Index i = 0; i < ne; ++i) {
        out.caie(b, i) = 2.0 * (th.beta0 + th.beta1 * t) * a1(i);
        out.cade(b, i) = 2.0 * g1(i) + 2.0 * th.beta1 * (a0(i) + a1(i) * t);
        out.caie_other(b, i) = 2.0 * (th.beta0 - th.beta1 * t) * a1(i);
        out.cade_other(b, i) = 2.0 * g1(i) + 2.0 * th.beta1 * (a0(i) - a1(i) * t);
      }
      for (Index j = 0; j < p; ++j) {
        const bool m = draw.sel_m[static_cast<std::size_t>(j)];
        const bool y = draw.sel_y[static_cast<std::size_t>(j)];
        sel_m(b, j) = m ? 1.0 : 0.0;
        sel_y(b, j) = y ? 1.0 : 0.0;
        sel_any(b, j) = (m || y) ? 1.0 : 0.0;
      }
      out.split_seeds[static_cast<std::size_t>(b)] = draw.seed;
    } catch (...) {
#pragma omp critical(hetmed_split_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  const double lo_p = (1.0 - opts.level) / 2.0;
  const double hi_p = 1.0 - lo_p;
  out.caie_hat.resize(ne);
  out.cade_hat.resize(ne);
  out.tau_hat.resize(ne);
  out.ci_caie.resize(static_cast<std::size_t>(ne));
  out.ci_cade.resize(static_cast<std::size_t>(ne));
  std::vector<double> col(static_cast<std::size_t>(B));
  auto gather = [&](const auto& column) {
    for (int b = 0; b < B; ++b) col[static_cast<std::size_t>(b)] = column(b);
  };
  for (Index i = 0; i < ne; ++i) {
    gather(out.caie.col(i));
    out.caie_hat(i) = sample_quantile(col, 0.5);
    out.ci_caie[static_cast<std::size_t>(i)] = {sample_quantile(col, lo_p), sample_quantile(col, hi_p)};
    gather(out.cade.col(i));
    out.cade_hat(i) = sample_quantile(col, 0.5);
    out.ci_cade[static_cast<std::size_t>(i)] = {sample_quantile(col, lo_p), sample_quantile(col, hi_p)};
    // tau = caie(1) + cade(-1) within each split
    const VectorXd tau_b = opts.t == 1 ? VectorXd(out.caie.col(i) + out.cade_other.col(i))
                                       : VectorXd(out.caie_other.col(i) + out.cade.col(i));
    gather(tau_b);
    out.tau_hat(i) = sample_quantile(col, 0.5);
  }
  out.selection_frequency = sel_any.colwise().mean().transpose();
  out.selection_frequency_mediator = sel_m.colwise().mean().transpose();
  out.selection_frequency_outcome = sel_y.colwise().mean().transpose();
  return out;
}

EffectTable effect_table(const SplitInference& split, const Dataset& d, std::optional<int> arm) {
  if (split.caie_hat.size() != d.n()) {
    fail(ErrorKind::DimensionMismatch, "split inference was not evaluated at the rows of this dataset");
  }
  std::vector<double> col(static_cast<std::size_t>(split.B));
  auto median_of = [&](const auto& column) {
    for (int b = 0; b < split.B; ++b) col[static_cast<std::size_t>(b)] = column(b);
    return sample_quantile(col, 0.5);
  };
  EffectTable table;
  table.t = split.t;
  table.level = split.level;
  table.source = IntervalSource::split;
  table.arm_filter = arm;
  for (Index i = 0; i < d.n(); ++i) {
    const int unit_arm = d.T(i) > 0 ? 1 : -1;
    if (arm && *arm != unit_arm) continue;
    EffectRow row;
    row.row_id = i;
    row.arm = unit_arm;
    row.caie = split.caie_hat(i);
    row.cade = split.cade_hat(i);
    row.caie_other = median_of(split.caie_other.col(i));
    row.cade_other = median_of(split.cade_other.col(i));
    row.tau = split.tau_hat(i);
    const auto& ci_a = split.ci_caie[static_cast<std::size_t>(i)];
    const auto& ci_d = split.ci_cade[static_cast<std::size_t>(i)];
    const double crit = normal_critical_value(split.level);
    // Interval half-width expressed on the normal scale, for display only.
    row.se_caie = (ci_a.hi - ci_a.lo) / (2.0 * crit);
    row.se_cade = (ci_d.hi - ci_d.lo) / (2.0 * crit);
    row.ci_caie = ci_a;
    row.ci_cade = ci_d;
    row.significant_caie = ci_a.excludes_zero();
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace hetmed
