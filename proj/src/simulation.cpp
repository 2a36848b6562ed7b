#include "hetmed/simulation.hpp"

#include "hetmed/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <optional>

namespace hetmed {

namespace {

double draw_coefficient(const DgpConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(cfg.coef_lo, cfg.coef_hi);
  std::bernoulli_distribution negative(0.5);
  const double v = mag(rng);
  return negative(rng) ? -v : v;
}

VectorXd draw_sparse_vector(const DgpConfig& cfg, std::mt19937_64& rng) {
  VectorXd v = VectorXd::Zero(cfg.p + 1);
  v(0) = draw_coefficient(cfg, rng);
  std::vector<Index> pos(static_cast<std::size_t>(cfg.p));
  std::iota(pos.begin(), pos.end(), Index{1});
  const Index k = cfg.nonzero_count();
  for (Index j = 0; j < k; ++j) {
    std::uniform_int_distribution<Index> pick(j, cfg.p - 1);
    std::swap(pos[static_cast<std::size_t>(j)], pos[static_cast<std::size_t>(pick(rng))]);
    v(pos[static_cast<std::size_t>(j)]) = draw_coefficient(cfg, rng);
  }
  return v;
}

std::uint64_t replication_seed(std::uint64_t seed, StudyMethod method, Index n, int r) {
  std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(method) + 1);
  s = derive_seed(s, static_cast<std::uint64_t>(n));
  return derive_seed(s, static_cast<std::uint64_t>(r));
}

double sample_sd(const VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

EffectMetrics summarize(const std::vector<const ReplicationResult*>& reps, bool caie_metric) {
  EffectMetrics m;
  if (reps.empty()) {
    m.bias = m.bias_se = m.mse = m.median_abs_error = m.scaled_bias = m.scaled_mse = std::nan("");
    m.ci_width = m.coverage = std::nan("");
    return m;
  }
  std::vector<double> abs_errors;
  std::vector<double> rep_means;
  double sum_e = 0.0;
  double sum_e2 = 0.0;
  double sum_width = 0.0;
  double scaled_b = 0.0;
  double scaled_m = 0.0;
  int scaled_count = 0;
  bool intervals = true;
  for (const ReplicationResult* r : reps) {
    const VectorXd& truth = caie_metric ? r->caie_true : r->cade_true;
    const VectorXd& est = caie_metric ? r->caie_est : r->cade_est;
    const auto& ci = caie_metric ? r->ci_caie : r->ci_cade;
    const VectorXd e = est - truth;
    sum_e += e.sum();
    sum_e2 += e.squaredNorm();
    m.pairs += e.size();
    rep_means.push_back(e.mean());
    for (Index i = 0; i < e.size(); ++i) abs_errors.push_back(std::abs(e(i)));
    const double sd = sample_sd(truth);
    if (sd > 0.0) {
      scaled_b += e.mean() / sd;
      scaled_m += e.squaredNorm() / static_cast<double>(e.size()) / (sd * sd);
      ++scaled_count;
    }
    intervals = intervals && r->has_intervals;
    if (r->has_intervals) {
      for (Index i = 0; i < e.size(); ++i) {
        const Interval& c = ci[static_cast<std::size_t>(i)];
        sum_width += c.hi - c.lo;
        if (c.contains(truth(i))) ++m.covered;
      }
    }
  }
  const double pairs = static_cast<double>(m.pairs);
  m.bias = sum_e / pairs;
  m.mse = sum_e2 / pairs;
  const double R = static_cast<double>(rep_means.size());
  if (rep_means.size() > 1) {
    const double mean = std::accumulate(rep_means.begin(), rep_means.end(), 0.0) / R;
    double ss = 0.0;
    for (double v : rep_means) ss += (v - mean) * (v - mean);
    m.bias_se = std::sqrt(ss / (R - 1.0)) / std::sqrt(R);
  } else {
    m.bias_se = std::nan("");
  }
  m.median_abs_error = sample_quantile(std::move(abs_errors), 0.5);
  m.scaled_bias = scaled_count > 0 ? scaled_b / scaled_count : std::nan("");
  m.scaled_mse = scaled_count > 0 ? scaled_m / scaled_count : std::nan("");
  if (intervals) {
    m.ci_width = sum_width / pairs;
    m.coverage = static_cast<double>(m.covered) / pairs;
  } else {
    m.ci_width = m.coverage = std::nan("");
    m.covered = 0;
  }
  return m;
}

}  // namespace

void DgpConfig::check() const {
  if (p < 1) fail(ErrorKind::InvalidConfig, "p must be at least 1");
  if (n_continuous < 0 || n_binary < 0 || n_continuous + n_binary != p) {
    fail(ErrorKind::InvalidConfig, "n_continuous + n_binary must equal p");
  }
  if (n < 8) fail(ErrorKind::InvalidConfig, "n must be at least 8");
  if (!(sparsity >= 0.0 && sparsity < 1.0)) fail(ErrorKind::InvalidConfig, "sparsity must lie in [0,1)");
  if (!(noise_sd > 0.0) || !std::isfinite(noise_sd)) fail(ErrorKind::InvalidConfig, "noise_sd must be positive");
  if (!(coef_lo >= 0.0 && coef_hi >= coef_lo) || !std::isfinite(coef_hi)) {
    fail(ErrorKind::InvalidConfig, "coefficient law needs 0 <= coef_lo <= coef_hi");
  }
  if (!std::isfinite(beta0) || !std::isfinite(beta1)) fail(ErrorKind::InvalidConfig, "beta0 and beta1 must be finite");
}

Index DgpConfig::nonzero_count() const {
  return static_cast<Index>(std::llround((1.0 - sparsity) * static_cast<double>(p)));
}

ThetaParams draw_theta(const DgpConfig& cfg, std::mt19937_64& rng) {
  cfg.check();
  ThetaParams th;
  th.alpha0 = draw_sparse_vector(cfg, rng);
  th.alpha1 = draw_sparse_vector(cfg, rng);
  th.gamma0 = draw_sparse_vector(cfg, rng);
  th.gamma1 = draw_sparse_vector(cfg, rng);
  th.beta0 = cfg.beta0;
  th.beta1 = cfg.beta1;
  return th;
}

MatrixXd draw_covariates(const DgpConfig& cfg, Index rows, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  MatrixXd Z(rows, cfg.p + 1);
  for (Index i = 0; i < rows; ++i) {
    Z(i, 0) = 1.0;
    for (Index j = 0; j < cfg.n_continuous; ++j) Z(i, 1 + j) = normal(rng);
    for (Index j = 0; j < cfg.n_binary; ++j) Z(i, 1 + cfg.n_continuous + j) = coin(rng) ? 1.0 : 0.0;
  }
  return Z;
}

SimulatedData simulate_dataset(const DgpConfig& cfg, const ThetaParams& theta, std::mt19937_64& rng) {
  cfg.check();
  if (theta.p() != cfg.p + 1) fail(ErrorKind::DimensionMismatch, "theta does not match the configured covariates");
  SimulatedData out;
  Dataset& d = out.data;
  d.Z = draw_covariates(cfg, cfg.n, rng);
  std::bernoulli_distribution coin(0.5);
  d.T.resize(cfg.n);
  do {
    for (Index i = 0; i < cfg.n; ++i) d.T(i) = coin(rng) ? 1.0 : -1.0;
  } while (d.n_treated() < 2 || d.n_control() < 2);

  std::normal_distribution<double> noise(0.0, cfg.noise_sd);
  d.M.resize(cfg.n);
  d.Y.resize(cfg.n);
  const VectorXd a0 = d.Z * theta.alpha0;
  const VectorXd a1 = d.Z * theta.alpha1;
  const VectorXd g0 = d.Z * theta.gamma0;
  const VectorXd g1 = d.Z * theta.gamma1;
  for (Index i = 0; i < cfg.n; ++i) {
    const double t = d.T(i);
    d.M(i) = a0(i) + t * a1(i) + noise(rng);
    d.Y(i) = g0(i) + t * g1(i) + theta.beta0 * d.M(i) + theta.beta1 * t * d.M(i) + noise(rng);
  }
  d.covariate_names.push_back(kInterceptName);
  d.covariate_kind.push_back(CovariateKind::continuous);
  for (Index j = 0; j < cfg.n_continuous; ++j) {
    d.covariate_names.push_back("x" + std::to_string(j + 1));
    d.covariate_kind.push_back(CovariateKind::continuous);
  }
  for (Index j = 0; j < cfg.n_binary; ++j) {
    d.covariate_names.push_back("b" + std::to_string(j + 1));
    d.covariate_kind.push_back(CovariateKind::binary);
  }
  check_dataset(d);

  out.theta = theta;
  out.caie_pos = 2.0 * (theta.beta0 + theta.beta1) * a1;
  out.caie_neg = 2.0 * (theta.beta0 - theta.beta1) * a1;
  out.cade_pos = 2.0 * g1 + 2.0 * theta.beta1 * (a0 + a1);
  out.cade_neg = 2.0 * g1 + 2.0 * theta.beta1 * (a0 - a1);
  return out;
}

SimulatedData generate(const DgpConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  const ThetaParams theta = draw_theta(cfg, rng);
  return simulate_dataset(cfg, theta, rng);
}

std::string to_string(StudyMethod m) { return m == StudyMethod::ols ? "ols" : "genlasso"; }

void StudyConfig::check() const {
  if (methods.empty()) fail(ErrorKind::InvalidConfig, "no methods requested");
  if (ns.empty()) fail(ErrorKind::InvalidConfig, "no sample sizes requested");
  if (replications < 1) fail(ErrorKind::InvalidConfig, "replications must be at least 1");
  if (B < 2) fail(ErrorKind::InvalidConfig, "B must be at least 2");
  if (!(level > 0.0 && level < 1.0)) fail(ErrorKind::InvalidConfig, "level must lie in (0,1)");
  if (test_profiles < 0) fail(ErrorKind::InvalidConfig, "test_profiles must be nonnegative");
  for (Index n : ns) {
    DgpConfig c = dgp;
    c.n = n;
    c.check();
  }
}

const SimCell* SimReport::find(StudyMethod method, Index n) const {
  for (const SimCell& c : cells) {
    if (c.method == method && c.n == n) return &c;
  }
  return nullptr;
}

bool ols_feasible(Index n, Index p) { return n > 2 * (p + 1) + 2; }

MatrixXd study_profiles(const StudyConfig& cfg) {
  if (cfg.test_profiles <= 0) return MatrixXd(0, cfg.dgp.p + 1);
  std::mt19937_64 rng(derive_seed(cfg.dgp.seed, 0x70726F66ULL));
  return draw_covariates(cfg.dgp, cfg.test_profiles, rng);
}

ReplicationResult run_replication(const StudyConfig& cfg, StudyMethod method, Index n, int r,
                                  const MatrixXd* profiles) {
  DgpConfig dgp = cfg.dgp;
  dgp.n = n;
  const std::uint64_t seed = replication_seed(cfg.dgp.seed, method, n, r);
  std::mt19937_64 rng(seed);
  const ThetaParams theta = draw_theta(dgp, rng);
  const SimulatedData sim = simulate_dataset(dgp, theta, rng);
  const Dataset& d = sim.data;
  const bool use_profiles = profiles != nullptr && profiles->rows() > 0;
  const MatrixXd& Z = use_profiles ? *profiles : d.Z;

  ReplicationResult out;
  if (use_profiles) {
    const VectorXd a0 = Z * theta.alpha0;
    const VectorXd a1 = Z * theta.alpha1;
    const VectorXd g1 = Z * theta.gamma1;
    out.caie_true = 2.0 * (theta.beta0 + theta.beta1) * a1;
    out.cade_true = 2.0 * g1 + 2.0 * theta.beta1 * (a0 + a1);
  } else {
    out.caie_true = sim.caie_pos;
    out.cade_true = sim.cade_pos;
  }
  const Index ne = Z.rows();
  out.caie_est.resize(ne);
  out.cade_est.resize(ne);

  if (method == StudyMethod::ols) {
    const FitResult fm = fit_ols(stack_model(d, ModelKind::mediator));
    const FitResult fy = fit_ols(stack_model(d, ModelKind::outcome));
    const ThetaParams est = theta_from_fits(recover_phi(fm.phi), recover_phi(fy.phi));
    const AsymptoticCovariance cov = estimate_covariance(d, est, cfg.wald_mode);
    out.has_intervals = true;
    out.ci_caie.resize(static_cast<std::size_t>(ne));
    out.ci_cade.resize(static_cast<std::size_t>(ne));
    for (Index i = 0; i < ne; ++i) {
      const WaldResult w = wald_ci(est, cov, Z.row(i).transpose(), 1, cfg.level);
      out.caie_est(i) = w.caie;
      out.cade_est(i) = w.cade;
      out.ci_caie[static_cast<std::size_t>(i)] = w.ci_caie;
      out.ci_cade[static_cast<std::size_t>(i)] = w.ci_cade;
    }
    return out;
  }

  const bool split = std::find(cfg.split_ns.begin(), cfg.split_ns.end(), n) != cfg.split_ns.end();
  if (split) {
    SplitOptions so;
    so.B = cfg.B;
    so.seed = derive_seed(seed, 0x53504C54ULL);
    so.level = cfg.level;
    so.t = 1;
    so.solver = cfg.solver;
    if (use_profiles) so.eval_Z = Z;
    const SplitInference si = split_inference(d, so);
    out.caie_est = si.caie_hat;
    out.cade_est = si.cade_hat;
    out.ci_caie = si.ci_caie;
    out.ci_cade = si.ci_cade;
    out.has_intervals = true;
    return out;
  }
  const SelectionFit fit = select_and_refit(d, d, cfg.solver);
  for (Index i = 0; i < ne; ++i) {
    const VectorXd z = Z.row(i).transpose();
    out.caie_est(i) = caie(fit.theta, z, 1);
    out.cade_est(i) = cade(fit.theta, z, 1);
  }
  return out;
}

SimReport run_study(const StudyConfig& cfg) {
  cfg.check();
  SimReport report;
  report.config = cfg;
  const MatrixXd profiles = study_profiles(cfg);
  for (StudyMethod method : cfg.methods) {
    for (Index n : cfg.ns) {
      SimCell cell;
      cell.method = method;
      cell.n = n;
      cell.replications = cfg.replications;
      cell.split = method == StudyMethod::genlasso &&
                   std::find(cfg.split_ns.begin(), cfg.split_ns.end(), n) != cfg.split_ns.end();
      if (method == StudyMethod::ols && !ols_feasible(n, cfg.dgp.p)) {
        cell.infeasible = true;
        cell.caie = summarize({}, true);
        cell.cade = summarize({}, false);
        report.cells.push_back(cell);
        continue;
      }
      const auto start = std::chrono::steady_clock::now();
      std::vector<std::optional<ReplicationResult>> results(static_cast<std::size_t>(cfg.replications));
      std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
      for (int r = 0; r < cfg.replications; ++r) {
        try {
          results[static_cast<std::size_t>(r)] = run_replication(cfg, method, n, r, &profiles);
        } catch (const Error&) {
          // counted as a failure below
        } catch (...) {
#pragma omp critical(hetmed_study_error)
          if (!error) error = std::current_exception();
        }
      }
      if (error) std::rethrow_exception(error);
      std::vector<const ReplicationResult*> done;
      for (const auto& r : results) {
        if (r) done.push_back(&*r);
      }
      cell.completed = static_cast<int>(done.size());
      cell.failures = cfg.replications - cell.completed;
      cell.caie = summarize(done, true);
      cell.cade = summarize(done, false);
      cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      report.cells.push_back(cell);
    }
  }
  return report;
}

}  // namespace hetmed
