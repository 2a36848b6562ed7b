#include "hetmed/errors.hpp"
#include "hetmed/inference.hpp"
#include "hetmed/simulation.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <set>

using namespace hetmed;

namespace {

Dataset from_theta(Dataset d, const ThetaParams& th, double sd_m, double sd_y, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  for (Index i = 0; i < d.n(); ++i) {
    const VectorXd z = d.Z.row(i).transpose();
    const double t = d.T(i);
    d.M(i) = th.alpha0.dot(z) + th.alpha1.dot(z) * t + sd_m * g(rng);
    d.Y(i) = th.gamma0.dot(z) + th.gamma1.dot(z) * t + th.beta0 * d.M(i) + th.beta1 * d.M(i) * t + sd_y * g(rng);
  }
  return d;
}

Dataset doubled(const Dataset& d) {
  std::vector<Index> rows;
  for (Index i = 0; i < d.n(); ++i) rows.push_back(i);
  for (Index i = 0; i < d.n(); ++i) rows.push_back(i);
  return subset_rows(d, rows);
}

// vec(Theta): mediator block (alpha0, alpha1, 0, 0) then outcome block.
VectorXd vec_theta(const ThetaParams& th) {
  const Index p = th.p();
  VectorXd v = VectorXd::Zero(4 * p + 4);
  v.segment(0, p) = th.alpha0;
  v.segment(p, p) = th.alpha1;
  v.segment(2 * p + 2, p) = th.gamma0;
  v.segment(3 * p + 2, p) = th.gamma1;
  v(4 * p + 2) = th.beta0;
  v(4 * p + 3) = th.beta1;
  return v;
}

ThetaParams unvec(const VectorXd& v, Index p) {
  ThetaParams th = ThetaParams::zeros(p);
  th.alpha0 = v.segment(0, p);
  th.alpha1 = v.segment(p, p);
  th.gamma0 = v.segment(2 * p + 2, p);
  th.gamma1 = v.segment(3 * p + 2, p);
  th.beta0 = v(4 * p + 2);
  th.beta1 = v(4 * p + 3);
  return th;
}

}  // namespace

TEST_CASE("empirical Q_X matches the block construction") {
  std::mt19937_64 rng(31);
  DgpConfig cfg;
  cfg.p = 10;
  cfg.n_continuous = 5;
  cfg.n_binary = 5;
  cfg.n = 10000;
  cfg.seed = 4;
  const SimulatedData sim = generate(cfg);
  const Dataset& d = sim.data;
  const MatrixXd X = build_joint_design(d).X;
  const MatrixXd Qhat = X.transpose() * X / static_cast<double>(d.n());
  const double pi1 = d.T.mean();
  const MatrixXd Q = oracle::study_covariate_moments(5, 5);
  const MatrixXd ref = oracle::qx_blocks(Q, pi1, 1.0, pi1, 1.0, sim.theta.alpha0, sim.theta.alpha1,
                                         cfg.noise_sd * cfg.noise_sd);
  const double rel = (Qhat - ref).norm() / ref.norm();
  MESSAGE("relative Frobenius error " << rel);
  CHECK(rel <= 0.1);
  const AsymptoticCovariance cov = estimate_covariance(d, sim.theta, MediatorCovariance::joint);
  CHECK((cov.qx_inv * Qhat - MatrixXd::Identity(Qhat.rows(), Qhat.cols())).norm() < 1e-8);
}

// An exact mediator would make M collinear with [Z, U], so only the outcome
// equation is noise-free here; the mediator variance is checked by hand.
TEST_CASE("noise-free outcome gives zero outcome residual variance") {
  std::mt19937_64 rng(32);
  const Dataset base = testing_util::random_dataset(60, 3, rng);
  const ThetaParams th = testing_util::random_theta(3, rng);
  const Dataset d = from_theta(base, th, 0.5, 0.0, rng);
  const AsymptoticCovariance cov = estimate_covariance(d, th);
  CHECK(cov.sigma_y2 < 1e-20);
  double ss = 0.0;
  for (Index i = 0; i < d.n(); ++i) {
    const double fit = d.Z.row(i).dot(th.alpha0) + d.T(i) * d.Z.row(i).dot(th.alpha1);
    ss += (d.M(i) - fit) * (d.M(i) - fit);
  }
  CHECK(cov.sigma_m2 == doctest::Approx(ss / (60.0 - 6.0)).epsilon(1e-12));
}

TEST_CASE("duplicating every row keeps Q_X and shrinks SE by sqrt 2") {
  std::mt19937_64 rng(33);
  const ThetaParams th = testing_util::random_theta(3, rng);
  const Dataset d = from_theta(testing_util::random_dataset(80, 3, rng), th, 0.5, 0.5, rng);
  const Dataset dd = doubled(d);
  for (auto mode : {MediatorCovariance::joint, MediatorCovariance::structural}) {
    const AsymptoticCovariance c1 = estimate_covariance(d, th, mode);
    AsymptoticCovariance c2 = estimate_covariance(dd, th, mode);
    CHECK((c1.qx_inv - c2.qx_inv).norm() <= 1e-9 * c1.qx_inv.norm());
    CHECK((c1.mediator_inv - c2.mediator_inv).norm() <= 1e-9 * c1.mediator_inv.norm());
    // hold the residual variances fixed so only n changes
    c2.sigma_m2 = c1.sigma_m2;
    c2.sigma_y2 = c1.sigma_y2;
    const VectorXd z = d.Z.row(3).transpose();
    const WaldResult w1 = wald_ci(th, c1, z, 1);
    const WaldResult w2 = wald_ci(th, c2, z, 1);
    CHECK(w2.se_caie == doctest::Approx(w1.se_caie / std::sqrt(2.0)).epsilon(1e-10));
    CHECK(w2.se_cade == doctest::Approx(w1.se_cade / std::sqrt(2.0)).epsilon(1e-10));
  }
}

TEST_CASE("gradients match finite differences") {
  std::mt19937_64 rng(34);
  const ThetaParams th = testing_util::random_theta(4, rng);
  VectorXd z(4);
  z << 1, 0.3, -1.2, 0.7;
  const VectorXd v = vec_theta(th);
  for (int t : {1, -1}) {
    const VectorXd ga = caie_gradient(th, z, t);
    const VectorXd gd = cade_gradient(th, z, t);
    REQUIRE(ga.size() == v.size());
    for (Index k = 0; k < v.size(); ++k) {
      VectorXd vp = v, vm = v;
      vp(k) += 1e-6;
      vm(k) -= 1e-6;
      const double fa = (caie(unvec(vp, 4), z, t) - caie(unvec(vm, 4), z, t)) / 2e-6;
      const double fd = (cade(unvec(vp, 4), z, t) - cade(unvec(vm, 4), z, t)) / 2e-6;
      CHECK(ga(k) == doctest::Approx(fa).epsilon(1e-6));
      CHECK(gd(k) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("wald interval pieces") {
  std::mt19937_64 rng(35);
  const ThetaParams th = testing_util::random_theta(3, rng);
  const Dataset d = from_theta(testing_util::random_dataset(120, 3, rng), th, 0.5, 0.5, rng);
  const AsymptoticCovariance cov = estimate_covariance(d, th);
  const MatrixXd K = kron_covariance(cov);
  CHECK(K.isApprox(K.transpose()));
  CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(K).eigenvalues().minCoeff() >= -1e-10 * K.norm());
  const VectorXd z = d.Z.row(0).transpose();
  const WaldResult w = wald_ci(th, cov, z, -1, 0.9);
  const VectorXd h = caie_gradient(th, z, -1);
  CHECK(w.se_caie == doctest::Approx(std::sqrt(h.dot(K * h) / 120.0)));
  CHECK(w.ci_caie.hi - w.ci_caie.lo == doctest::Approx(2 * 1.6448536269514722 * w.se_caie));
  CHECK(w.caie == doctest::Approx(caie(th, z, -1)));

  ThetaParams flat = th;
  flat.alpha1.setZero();
  flat.beta0 = 0.0;
  flat.beta1 = 0.0;
  const WaldResult w0 = wald_ci(flat, estimate_covariance(d, flat), z, 1);
  CHECK(w0.caie == 0.0);
  CHECK(w0.se_caie == 0.0);

  // p = 3 counts the intercept, so n = 8 is the last underdetermined size
  CHECK_THROWS_AS(estimate_covariance(testing_util::random_dataset(8, 3, rng), th), Error);
  CHECK_NOTHROW(estimate_covariance(testing_util::random_dataset(9, 3, rng), th));
}

TEST_CASE("quantiles, critical values and seeds") {
  std::mt19937_64 rng(36);
  std::normal_distribution<double> g;
  std::vector<double> v;
  for (int k = 0; k < 37; ++k) v.push_back(g(rng));
  for (double prob : {0.0, 0.025, 0.5, 0.9, 0.975, 1.0}) {
    CHECK(sample_quantile(v, prob) == doctest::Approx(oracle::quantile7(v, prob)));
  }
  CHECK(normal_critical_value(0.95) == doctest::Approx(1.959963984540054));
  std::set<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 1000; ++s) seeds.insert(derive_seed(42, s));
  CHECK(seeds.size() == 1000);
  CHECK(derive_seed(42, 7) == derive_seed(42, 7));
}

TEST_CASE("stratified halves") {
  std::mt19937_64 rng(37);
  const Dataset d = testing_util::random_dataset(41, 3, rng);
  const auto [a, b] = stratified_halves(d, 9);
  CHECK(static_cast<Index>(a.size() + b.size()) == d.n());
  std::set<Index> all(a.begin(), a.end());
  all.insert(b.begin(), b.end());
  CHECK(static_cast<Index>(all.size()) == d.n());
  Index ta = 0;
  for (Index i : a) ta += d.T(i) > 0 ? 1 : 0;
  CHECK(ta == (d.n_treated() + 1) / 2);
  CHECK(static_cast<Index>(a.size()) - ta == (d.n_control() + 1) / 2);
  CHECK(stratified_halves(d, 9) == stratified_halves(d, 9));
  CHECK(stratified_halves(d, 9) != stratified_halves(d, 10));
}

TEST_CASE("split inference with repeated seeds collapses the interval") {
  DgpConfig cfg;
  cfg.p = 10;
  cfg.n_continuous = 5;
  cfg.n_binary = 5;
  cfg.n = 200;
  const SimulatedData sim = generate(cfg);
  const std::vector<std::uint64_t> seeds{5, 5};
  const SplitInference s = split_inference_with_seeds(sim.data, seeds, {});
  CHECK(s.caie.row(0) == s.caie.row(1));
  for (const auto& iv : s.ci_caie) CHECK(iv.hi - iv.lo == 0.0);
  CHECK(s.caie_hat.isApprox(s.caie.row(0).transpose()));
  for (Index i = 0; i < sim.data.n(); ++i) {
    CHECK(s.tau_hat(i) == doctest::Approx(s.caie(0, i) + s.cade_other(0, i)));
  }
}

TEST_CASE("split inference aggregates per-split estimates") {
  DgpConfig cfg;
  cfg.p = 10;
  cfg.n_continuous = 5;
  cfg.n_binary = 5;
  cfg.n = 300;
  cfg.seed = 3;
  const SimulatedData sim = generate(cfg);
  SplitOptions so;
  so.B = 11;
  so.seed = 8;
  const SplitInference s = split_inference(sim.data, so);
  CHECK(s.caie.rows() == 11);
  CHECK(s.split_seeds.size() == 11);
  for (Index i : {0, 17, 150}) {
    std::vector<double> col(s.caie.col(i).data(), s.caie.col(i).data() + 11);
    CHECK(s.caie_hat(i) == doctest::Approx(oracle::quantile7(col, 0.5)));
    CHECK(s.ci_caie[static_cast<std::size_t>(i)].lo == doctest::Approx(oracle::quantile7(col, 0.025)));
    CHECK(s.ci_caie[static_cast<std::size_t>(i)].hi == doctest::Approx(oracle::quantile7(col, 0.975)));
  }
  CHECK(s.selection_frequency(0) == 1.0);
  const SplitInference again = split_inference(sim.data, so);
  CHECK(again.caie == s.caie);

  const EffectTable tab = effect_table(s, sim.data, 1);
  CHECK(static_cast<Index>(tab.rows.size()) == sim.data.n_treated());
  CHECK(tab.source == IntervalSource::split);
  for (const auto& r : tab.rows) {
    CHECK(r.significant_caie == r.ci_caie->excludes_zero());
    CHECK(*r.se_caie == doctest::Approx((r.ci_caie->hi - r.ci_caie->lo) / (2 * 1.959963984540054)));
  }
  SplitOptions bad = so;
  bad.B = 1;
  CHECK_THROWS_AS(split_inference(sim.data, bad), Error);
}

TEST_CASE("split inference on nearly noise-free sparse data") {
  DgpConfig cfg;
  cfg.n = 1000;
  cfg.noise_sd = 1e-6;
  cfg.seed = 12;
  const SimulatedData sim = generate(cfg);
  SplitOptions so;
  so.B = 25;
  so.seed = 1;
  const SplitInference s = split_inference(sim.data, so);
  Index close = 0;
  for (Index i = 0; i < cfg.n; ++i) close += std::abs(s.caie_hat(i) - sim.caie_pos(i)) <= 0.05 ? 1 : 0;
  MESSAGE(close << " of 1000 units within 0.05");
  CHECK(close >= 950);
}

TEST_CASE("Wald intervals hold their size at units with no indirect effect") {
  // alpha1 lives on binary covariates only, with zero intercept, so units with
  // all of those indicators at 0 have caie = 0.
  DgpConfig cfg;
  cfg.n = 2000;
  Index null_units = 0, flagged = 0;
  for (int r = 0; r < 200; ++r) {
    std::mt19937_64 rng(derive_seed(555, static_cast<std::uint64_t>(r)));
    ThetaParams th = draw_theta(cfg, rng);
    th.alpha1.setZero();
    std::uniform_real_distribution<double> mag(cfg.coef_lo, cfg.coef_hi);
    for (Index k = 0; k < 5; ++k) th.alpha1(1 + cfg.n_continuous + 3 * k) = (k % 2 ? -1.0 : 1.0) * mag(rng);
    const SimulatedData sim = simulate_dataset(cfg, th, rng);
    const FitResult fm = fit_ols(stack_model(sim.data, ModelKind::mediator));
    const FitResult fy = fit_ols(stack_model(sim.data, ModelKind::outcome));
    const ThetaParams est = theta_from_fits(recover_phi(fm.phi), recover_phi(fy.phi));
    const AsymptoticCovariance cov = estimate_covariance(sim.data, est);
    for (Index i = 0; i < cfg.n; ++i) {
      if (th.alpha1.dot(sim.data.Z.row(i).transpose()) != 0.0) continue;
      ++null_units;
      const WaldResult w = wald_ci(est, cov, sim.data.Z.row(i).transpose(), 1);
      flagged += w.ci_caie.excludes_zero() ? 1 : 0;
    }
  }
  const double rate = static_cast<double>(flagged) / static_cast<double>(null_units);
  MESSAGE("flagged " << flagged << " of " << null_units << " null units (" << rate << ")");
  REQUIRE(null_units > 1000);
  CHECK(rate <= 0.08);
}

TEST_CASE("select_and_refit keeps the intercept and the mediator") {
  DgpConfig cfg;
  cfg.p = 10;
  cfg.n_continuous = 5;
  cfg.n_binary = 5;
  cfg.n = 300;
  const SimulatedData sim = generate(cfg);
  const SelectionFit sf = select_and_refit(sim.data, sim.data);
  CHECK(sf.selected_mediator[0]);
  CHECK(sf.selected_outcome[0]);
  CHECK(sf.theta.p() == 11);
  for (Index j = 1; j <= 10; ++j) {
    if (!sf.selected_outcome[static_cast<std::size_t>(j)]) {
      CHECK(sf.theta.gamma0(j) == 0.0);
      CHECK(sf.theta.gamma1(j) == 0.0);
    }
  }
}

TEST_CASE("Wald interval width shrinks like n^-1/2") {
  DgpConfig cfg;
  cfg.p = 10;
  cfg.n_continuous = 5;
  cfg.n_binary = 5;
  cfg.sparsity = 0.5;
  std::mt19937_64 trng(71);
  const ThetaParams th = draw_theta(cfg, trng);
  MatrixXd profiles(20, 11);
  {
    DgpConfig pc = cfg;
    pc.n = 20;
    pc.seed = 72;
    profiles = generate(pc).data.Z;
  }
  std::vector<double> medians;
  for (Index n : {200, 1000, 2000}) {
    cfg.n = n;
    std::vector<double> widths;
    for (int r = 0; r < 20; ++r) {
      std::mt19937_64 rng(derive_seed(73, static_cast<std::uint64_t>(n * 100 + r)));
      const SimulatedData sim = simulate_dataset(cfg, th, rng);
      const FitResult fm = fit_ols(stack_model(sim.data, ModelKind::mediator));
      const FitResult fy = fit_ols(stack_model(sim.data, ModelKind::outcome));
      const ThetaParams est = theta_from_fits(recover_phi(fm.phi), recover_phi(fy.phi));
      const AsymptoticCovariance cov = estimate_covariance(sim.data, est);
      for (Index k = 0; k < profiles.rows(); ++k) {
        const WaldResult w = wald_ci(est, cov, profiles.row(k).transpose(), 1);
        widths.push_back(w.ci_caie.hi - w.ci_caie.lo);
      }
    }
    medians.push_back(oracle::quantile7(widths, 0.5));
  }
  const double r1 = medians[0] / medians[1];
  const double r2 = medians[1] / medians[2];
  MESSAGE("width ratios " << r1 << " (sqrt 5 = 2.236) and " << r2 << " (sqrt 2 = 1.414)");
  CHECK(std::abs(r1 / std::sqrt(5.0) - 1.0) <= 0.2);
  CHECK(std::abs(r2 / std::sqrt(2.0) - 1.0) <= 0.2);
}

TEST_CASE("true covariates are selected more often than the median null covariate") {
  DgpConfig cfg;
  cfg.n = 2000;
  cfg.seed = 74;
  const SimulatedData sim = generate(cfg);
  SplitOptions so;
  so.B = 10;
  so.seed = 3;
  const SplitInference s = split_inference(sim.data, so);
  std::vector<double> null_freq;
  std::vector<Index> signal;
  for (Index j = 1; j <= cfg.p; ++j) {
    const bool active = sim.theta.alpha0(j) != 0.0 || sim.theta.alpha1(j) != 0.0 || sim.theta.gamma0(j) != 0.0 ||
                        sim.theta.gamma1(j) != 0.0;
    if (active) {
      signal.push_back(j);
    } else {
      null_freq.push_back(s.selection_frequency(j));
    }
  }
  REQUIRE(!signal.empty());
  const double null_median = oracle::quantile7(null_freq, 0.5);
  for (Index j : signal) {
    INFO("covariate " << j << " frequency " << s.selection_frequency(j) << " null median " << null_median);
    CHECK(s.selection_frequency(j) > null_median);
  }
}
