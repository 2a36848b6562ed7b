#include "hetmed/errors.hpp"
#include "hetmed/solvers.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace hetmed;

namespace {

// Interaction-parametrized copy of a stacked problem, built from the dataset.
struct Raw {
  MatrixXd X;
  VectorXd y;
};

Raw raw_problem(const Dataset& d, ModelKind which) {
  MatrixXd S = d.Z;
  if (which == ModelKind::outcome) {
    S.conservativeResize(Eigen::NoChange, d.p() + 1);
    S.col(d.p()) = d.M;
  }
  return {oracle::interaction_design(S, d.T), which == ModelKind::mediator ? d.M : d.Y};
}

// (phi_case, phi_ctrl) -> (phi0, phi1)
VectorXd to_interaction(const VectorXd& phi) {
  const Index q = phi.size() / 2;
  VectorXd b(2 * q);
  b.head(q) = 0.5 * (phi.head(q) + phi.tail(q));
  b.tail(q) = 0.5 * (phi.head(q) - phi.tail(q));
  return b;
}

VectorXd from_interaction(const VectorXd& b) {
  const Index q = b.size() / 2;
  VectorXd phi(2 * q);
  phi.head(q) = b.head(q) + b.tail(q);
  phi.tail(q) = b.head(q) - b.tail(q);
  return phi;
}

Dataset planted(Index n, Index p, double noise, std::mt19937_64& rng) {
  Dataset d = testing_util::random_dataset(n, p, rng);
  std::normal_distribution<double> g;
  const Index k = std::min<Index>(2, p - 1);  // interaction column
  for (Index i = 0; i < n; ++i) {
    d.M(i) = 1.0 + 2.0 * d.Z(i, 1) - 1.5 * d.Z(i, k) * d.T(i) + noise * g(rng);
    d.Y(i) = 0.5 * d.T(i) + d.M(i) + noise * g(rng);
  }
  return d;
}

}  // namespace

TEST_CASE("ols interpolates data in the column span") {
  std::mt19937_64 rng(1);
  Dataset d = testing_util::random_dataset(30, 3, rng);
  d.M = d.Z * VectorXd::LinSpaced(3, 1, 3) + (d.T.array() * d.Z.col(1).array()).matrix();
  const FitResult f = fit_ols(stack_model(d, ModelKind::mediator));
  CHECK(f.rss < 1e-10);
  CHECK(f.df == 6.0);
}

TEST_CASE("intercept-only ols gives arm means") {
  MatrixXd Z = MatrixXd::Ones(4, 1);
  VectorXd T(4), M(4);
  T << 1, -1, 1, -1;
  M << 1, 2, 3, 6;
  const Dataset d = testing_util::make_dataset(Z, T, M, VectorXd::Zero(4));
  const FitResult f = fit_ols(stack_model(d, ModelKind::mediator));
  CHECK(f.phi(0) == doctest::Approx(2.0));
  CHECK(f.phi(1) == doctest::Approx(4.0));
}

TEST_CASE("intercept-only model has nothing to penalize") {
  MatrixXd Z = MatrixXd::Ones(6, 1);
  VectorXd T(6), M(6);
  T << 1, -1, 1, -1, 1, -1;
  M << 1, 2, 3, 6, 2, 1;
  const Dataset d = testing_util::make_dataset(Z, T, M, VectorXd::Zero(6));
  const StackedDesign sd = stack_model(d, ModelKind::mediator);
  CHECK(sd.D.rows() == 0);
  CHECK(lambda_max(sd) == 0.0);
  const FitResult g = fit_genlasso(sd, 0.5);
  CHECK(g.phi(0) == doctest::Approx(2.0));
  CHECK(g.phi(1) == doctest::Approx(3.0));
  CHECK(g.df == 2.0);
  const auto [fit, trace] = tune_cp(sd);
  CHECK(fit.phi.isApprox(g.phi));
}

TEST_CASE("ols matches the normal equations") {
  std::mt19937_64 rng(2);
  const Dataset d = testing_util::random_dataset(50, 3, rng);
  const StackedDesign sd = stack_model(d, ModelKind::mediator);
  const FitResult f = fit_ols(sd);
  const VectorXd ref = oracle::normal_equations(sd.S_tilde, sd.R_tilde);
  CHECK((f.phi - ref).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("ols refuses underdetermined and singular designs") {
  std::mt19937_64 rng(3);
  const Dataset d = testing_util::random_dataset(8, 5, rng);
  CHECK_THROWS_AS(fit_ols(stack_model(d, ModelKind::mediator)), Error);
  Dataset dup = testing_util::random_dataset(30, 3, rng);
  dup.Z.col(2) = dup.Z.col(1);
  try {
    fit_ols(stack_model(dup, ModelKind::mediator));
    FAIL("expected SingularDesign");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SingularDesign);
  }
}

TEST_CASE("genlasso at lambda 0 equals ols") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 5; ++rep) {
    const Dataset d = testing_util::random_dataset(40, 4, rng);
    for (ModelKind k : {ModelKind::mediator, ModelKind::outcome}) {
      const StackedDesign sd = stack_model(d, k);
      const FitResult g = fit_genlasso(sd, 0.0);
      const FitResult o = fit_ols(sd);
      CHECK((g.phi - o.phi).lpNorm<Eigen::Infinity>() < 1e-6);
    }
  }
}

TEST_CASE("lambda_max boundary") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const Dataset d = planted(40, 4, 0.5, rng);
    const StackedDesign sd = stack_model(d, ModelKind::mediator);
    const double lm = lambda_max(sd);
    REQUIRE(lm > 0.0);
    const FitResult above = fit_genlasso(sd, 1.01 * lm);
    CHECK(penalty_image(sd, above.phi).isZero());
    CHECK(above.df == doctest::Approx(2.0));
    // Only the two arm intercepts remain.
    for (Index j = 1; j < sd.q; ++j) {
      CHECK(above.phi(j) == 0.0);
      CHECK(above.phi(sd.q + j) == 0.0);
    }
    const FitResult half = fit_genlasso(sd, 0.5 * lm);
    CHECK_FALSE(penalty_image(sd, half.phi).isZero());
  }
}

TEST_CASE("all-zero response has lambda_max 0 and a one-point grid") {
  std::mt19937_64 rng(6);
  Dataset d = testing_util::random_dataset(20, 3, rng);
  d.M.setZero();
  const StackedDesign sd = stack_model(d, ModelKind::mediator);
  CHECK(lambda_max(sd) == 0.0);
  const auto [fit, trace] = tune_cp(sd, 50, 1.0);
  CHECK(trace.lambdas.size() == 1);
  CHECK(trace.lambdas[0] == 0.0);
  CHECK(fit.phi.isZero(1e-12));
}

TEST_CASE("genlasso matches a long proximal-gradient run (n = 12, q = 2)") {
  std::mt19937_64 rng(2024);
  const Dataset d = planted(12, 2, 0.7, rng);
  const StackedDesign sd = stack_model(d, ModelKind::mediator);
  const double lambda = 0.3 * lambda_max(sd);
  const FitResult f = fit_genlasso(sd, lambda);
  const Raw raw = raw_problem(d, ModelKind::mediator);
  const VectorXd ref = oracle::fista_lasso(raw.X, raw.y, lambda);
  const double f_ref = oracle::lasso_objective(raw.X, raw.y, ref, lambda);
  const double f_ours = oracle::lasso_objective(raw.X, raw.y, to_interaction(f.phi), lambda);
  CHECK(std::abs(f_ours - f_ref) <= 1e-8);
  CHECK(genlasso_objective(sd, from_interaction(ref), lambda) == doctest::Approx(f_ref).epsilon(1e-12));
  CHECK(f.kkt_residual <= 1e-6);
}

TEST_CASE("admm route agrees with coordinate descent") {
  std::mt19937_64 rng(7);
  const Dataset d = planted(60, 5, 0.5, rng);
  const StackedDesign sd = stack_model(d, ModelKind::outcome);
  SolverOptions cd, admm;
  cd.algorithm = GenlassoAlgorithm::coordinate_descent;
  admm.algorithm = GenlassoAlgorithm::admm;
  const double lambda = 0.2 * lambda_max(sd);
  const FitResult a = fit_genlasso(sd, lambda, cd);
  const FitResult b = fit_genlasso(sd, lambda, admm);
  CHECK(b.converged);
  CHECK(std::abs(genlasso_objective(sd, a.phi, lambda) - genlasso_objective(sd, b.phi, lambda)) < 1e-6);
  CHECK(a.df == b.df);
}

TEST_CASE("df runs from 2 at lambda_max to 2q near zero") {
  std::mt19937_64 rng(8);
  const Dataset d = planted(80, 4, 0.5, rng);
  const StackedDesign sd = stack_model(d, ModelKind::mediator);
  const auto [fit, trace] = tune_cp(sd, 20, 0.25);
  CHECK(trace.lambdas.front() == doctest::Approx(lambda_max(sd)));
  CHECK(trace.df_values.front() == 2.0);
  CHECK(trace.df_values.back() == 8.0);
  CHECK(trace.lambdas.back() == doctest::Approx(1e-4 * lambda_max(sd)));
  // Cp recomputed from the trace columns; the chosen point is a minimizer.
  double best = 1e300;
  for (std::size_t k = 0; k < trace.lambdas.size(); ++k) {
    const double cp = trace.rss_values[k] - 80 * 0.25 + 2 * 0.25 * trace.df_values[k];
    CHECK(cp == doctest::Approx(trace.cp_values[k]));
    best = std::min(best, cp);
  }
  CHECK(trace.cp_values[static_cast<std::size_t>(trace.chosen_index)] == doctest::Approx(best));
  CHECK(fit.lambda == trace.lambdas[static_cast<std::size_t>(trace.chosen_index)]);
}

TEST_CASE("Cp tuning recovers the zero pattern of noise-free sparse data") {
  int hits = 0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(1000 + static_cast<unsigned>(seed));
    Dataset d = testing_util::random_dataset(500, 6, rng);
    // phi0 = (1, 2, 0, 0, -1, 0), phi1 = (0.5, 0, 1.5, 0, 0, 0)
    VectorXd b0(6), b1(6);
    b0 << 1, 2, 0, 0, -1, 0;
    b1 << 0.5, 0, 1.5, 0, 0, 0;
    d.M = d.Z * b0 + d.T.asDiagonal() * (d.Z * b1);
    const StackedDesign sd = stack_model(d, ModelKind::mediator);
    const auto [fit, trace] = tune_cp(sd);
    const VectorXd img = penalty_image(sd, fit.phi);
    VectorXd truth(10);
    truth << 2 * b0.tail(5), 2 * b1.tail(5);
    bool ok = true;
    for (Index k = 0; k < 10; ++k) ok = ok && ((img(k) == 0.0) == (truth(k) == 0.0));
    hits += ok ? 1 : 0;
  }
  MESSAGE("zero pattern recovered in " << hits << " of 100 seeds");
  CHECK(hits >= 90);
}

TEST_CASE("sigma2 estimate") {
  std::mt19937_64 rng(9);
  const Dataset d = planted(400, 3, 0.5, rng);
  const double s2 = estimate_sigma2(stack_model(d, ModelKind::mediator));
  CHECK(s2 == doctest::Approx(0.25).epsilon(0.2));
  // p > n still yields a positive estimate
  const Dataset wide = planted(30, 20, 0.5, rng);
  CHECK(estimate_sigma2(stack_model(wide, ModelKind::mediator)) > 0.0);
}

TEST_CASE("ridge") {
  std::mt19937_64 rng(10);
  const Dataset d = testing_util::random_dataset(40, 4, rng);
  const StackedDesign sd = stack_model(d, ModelKind::outcome);
  const FitResult o = fit_ols(sd);
  const FitResult r6 = fit_ridge(sd, 1e-6);
  const FitResult r10 = fit_ridge(sd, 1e-10);
  CHECK((r6.phi - r10.phi).lpNorm<Eigen::Infinity>() <= 1e-4);
  CHECK((r10.phi - o.phi).lpNorm<Eigen::Infinity>() <= 1e-4);

  // augmented least-squares oracle; P drops both intercepts
  const double eps = 0.37;
  MatrixXd P = MatrixXd::Identity(2 * sd.q, 2 * sd.q);
  P(0, 0) = 0.0;
  P(sd.q, sd.q) = 0.0;
  const VectorXd ref = oracle::ridge_augmented(sd.S_tilde, sd.R_tilde, eps, P);
  CHECK((fit_ridge(sd, eps).phi - ref).lpNorm<Eigen::Infinity>() < 1e-8);

  Dataset dup = d;
  dup.Z.col(3) = dup.Z.col(2);
  const FitResult rd = fit_ridge(stack_model(dup, ModelKind::mediator), 1e-4);
  CHECK(rd.phi.allFinite());
  CHECK(default_ridge_eps(sd) > 0.0);
}

TEST_CASE("kkt residual flags non-optimal points") {
  std::mt19937_64 rng(12);
  const Dataset d = planted(50, 4, 0.5, rng);
  const StackedDesign sd = stack_model(d, ModelKind::mediator);
  const double lambda = 0.1 * lambda_max(sd);
  const FitResult f = fit_genlasso(sd, lambda);
  CHECK(kkt_residual(sd, f.phi, lambda) <= 1e-6);
  CHECK(kkt_residual(sd, VectorXd::Zero(f.phi.size()), lambda) > 1e-3);
  CHECK(genlasso_df(sd, f.phi) == f.df);
  CHECK_THROWS_AS(fit_genlasso(sd, -1.0), Error);
}
