#include "hetmed/errors.hpp"
#include "hetmed/mediation.hpp"

#include "helpers.hpp"
#include "oracles.hpp"

#include <doctest.h>

using namespace hetmed;

TEST_CASE("closed-form effects") {
  ThetaParams th = ThetaParams::zeros(2);
  VectorXd z(2);
  z << 1.0, 0.3;
  th.gamma1 << 0.2, 1.0;
  th.beta0 = 0.5;
  CHECK(caie(th, z, 1) == 0.0);
  CHECK(caie(th, z, -1) == 0.0);
  th.alpha1 << 0.0, 1.0;  // alpha1'z = 0.3
  CHECK(caie(th, z, 1) == doctest::Approx(0.3));
  CHECK(caie(th, z, -1) == doctest::Approx(0.3));
  // beta1 = 0: cade = 2 gamma1'z, same in both arms
  CHECK(cade(th, z, 1) == doctest::Approx(2 * 0.5));
  CHECK(cade(th, z, -1) == doctest::Approx(2 * 0.5));
  const ThetaParams zero = ThetaParams::zeros(2);
  CHECK(cade(zero, z, 1) == 0.0);
  CHECK(tau(zero, z) == 0.0);
  CHECK_THROWS_AS(caie(th, z, 0), Error);
  CHECK_THROWS_AS(caie(th, VectorXd::Ones(3), 1), Error);
}

TEST_CASE("total effect decomposes both ways") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int k = 0; k < 200; ++k) {
    const ThetaParams th = testing_util::random_theta(4, rng);
    VectorXd z(4);
    z << 1, g(rng), g(rng), g(rng);
    const double a = caie(th, z, 1) + cade(th, z, -1);
    const double b = caie(th, z, -1) + cade(th, z, 1);
    const double scale = std::abs(caie(th, z, 1)) + std::abs(cade(th, z, -1)) + 1e-300;
    CHECK(std::abs(tau(th, z) - a) <= 1e-12 * scale);
    CHECK(std::abs(tau(th, z) - b) <= 1e-12 * scale);
  }
}

TEST_CASE("potential-outcome simulation agrees with the closed forms") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g;
  for (int k = 0; k < 4; ++k) {
    const ThetaParams th = testing_util::random_theta(3, rng);
    oracle::PotentialOutcomes po{th.alpha0, th.alpha1, th.gamma0, th.gamma1, th.beta0, th.beta1, 0.8, 1.2};
    VectorXd z(3);
    z << 1, g(rng), g(rng);
    for (int t : {1, -1}) {
      const auto ind = po.indirect(z, t, 200000, rng);
      const auto dir = po.direct(z, t, 200000, rng);
      CHECK(std::abs(ind.mean - caie(th, z, t)) <= 3.0 * ind.se);
      CHECK(std::abs(dir.mean - cade(th, z, t)) <= 3.0 * dir.se);
    }
  }
}

TEST_CASE("effect table rows") {
  std::mt19937_64 rng(2);
  Dataset d = testing_util::random_dataset(20, 3, rng);
  d.Z.row(5) = d.Z.row(4);
  const ThetaParams th = testing_util::random_theta(3, rng);
  EffectTableOptions opts;
  opts.t = -1;
  const EffectTable tab = effect_table(th, d, opts);
  REQUIRE(tab.rows.size() == 20);
  CHECK(tab.source == IntervalSource::none);
  for (const EffectRow& r : tab.rows) {
    const VectorXd z = d.Z.row(r.row_id).transpose();
    const double a1z = th.alpha1.dot(z), a0z = th.alpha0.dot(z), g1z = th.gamma1.dot(z);
    CHECK(r.caie == doctest::Approx(2 * (th.beta0 - th.beta1) * a1z));
    CHECK(r.cade == doctest::Approx(2 * g1z + 2 * th.beta1 * (a0z - a1z)));
    CHECK(r.caie_other == doctest::Approx(2 * (th.beta0 + th.beta1) * a1z));
    CHECK(r.tau == doctest::Approx(r.caie + r.cade_other));
    CHECK(r.arm == static_cast<int>(d.T(r.row_id)));
    CHECK_FALSE(r.ci_caie.has_value());
    CHECK_FALSE(r.significant_caie);
  }
  CHECK(tab.rows[5].caie == tab.rows[4].caie);
  CHECK(tab.rows[5].cade == tab.rows[4].cade);

  opts.arm = 1;
  const EffectTable treated = effect_table(th, d, opts);
  CHECK(static_cast<Index>(treated.rows.size()) == d.n_treated());
  CHECK_THROWS_AS(effect_table(testing_util::random_theta(4, rng), d), Error);
}

TEST_CASE("population average is the effect at the mean profile") {
  std::mt19937_64 rng(3);
  const Dataset d = testing_util::random_dataset(50, 4, rng);
  const ThetaParams th = testing_util::random_theta(4, rng);
  const VectorXd zbar = d.Z.colwise().mean().transpose();
  const PopulationEffects pe = population_average(th, d.Z, 1);
  CHECK(pe.caie == doctest::Approx(caie(th, zbar, 1)));
  double mean_caie = 0.0;
  for (Index i = 0; i < d.n(); ++i) mean_caie += caie(th, d.Z.row(i).transpose(), 1);
  CHECK(pe.caie == doctest::Approx(mean_caie / 50.0));
}

TEST_CASE("interval helpers") {
  const Interval iv{-0.5, 1.0};
  CHECK(iv.contains(0.0));
  CHECK_FALSE(iv.excludes_zero());
  CHECK(Interval{0.1, 0.2}.excludes_zero());
  CHECK(Interval{-0.3, -0.2}.excludes_zero());
  CHECK(to_string(IntervalSource::wald) == "wald");
}
