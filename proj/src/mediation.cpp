#include "hetmed/mediation.hpp"

#include "hetmed/errors.hpp"
#include "hetmed/inference.hpp"

namespace hetmed {

namespace {

void check_arm(int t) {
  if (t != 1 && t != -1) fail(ErrorKind::InvalidConfig, "treatment arm must be +1 or -1, got " + std::to_string(t));
}

void check_profile(const ThetaParams& theta, const VectorXd& z) {
  if (z.size() != theta.p() || theta.alpha1.size() != theta.p() || theta.gamma0.size() != theta.p() ||
      theta.gamma1.size() != theta.p()) {
    fail(ErrorKind::LengthMismatch, "covariate profile has " + std::to_string(z.size()) +
                                        " entries but theta expects " + std::to_string(theta.p()));
  }
}

}  // namespace

double caie(const ThetaParams& theta, const VectorXd& z, int t) {
  check_profile(theta, z);
  check_arm(t);
  return 2.0 * (theta.beta0 + theta.beta1 * t) * theta.alpha1.dot(z);
}

double cade(const ThetaParams& theta, const VectorXd& z, int t) {
  check_profile(theta, z);
  check_arm(t);
  return 2.0 * theta.gamma1.dot(z) + 2.0 * theta.beta1 * (theta.alpha0.dot(z) + theta.alpha1.dot(z) * t);
}

double tau(const ThetaParams& theta, const VectorXd& z) {
  check_profile(theta, z);
  return 2.0 * theta.gamma1.dot(z) + 2.0 * theta.beta0 * theta.alpha1.dot(z) + 2.0 * theta.beta1 * theta.alpha0.dot(z);
}

EffectTable effect_table(const ThetaParams& theta, const Dataset& d, const EffectTableOptions& opts) {
  check_arm(opts.t);
  if (opts.arm) check_arm(*opts.arm);
  if (theta.p() != d.p()) {
    fail(ErrorKind::DimensionMismatch, "theta has " + std::to_string(theta.p()) + " covariates but the dataset has " +
                                           std::to_string(d.p()));
  }
  if (!(opts.level > 0.0 && opts.level < 1.0)) fail(ErrorKind::InvalidConfig, "level must lie in (0,1)");
  EffectTable table;
  table.t = opts.t;
  table.level = opts.level;
  table.arm_filter = opts.arm;
  table.source = opts.covariance ? IntervalSource::wald : IntervalSource::none;
  for (Index i = 0; i < d.n(); ++i) {
    const int arm = d.T(i) > 0 ? 1 : -1;
    if (opts.arm && *opts.arm != arm) continue;
    const VectorXd z = d.Z.row(i).transpose();
    EffectRow row;
    row.row_id = i;
    row.arm = arm;
    row.caie = caie(theta, z, opts.t);
    row.cade = cade(theta, z, opts.t);
    row.caie_other = caie(theta, z, -opts.t);
    row.cade_other = cade(theta, z, -opts.t);
    row.tau = tau(theta, z);
    if (opts.covariance) {
      const WaldResult w = wald_ci(theta, *opts.covariance, z, opts.t, opts.level);
      row.se_caie = w.se_caie;
      row.se_cade = w.se_cade;
      row.ci_caie = w.ci_caie;
      row.ci_cade = w.ci_cade;
      row.significant_caie = w.ci_caie.excludes_zero();
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

PopulationEffects population_average(const ThetaParams& theta, const MatrixXd& Z, int t) {
  if (Z.rows() == 0) fail(ErrorKind::InvalidDimension, "population average over zero rows");
  const VectorXd zbar = Z.colwise().mean().transpose();
  return {caie(theta, zbar, t), cade(theta, zbar, t), tau(theta, zbar), Z.rows()};
}

std::string to_string(IntervalSource source) {
  switch (source) {
    case IntervalSource::none: return "none";
    case IntervalSource::wald: return "wald";
    case IntervalSource::split: return "split";
  }
  return "none";
}

}  // namespace hetmed
