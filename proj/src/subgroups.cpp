#include "hetmed/cli_io.hpp"

#include "hetmed/errors.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace hetmed {

namespace {

std::pair<double, double> mean_var(const std::vector<double>& x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return {mean, ss / static_cast<double>(x.size() - 1)};
}

}  // namespace

ContinuousContrast cohens_d(const std::vector<double>& group1, const std::vector<double>& group2,
                            double critical_value) {
  if (group1.size() < 2 || group2.size() < 2) {
    fail(ErrorKind::GroupEmpty, "each subgroup needs at least 2 members");
  }
  const auto [m1, v1] = mean_var(group1);
  const auto [m2, v2] = mean_var(group2);
  const double n1 = static_cast<double>(group1.size());
  const double n2 = static_cast<double>(group2.size());
  ContinuousContrast c;
  c.mean_significant = m1;
  c.mean_other = m2;
  c.pooled_sd = std::sqrt(((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0));
  if (c.pooled_sd > 0.0) {
    c.cohens_d = (m1 - m2) / c.pooled_sd;
  } else {
    c.cohens_d = m1 == m2 ? 0.0 : std::numeric_limits<double>::quiet_NaN();
  }
  const double d = c.cohens_d;
  c.se = std::sqrt(1.0 / n1 + 1.0 / n2 + d * d / (2.0 * (n1 + n2)));
  c.ci = {d - critical_value * c.se, d + critical_value * c.se};
  c.flagged = c.ci.excludes_zero();
  return c;
}

BinaryContrast odds_ratio(double sig_with, double sig_without, double other_with, double other_without,
                          double critical_value) {
  BinaryContrast b;
  b.sig_with = sig_with;
  b.sig_without = sig_without;
  b.other_with = other_with;
  b.other_without = other_without;
  double a = sig_with, bb = sig_without, c = other_with, d = other_without;
  if (a == 0.0 || bb == 0.0 || c == 0.0 || d == 0.0) {
    b.zero_cell = true;
    a += 0.5;
    bb += 0.5;
    c += 0.5;
    d += 0.5;
  }
  const double log_or = std::log(a * d / (bb * c));
  b.odds_ratio = std::exp(log_or);
  b.log_se = std::sqrt(1.0 / a + 1.0 / bb + 1.0 / c + 1.0 / d);
  b.ci = {std::exp(log_or - critical_value * b.log_se), std::exp(log_or + critical_value * b.log_se)};
  b.flagged = b.ci.lo > 1.0 || b.ci.hi < 1.0;
  return b;
}

SubgroupReport subgroup_report(const EffectTable& effects, const Dataset& d, const SubgroupOptions& opts) {
  if (effects.source == IntervalSource::none) {
    fail(ErrorKind::InvalidConfig, "subgroup profiling needs effects with confidence intervals");
  }
  std::vector<Index> sig;
  std::vector<Index> other;
  for (const EffectRow& row : effects.rows) {
    if (row.row_id < 0 || row.row_id >= d.n()) {
      fail(ErrorKind::DimensionMismatch, "effect row " + std::to_string(row.row_id + 1) + " is not in the dataset");
    }
    (row.significant_caie ? sig : other).push_back(row.row_id);
  }
  if (sig.size() < 2 || other.size() < 2) {
    fail(ErrorKind::GroupEmpty, "significant group has " + std::to_string(sig.size()) + " members and the other " +
                                    std::to_string(other.size()) + "; both need at least 2");
  }
  SubgroupReport report;
  report.n_significant = static_cast<Index>(sig.size());
  report.n_other = static_cast<Index>(other.size());
  report.bonferroni = opts.bonferroni;
  report.critical_value = opts.critical_value;
  if (opts.bonferroni && d.p() > 1) {
    const double m = static_cast<double>(d.p() - 1);
    report.critical_value =
        boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - 0.05 / (2.0 * m));
  }
  for (Index j = 1; j < d.p(); ++j) {
    const auto& name = d.covariate_names[static_cast<std::size_t>(j)];
    if (d.covariate_kind[static_cast<std::size_t>(j)] == CovariateKind::continuous) {
      std::vector<double> a, b;
      for (Index i : sig) a.push_back(d.Z(i, j));
      for (Index i : other) b.push_back(d.Z(i, j));
      ContinuousContrast c = cohens_d(a, b, report.critical_value);
      c.covariate = name;
      report.continuous.push_back(std::move(c));
    } else {
      const double level = d.Z.col(j).maxCoeff();
      double sw = 0, so = 0, ow = 0, oo = 0;
      for (Index i : sig) (d.Z(i, j) == level ? sw : so) += 1.0;
      for (Index i : other) (d.Z(i, j) == level ? ow : oo) += 1.0;
      BinaryContrast b = odds_ratio(sw, so, ow, oo, report.critical_value);
      b.covariate = name;
      report.binary.push_back(std::move(b));
    }
  }
  return report;
}

}  // namespace hetmed
