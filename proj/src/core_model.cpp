#include "hetmed/core_model.hpp"

#include "hetmed/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>

namespace hetmed {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::optional<double> parse_number(const std::string& cell) {
  const std::string s = trim(cell);
  if (s.empty() || s == "NA") return std::nullopt;
  double value = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::size_t require_column(const Table& raw, const std::string& name) {
  const auto idx = raw.column(name);
  if (!idx) fail(ErrorKind::MissingColumn, "column '" + name + "' not found");
  return *idx;
}

const std::string& cell(const Table& raw, std::size_t row, std::size_t col) {
  static const std::string empty;
  const auto& r = raw.rows[row];
  return col < r.size() ? r[col] : empty;
}

double numeric_cell(const Table& raw, std::size_t row, std::size_t col) {
  const auto v = parse_number(cell(raw, row, col));
  if (!v) {
    fail(ErrorKind::NonFiniteValue, "column '" + raw.header[col] + "' row " +
                                        std::to_string(row + 1) + " is missing or not a finite number");
  }
  return *v;
}

// Maps the two treatment levels onto {+1, -1}.
std::string resolve_treated_level(const std::vector<std::string>& levels,
                                  const std::optional<std::string>& requested, const std::string& column) {
  if (levels.size() != 2) {
    fail(ErrorKind::NonBinaryTreatment, "column '" + column + "' has " + std::to_string(levels.size()) +
                                            " distinct levels, expected 2");
  }
  if (requested) {
    const std::string level = trim(*requested);
    if (level != levels[0] && level != levels[1]) {
      fail(ErrorKind::NonBinaryTreatment,
           "treated level '" + level + "' is not one of the levels of column '" + column + "'");
    }
    return level;
  }
  const auto a = parse_number(levels[0]);
  const auto b = parse_number(levels[1]);
  if (a && b) {
    const double lo = std::min(*a, *b);
    const double hi = std::max(*a, *b);
    if (hi == 1.0 && (lo == 0.0 || lo == -1.0)) return *a == 1.0 ? levels[0] : levels[1];
  }
  fail(ErrorKind::NonBinaryTreatment,
       "column '" + column + "' levels are not numeric {0,1} or {-1,1}; the treated level must be given");
}

}  // namespace

Index Dataset::n_treated() const { return (T.array() > 0).count(); }
Index Dataset::n_control() const { return (T.array() < 0).count(); }

ThetaParams ThetaParams::zeros(Index p) {
  return {VectorXd::Zero(p), VectorXd::Zero(p), VectorXd::Zero(p), VectorXd::Zero(p), 0.0, 0.0};
}

void ThetaParams::check() const {
  const Index p = alpha0.size();
  if (alpha1.size() != p || gamma0.size() != p || gamma1.size() != p) {
    fail(ErrorKind::LengthMismatch, "coefficient blocks have unequal lengths");
  }
  const bool finite = alpha0.allFinite() && alpha1.allFinite() && gamma0.allFinite() &&
                      gamma1.allFinite() && std::isfinite(beta0) && std::isfinite(beta1);
  if (!finite) fail(ErrorKind::NonFiniteValue, "theta contains non-finite entries");
}

std::optional<std::size_t> Table::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return std::nullopt;
  return static_cast<std::size_t>(it - header.begin());
}

VectorXd recode_treatment(const std::vector<std::string>& values, const std::optional<std::string>& treated_level,
                          const std::string& column) {
  std::vector<std::string> levels;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string v = trim(values[i]);
    if (v.empty() || v == "NA") {
      fail(ErrorKind::NonFiniteValue, "column '" + column + "' row " + std::to_string(i + 1) + " is missing");
    }
    if (std::find(levels.begin(), levels.end(), v) == levels.end()) levels.push_back(v);
  }
  const std::string treated = resolve_treated_level(levels, treated_level, column);
  VectorXd t(static_cast<Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) t(static_cast<Index>(i)) = trim(values[i]) == treated ? 1.0 : -1.0;
  return t;
}

Dataset validate_dataset(const Table& raw, const std::string& treatment_column,
                         const std::string& mediator_column, const std::string& outcome_column) {
  ColumnMapping mapping;
  mapping.treatment = treatment_column;
  mapping.mediator = mediator_column;
  mapping.outcome = outcome_column;
  return validate_dataset(raw, mapping);
}

Dataset validate_dataset(const Table& raw, const ColumnMapping& mapping) {
  const std::size_t t_col = require_column(raw, mapping.treatment);
  const std::size_t m_col = require_column(raw, mapping.mediator);
  const std::size_t y_col = require_column(raw, mapping.outcome);

  std::vector<std::size_t> cov_cols;
  if (!mapping.covariates.empty()) {
    for (const auto& name : mapping.covariates) cov_cols.push_back(require_column(raw, name));
  } else {
    for (std::size_t j = 0; j < raw.header.size(); ++j) {
      if (j == t_col || j == m_col || j == y_col) continue;
      if (std::find(mapping.ignore.begin(), mapping.ignore.end(), raw.header[j]) != mapping.ignore.end()) continue;
      cov_cols.push_back(j);
    }
  }

  const std::size_t n = raw.rows.size();

  std::vector<std::string> t_values(n);
  for (std::size_t i = 0; i < n; ++i) t_values[i] = cell(raw, i, t_col);

  Dataset d;
  d.T = recode_treatment(t_values, mapping.treated_level, mapping.treatment);
  d.M.resize(static_cast<Index>(n));
  d.Y.resize(static_cast<Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Index>(i);
    d.M(r) = numeric_cell(raw, i, m_col);
    d.Y(r) = numeric_cell(raw, i, y_col);
  }

  MatrixXd cov(static_cast<Index>(n), static_cast<Index>(cov_cols.size()));
  for (std::size_t j = 0; j < cov_cols.size(); ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      cov(static_cast<Index>(i), static_cast<Index>(j)) = numeric_cell(raw, i, cov_cols[j]);
    }
  }

  // An all-ones covariate serves as the intercept; otherwise one is prepended.
  std::optional<Index> ones_col;
  for (Index j = 0; j < cov.cols(); ++j) {
    if (n > 0 && (cov.col(j).array() == 1.0).all()) {
      ones_col = j;
      break;
    }
  }
  const Index p = cov.cols() + (ones_col ? 0 : 1);
  d.Z.resize(static_cast<Index>(n), p);
  d.Z.col(0).setOnes();
  d.covariate_names.push_back(ones_col ? raw.header[cov_cols[static_cast<std::size_t>(*ones_col)]]
                                       : std::string(kInterceptName));
  Index next = 1;
  for (Index j = 0; j < cov.cols(); ++j) {
    if (ones_col && j == *ones_col) continue;
    d.Z.col(next++) = cov.col(j);
    d.covariate_names.push_back(raw.header[cov_cols[static_cast<std::size_t>(j)]]);
  }

  d.covariate_kind.assign(static_cast<std::size_t>(p), CovariateKind::continuous);
  for (Index j = 1; j < p; ++j) {
    const auto& name = d.covariate_names[static_cast<std::size_t>(j)];
    if (const auto it = mapping.kind_override.find(name); it != mapping.kind_override.end()) {
      d.covariate_kind[static_cast<std::size_t>(j)] = it->second;
      continue;
    }
    std::set<double> distinct;
    for (Index i = 0; i < d.n() && distinct.size() <= 2; ++i) distinct.insert(d.Z(i, j));
    if (distinct.size() == 2) d.covariate_kind[static_cast<std::size_t>(j)] = CovariateKind::binary;
  }

  check_dataset(d);
  return d;
}

void check_dataset(const Dataset& d) {
  const Index n = d.n();
  if (d.T.size() != n || d.M.size() != n || d.Y.size() != n) {
    fail(ErrorKind::LengthMismatch, "Z, T, M, Y have inconsistent row counts");
  }
  if (d.p() < 1) fail(ErrorKind::InvalidDimension, "Z must contain the intercept column");
  if (static_cast<Index>(d.covariate_names.size()) != d.p() ||
      static_cast<Index>(d.covariate_kind.size()) != d.p()) {
    fail(ErrorKind::LengthMismatch, "covariate metadata does not match the columns of Z");
  }
  for (Index i = 0; i < n; ++i) {
    if (d.Z(i, 0) != 1.0) {
      fail(ErrorKind::InvalidDimension, "row " + std::to_string(i + 1) + " has a non-unit intercept");
    }
    if (d.T(i) != 1.0 && d.T(i) != -1.0) {
      fail(ErrorKind::NonBinaryTreatment, "row " + std::to_string(i + 1) + " has treatment outside {-1,+1}");
    }
    if (!std::isfinite(d.M(i)) || !std::isfinite(d.Y(i)) || !d.Z.row(i).allFinite()) {
      fail(ErrorKind::NonFiniteValue, "row " + std::to_string(i + 1) + " contains a non-finite value");
    }
  }
  if (n < 4) fail(ErrorKind::ArmEmpty, "at least 4 rows are required, got " + std::to_string(n));
  if (d.n_treated() < 2) fail(ErrorKind::ArmEmpty, "intervention arm has fewer than 2 units");
  if (d.n_control() < 2) fail(ErrorKind::ArmEmpty, "control arm has fewer than 2 units");
}

Table to_table(const Dataset& d, const std::string& treatment_column, const std::string& mediator_column,
               const std::string& outcome_column) {
  Table t;
  t.header = d.covariate_names;
  t.header.push_back(treatment_column);
  t.header.push_back(mediator_column);
  t.header.push_back(outcome_column);
  t.rows.reserve(static_cast<std::size_t>(d.n()));
  for (Index i = 0; i < d.n(); ++i) {
    std::vector<std::string> row;
    row.reserve(t.header.size());
    for (Index j = 0; j < d.p(); ++j) row.push_back(format_number(d.Z(i, j)));
    row.push_back(d.T(i) > 0 ? "1" : "-1");
    row.push_back(format_number(d.M(i)));
    row.push_back(format_number(d.Y(i)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

JointDesign build_joint_design(const Dataset& d) {
  const Index n = d.n();
  const Index p = d.p();
  JointDesign jd;
  jd.X.resize(n, 2 * p + 2);
  jd.X.leftCols(p) = d.Z;
  jd.X.middleCols(p, p) = d.T.asDiagonal() * d.Z;
  jd.X.col(2 * p) = d.M;
  jd.X.col(2 * p + 1) = d.T.cwiseProduct(d.M);
  jd.O.resize(n, 2);
  jd.O.col(0) = d.M;
  jd.O.col(1) = d.Y;
  return jd;
}

Dataset standardize_covariates(const Dataset& d) {
  Dataset out = d;
  const double n = static_cast<double>(d.n());
  for (Index j = 1; j < d.p(); ++j) {
    if (d.covariate_kind[static_cast<std::size_t>(j)] != CovariateKind::continuous) continue;
    const double mean = d.Z.col(j).mean();
    const double var = (d.Z.col(j).array() - mean).square().sum() / (n - 1.0);
    if (!(var > 0.0)) continue;
    out.Z.col(j) = (d.Z.col(j).array() - mean) / std::sqrt(var);
  }
  return out;
}

Dataset subset_rows(const Dataset& d, std::span<const Index> rows) {
  Dataset out;
  const auto m = static_cast<Index>(rows.size());
  out.Z.resize(m, d.p());
  out.T.resize(m);
  out.M.resize(m);
  out.Y.resize(m);
  for (Index i = 0; i < m; ++i) {
    const Index src = rows[static_cast<std::size_t>(i)];
    out.Z.row(i) = d.Z.row(src);
    out.T(i) = d.T(src);
    out.M(i) = d.M(src);
    out.Y(i) = d.Y(src);
  }
  out.covariate_names = d.covariate_names;
  out.covariate_kind = d.covariate_kind;
  return out;
}

}  // namespace hetmed
