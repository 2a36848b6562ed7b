#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hetmed {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class CovariateKind { continuous, binary };

/// Observed trial data (Z, T, M, Y).
///
/// Z carries the intercept in column 0. T is coded +1 for the intervention arm
/// and -1 for control. Covariate kinds are only consulted by subgroup
/// profiling; the estimators ignore them.
struct Dataset {
  MatrixXd Z;
  VectorXd T;
  VectorXd M;
  VectorXd Y;
  std::vector<std::string> covariate_names;
  std::vector<CovariateKind> covariate_kind;

  Index n() const { return Z.rows(); }
  Index p() const { return Z.cols(); }
  Index n_treated() const;
  Index n_control() const;
};

/// Structural coefficients of the mediator and outcome equations.
struct ThetaParams {
  VectorXd alpha0;
  VectorXd alpha1;
  VectorXd gamma0;
  VectorXd gamma1;
  double beta0 = 0.0;
  double beta1 = 0.0;

  static ThetaParams zeros(Index p);
  Index p() const { return alpha0.size(); }
  /// Throws LengthMismatch / NonFiniteValue.
  void check() const;
};

/// Joint regressor matrix X = [Z | U | M | V] with U = T.Z and V = T.M, and
/// the response block O = [M | Y].
struct JointDesign {
  MatrixXd X;
  MatrixXd O;
};

/// A parsed tabular record set: header plus string cells.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(const std::string& name) const;
};

struct ColumnMapping {
  std::string treatment;
  std::string mediator;
  std::string outcome;
  /// Level recoded to +1. May be omitted when the levels are {0,1} or {-1,1}.
  std::optional<std::string> treated_level;
  /// Covariate columns in order; empty means every remaining column.
  std::vector<std::string> covariates;
  /// Columns never used as covariates (row ids and the like).
  std::vector<std::string> ignore;
  /// Overrides for the two-distinct-values kind heuristic.
  std::map<std::string, CovariateKind> kind_override;
};

inline constexpr const char* kInterceptName = "(Intercept)";

Dataset validate_dataset(const Table& raw, const ColumnMapping& mapping);
Dataset validate_dataset(const Table& raw, const std::string& treatment_column,
                         const std::string& mediator_column, const std::string& outcome_column);

/// Recodes a two-level treatment column onto {+1,-1}; +1 marks the treated level.
VectorXd recode_treatment(const std::vector<std::string>& values, const std::optional<std::string>& treated_level,
                          const std::string& column = "treatment");

/// Throws on any violated Dataset invariant.
void check_dataset(const Dataset& d);

/// Inverse of validate_dataset: intercept column first, treatment as "1"/"-1".
Table to_table(const Dataset& d, const std::string& treatment_column = "T",
               const std::string& mediator_column = "M", const std::string& outcome_column = "Y");

JointDesign build_joint_design(const Dataset& d);

/// Centres and scales the non-intercept continuous columns to mean 0, sd 1.
Dataset standardize_covariates(const Dataset& d);

Dataset subset_rows(const Dataset& d, std::span<const Index> rows);

}  // namespace hetmed
