#pragma once

#include "hetmed/errors.hpp"
#include "hetmed/simulation.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hetmed {

// ---- CSV ------------------------------------------------------------------

/// RFC-4180 reader: header row required, quoted fields may contain commas,
/// doubled quotes and newlines.
Table read_csv(std::istream& in);
Table read_csv_file(const std::filesystem::path& path);
void write_csv(std::ostream& out, const Table& table);
void write_csv_file(const std::filesystem::path& path, const Table& table);

/// Shortest form that parses back to the same double.
std::string format_number(double v);

// ---- subgroup profiling -----------------------------------------------------

struct ContinuousContrast {
  std::string covariate;
  double mean_significant = 0.0;
  double mean_other = 0.0;
  double pooled_sd = 0.0;
  double cohens_d = 0.0;
  double se = 0.0;
  Interval ci;
  /// Interval excludes 0.
  bool flagged = false;
};

struct BinaryContrast {
  std::string covariate;
  /// 2x2 cells: significant with / without the level, others with / without.
  double sig_with = 0.0;
  double sig_without = 0.0;
  double other_with = 0.0;
  double other_without = 0.0;
  double odds_ratio = 1.0;
  double log_se = 0.0;
  Interval ci;
  /// Haldane-Anscombe correction applied because a cell was zero.
  bool zero_cell = false;
  /// Interval excludes 1.
  bool flagged = false;
};

struct SubgroupReport {
  Index n_significant = 0;
  Index n_other = 0;
  double critical_value = 1.96;
  bool bonferroni = false;
  std::vector<ContinuousContrast> continuous;
  std::vector<BinaryContrast> binary;
};

struct SubgroupOptions {
  /// Two-sided critical value for the contrast intervals.
  double critical_value = 1.96;
  /// Splits the 0.05 error rate over the tested covariates.
  bool bonferroni = false;
};

/// Compares units with a significant caie against the rest, over the rows
/// present in the table (normally the intervention arm).
SubgroupReport subgroup_report(const EffectTable& effects, const Dataset& d, const SubgroupOptions& opts = {});

ContinuousContrast cohens_d(const std::vector<double>& group1, const std::vector<double>& group2,
                            double critical_value = 1.96);
BinaryContrast odds_ratio(double sig_with, double sig_without, double other_with, double other_without,
                          double critical_value = 1.96);

// ---- run configuration --------------------------------------------------------

enum class MethodChoice { automatic, ols, genlasso };

struct RunConfig {
  std::filesystem::path input;
  ColumnMapping mapping;
  MethodChoice method = MethodChoice::automatic;
  double level = 0.95;
  int B = 500;
  std::uint64_t seed = 1;
  SolverOptions solver;
  bool standardize = false;
  std::filesystem::path out_dir = ".";
  /// Arm at which effects are evaluated.
  int t = 1;
  /// Restricts effect rows to one arm; unset keeps every unit.
  std::optional<int> arm;
  /// Interval source for cmd_effects: "auto" (Wald for ols, splits for
  /// genlasso), "wald", "split" or "none".
  std::string inference = "auto";
  MediatorCovariance wald_mode = MediatorCovariance::structural;
  bool bonferroni = false;
  /// Previously written files reused by effects / subgroups.
  std::optional<std::filesystem::path> theta_path;
  std::optional<std::filesystem::path> effects_path;
  StudyConfig study;

  void check() const;
};

/// Parses a flat `key = value` file ('#' starts a comment) into cfg.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
void apply_config_text(RunConfig& cfg, const std::string& text);
/// Applies one key. Unknown keys are rejected with InvalidConfig.
void apply_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

MethodChoice parse_method(const std::string& s);
std::string to_string(MethodChoice m);

/// Resolves `auto` against the dataset: OLS when n > 2(p + 1) + 2, with p
/// counting covariates without the intercept.
FitMethod resolve_method(MethodChoice choice, Index n, Index p_with_intercept);

// ---- pipeline -----------------------------------------------------------------

Dataset load_dataset(const RunConfig& cfg);

struct ModelFit {
  FitResult fit;
  std::optional<TuningTrace> trace;
};

struct PipelineFit {
  FitMethod method = FitMethod::ols;
  ThetaParams theta;
  ModelFit mediator;
  ModelFit outcome;
};

PipelineFit fit_pipeline(const Dataset& d, FitMethod method, const SolverOptions& opts);

// ---- serialization --------------------------------------------------------------

std::string theta_json(const ThetaParams& theta, const std::vector<std::string>& names, FitMethod method);
ThetaParams read_theta_json(const std::filesystem::path& path);
std::string fit_json(const PipelineFit& fit, const Dataset& d, MethodChoice requested);

Table effects_to_table(const EffectTable& table);
EffectTable effects_from_table(const Table& table);
EffectTable read_effects_csv(const std::filesystem::path& path);
/// Rows ordered by caie ascending (ties by row id), with a rank column.
Table effects_plot_table(const EffectTable& table);

std::string subgroups_json(const SubgroupReport& report);
Table subgroups_to_table(const SubgroupReport& report);

std::string sim_report_json(const SimReport& report);
Table sim_report_table(const SimReport& report);

Table split_effects_table(const SplitInference& split, const Dataset& d);
Table selection_table(const SplitInference& split, const Dataset& d);

std::string to_string(FitMethod m);

// ---- commands ---------------------------------------------------------------------

/// Each command writes its files into cfg.out_dir and returns their paths.
std::vector<std::filesystem::path> cmd_fit(const RunConfig& cfg);
std::vector<std::filesystem::path> cmd_effects(const RunConfig& cfg);
std::vector<std::filesystem::path> cmd_subgroups(const RunConfig& cfg);
std::vector<std::filesystem::path> cmd_simulate(const RunConfig& cfg);
std::vector<std::filesystem::path> cmd_split_infer(const RunConfig& cfg);

/// Exit code for an error: 2 for validation problems, 3 for numerical failures.
int exit_code_for(const Error& e);

}  // namespace hetmed
