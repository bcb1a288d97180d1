#pragma once

// Batch experiments over a dataset: per-class success and perturbation
// tables, the Linf with/without bisection comparison, agreement analysis.

#include "advcma/agreement.hpp"
#include "advcma/attack.hpp"
#include "advcma/dataset.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace advcma {

/// Metric-mode attack settings shared by every item of a run.
struct AttackSettings {
  NormKind norm = NormKind::l1;
  Parameterization parameterization = Parameterization::per_pixel;
  std::size_t iterations = 180;
  StrategyOverrides strategy;
  std::optional<double> initial_step;
  bool quantize = false;
  std::optional<std::uint64_t> query_budget;
  std::optional<BisectionConfig> bisection;
  PenaltyParams penalty;
};

/// "per_pixel" (180 iterations, L=4, K=2), "color" (3, 240, 120) or
/// "perception" (3, 20, 5).
AttackSettings mode_defaults(std::string_view mode);

nlohmann::json settings_to_json(const AttackSettings& s);

AttackProblem make_problem(const Image& reference, Label label,
                           std::shared_ptr<const Classifier> classifier, const AttackSettings& s);
MetricOracle make_metric_oracle(const AttackSettings& s);
/// Per-item seed derived from the run seed and the dataset index.
std::uint64_t item_seed(std::uint64_t seed, std::size_t dataset_index);

struct ItemResult {
  std::size_t dataset_index = 0;
  Label label;
  AttackResult result;
  double seconds = 0.0;
};

struct ClassReport {
  Label label;
  std::size_t correct_available = 0;  // correctly classified items in the dataset
  std::size_t attempted = 0;
  std::size_t succeeded = 0;
  double success_percent = 0.0;
  double mean_perturbation_percent = 0.0;  // over successful items
  double mean_queries = 0.0;
  double mean_seconds = 0.0;
  bool skipped = false;
  std::string skip_reason;
};

struct BenchmarkReport {
  std::vector<ClassReport> classes;
  std::vector<ItemResult> items;  // sorted by dataset index
  std::size_t attempted = 0;
  std::size_t succeeded = 0;
  double overall_success_percent = 0.0;
  double mean_perturbation_percent = 0.0;
  std::uint64_t total_queries = 0;
};

struct RunOptions {
  std::size_t per_class = 10;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::optional<std::filesystem::path> run_dir;  // artifacts written here when set
};

/// Samples up to `per_class` correctly classified items per class and
/// attacks each with a metric oracle.
BenchmarkReport run_benchmark(const Dataset& dataset, std::shared_ptr<const Classifier> classifier,
                              const AttackSettings& settings, const RunOptions& options);

/// Indices attacked by run_benchmark, per class, in attack order.
std::vector<std::vector<std::size_t>> sample_items(const Dataset& dataset, const Classifier& classifier,
                                                   std::size_t per_class, std::uint64_t seed,
                                                   std::vector<std::size_t>* correct_counts = nullptr);

/// Deterministic document: no timings.
nlohmann::json report_to_json(const BenchmarkReport& report, const AttackSettings& settings,
                              const RunOptions& options);
std::string report_table(const BenchmarkReport& report);

struct LinfItem {
  std::size_t dataset_index = 0;
  Label label;
  bool success = false;
  double pure_linf = 0.0;
  double bisection_linf = 0.0;
  std::uint64_t pure_queries = 0;
  std::uint64_t bisection_queries = 0;
};

struct LinfRow {
  Label label;
  std::size_t items = 0;
  std::size_t succeeded = 0;
  double pure_percent = 0.0;       // mean Linf ×100 over successful items
  double bisection_percent = 0.0;
};

struct LinfReport {
  std::vector<LinfRow> rows;
  std::vector<LinfItem> items;
  double mean_reduction_percent = 0.0;  // 100·(1 − Σbisection/Σpure) over rows
};

/// Linf settings default to 3 iterations, L=240, K=120. The bisection column
/// refines the pure run's result, which equals a second run with the same
/// seed and bisection enabled. With `bisection` unset both columns match.
AttackSettings linf_defaults();
LinfReport run_linf_comparison(const Dataset& dataset, std::shared_ptr<const Classifier> classifier,
                               const AttackSettings& settings,
                               const std::optional<BisectionConfig>& bisection,
                               const RunOptions& options);
nlohmann::json linf_report_to_json(const LinfReport& report);
std::string linf_report_table(const LinfReport& report);

struct AgreementReport {
  double epsilon = 0.0;
  std::optional<double> e_div;
  std::vector<StimulusAgreement> stimuli;
  std::size_t participants = 0;
};
AgreementReport analyze_agreement(const std::filesystem::path& log_path);
AgreementReport analyze_agreement(const SelectionLog& log);
nlohmann::json agreement_report_to_json(const AgreementReport& report);
std::string agreement_report_table(const AgreementReport& report);

}  // namespace advcma
