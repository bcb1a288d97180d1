#pragma once

// Black-box attack loop: sample perturbations, decode them to feasible
// images, query labels, let an oracle pick the parents, update the strategy.

#include "advcma/classifier.hpp"
#include "advcma/cma.hpp"
#include "advcma/fitness.hpp"
#include "advcma/image.hpp"
#include "advcma/oracle.hpp"

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace advcma {

class ProblemError : public std::invalid_argument {
 public:
  explicit ProblemError(const std::string& what) : std::invalid_argument(what) {}
};

class EngineError : public std::logic_error {
 public:
  explicit EngineError(const std::string& what) : std::logic_error(what) {}
};

enum class Parameterization {
  per_pixel,            // one value per k·h·w entry, added to the reference
  per_pixel_luminance,  // one value per spatial pixel, added to every channel
  color_darkening,      // (β_r, β_g, β_b) multiplying each channel
};

std::string_view to_string(Parameterization p);
Parameterization parse_parameterization(std::string_view text);

struct AttackProblem {
  Image reference;
  Label reference_label;
  std::optional<Label> target_label;
  std::shared_ptr<const Classifier> classifier;
  Parameterization parameterization = Parameterization::per_pixel;
  std::size_t iterations = 180;
  StrategyOverrides strategy_overrides;
  std::optional<double> initial_step;  // 0.3 per-pixel, 0.25 color when unset
  bool quantize = false;               // snap decoded images to the 8-bit grid
  std::optional<std::uint64_t> query_budget;

  /// Candidate counts as a hit: label ≠ reference, or = target when targeted.
  bool is_adversarial(Label label) const {
    return target_label ? label == *target_label : label != reference_label;
  }
};

/// Checks shape, range, labels and that the classifier currently assigns the
/// reference its label. Throws ProblemError naming the broken precondition.
void validate_problem(const AttackProblem& problem);

std::size_t search_dimension(const AttackProblem& problem);
Vector initial_search_point(const AttackProblem& problem);
double initial_step_size(const AttackProblem& problem);

/// Maps a search point to the image the classifier sees; clamps to [0, 1].
Image decode_candidate(const AttackProblem& problem, const Vector& search_point);

struct BisectionConfig {
  std::size_t max_steps = 200;
  double min_interval = 1.0 / 255.0;

  void validate() const;
};

/// Coordinate-wise interval halving toward the reference. The result is
/// adversarial and no farther from the reference than `start` in any
/// coordinate. Throws ProblemError if `start` is not adversarial.
Image bisection_refine(const AttackProblem& problem, const Image& start,
                       const BisectionConfig& config);
Image bisection_refine(const AttackProblem& problem, const Image& start,
                       const BisectionConfig& config, QueryLedger& ledger,
                       std::uint64_t query_limit = std::numeric_limits<std::uint64_t>::max());

struct Distances {
  double l1 = 0.0;
  double l2 = 0.0;
  double linf = 0.0;
  double average_perturbation = 0.0;
};
Distances measure_distances(const Image& reference, const Image& candidate);

struct AttackResult {
  Image adversarial;
  Label adversarial_label;
  Label reference_label;
  bool success = false;
  Distances distances;
  std::size_t generations_used = 0;
  std::uint64_t queries_used = 0;
  bool bisection_applied = false;
  std::vector<double> history;  // best tracked fitness seen in each generation
  std::size_t fallback_generations = 0;
  std::string stop_reason;      // "completed" or "query_budget"
};

nlohmann::json result_to_json(const AttackResult& result);

struct EngineOptions {
  bool perceptual = false;  // unordered top-K from a person or simulated participant
  MetricSpec metric;        // ranking in metric mode; tracking and fallback otherwise
  std::optional<BisectionConfig> bisection;
  std::uint64_t seed = 0;
  std::string session_id;
};

/// Seed for the population of generation `generation` (1-based).
std::uint64_t generation_seed(std::uint64_t seed, std::uint64_t generation);

/// Everything needed to resume an engine that is waiting for a selection.
struct EngineSnapshot {
  StrategyState state;
  std::uint64_t completed_generations = 0;
  Population population;
  std::vector<Label> labels;
  std::uint64_t queries_total = 0;
  std::vector<std::uint64_t> queries_per_generation;
  bool has_best = false;
  double best_fitness = std::numeric_limits<double>::infinity();
  Image best_image;
  Label best_label;
  std::vector<double> history;
  std::size_t fallback_generations = 0;
};

struct EngineEvent {
  std::string type;  // "fallback"
  std::uint64_t generation = 0;
  std::string detail;
};

/// Steppable attack. Runs until a selection is needed, then waits in
/// pending() for submit(); callers that own a synchronous oracle use
/// run_attack instead.
class AttackEngine {
 public:
  AttackEngine(AttackProblem problem, EngineOptions options);
  static AttackEngine restore(AttackProblem problem, EngineOptions options,
                              const EngineSnapshot& snapshot);

  const AttackProblem& problem() const { return problem_; }
  const EngineOptions& options() const { return options_; }
  const StrategyConfig& config() const { return config_; }
  const StrategyState& state() const { return state_; }

  bool finished() const { return finished_; }
  /// Request awaiting a selection; nullptr once finished.
  const SelectionRequest* pending() const { return pending_ ? &*pending_ : nullptr; }
  /// Labels of the pending population, for audit logs. Empty when finished.
  const std::vector<Label>& pending_labels() const { return labels_; }

  /// Applies the selection for the pending generation and advances.
  void submit(const SelectionResponse& response);

  const AttackResult& result() const;
  EngineSnapshot snapshot() const;
  std::vector<EngineEvent> drain_events();

 private:
  AttackEngine(AttackProblem problem, EngineOptions options, bool defer_start);
  void advance();
  bool budget_allows_generation() const;
  SelectionRequest build_request(std::vector<Image> decoded = {}) const;
  void track(const SelectionRequest& request);
  void apply(const Selection& selection);
  void finalize(std::string reason);
  double tracked_fitness(const CandidateEntry& entry) const;

  AttackProblem problem_;
  EngineOptions options_;
  StrategyConfig config_;
  StrategyState state_;
  std::uint64_t completed_ = 0;

  Vector lower_;  // box for the mean, see apply()
  Vector upper_;
  Population population_;
  std::vector<Label> labels_;
  std::optional<SelectionRequest> pending_;

  QueryLedger ledger_;
  bool has_best_ = false;
  double best_fitness_ = std::numeric_limits<double>::infinity();
  Image best_image_;
  Label best_label_;
  std::optional<Image> final_pick_image_;
  std::optional<Label> final_pick_label_;
  std::vector<double> history_;
  std::size_t fallback_generations_ = 0;
  std::vector<EngineEvent> events_;

  bool finished_ = false;
  AttackResult result_;
};

/// Runs an attack to completion with a synchronous oracle. Metric oracles
/// rank; perceptual ones pick an unordered top-K.
AttackResult run_attack(const AttackProblem& problem, SelectionOracle& oracle,
                        const std::optional<BisectionConfig>& bisection, std::uint64_t rng_seed);

/// Default uniform_top_k weights are forced for perceptual oracles.
EngineOptions engine_options_for(const SelectionOracle& oracle, const AttackProblem& problem,
                                 const std::optional<BisectionConfig>& bisection,
                                 std::uint64_t seed);

/// Problem documents as accepted by the session service and the CLI.
/// Relative classifier paths resolve against `base_dir`.
AttackProblem problem_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
nlohmann::json problem_to_json(const AttackProblem& problem);

}  // namespace advcma
