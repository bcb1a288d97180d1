#pragma once

// Top-K selection: the boundary between the strategy and whoever judges
// similarity to the reference image.

#include "advcma/cma.hpp"
#include "advcma/fitness.hpp"
#include "advcma/image.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace advcma {

class SelectionError : public std::invalid_argument {
 public:
  explicit SelectionError(const std::string& what) : std::invalid_argument(what) {}
};

/// The person (or channel standing in for one) gave up or timed out.
class OracleAborted : public std::runtime_error {
 public:
  explicit OracleAborted(const std::string& what) : std::runtime_error(what) {}
};

struct CandidateEntry {
  std::size_t index = 0;
  Image image;        // decoded, feasible image the classifier saw
  Vector parameters;  // search-space point (darkening factors in color mode)
  bool selectable = false;  // true iff the candidate is adversarial
};

struct SelectionRequest {
  std::string session_id;
  std::uint64_t generation = 0;
  std::uint64_t total_generations = 0;
  bool final_generation = false;
  Image reference_image;
  std::vector<CandidateEntry> candidates;
  std::size_t k_required = 0;

  std::size_t selectable_count() const;
};

struct SelectionResponse {
  std::vector<std::size_t> chosen;
  std::optional<std::size_t> final_pick;
};

/// min(K, number of selectable candidates).
std::size_t required_choice_count(const SelectionRequest& request);

/// Chosen indices must be distinct, selectable, 1..K of them, and exactly
/// required_choice_count when `exact` is set. final_pick, if present, must be
/// selectable. Throws SelectionError.
void validate_response(const SelectionRequest& request, const SelectionResponse& response,
                       bool exact = false);

/// What a metric oracle ranks by.
struct MetricSpec {
  NormKind norm = NormKind::l1;
  bool color_darkening = false;  // rank by 3 − Σβ instead of a norm
  PenaltyParams penalty;
};

/// Every candidate ordered by penalized fitness against the reference; ties
/// go to the lower index. Adversarial candidates always precede the rest.
std::vector<std::size_t> metric_ranking(const SelectionRequest& request, const MetricSpec& spec);

/// Up to K selectable candidates in metric order.
SelectionResponse metric_select(const SelectionRequest& request, NormKind kind,
                                const PenaltyParams& params);

/// Up to K selectable candidates with smallest Σ w_p·|Δ_p|; ties go to the
/// lower index. `hidden_weights` must have the reference's shape.
SelectionResponse simulated_human_select(const SelectionRequest& request,
                                         const Image& hidden_weights);

class SelectionOracle {
 public:
  virtual ~SelectionOracle() = default;

  /// For metric oracles `chosen` is the head of the full penalized ranking
  /// and may include non-adversarial candidates; perceptual oracles return
  /// only selectable indices.
  virtual SelectionResponse respond(const SelectionRequest& request) = 0;

  /// Perceptual oracles pick an unordered top-K; metric oracles rank.
  virtual bool perceptual() const = 0;
};

class MetricOracle final : public SelectionOracle {
 public:
  explicit MetricOracle(MetricSpec spec) : spec_(spec) {}
  SelectionResponse respond(const SelectionRequest& request) override;
  bool perceptual() const override { return false; }
  const MetricSpec& spec() const { return spec_; }

 private:
  MetricSpec spec_;
};

/// Stand-in participant judging by a hidden per-pixel weight map.
class SimulatedHumanOracle final : public SelectionOracle {
 public:
  explicit SimulatedHumanOracle(Image hidden_weights) : weights_(std::move(hidden_weights)) {}
  SelectionResponse respond(const SelectionRequest& request) override;
  bool perceptual() const override { return true; }

  /// Uniform weights of the given shape, which reduces to L1 ranking.
  static Image uniform_weights(const Image& like);
  /// Weight 1 inside a centered box covering `fraction` of each side, 0 elsewhere.
  static Image center_weights(const Image& like, double fraction);

 private:
  Image weights_;
};

/// Parks the calling engine thread until another thread submits a response
/// for the published request, or the timeout expires. One outstanding
/// request at a time.
class HumanChannelOracle final : public SelectionOracle {
 public:
  explicit HumanChannelOracle(std::chrono::milliseconds timeout) : timeout_(timeout) {}

  SelectionResponse respond(const SelectionRequest& request) override;
  bool perceptual() const override { return true; }

  /// Request currently awaiting an answer, if any.
  std::optional<SelectionRequest> pending() const;
  /// Blocks up to `wait` for a request to be published.
  std::optional<SelectionRequest> wait_for_request(std::chrono::milliseconds wait) const;
  /// Throws SelectionError on a stale generation or invalid choice.
  void submit(std::uint64_t generation, SelectionResponse response);
  void abort(std::string reason);

 private:
  std::chrono::milliseconds timeout_;
  mutable std::mutex mutex_;
  mutable std::condition_variable cv_;
  std::optional<SelectionRequest> pending_;
  std::optional<SelectionResponse> answer_;
  std::optional<std::string> aborted_;
};

nlohmann::json response_to_json(std::uint64_t generation, const SelectionResponse& response);
SelectionResponse response_from_json(const nlohmann::json& doc);

}  // namespace advcma
