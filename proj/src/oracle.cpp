#include "advcma/oracle.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace advcma {

using nlohmann::json;

std::size_t SelectionRequest::selectable_count() const {
  return static_cast<std::size_t>(std::count_if(candidates.begin(), candidates.end(),
                                                [](const CandidateEntry& c) { return c.selectable; }));
}

std::size_t required_choice_count(const SelectionRequest& request) {
  return std::min(request.k_required, request.selectable_count());
}

namespace {

const CandidateEntry* find_entry(const SelectionRequest& request, std::size_t index) {
  for (const CandidateEntry& c : request.candidates) {
    if (c.index == index) return &c;
  }
  return nullptr;
}

std::vector<std::size_t> order_by(const SelectionRequest& request,
                                  const std::vector<double>& score) {
  std::vector<std::size_t> pos(request.candidates.size());
  std::iota(pos.begin(), pos.end(), 0);
  std::sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] < score[b];
    return request.candidates[a].index < request.candidates[b].index;
  });
  std::vector<std::size_t> out;
  out.reserve(pos.size());
  for (std::size_t p : pos) out.push_back(request.candidates[p].index);
  return out;
}

SelectionResponse take_selectable(const SelectionRequest& request,
                                  const std::vector<std::size_t>& ranking) {
  SelectionResponse r;
  for (std::size_t idx : ranking) {
    if (r.chosen.size() == request.k_required) break;
    const CandidateEntry* e = find_entry(request, idx);
    if (e && e->selectable) r.chosen.push_back(idx);
  }
  return r;
}

}  // namespace

void validate_response(const SelectionRequest& request, const SelectionResponse& response,
                       bool exact) {
  if (response.chosen.empty()) {
    throw SelectionError("selection must contain at least one index");
  }
  if (response.chosen.size() > request.k_required) {
    throw SelectionError("selection has " + std::to_string(response.chosen.size()) +
                         " indices but at most K=" + std::to_string(request.k_required) +
                         " are allowed");
  }
  std::set<std::size_t> seen;
  for (std::size_t idx : response.chosen) {
    const CandidateEntry* e = find_entry(request, idx);
    if (!e) {
      throw SelectionError("index " + std::to_string(idx) + " is not a candidate");
    }
    if (!e->selectable) {
      throw SelectionError("index " + std::to_string(idx) +
                           " is hidden (classified as the reference) and cannot be selected");
    }
    if (!seen.insert(idx).second) {
      throw SelectionError("index " + std::to_string(idx) + " selected twice");
    }
  }
  if (exact && response.chosen.size() != required_choice_count(request)) {
    throw SelectionError("exactly " + std::to_string(required_choice_count(request)) +
                         " indices must be selected, got " + std::to_string(response.chosen.size()));
  }
  if (response.final_pick) {
    const CandidateEntry* e = find_entry(request, *response.final_pick);
    if (!e || !e->selectable) {
      throw SelectionError("final pick " + std::to_string(*response.final_pick) +
                           " is not a selectable candidate");
    }
  }
}

std::vector<std::size_t> metric_ranking(const SelectionRequest& request, const MetricSpec& spec) {
  std::vector<double> score;
  score.reserve(request.candidates.size());
  for (const CandidateEntry& c : request.candidates) {
    if (spec.color_darkening) {
      if (c.parameters.size() != 3) {
        throw SelectionError("color ranking needs three darkening factors per candidate");
      }
      const std::array<double, 3> betas{std::clamp(c.parameters(0), 0.0, 1.0),
                                        std::clamp(c.parameters(1), 0.0, 1.0),
                                        std::clamp(c.parameters(2), 0.0, 1.0)};
      score.push_back(color_fitness(betas, c.selectable, spec.penalty));
    } else {
      score.push_back(penalized_fitness(spec.norm, c.selectable, c.image.span(),
                                        request.reference_image.span(), spec.penalty));
    }
  }
  return order_by(request, score);
}

SelectionResponse metric_select(const SelectionRequest& request, NormKind kind,
                                const PenaltyParams& params) {
  MetricSpec spec;
  spec.norm = kind;
  spec.penalty = params;
  return take_selectable(request, metric_ranking(request, spec));
}

SelectionResponse simulated_human_select(const SelectionRequest& request,
                                         const Image& hidden_weights) {
  if (!hidden_weights.same_shape(request.reference_image)) {
    throw SelectionError("weight map shape " + hidden_weights.shape_string() +
                         " does not match the reference " +
                         request.reference_image.shape_string());
  }
  std::vector<double> score;
  score.reserve(request.candidates.size());
  for (const CandidateEntry& c : request.candidates) {
    if (!c.image.same_shape(request.reference_image)) {
      throw SelectionError("candidate " + std::to_string(c.index) + " has the wrong shape");
    }
    double s = 0.0;
    for (std::size_t p = 0; p < c.image.size(); ++p) {
      s += hidden_weights.values[p] * std::abs(c.image.values[p] - request.reference_image.values[p]);
    }
    score.push_back(s);
  }
  SelectionResponse r = take_selectable(request, order_by(request, score));
  if (request.final_generation && !r.chosen.empty()) {
    r.final_pick = r.chosen.front();
  }
  return r;
}

SelectionResponse MetricOracle::respond(const SelectionRequest& request) {
  std::vector<std::size_t> ranking = metric_ranking(request, spec_);
  ranking.resize(std::min(ranking.size(), request.k_required));
  return SelectionResponse{std::move(ranking), std::nullopt};
}

SelectionResponse SimulatedHumanOracle::respond(const SelectionRequest& request) {
  return simulated_human_select(request, weights_);
}

Image SimulatedHumanOracle::uniform_weights(const Image& like) {
  return Image(like.channels, like.height, like.width, 1.0);
}

Image SimulatedHumanOracle::center_weights(const Image& like, double fraction) {
  Image w(like.channels, like.height, like.width, 0.0);
  const auto span = [&](std::size_t extent) {
    const auto inner = static_cast<std::size_t>(std::round(fraction * static_cast<double>(extent)));
    const std::size_t lo = (extent - std::min(inner, extent)) / 2;
    return std::pair{lo, lo + std::min(inner, extent)};
  };
  const auto [y0, y1] = span(like.height);
  const auto [x0, x1] = span(like.width);
  for (std::size_t c = 0; c < like.channels; ++c) {
    for (std::size_t y = y0; y < y1; ++y) {
      for (std::size_t x = x0; x < x1; ++x) w.at(c, y, x) = 1.0;
    }
  }
  return w;
}

SelectionResponse HumanChannelOracle::respond(const SelectionRequest& request) {
  std::unique_lock lock(mutex_);
  if (aborted_) throw OracleAborted(*aborted_);
  pending_ = request;
  answer_.reset();
  cv_.notify_all();
  const bool answered =
      cv_.wait_for(lock, timeout_, [&] { return answer_.has_value() || aborted_.has_value(); });
  pending_.reset();
  if (aborted_) throw OracleAborted(*aborted_);
  if (!answered) {
    aborted_ = "no selection within " + std::to_string(timeout_.count()) + " ms";
    throw OracleAborted(*aborted_);
  }
  SelectionResponse out = std::move(*answer_);
  answer_.reset();
  return out;
}

std::optional<SelectionRequest> HumanChannelOracle::pending() const {
  std::lock_guard lock(mutex_);
  return pending_;
}

std::optional<SelectionRequest> HumanChannelOracle::wait_for_request(
    std::chrono::milliseconds wait) const {
  std::unique_lock lock(mutex_);
  cv_.wait_for(lock, wait, [&] { return pending_.has_value() || aborted_.has_value(); });
  return pending_;
}

void HumanChannelOracle::submit(std::uint64_t generation, SelectionResponse response) {
  std::lock_guard lock(mutex_);
  if (!pending_) {
    throw SelectionError("no selection is pending");
  }
  if (pending_->generation != generation) {
    throw SelectionError("selection for generation " + std::to_string(generation) +
                         " but generation " + std::to_string(pending_->generation) + " is pending");
  }
  if (answer_) {
    throw SelectionError("generation " + std::to_string(generation) + " was already answered");
  }
  validate_response(*pending_, response, true);
  answer_ = std::move(response);
  cv_.notify_all();
}

void HumanChannelOracle::abort(std::string reason) {
  std::lock_guard lock(mutex_);
  aborted_ = std::move(reason);
  cv_.notify_all();
}

json response_to_json(std::uint64_t generation, const SelectionResponse& response) {
  json doc{{"generation", generation}, {"chosen", response.chosen}};
  if (response.final_pick) doc["final_pick"] = *response.final_pick;
  return doc;
}

SelectionResponse response_from_json(const json& doc) {
  SelectionResponse r;
  try {
    r.chosen = doc.at("chosen").get<std::vector<std::size_t>>();
    if (doc.contains("final_pick") && !doc["final_pick"].is_null()) {
      r.final_pick = doc["final_pick"].get<std::size_t>();
    }
  } catch (const json::exception& e) {
    throw SelectionError(std::string("malformed selection document: ") + e.what());
  }
  return r;
}

}  // namespace advcma
