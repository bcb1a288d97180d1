#include "advcma/attack.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace advcma {

using nlohmann::json;

std::string_view to_string(Parameterization p) {
  switch (p) {
    case Parameterization::per_pixel: return "per_pixel";
    case Parameterization::per_pixel_luminance: return "per_pixel_luminance";
    case Parameterization::color_darkening: return "color_darkening";
  }
  return "per_pixel";
}

Parameterization parse_parameterization(std::string_view text) {
  if (text == "per_pixel") return Parameterization::per_pixel;
  if (text == "per_pixel_luminance" || text == "luminance") return Parameterization::per_pixel_luminance;
  if (text == "color_darkening" || text == "color") return Parameterization::color_darkening;
  throw ProblemError("unknown parameterization '" + std::string(text) + "'");
}

namespace {

void check_classifier_shape(const AttackProblem& problem) {
  if (!problem.classifier) throw ProblemError("attack problem has no classifier");
  const std::size_t dim = problem.classifier->spec().input_dim();
  if (dim != 0 && dim != problem.reference.size()) {
    throw ProblemError("classifier expects " + std::to_string(dim) + " inputs but the reference has " +
                       std::to_string(problem.reference.size()) + " values (" +
                       problem.reference.shape_string() + ")");
  }
}

bool labels_in_range(const AttackProblem& problem, Label label) {
  const int classes = problem.classifier->spec().num_classes();
  return label.value >= 0 && (classes == 0 || label.value < classes);
}

}  // namespace

void validate_problem(const AttackProblem& problem) {
  try {
    check_shape(problem.reference);
  } catch (const ImageError& e) {
    throw ProblemError(e.what());
  }
  if (problem.reference.size() == 0) throw ProblemError("reference image is empty");
  for (double v : problem.reference.values) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw ProblemError("reference pixels must lie in [0, 1]");
    }
  }
  check_classifier_shape(problem);
  if (!labels_in_range(problem, problem.reference_label)) {
    throw ProblemError("reference label " + std::to_string(problem.reference_label.value) +
                       " is outside the classifier's classes");
  }
  if (problem.target_label) {
    if (*problem.target_label == problem.reference_label) {
      throw ProblemError("target label must differ from the reference label");
    }
    if (!labels_in_range(problem, *problem.target_label)) {
      throw ProblemError("target label " + std::to_string(problem.target_label->value) +
                         " is outside the classifier's classes");
    }
  }
  if (problem.parameterization == Parameterization::color_darkening && problem.reference.channels != 3) {
    throw ProblemError("color darkening needs a 3-channel reference, got " +
                       problem.reference.shape_string());
  }
  if (problem.initial_step && !(*problem.initial_step > 0.0 && std::isfinite(*problem.initial_step))) {
    throw ProblemError("initial step size must be positive");
  }
  // Throws CmaError for inconsistent overrides before any query is spent.
  make_config(search_dimension(problem), problem.strategy_overrides);

  QueryLedger scratch;
  const Label predicted = problem.classifier->classify(problem.reference.as_vector(), scratch);
  if (predicted != problem.reference_label) {
    throw ProblemError("precondition failed: reference is classified as " +
                       std::to_string(predicted.value) + ", not its label " +
                       std::to_string(problem.reference_label.value) +
                       "; only correctly classified references can be attacked");
  }
}

std::size_t search_dimension(const AttackProblem& problem) {
  switch (problem.parameterization) {
    case Parameterization::per_pixel: return problem.reference.size();
    case Parameterization::per_pixel_luminance: return problem.reference.height * problem.reference.width;
    case Parameterization::color_darkening: return 3;
  }
  return problem.reference.size();
}

Vector initial_search_point(const AttackProblem& problem) {
  const auto n = static_cast<Eigen::Index>(search_dimension(problem));
  return problem.parameterization == Parameterization::color_darkening ? Vector::Ones(n)
                                                                       : Vector::Zero(n);
}

double initial_step_size(const AttackProblem& problem) {
  if (problem.initial_step) return *problem.initial_step;
  return problem.parameterization == Parameterization::color_darkening ? 0.25 : 0.3;
}

Image decode_candidate(const AttackProblem& problem, const Vector& p) {
  const Image& ref = problem.reference;
  const std::size_t expected = search_dimension(problem);
  if (static_cast<std::size_t>(p.size()) != expected) {
    throw ProblemError("search point has " + std::to_string(p.size()) + " values, expected " +
                       std::to_string(expected));
  }
  Image out = ref;
  const std::size_t plane = ref.height * ref.width;
  switch (problem.parameterization) {
    case Parameterization::per_pixel:
      for (std::size_t i = 0; i < out.size(); ++i) {
        out.values[i] = std::clamp(ref.values[i] + p(static_cast<Eigen::Index>(i)), 0.0, 1.0);
      }
      break;
    case Parameterization::per_pixel_luminance:
      for (std::size_t i = 0; i < out.size(); ++i) {
        out.values[i] =
            std::clamp(ref.values[i] + p(static_cast<Eigen::Index>(i % plane)), 0.0, 1.0);
      }
      break;
    case Parameterization::color_darkening:
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double beta = std::clamp(p(static_cast<Eigen::Index>(i / plane)), 0.0, 1.0);
        out.values[i] = std::clamp(ref.values[i] * beta, 0.0, 1.0);
      }
      break;
  }
  if (problem.quantize) quantize_8bit(out);
  return out;
}

void BisectionConfig::validate() const {
  if (max_steps == 0) throw ProblemError("bisection max_steps must be positive");
  if (!(min_interval > 0.0 && min_interval < 1.0)) {
    throw ProblemError("bisection min_interval must lie in (0, 1)");
  }
}

namespace {

/// Box in search space outside of which decoding only clamps.
void search_bounds(const AttackProblem& problem, Vector& lo, Vector& hi) {
  const Image& ref = problem.reference;
  const auto n = static_cast<Eigen::Index>(search_dimension(problem));
  const std::size_t plane = ref.height * ref.width;
  switch (problem.parameterization) {
    case Parameterization::per_pixel:
      lo.resize(n);
      hi.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        lo(i) = -ref.values[static_cast<std::size_t>(i)];
        hi(i) = 1.0 - ref.values[static_cast<std::size_t>(i)];
      }
      break;
    case Parameterization::per_pixel_luminance:
      lo = Vector::Zero(n);
      hi = Vector::Zero(n);
      for (std::size_t i = 0; i < ref.size(); ++i) {
        const auto j = static_cast<Eigen::Index>(i % plane);
        lo(j) = std::min(lo(j), -ref.values[i]);
        hi(j) = std::max(hi(j), 1.0 - ref.values[i]);
      }
      break;
    case Parameterization::color_darkening:
      lo = Vector::Zero(n);
      hi = Vector::Ones(n);
      break;
  }
}

struct Refined {
  Image image;
  Label label;
  std::size_t steps = 0;
};

Refined refine(const AttackProblem& problem, const Image& start, Label start_label,
               const BisectionConfig& config, QueryLedger& ledger, std::uint64_t query_limit) {
  const std::vector<double>& ref = problem.reference.values;
  const std::size_t n = ref.size();
  std::vector<double> current = start.values;
  std::vector<double> low = ref;
  std::vector<double> high = current;
  std::vector<bool> frozen(n);
  for (std::size_t i = 0; i < n; ++i) frozen[i] = std::abs(high[i] - low[i]) < config.min_interval;

  Refined out{start, start_label, 0};
  std::optional<std::size_t> active;
  while (out.steps < config.max_steps && out.steps < query_limit) {
    if (!active || frozen[*active]) {
      active.reset();
      double widest = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (frozen[i]) continue;
        const double gap = std::abs(current[i] - ref[i]);
        if (gap > widest) {
          widest = gap;
          active = i;
        }
      }
      if (!active) break;
    }
    const std::size_t i = *active;
    double mid = 0.5 * (low[i] + high[i]);
    if (problem.quantize) mid = std::round(mid * 255.0) / 255.0;
    if (mid == low[i] || mid == high[i]) {
      frozen[i] = true;
      continue;
    }

    Vector trial = Eigen::Map<const Vector>(current.data(), static_cast<Eigen::Index>(n));
    trial(static_cast<Eigen::Index>(i)) = mid;
    const Label label = problem.classifier->classify(trial, ledger);
    ++out.steps;
    if (problem.is_adversarial(label)) {
      current[i] = mid;
      high[i] = mid;
      out.label = label;
      active.reset();
      // Failed midpoints elsewhere were judged against the old point; retry from the reference.
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        low[j] = ref[j];
        frozen[j] = std::abs(high[j] - low[j]) < config.min_interval;
      }
    } else {
      low[i] = mid;
    }
    if (std::abs(high[i] - low[i]) < config.min_interval) frozen[i] = true;
  }
  out.image.values = std::move(current);
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

Image bisection_refine(const AttackProblem& problem, const Image& start,
                       const BisectionConfig& config) {
  QueryLedger ledger;
  return bisection_refine(problem, start, config, ledger);
}

Image bisection_refine(const AttackProblem& problem, const Image& start,
                       const BisectionConfig& config, QueryLedger& ledger,
                       std::uint64_t query_limit) {
  config.validate();
  check_classifier_shape(problem);
  if (!start.same_shape(problem.reference) || start.size() != problem.reference.size()) {
    throw ProblemError("bisection start " + start.shape_string() + " does not match the reference " +
                       problem.reference.shape_string());
  }
  if (query_limit == 0) throw ProblemError("no queries left to verify the bisection start");
  const Label label = problem.classifier->classify(start.as_vector(), ledger);
  if (!problem.is_adversarial(label)) {
    throw ProblemError("bisection start is not misclassified (label " + std::to_string(label.value) + ")");
  }
  return refine(problem, start, label, config, ledger, query_limit - 1).image;
}

Distances measure_distances(const Image& reference, const Image& candidate) {
  Distances d;
  d.l1 = norm_distance(NormKind::l1, reference.span(), candidate.span());
  d.l2 = norm_distance(NormKind::l2, reference.span(), candidate.span());
  d.linf = norm_distance(NormKind::linf, reference.span(), candidate.span());
  d.average_perturbation = reference.size() == 0 ? 0.0 : average_perturbation(reference, candidate);
  return d;
}

json result_to_json(const AttackResult& r) {
  json doc{{"success", r.success},
           {"adversarial_label", r.adversarial_label.value},
           {"reference_label", r.reference_label.value},
           {"adversarial_shape", {r.adversarial.channels, r.adversarial.height, r.adversarial.width}},
           {"adversarial_values", r.adversarial.values},
           {"l1", r.distances.l1},
           {"l2", r.distances.l2},
           {"linf", r.distances.linf},
           {"average_perturbation", r.distances.average_perturbation},
           {"generations_used", r.generations_used},
           {"queries_used", r.queries_used},
           {"bisection_applied", r.bisection_applied},
           {"history", r.history},
           {"fallback_generations", r.fallback_generations},
           {"stop_reason", r.stop_reason}};
  if (r.adversarial.channels == 1 || r.adversarial.channels == 3) {
    doc["adversarial_png"] = base64_encode(encode_png(r.adversarial));
  }
  return doc;
}

std::uint64_t generation_seed(std::uint64_t seed, std::uint64_t generation) {
  return splitmix64(splitmix64(seed) ^ generation);
}

// ----------------------------------------------------------------------------
// Engine

AttackEngine::AttackEngine(AttackProblem problem, EngineOptions options)
    : AttackEngine(std::move(problem), std::move(options), false) {}

AttackEngine::AttackEngine(AttackProblem problem, EngineOptions options, bool defer_start)
    : problem_(std::move(problem)),
      options_(std::move(options)),
      best_label_(problem_.reference_label) {
  if (defer_start) {
    check_classifier_shape(problem_);
  } else {
    validate_problem(problem_);
  }
  if (options_.bisection) options_.bisection->validate();
  options_.metric.penalty.validate();
  if (problem_.parameterization == Parameterization::color_darkening) {
    options_.metric.color_darkening = true;
  }

  StrategyOverrides overrides = problem_.strategy_overrides;
  if (options_.perceptual && !overrides.weight_mode && !overrides.weights) {
    overrides.weight_mode = WeightMode::uniform_top_k;
  }
  auto [config, state] = init_strategy(search_dimension(problem_), overrides,
                                       initial_search_point(problem_), initial_step_size(problem_));
  config_ = std::move(config);
  state_ = std::move(state);
  best_image_ = problem_.reference;
  search_bounds(problem_, lower_, upper_);
  if (!defer_start) advance();
}

AttackEngine AttackEngine::restore(AttackProblem problem, EngineOptions options,
                                   const EngineSnapshot& snap) {
  AttackEngine engine(std::move(problem), std::move(options), true);
  const std::size_t n = engine.config_.dimension;
  if (static_cast<std::size_t>(snap.state.mean.size()) != n ||
      snap.population.candidates.size() != engine.config_.population_size ||
      snap.labels.size() != snap.population.candidates.size()) {
    throw EngineError("snapshot does not match the problem's search space");
  }
  if (snap.completed_generations >= engine.problem_.iterations) {
    throw EngineError("snapshot has no pending generation");
  }
  engine.state_ = snap.state;
  engine.completed_ = snap.completed_generations;
  engine.population_ = snap.population;
  engine.labels_ = snap.labels;
  engine.ledger_.restore(snap.queries_total, snap.queries_per_generation);
  engine.has_best_ = snap.has_best;
  engine.best_fitness_ = snap.best_fitness;
  engine.best_image_ = snap.has_best ? snap.best_image : engine.problem_.reference;
  engine.best_label_ = snap.best_label;
  engine.history_ = snap.history;
  engine.fallback_generations_ = snap.fallback_generations;
  engine.pending_ = engine.build_request();
  return engine;
}

EngineSnapshot AttackEngine::snapshot() const {
  if (!pending_) throw EngineError("only an engine awaiting a selection can be snapshotted");
  EngineSnapshot s;
  s.state = state_;
  s.completed_generations = completed_;
  s.population = population_;
  s.labels = labels_;
  s.queries_total = ledger_.total();
  s.queries_per_generation = ledger_.per_generation();
  s.has_best = has_best_;
  s.best_fitness = best_fitness_;
  if (has_best_) s.best_image = best_image_;
  s.best_label = best_label_;
  s.history = history_;
  s.fallback_generations = fallback_generations_;
  return s;
}

double AttackEngine::tracked_fitness(const CandidateEntry& entry) const {
  if (options_.metric.color_darkening) {
    const std::array<double, 3> betas{std::clamp(entry.parameters(0), 0.0, 1.0),
                                      std::clamp(entry.parameters(1), 0.0, 1.0),
                                      std::clamp(entry.parameters(2), 0.0, 1.0)};
    return color_fitness(betas, entry.selectable, options_.metric.penalty);
  }
  return penalized_fitness(options_.metric.norm, entry.selectable, entry.image.span(),
                           problem_.reference.span(), options_.metric.penalty);
}

SelectionRequest AttackEngine::build_request(std::vector<Image> decoded) const {
  SelectionRequest req;
  req.session_id = options_.session_id;
  req.generation = completed_ + 1;
  req.total_generations = problem_.iterations;
  req.final_generation = completed_ + 1 == problem_.iterations;
  req.reference_image = problem_.reference;
  req.k_required = config_.parent_count;
  req.candidates.reserve(population_.candidates.size());
  for (std::size_t i = 0; i < population_.candidates.size(); ++i) {
    CandidateEntry e;
    e.index = i;
    e.parameters = population_.candidates[i];
    e.image = decoded.empty() ? decode_candidate(problem_, e.parameters) : std::move(decoded[i]);
    e.selectable = problem_.is_adversarial(labels_[i]);
    req.candidates.push_back(std::move(e));
  }
  return req;
}

void AttackEngine::track(const SelectionRequest& request) {
  double generation_best = std::numeric_limits<double>::infinity();
  for (const CandidateEntry& e : request.candidates) {
    const double f = tracked_fitness(e);
    generation_best = std::min(generation_best, f);
    if (e.selectable && f < best_fitness_) {
      best_fitness_ = f;
      best_image_ = e.image;
      best_label_ = labels_[e.index];
      has_best_ = true;
    }
  }
  history_.push_back(generation_best);
}

bool AttackEngine::budget_allows_generation() const {
  if (!problem_.query_budget) return true;
  return ledger_.total() + config_.population_size <= *problem_.query_budget;
}

void AttackEngine::advance() {
  while (!finished_) {
    if (completed_ >= problem_.iterations) {
      finalize("completed");
      return;
    }
    if (!budget_allows_generation()) {
      finalize("query_budget");
      return;
    }
    ledger_.begin_generation();
    population_ = sample_population(state_, config_, generation_seed(options_.seed, completed_ + 1));
    std::vector<Image> images;
    std::vector<Vector> inputs;
    images.reserve(population_.candidates.size());
    inputs.reserve(population_.candidates.size());
    for (const Vector& x : population_.candidates) {
      images.push_back(decode_candidate(problem_, x));
      inputs.push_back(images.back().as_vector());
    }
    labels_ = problem_.classifier->classify_batch(inputs, ledger_);
    SelectionRequest request = build_request(std::move(images));
    track(request);

    if (options_.perceptual && request.selectable_count() == 0) {
      std::vector<std::size_t> ranking = metric_ranking(request, options_.metric);
      ranking.resize(std::min(ranking.size(), config_.parent_count));
      events_.push_back({"fallback", request.generation,
                         "no misclassified candidates; ranked by penalized fitness"});
      ++fallback_generations_;
      apply(Selection{std::move(ranking), true});
      continue;
    }
    pending_ = std::move(request);
    return;
  }
}

void AttackEngine::apply(const Selection& selection) {
  state_ = update_strategy(state_, config_, population_, selection);
  // Past the box decoding only clamps, so a mean out there sits on a plateau
  // with nothing to pull it back. Keep it on the boundary instead.
  state_.mean = state_.mean.cwiseMax(lower_).cwiseMin(upper_);
  ++completed_;
}

void AttackEngine::submit(const SelectionResponse& response) {
  if (finished_) throw EngineError("attack already finished");
  if (!pending_) throw EngineError("no selection is pending");
  Selection selection;
  if (options_.perceptual) {
    validate_response(*pending_, response, false);
    selection.ordered = false;
    if (pending_->final_generation && response.final_pick) {
      final_pick_image_ = pending_->candidates[*response.final_pick].image;
      final_pick_label_ = labels_[*response.final_pick];
    }
  } else {
    if (response.chosen.empty() || response.chosen.size() > config_.parent_count) {
      throw SelectionError("metric selection must rank between 1 and K=" +
                           std::to_string(config_.parent_count) + " candidates");
    }
    std::set<std::size_t> seen;
    for (std::size_t idx : response.chosen) {
      if (idx >= population_.candidates.size() || !seen.insert(idx).second) {
        throw SelectionError("metric selection contains an invalid or repeated index " +
                             std::to_string(idx));
      }
    }
    selection.ordered = true;
  }
  selection.ranked_indices = response.chosen;
  pending_.reset();
  apply(selection);
  advance();
}

void AttackEngine::finalize(std::string reason) {
  AttackResult r;
  r.reference_label = problem_.reference_label;
  r.stop_reason = std::move(reason);
  if (final_pick_image_) {
    r.adversarial = *final_pick_image_;
    r.adversarial_label = *final_pick_label_;
  } else if (has_best_) {
    r.adversarial = best_image_;
    r.adversarial_label = best_label_;
  } else {
    r.adversarial = problem_.reference;
    r.adversarial_label = problem_.reference_label;
  }
  r.success = problem_.is_adversarial(r.adversarial_label);

  if (r.success && options_.bisection) {
    std::uint64_t limit = std::numeric_limits<std::uint64_t>::max();
    if (problem_.query_budget) {
      limit = *problem_.query_budget > ledger_.total() ? *problem_.query_budget - ledger_.total() : 0;
    }
    if (limit > 0) {
      ledger_.begin_generation();
      Refined refined = refine(problem_, r.adversarial, r.adversarial_label, *options_.bisection,
                               ledger_, limit);
      r.adversarial = std::move(refined.image);
      r.adversarial_label = refined.label;
      r.bisection_applied = true;
    }
  }
  r.distances = measure_distances(problem_.reference, r.adversarial);
  r.generations_used = completed_;
  r.queries_used = ledger_.total();
  r.history = history_;
  r.fallback_generations = fallback_generations_;
  result_ = std::move(r);
  pending_.reset();
  labels_.clear();
  finished_ = true;
}

const AttackResult& AttackEngine::result() const {
  if (!finished_) throw EngineError("attack has not finished");
  return result_;
}

std::vector<EngineEvent> AttackEngine::drain_events() {
  std::vector<EngineEvent> out;
  out.swap(events_);
  return out;
}

EngineOptions engine_options_for(const SelectionOracle& oracle, const AttackProblem& problem,
                                 const std::optional<BisectionConfig>& bisection,
                                 std::uint64_t seed) {
  EngineOptions o;
  o.perceptual = oracle.perceptual();
  o.bisection = bisection;
  o.seed = seed;
  if (const auto* metric = dynamic_cast<const MetricOracle*>(&oracle)) o.metric = metric->spec();
  if (problem.parameterization == Parameterization::color_darkening) o.metric.color_darkening = true;
  return o;
}

AttackResult run_attack(const AttackProblem& problem, SelectionOracle& oracle,
                        const std::optional<BisectionConfig>& bisection, std::uint64_t rng_seed) {
  AttackEngine engine(problem, engine_options_for(oracle, problem, bisection, rng_seed));
  while (const SelectionRequest* request = engine.pending()) {
    engine.submit(oracle.respond(*request));
  }
  return engine.result();
}

// ----------------------------------------------------------------------------
// Problem documents

namespace {

Image reference_from_json(const json& doc, const std::filesystem::path& base_dir) {
  if (doc.contains("png")) return decode_png(base64_decode(doc["png"].get<std::string>()));
  if (doc.contains("png_path")) {
    std::filesystem::path p = doc["png_path"].get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    return read_png(p);
  }
  const auto shape = doc.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3) throw ProblemError("reference shape must be [channels, height, width]");
  Image img(shape[0], shape[1], shape[2]);
  img.values = doc.at("values").get<std::vector<double>>();
  check_shape(img);
  return img;
}

void strategy_from_json(const json& s, StrategyOverrides& o) {
  if (s.contains("population_size")) o.population_size = s["population_size"].get<std::size_t>();
  if (s.contains("parent_count")) o.parent_count = s["parent_count"].get<std::size_t>();
  if (s.contains("weights")) {
    const auto w = s["weights"].get<std::vector<double>>();
    o.weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  }
  if (s.contains("learn_mean")) o.learn_mean = s["learn_mean"].get<double>();
  if (s.contains("learn_rank_one")) o.learn_rank_one = s["learn_rank_one"].get<double>();
  if (s.contains("learn_rank_k")) o.learn_rank_k = s["learn_rank_k"].get<double>();
  if (s.contains("learn_path")) o.learn_path = s["learn_path"].get<double>();
  if (s.contains("learn_step")) o.learn_step = s["learn_step"].get<double>();
  if (s.contains("damping_step")) o.damping_step = s["damping_step"].get<double>();
  if (s.contains("weight_mode")) o.weight_mode = parse_weight_mode(s["weight_mode"].get<std::string>());
  if (s.contains("covariance_mode")) {
    const auto mode = s["covariance_mode"].get<std::string>();
    if (mode == "full") {
      o.covariance_mode = CovarianceMode::full;
    } else if (mode == "diagonal") {
      o.covariance_mode = CovarianceMode::diagonal;
    } else {
      throw ProblemError("unknown covariance_mode '" + mode + "'");
    }
  }
  if (s.contains("eigen_interval")) o.eigen_interval = s["eigen_interval"].get<std::size_t>();
}

json strategy_to_json(const StrategyOverrides& o) {
  json s = json::object();
  if (o.population_size) s["population_size"] = *o.population_size;
  if (o.parent_count) s["parent_count"] = *o.parent_count;
  if (o.weights) s["weights"] = std::vector<double>(o.weights->data(), o.weights->data() + o.weights->size());
  if (o.learn_mean) s["learn_mean"] = *o.learn_mean;
  if (o.learn_rank_one) s["learn_rank_one"] = *o.learn_rank_one;
  if (o.learn_rank_k) s["learn_rank_k"] = *o.learn_rank_k;
  if (o.learn_path) s["learn_path"] = *o.learn_path;
  if (o.learn_step) s["learn_step"] = *o.learn_step;
  if (o.damping_step) s["damping_step"] = *o.damping_step;
  if (o.weight_mode) s["weight_mode"] = std::string(to_string(*o.weight_mode));
  if (o.covariance_mode) {
    s["covariance_mode"] = *o.covariance_mode == CovarianceMode::full ? "full" : "diagonal";
  }
  if (o.eigen_interval) s["eigen_interval"] = *o.eigen_interval;
  return s;
}

}  // namespace

AttackProblem problem_from_json(const json& doc, const std::filesystem::path& base_dir) {
  AttackProblem p;
  try {
    p.reference = reference_from_json(doc.at("reference"), base_dir);
    json cdoc = doc.at("classifier");
    if (cdoc.value("kind", "") == "mlp_file") {
      std::filesystem::path path = cdoc.at("path").get<std::string>();
      if (path.is_relative()) path = base_dir / path;
      cdoc["path"] = std::filesystem::absolute(path).lexically_normal().string();
    }
    p.classifier = std::make_shared<const Classifier>(classifier_from_json(cdoc));
    if (doc.contains("parameterization")) {
      p.parameterization = parse_parameterization(doc["parameterization"].get<std::string>());
    }
    p.iterations = doc.value("iterations", p.iterations);
    if (doc.contains("strategy")) strategy_from_json(doc["strategy"], p.strategy_overrides);
    if (doc.contains("initial_step") && !doc["initial_step"].is_null()) {
      p.initial_step = doc["initial_step"].get<double>();
    }
    p.quantize = doc.value("quantize", false);
    if (doc.contains("query_budget") && !doc["query_budget"].is_null()) {
      p.query_budget = doc["query_budget"].get<std::uint64_t>();
    }
    if (doc.contains("target_label") && !doc["target_label"].is_null()) {
      p.target_label = Label(doc["target_label"].get<std::int32_t>());
    }
    if (doc.contains("reference_label") && !doc["reference_label"].is_null()) {
      p.reference_label = Label(doc["reference_label"].get<std::int32_t>());
    } else {
      QueryLedger scratch;
      p.reference_label = p.classifier->classify(p.reference.as_vector(), scratch);
    }
  } catch (const json::exception& e) {
    throw ProblemError(std::string("malformed problem document: ") + e.what());
  } catch (const ImageError& e) {
    throw ProblemError(std::string("bad reference image: ") + e.what());
  }
  return p;
}

json problem_to_json(const AttackProblem& p) {
  json doc{{"reference",
            {{"shape", {p.reference.channels, p.reference.height, p.reference.width}},
             {"values", p.reference.values}}},
           {"reference_label", p.reference_label.value},
           {"classifier", classifier_to_json(p.classifier->spec())},
           {"parameterization", std::string(to_string(p.parameterization))},
           {"iterations", p.iterations},
           {"strategy", strategy_to_json(p.strategy_overrides)},
           {"quantize", p.quantize}};
  doc["target_label"] = p.target_label ? json(p.target_label->value) : json(nullptr);
  doc["initial_step"] = p.initial_step ? json(*p.initial_step) : json(nullptr);
  doc["query_budget"] = p.query_budget ? json(*p.query_budget) : json(nullptr);
  return doc;
}

}  // namespace advcma
