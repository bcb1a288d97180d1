#include "advcma/benchmark.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace advcma {

using nlohmann::json;
namespace fs = std::filesystem;

AttackSettings mode_defaults(std::string_view mode) {
  AttackSettings s;
  if (mode == "per_pixel" || mode == "pixel") {
    s.iterations = 180;
    s.strategy.population_size = 4;
    s.strategy.parent_count = 2;
  } else if (mode == "color") {
    s.parameterization = Parameterization::color_darkening;
    s.iterations = 3;
    s.strategy.population_size = 240;
    s.strategy.parent_count = 120;
  } else if (mode == "perception") {
    s.iterations = 3;
    s.strategy.population_size = 20;
    s.strategy.parent_count = 5;
  } else {
    throw std::invalid_argument("unknown mode '" + std::string(mode) + "'");
  }
  return s;
}

AttackSettings linf_defaults() {
  AttackSettings s;
  s.norm = NormKind::linf;
  s.iterations = 3;
  s.strategy.population_size = 240;
  s.strategy.parent_count = 120;
  return s;
}

json settings_to_json(const AttackSettings& s) {
  json doc{{"norm", std::string(to_string(s.norm))},
           {"parameterization", std::string(to_string(s.parameterization))},
           {"iterations", s.iterations},
           {"quantize", s.quantize}};
  doc["population_size"] = s.strategy.population_size ? json(*s.strategy.population_size) : json(nullptr);
  doc["parent_count"] = s.strategy.parent_count ? json(*s.strategy.parent_count) : json(nullptr);
  doc["weight_mode"] =
      s.strategy.weight_mode ? json(std::string(to_string(*s.strategy.weight_mode))) : json(nullptr);
  doc["initial_step"] = s.initial_step ? json(*s.initial_step) : json(nullptr);
  doc["query_budget"] = s.query_budget ? json(*s.query_budget) : json(nullptr);
  doc["bisection"] = s.bisection ? json{{"max_steps", s.bisection->max_steps},
                                        {"min_interval", s.bisection->min_interval}}
                                 : json(nullptr);
  doc["penalty"] = {{"same_class_offset", s.penalty.same_class_offset},
                    {"same_class_scale", s.penalty.same_class_scale},
                    {"color_penalty", s.penalty.color_penalty}};
  return doc;
}

AttackProblem make_problem(const Image& reference, Label label,
                           std::shared_ptr<const Classifier> classifier, const AttackSettings& s) {
  AttackProblem p;
  p.reference = reference;
  p.reference_label = label;
  p.classifier = std::move(classifier);
  p.parameterization = s.parameterization;
  p.iterations = s.iterations;
  p.strategy_overrides = s.strategy;
  p.initial_step = s.initial_step;
  p.quantize = s.quantize;
  p.query_budget = s.query_budget;
  return p;
}

MetricOracle make_metric_oracle(const AttackSettings& s) {
  MetricSpec spec;
  spec.norm = s.norm;
  spec.color_darkening = s.parameterization == Parameterization::color_darkening;
  spec.penalty = s.penalty;
  return MetricOracle(spec);
}

std::uint64_t item_seed(std::uint64_t seed, std::size_t dataset_index) {
  return generation_seed(seed ^ 0x5EEDBA5EULL, dataset_index);
}

namespace {

/// Runs body(i) for i in [0, count) on `workers` threads; rethrows the first failure.
template <typename F>
void parallel_for(std::size_t count, std::size_t workers, F&& body) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
  };
  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

int class_count(const Dataset& dataset, const Classifier& classifier) {
  int classes = classifier.spec().num_classes();
  if (classes > 0) return classes;
  for (Label l : dataset.labels) classes = std::max(classes, l.value + 1);
  return classes;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::vector<std::vector<std::size_t>> sample_items(const Dataset& dataset, const Classifier& classifier,
                                                   std::size_t per_class, std::uint64_t seed,
                                                   std::vector<std::size_t>* correct_counts) {
  const int classes = class_count(dataset, classifier);
  std::vector<std::vector<std::size_t>> correct(static_cast<std::size_t>(classes));
  std::vector<Vector> inputs;
  inputs.reserve(dataset.size());
  for (const Image& img : dataset.images) inputs.push_back(img.as_vector());
  QueryLedger scratch;
  const std::vector<Label> predicted = classifier.classify_batch(inputs, scratch);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Label truth = dataset.labels[i];
    if (truth.value < 0 || truth.value >= classes) continue;
    if (predicted[i] == truth) correct[static_cast<std::size_t>(truth.value)].push_back(i);
  }
  if (correct_counts) {
    correct_counts->clear();
    for (const auto& c : correct) correct_counts->push_back(c.size());
  }
  for (std::size_t c = 0; c < correct.size(); ++c) {
    std::mt19937_64 rng(item_seed(seed, c));
    std::shuffle(correct[c].begin(), correct[c].end(), rng);
    if (correct[c].size() > per_class) correct[c].resize(per_class);
    std::sort(correct[c].begin(), correct[c].end());
  }
  return correct;
}

BenchmarkReport run_benchmark(const Dataset& dataset, std::shared_ptr<const Classifier> classifier,
                              const AttackSettings& settings, const RunOptions& options) {
  BenchmarkReport report;
  if (options.per_class == 0) return report;
  const std::size_t dim = classifier->spec().input_dim();
  if (dim != 0 && !dataset.images.empty() && dataset.images.front().size() != dim) {
    throw std::invalid_argument("classifier expects " + std::to_string(dim) + " inputs but dataset images have " +
                                std::to_string(dataset.images.front().size()) + " values");
  }

  std::vector<std::size_t> available;
  const auto sampled = sample_items(dataset, *classifier, options.per_class, options.seed, &available);
  std::vector<std::size_t> work;
  for (const auto& c : sampled) work.insert(work.end(), c.begin(), c.end());
  std::sort(work.begin(), work.end());

  if (options.run_dir) fs::create_directories(*options.run_dir / "items");

  report.items.resize(work.size());
  const MetricOracle prototype = make_metric_oracle(settings);
  parallel_for(work.size(), options.workers, [&](std::size_t slot) {
    const std::size_t index = work[slot];
    MetricOracle oracle = prototype;
    const AttackProblem problem = make_problem(dataset.images[index], dataset.labels[index], classifier, settings);
    const auto start = std::chrono::steady_clock::now();
    AttackResult result = run_attack(problem, oracle, settings.bisection, item_seed(options.seed, index));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (options.run_dir) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "item_%06zu", index);
      json doc = result_to_json(result);
      doc["dataset_index"] = index;
      doc.erase("adversarial_png");
      write_file(*options.run_dir / "items" / (std::string(stem) + ".json"), doc.dump(2));
      if (result.adversarial.channels == 1 || result.adversarial.channels == 3) {
        write_png(*options.run_dir / "items" / (std::string(stem) + ".png"), result.adversarial);
      }
    }
    report.items[slot] = ItemResult{index, dataset.labels[index], std::move(result), seconds};
  });

  report.classes.resize(sampled.size());
  double perturbation_sum = 0.0;
  for (std::size_t c = 0; c < sampled.size(); ++c) {
    ClassReport& row = report.classes[c];
    row.label = Label(static_cast<std::int32_t>(c));
    row.correct_available = available[c];
    if (sampled[c].empty()) {
      row.skipped = true;
      row.skip_reason = "no correctly classified items";
    }
  }
  for (const ItemResult& item : report.items) {
    ClassReport& row = report.classes[static_cast<std::size_t>(item.label.value)];
    ++row.attempted;
    row.mean_queries += static_cast<double>(item.result.queries_used);
    row.mean_seconds += item.seconds;
    report.total_queries += item.result.queries_used;
    if (item.result.success) {
      ++row.succeeded;
      row.mean_perturbation_percent += 100.0 * item.result.distances.average_perturbation;
      perturbation_sum += 100.0 * item.result.distances.average_perturbation;
    }
  }
  for (ClassReport& row : report.classes) {
    if (row.attempted == 0) continue;
    report.attempted += row.attempted;
    report.succeeded += row.succeeded;
    if (row.succeeded > 0) row.mean_perturbation_percent /= static_cast<double>(row.succeeded);
    row.success_percent = 100.0 * static_cast<double>(row.succeeded) / static_cast<double>(row.attempted);
    row.mean_queries /= static_cast<double>(row.attempted);
    row.mean_seconds /= static_cast<double>(row.attempted);
  }
  if (report.attempted > 0) {
    report.overall_success_percent =
        100.0 * static_cast<double>(report.succeeded) / static_cast<double>(report.attempted);
  }
  if (report.succeeded > 0) report.mean_perturbation_percent = perturbation_sum / static_cast<double>(report.succeeded);

  if (options.run_dir) {
    write_file(*options.run_dir / "config.json",
               json{{"settings", settings_to_json(settings)},
                    {"per_class", options.per_class},
                    {"seed", options.seed}}
                   .dump(2));
    write_file(*options.run_dir / "report.json", report_to_json(report, settings, options).dump(2));
    write_file(*options.run_dir / "report.txt", report_table(report));
    json timings = json::array();
    for (const ItemResult& item : report.items) {
      timings.push_back({{"dataset_index", item.dataset_index}, {"seconds", item.seconds}});
    }
    write_file(*options.run_dir / "timings.json", timings.dump(2));
  }
  return report;
}

json report_to_json(const BenchmarkReport& report, const AttackSettings& settings,
                    const RunOptions& options) {
  json classes = json::array();
  for (const ClassReport& row : report.classes) {
    json r{{"label", row.label.value},
           {"correct_available", row.correct_available},
           {"attempted", row.attempted},
           {"succeeded", row.succeeded},
           {"success_percent", row.success_percent},
           {"mean_perturbation_percent", row.mean_perturbation_percent},
           {"mean_queries", row.mean_queries}};
    if (row.skipped) r["skipped"] = row.skip_reason;
    classes.push_back(std::move(r));
  }
  json items = json::array();
  for (const ItemResult& item : report.items) {
    items.push_back({{"dataset_index", item.dataset_index},
                     {"label", item.label.value},
                     {"success", item.result.success},
                     {"adversarial_label", item.result.adversarial_label.value},
                     {"average_perturbation", item.result.distances.average_perturbation},
                     {"l1", item.result.distances.l1},
                     {"l2", item.result.distances.l2},
                     {"linf", item.result.distances.linf},
                     {"queries_used", item.result.queries_used},
                     {"generations_used", item.result.generations_used}});
  }
  return {{"settings", settings_to_json(settings)},
          {"per_class", options.per_class},
          {"seed", options.seed},
          {"attempted", report.attempted},
          {"succeeded", report.succeeded},
          {"overall_success_percent", report.overall_success_percent},
          {"mean_perturbation_percent", report.mean_perturbation_percent},
          {"total_queries", report.total_queries},
          {"classes", std::move(classes)},
          {"items", std::move(items)}};
}

std::string report_table(const BenchmarkReport& report) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-6s %8s %8s %10s %14s %12s %10s\n", "class", "items", "success",
                "rate(%)", "avg-pert(%)", "queries", "s/item");
  out << line;
  for (const ClassReport& row : report.classes) {
    if (row.skipped) {
      std::snprintf(line, sizeof line, "%-6d %8s  %s\n", row.label.value, "-", row.skip_reason.c_str());
    } else {
      std::snprintf(line, sizeof line, "%-6d %8zu %8zu %10.2f %14.2f %12.1f %10.2f\n", row.label.value,
                    row.attempted, row.succeeded, row.success_percent, row.mean_perturbation_percent,
                    row.mean_queries, row.mean_seconds);
    }
    out << line;
  }
  std::snprintf(line, sizeof line, "%-6s %8zu %8zu %10.2f %14.2f %12llu\n", "all", report.attempted,
                report.succeeded, report.overall_success_percent, report.mean_perturbation_percent,
                static_cast<unsigned long long>(report.total_queries));
  out << line;
  return out.str();
}

LinfReport run_linf_comparison(const Dataset& dataset, std::shared_ptr<const Classifier> classifier,
                               const AttackSettings& settings,
                               const std::optional<BisectionConfig>& bisection,
                               const RunOptions& options) {
  AttackSettings pure = settings;
  pure.bisection.reset();
  LinfReport report;
  if (options.per_class == 0) return report;
  const auto sampled = sample_items(dataset, *classifier, options.per_class, options.seed);
  std::vector<std::size_t> work;
  for (const auto& c : sampled) work.insert(work.end(), c.begin(), c.end());
  std::sort(work.begin(), work.end());

  report.items.resize(work.size());
  const MetricOracle prototype = make_metric_oracle(pure);
  parallel_for(work.size(), options.workers, [&](std::size_t slot) {
    const std::size_t index = work[slot];
    MetricOracle oracle = prototype;
    const AttackProblem problem = make_problem(dataset.images[index], dataset.labels[index], classifier, pure);
    const AttackResult result = run_attack(problem, oracle, std::nullopt, item_seed(options.seed, index));
    LinfItem item;
    item.dataset_index = index;
    item.label = dataset.labels[index];
    item.success = result.success;
    item.pure_linf = result.distances.linf;
    item.pure_queries = result.queries_used;
    item.bisection_linf = item.pure_linf;
    item.bisection_queries = item.pure_queries;
    if (bisection && result.success) {
      QueryLedger ledger;
      std::uint64_t limit = std::numeric_limits<std::uint64_t>::max();
      if (pure.query_budget) {
        limit = *pure.query_budget > result.queries_used ? *pure.query_budget - result.queries_used : 0;
      }
      if (limit > 0) {
        const Image refined = bisection_refine(problem, result.adversarial, *bisection, ledger, limit);
        item.bisection_linf = norm_distance(NormKind::linf, problem.reference.span(), refined.span());
        item.bisection_queries = result.queries_used + ledger.total();
      }
    }
    report.items[slot] = item;
  });

  std::map<int, LinfRow> rows;
  for (std::size_t c = 0; c < sampled.size(); ++c) {
    if (!sampled[c].empty()) rows[static_cast<int>(c)].label = Label(static_cast<std::int32_t>(c));
  }
  double pure_total = 0.0;
  double bisect_total = 0.0;
  for (const LinfItem& item : report.items) {
    LinfRow& row = rows[item.label.value];
    ++row.items;
    if (!item.success) continue;
    ++row.succeeded;
    row.pure_percent += 100.0 * item.pure_linf;
    row.bisection_percent += 100.0 * item.bisection_linf;
  }
  for (auto& [_, row] : rows) {
    if (row.succeeded > 0) {
      row.pure_percent /= static_cast<double>(row.succeeded);
      row.bisection_percent /= static_cast<double>(row.succeeded);
      pure_total += row.pure_percent;
      bisect_total += row.bisection_percent;
    }
    report.rows.push_back(row);
  }
  if (pure_total > 0.0) report.mean_reduction_percent = 100.0 * (1.0 - bisect_total / pure_total);
  return report;
}

json linf_report_to_json(const LinfReport& report) {
  json rows = json::array();
  for (const LinfRow& r : report.rows) {
    rows.push_back({{"label", r.label.value},
                    {"items", r.items},
                    {"succeeded", r.succeeded},
                    {"pure_linf_percent", r.pure_percent},
                    {"bisection_linf_percent", r.bisection_percent}});
  }
  json items = json::array();
  for (const LinfItem& i : report.items) {
    items.push_back({{"dataset_index", i.dataset_index},
                     {"label", i.label.value},
                     {"success", i.success},
                     {"pure_linf", i.pure_linf},
                     {"bisection_linf", i.bisection_linf},
                     {"pure_queries", i.pure_queries},
                     {"bisection_queries", i.bisection_queries}});
  }
  return {{"rows", std::move(rows)},
          {"items", std::move(items)},
          {"mean_reduction_percent", report.mean_reduction_percent}};
}

std::string linf_report_table(const LinfReport& report) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "%-6s %8s %14s %16s\n", "class", "items", "CMA-ES(%)", "+bisection(%)");
  out << line;
  for (const LinfRow& r : report.rows) {
    std::snprintf(line, sizeof line, "%-6d %8zu %14.2f %16.2f\n", r.label.value, r.items, r.pure_percent,
                  r.bisection_percent);
    out << line;
  }
  out << "mean reduction: " << fixed(report.mean_reduction_percent, 2) << "%\n";
  return out.str();
}

AgreementReport analyze_agreement(const SelectionLog& log) {
  const bool has_l1 = !log.stimuli.empty() &&
                      std::all_of(log.stimuli.begin(), log.stimuli.end(),
                                  [](const StimulusLog& s) { return s.l1_choice.has_value(); });
  log.validate(false);
  AgreementReport r;
  r.epsilon = agreement_spread(log);
  if (has_l1) r.e_div = agreement_vs_l1(log);
  r.stimuli = per_stimulus_agreement(log);
  r.participants = log.participant_count();
  return r;
}

AgreementReport analyze_agreement(const fs::path& log_path) {
  return analyze_agreement(load_selection_log(log_path));
}

json agreement_report_to_json(const AgreementReport& r) {
  json stimuli = json::array();
  for (const StimulusAgreement& s : r.stimuli) {
    json e{{"id", s.id}, {"spread", s.spread}};
    e["l1_divergence"] = s.l1_divergence ? json(*s.l1_divergence) : json(nullptr);
    stimuli.push_back(std::move(e));
  }
  json doc{{"epsilon", r.epsilon}, {"participants", r.participants}, {"stimuli", std::move(stimuli)}};
  doc["e_div"] = r.e_div ? json(*r.e_div) : json(nullptr);
  return doc;
}

std::string agreement_report_table(const AgreementReport& r) {
  std::ostringstream out;
  out << "participants: " << r.participants << ", stimuli: " << r.stimuli.size() << "\n";
  out << "epsilon (spread):      " << fixed(r.epsilon, 4) << "\n";
  out << "E_div (vs L1 choice):  " << (r.e_div ? fixed(*r.e_div, 4) : std::string("n/a")) << "\n";
  char line[128];
  std::snprintf(line, sizeof line, "%-16s %10s %14s\n", "stimulus", "spread", "l1-divergence");
  out << line;
  for (const StimulusAgreement& s : r.stimuli) {
    std::snprintf(line, sizeof line, "%-16s %10.4f %14s\n", s.id.c_str(), s.spread,
                  s.l1_divergence ? fixed(*s.l1_divergence, 4).c_str() : "-");
    out << line;
  }
  return out.str();
}

}  // namespace advcma
