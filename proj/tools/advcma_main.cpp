// advcma: command-line front end for metric-mode attacks, benchmark tables,
// the Linf bisection comparison, agreement analysis and the session service.

#include "advcma/attack.hpp"
#include "advcma/benchmark.hpp"
#include "advcma/classify_server.hpp"
#include "advcma/dataset.hpp"
#include "advcma/session.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace advcma;
using nlohmann::json;

namespace {

struct DatasetArgs {
  std::string idx_images;
  std::string idx_labels;
  std::string png_dir;

  void add(CLI::App* app) {
    app->add_option("--idx-images", idx_images, "IDX image file");
    app->add_option("--idx-labels", idx_labels, "IDX label file");
    app->add_option("--png-dir", png_dir, "directory with PNGs and labels.csv");
  }

  Dataset load() const {
    if (!png_dir.empty()) return ingest_png_dir(png_dir);
    if (idx_images.empty() || idx_labels.empty()) {
      throw CLI::ValidationError("dataset", "give --png-dir or both --idx-images and --idx-labels");
    }
    return ingest_idx(idx_images, idx_labels);
  }
};

struct AttackArgs {
  std::string mode = "per_pixel";
  std::string norm;
  std::optional<std::size_t> iterations;
  std::optional<std::size_t> population;
  std::optional<std::size_t> parents;
  std::optional<double> initial_step;
  std::string weight_mode;
  bool luminance = false;
  bool quantize = false;
  bool bisection = false;
  std::size_t bisection_steps = 200;
  double bisection_interval = 1.0 / 255.0;
  std::optional<std::uint64_t> query_budget;
  std::optional<std::size_t> eigen_interval;

  void add(CLI::App* app, bool with_mode = true) {
    if (with_mode) {
      app->add_option("--mode", mode, "per_pixel | color | perception defaults")
          ->check(CLI::IsMember({"per_pixel", "color", "perception"}));
    }
    app->add_option("--norm", norm, "l0 | l1 | l2 | linf");
    app->add_option("--iterations", iterations, "generations");
    app->add_option("--population,-L", population, "population size L");
    app->add_option("--parents,-K", parents, "parent count K");
    app->add_option("--initial-step", initial_step, "initial step size");
    app->add_option("--weight-mode", weight_mode, "log_decreasing | uniform_top_k");
    app->add_flag("--luminance", luminance, "one perturbation per spatial pixel for all channels");
    app->add_flag("--quantize", quantize, "snap candidates to the 8-bit grid");
    app->add_option("--query-budget", query_budget, "stop after this many classifier queries");
    app->add_option("--eigen-interval", eigen_interval, "generations between eigendecompositions (0 = auto)");
    app->add_option("--bisection-steps", bisection_steps, "bisection query budget");
    app->add_option("--bisection-interval", bisection_interval, "bisection interval floor");
  }

  AttackSettings settings(AttackSettings s) const {
    if (!norm.empty()) s.norm = parse_norm(norm);
    if (iterations) s.iterations = *iterations;
    if (population) s.strategy.population_size = *population;
    if (parents) s.strategy.parent_count = *parents;
    if (!population && parents) s.strategy.population_size.reset();
    if (initial_step) s.initial_step = *initial_step;
    if (!weight_mode.empty()) s.strategy.weight_mode = parse_weight_mode(weight_mode);
    if (eigen_interval) s.strategy.eigen_interval = *eigen_interval;
    if (luminance) s.parameterization = Parameterization::per_pixel_luminance;
    s.quantize = quantize;
    s.query_budget = query_budget;
    if (bisection) s.bisection = BisectionConfig{bisection_steps, bisection_interval};
    return s;
  }
};

std::shared_ptr<const Classifier> load_classifier(const std::string& path) {
  return std::make_shared<const Classifier>(load_weights(path));
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

std::function<void()> g_stop;
void on_signal(int) {
  if (g_stop) g_stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box adversarial examples with CMA-ES"};
  app.set_config("--config", "", "read options from a TOML/INI file");
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  std::string out;
  std::size_t workers = 1;
  app.add_option("--seed", seed, "random seed")->capture_default_str();
  app.add_option("--out", out, "output path (file or directory)");
  app.add_option("--workers", workers, "parallel attacks in batch commands")->capture_default_str();

  // attack
  auto* attack = app.add_subcommand("attack", "attack one image with a metric oracle");
  std::string problem_path;
  std::string weights;
  std::string image_path;
  std::optional<int> label;
  std::optional<int> target;
  AttackArgs attack_args;
  attack->add_option("--problem", problem_path, "problem document (JSON)");
  attack->add_option("--weights", weights, "classifier weights document");
  attack->add_option("--image", image_path, "reference PNG");
  attack->add_option("--label", label, "reference label (default: classifier's answer)");
  attack->add_option("--target", target, "target label for a targeted attack");
  attack->add_flag("--bisection", attack_args.bisection, "refine the result by bisection");
  attack_args.add(attack);

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "per-class success and perturbation table");
  DatasetArgs bench_data;
  std::string bench_weights;
  std::size_t per_class = 10;
  AttackArgs bench_args;
  bench_data.add(bench);
  bench->add_option("--weights", bench_weights, "classifier weights document")->required();
  bench->add_option("--per-class", per_class, "items per class")->capture_default_str();
  bench->add_flag("--bisection", bench_args.bisection, "refine each result by bisection");
  bench_args.add(bench);

  // linf-compare
  auto* linf = app.add_subcommand("linf-compare", "Linf with and without bisection");
  DatasetArgs linf_data;
  std::string linf_weights;
  std::size_t linf_per_class = 10;
  bool no_bisection = false;
  AttackArgs linf_args;
  linf_data.add(linf);
  linf->add_option("--weights", linf_weights, "classifier weights document")->required();
  linf->add_option("--per-class", linf_per_class, "items per class")->capture_default_str();
  linf->add_flag("--no-bisection", no_bisection, "disable the bisection column");
  linf_args.add(linf, false);

  // agreement
  auto* agree = app.add_subcommand("agreement", "spread and L1 divergence of a selection log");
  std::string log_path;
  agree->add_option("log", log_path, "selection log (JSON)")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "run the session service");
  std::string root = "sessions";
  std::string host = "127.0.0.1";
  int port = 8080;
  double timeout_hours = 24.0;
  serve->add_option("--root", root, "session directory")->capture_default_str();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--timeout-hours", timeout_hours, "inactivity before a session aborts")->capture_default_str();

  // serve-classifier
  auto* serve_cls = app.add_subcommand("serve-classifier", "expose a weights file on POST /classify");
  std::string cls_weights;
  std::string cls_host = "127.0.0.1";
  int cls_port = 8081;
  serve_cls->add_option("--weights", cls_weights)->required();
  serve_cls->add_option("--host", cls_host)->capture_default_str();
  serve_cls->add_option("--port", cls_port)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*attack) {
      AttackProblem problem;
      AttackSettings settings = attack_args.settings(mode_defaults(attack_args.mode));
      if (!problem_path.empty()) {
        problem = problem_from_json(read_json(problem_path), fs::path(problem_path).parent_path());
      } else {
        if (weights.empty() || image_path.empty()) {
          throw CLI::ValidationError("attack", "give --problem, or --weights and --image");
        }
        auto classifier = load_classifier(weights);
        const Image reference = read_png(image_path);
        QueryLedger scratch;
        const Label ref_label = label ? Label(*label) : classifier->classify(reference.as_vector(), scratch);
        problem = make_problem(reference, ref_label, classifier, settings);
      }
      if (target) problem.target_label = Label(*target);
      MetricOracle oracle = make_metric_oracle(settings);
      const AttackResult result = run_attack(problem, oracle, settings.bisection, seed);
      const json doc = result_to_json(result);
      if (!out.empty()) {
        fs::create_directories(out);
        write_text(fs::path(out) / "result.json", doc.dump(2));
        if (result.adversarial.channels == 1 || result.adversarial.channels == 3) {
          write_png(fs::path(out) / "adversarial.png", result.adversarial);
        }
      }
      std::cout << "success: " << (result.success ? "yes" : "no") << "  label "
                << problem.reference_label.value << " -> " << result.adversarial_label.value << "\n"
                << "L1 " << result.distances.l1 << "  L2 " << result.distances.l2 << "  Linf "
                << result.distances.linf << "  avg perturbation "
                << 100.0 * result.distances.average_perturbation << "%\n"
                << "generations " << result.generations_used << "  queries " << result.queries_used
                << (result.bisection_applied ? "  (bisection applied)" : "") << "\n";
      return result.success ? 0 : 3;
    }

    if (*bench) {
      const Dataset data = bench_data.load();
      const AttackSettings settings = bench_args.settings(mode_defaults(bench_args.mode));
      RunOptions options{per_class, seed, workers, std::nullopt};
      if (!out.empty()) options.run_dir = fs::path(out);
      const BenchmarkReport report = run_benchmark(data, load_classifier(bench_weights), settings, options);
      std::cout << report_table(report);
      return 0;
    }

    if (*linf) {
      const Dataset data = linf_data.load();
      const AttackSettings settings = linf_args.settings(linf_defaults());
      std::optional<BisectionConfig> bisection;
      if (!no_bisection) bisection = BisectionConfig{linf_args.bisection_steps, linf_args.bisection_interval};
      const RunOptions options{linf_per_class, seed, workers, std::nullopt};
      const LinfReport report =
          run_linf_comparison(data, load_classifier(linf_weights), settings, bisection, options);
      if (!out.empty()) {
        fs::create_directories(out);
        write_text(fs::path(out) / "linf_report.json", linf_report_to_json(report).dump(2));
        write_text(fs::path(out) / "linf_report.txt", linf_report_table(report));
      }
      std::cout << linf_report_table(report);
      return 0;
    }

    if (*agree) {
      const AgreementReport report = analyze_agreement(fs::path(log_path));
      if (!out.empty()) write_text(out, agreement_report_to_json(report).dump(2));
      std::cout << agreement_report_table(report);
      return 0;
    }

    if (*serve) {
      SessionConfig config;
      config.root = root;
      config.inactivity_timeout =
          std::chrono::milliseconds(static_cast<std::int64_t>(timeout_hours * 3600.0 * 1000.0));
      SessionManager manager(config);
      SessionServer server(manager);
      g_stop = [&] { server.stop(); };
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "serving " << manager.list().size() << " session(s) from " << root << " on http://"
                << host << ":" << port << std::endl;
      return server.listen(host, port) ? 0 : 1;
    }

    if (*serve_cls) {
      ClassifyServer server(load_classifier(cls_weights));
      g_stop = [&] { server.stop(); };
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "classifier on http://" << cls_host << ":" << cls_port << "/classify" << std::endl;
      return server.listen(cls_host, cls_port) ? 0 : 1;
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
