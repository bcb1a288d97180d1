#include "test_support.hpp"

#include "advcma/agreement.hpp"

#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <sstream>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run cli(const std::string& args) {
  static const fs::path dir = testing::scratch_dir("cli_io");
  const std::string cmd = std::string("\"") + ADVCMA_CLI_PATH + "\" " + args + " >\"" + (dir / "out").string() +
                          "\" 2>\"" + (dir / "err").string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(dir / "out");
  r.err = slurp(dir / "err");
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

fs::path weights() { return testing::fixture_dir() / "mnist_subset" / "mlp.json"; }
fs::path idx_images() { return testing::fixture_dir() / "mnist_subset" / "t10k-subset-images-idx3-ubyte"; }
fs::path idx_labels() { return testing::fixture_dir() / "mnist_subset" / "t10k-subset-labels-idx1-ubyte"; }

}  // namespace

TEST_CASE("attack from a PNG writes a verifiable result") {
  const fs::path dir = testing::scratch_dir("cli_attack");
  advcma::write_png(dir / "ref.png", testing::fixture_dataset().images[0]);
  const std::string args = "--seed 3 attack --weights " + q(weights()) + " --image " + q(dir / "ref.png") +
                           " --iterations 60 --quantize";
  const Run a = cli("--out " + q(dir / "a") + " " + args);
  REQUIRE((a.code == 0 || a.code == 3));
  CHECK(a.out.find("success:") != std::string::npos);
  const json doc = json::parse(slurp(dir / "a" / "result.json"));
  CHECK(doc["generations_used"] == 60);
  CHECK((a.code == 0) == doc["success"].get<bool>());

  const advcma::Image adv = advcma::read_png(dir / "a" / "adversarial.png");
  advcma::QueryLedger ledger;
  CHECK(testing::fixture_mlp()->classify(adv.as_vector(), ledger).value == doc["adversarial_label"]);

  const Run b = cli("--out " + q(dir / "b") + " " + args);
  CHECK(b.code == a.code);
  CHECK(slurp(dir / "b" / "result.json") == slurp(dir / "a" / "result.json"));
}

TEST_CASE("attack from a problem document") {
  const fs::path dir = testing::scratch_dir("cli_problem");
  const auto& d = testing::fixture_dataset();
  const advcma::Image& ref = d.images[1];
  const json problem{{"reference", {{"shape", {1, 28, 28}}, {"values", ref.values}}},
                     {"reference_label", d.labels[1].value},
                     {"classifier", {{"kind", "mlp_file"}, {"path", weights().string()}}},
                     {"iterations", 5},
                     {"strategy", {{"population_size", 6}, {"parent_count", 3}}}};
  std::ofstream(dir / "problem.json") << problem.dump();
  const Run r = cli("--out " + q(dir / "o") + " attack --problem " + q(dir / "problem.json"));
  REQUIRE((r.code == 0 || r.code == 3));
  const json doc = json::parse(slurp(dir / "o" / "result.json"));
  CHECK(doc["generations_used"] == 5);
  CHECK(doc["queries_used"].get<std::uint64_t>() == 30);
  CHECK(doc["reference_label"] == d.labels[1].value);

  json wrong = problem;
  wrong["reference_label"] = (d.labels[1].value + 1) % 10;
  std::ofstream(dir / "wrong.json") << wrong.dump();
  const Run bad = cli("attack --problem " + q(dir / "wrong.json"));
  CHECK(bad.code == 1);
  CHECK(bad.err.find("precondition failed") != std::string::npos);
}

TEST_CASE("benchmark and linf-compare write their reports") {
  const fs::path dir = testing::scratch_dir("cli_bench");
  const std::string data = " --idx-images " + q(idx_images()) + " --idx-labels " + q(idx_labels()) +
                           " --weights " + q(weights());
  const Run b = cli("--workers 2 --out " + q(dir / "run") + " benchmark" + data + " --per-class 1 --iterations 3");
  CHECK(b.code == 0);
  CHECK(b.out.find("class") != std::string::npos);
  const json report = json::parse(slurp(dir / "run" / "report.json"));
  CHECK(report["attempted"] == 10);
  CHECK(fs::exists(dir / "run" / "timings.json"));

  const Run l = cli("--out " + q(dir / "linf") + " linf-compare" + data + " --per-class 1 -L 20 -K 10");
  CHECK(l.code == 0);
  const json lr = json::parse(slurp(dir / "linf" / "linf_report.json"));
  CHECK(lr["rows"].size() == 10);
}

TEST_CASE("agreement subcommand") {
  const fs::path dir = testing::scratch_dir("cli_agree");
  advcma::SelectionLog log;
  log.population_size = 4;
  log.parent_count = 2;
  log.stimuli.push_back(advcma::StimulusLog{"x", {{1, 1, 0, 0}, {1, 0, 1, 0}}, std::nullopt});
  std::ofstream(dir / "log.json") << advcma::selection_log_to_json(log).dump();
  const Run r = cli("--out " + q(dir / "report.json") + " agreement " + q(dir / "log.json"));
  CHECK(r.code == 0);
  CHECK(json::parse(slurp(dir / "report.json"))["epsilon"] == 0.5);
}

TEST_CASE("bad invocations fail cleanly") {
  CHECK(cli("").code != 0);
  CHECK(cli("frobnicate").code != 0);
  CHECK(cli("--help").code == 0);
  CHECK(cli("attack").code != 0);
  CHECK(cli("benchmark --weights " + q(weights())).code != 0);
  const Run missing = cli("benchmark --weights " + q(weights()) + " --idx-images /nonexistent --idx-labels /nonexistent");
  CHECK(missing.code == 1);
  CHECK(missing.err.find("error:") != std::string::npos);
  CHECK(cli("attack --weights " + q(weights()) + " --image /nonexistent.png").code == 1);
}
