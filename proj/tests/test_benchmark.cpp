#include "test_support.hpp"

#include "advcma/benchmark.hpp"

#include <doctest.h>

using namespace advcma;
using nlohmann::json;

namespace {

struct Toy {
  Dataset dataset;
  std::shared_ptr<const Classifier> classifier;
  Vector w;
  double b = 0.0;
  std::vector<std::size_t> mislabeled;
};

// Two classes split by a hyperplane through the middle of a 4x4 gray image.
// Items are placed 0.1 to 0.2 (L2) from the boundary; every fifth one carries the wrong label.
Toy make_toy(std::uint64_t seed, std::size_t per_side) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> gap(0.1, 0.2);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  Toy t;
  t.w = Vector(16);
  for (Eigen::Index i = 0; i < 16; ++i) t.w(i) = normal(rng);
  t.b = -0.5 * t.w.sum();
  t.classifier = std::make_shared<const Classifier>(testing::symmetric_halfplane_spec(t.w, t.b));
  t.dataset.channels = 1;
  t.dataset.height = 4;
  t.dataset.width = 4;
  const Vector unit = t.w / t.w.norm();
  for (std::size_t i = 0; i < 2 * per_side; ++i) {
    const int side = static_cast<int>(i % 2);
    Vector x = Vector::Constant(16, 0.5);
    for (Eigen::Index j = 0; j < 16; ++j) x(j) += jitter(rng);
    x -= unit * ((unit.dot(x) + t.b / t.w.norm()));  // onto the boundary
    x += unit * (side == 1 ? gap(rng) : -gap(rng));
    Image img(1, 4, 4);
    for (Eigen::Index j = 0; j < 16; ++j) img.values[static_cast<std::size_t>(j)] = x(j);
    Label label(side);
    if (i % 5 == 4) {
      label = Label(1 - side);
      t.mislabeled.push_back(i);
    }
    t.dataset.images.push_back(img);
    t.dataset.labels.push_back(label);
  }
  return t;
}

double margin_l2(const Toy& t, const Image& img) { return std::abs(t.w.dot(img.as_vector()) + t.b) / t.w.norm(); }
double margin_linf(const Toy& t, const Image& img) {
  return std::abs(t.w.dot(img.as_vector()) + t.b) / t.w.lpNorm<1>();
}

AttackSettings toy_settings() {
  AttackSettings s;
  s.norm = NormKind::l2;
  s.iterations = 150;
  s.strategy.population_size = 12;
  s.strategy.parent_count = 6;
  s.initial_step = 0.3;
  return s;
}

}  // namespace

TEST_CASE("sampling only takes correctly classified items") {
  const Toy t = make_toy(1, 10);
  std::vector<std::size_t> available;
  const auto picked = sample_items(t.dataset, *t.classifier, 3, 9, &available);
  REQUIRE(picked.size() == 2);
  CHECK(available[0] + available[1] == t.dataset.size() - t.mislabeled.size());
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(picked[c].size() == 3);
    CHECK(std::is_sorted(picked[c].begin(), picked[c].end()));
    for (std::size_t idx : picked[c]) {
      CHECK(t.dataset.labels[idx] == Label(static_cast<int>(c)));
      CHECK(std::find(t.mislabeled.begin(), t.mislabeled.end(), idx) == t.mislabeled.end());
    }
  }
  CHECK(sample_items(t.dataset, *t.classifier, 3, 9) == picked);
  CHECK(sample_items(t.dataset, *t.classifier, 100, 9)[0].size() == available[0]);
}

TEST_CASE("linear toy benchmark") {
  const Toy t = make_toy(2, 10);
  AttackSettings s = toy_settings();
  s.bisection = BisectionConfig{};
  const BenchmarkReport r = run_benchmark(t.dataset, t.classifier, s, RunOptions{4, 17, 1, std::nullopt});
  CHECK(r.attempted == 8);
  CHECK(r.succeeded == 8);
  CHECK(r.overall_success_percent == 100.0);
  REQUIRE(r.classes.size() == 2);
  for (const ClassReport& c : r.classes) {
    CHECK(c.attempted == 4);
    CHECK(c.success_percent == 100.0);
    CHECK_FALSE(c.skipped);
  }
  std::uint64_t queries = 0;
  for (const ItemResult& item : r.items) {
    const double floor = margin_l2(t, t.dataset.images[item.dataset_index]);
    // No adversarial image can sit closer than the boundary; the attack should get near it.
    CHECK(item.result.distances.l2 >= floor * (1.0 - 1e-9));
    CHECK(item.result.distances.l2 <= 1.2 * floor);
    queries += item.result.queries_used;
  }
  CHECK(r.total_queries == queries);
}

TEST_CASE("reports are reproducible and independent of worker count") {
  const Toy t = make_toy(3, 8);
  AttackSettings s = toy_settings();
  s.iterations = 20;
  const RunOptions one{3, 5, 1, std::nullopt};
  const RunOptions three{3, 5, 3, std::nullopt};
  const json a = report_to_json(run_benchmark(t.dataset, t.classifier, s, one), s, one);
  const json b = report_to_json(run_benchmark(t.dataset, t.classifier, s, one), s, one);
  const json c = report_to_json(run_benchmark(t.dataset, t.classifier, s, three), s, three);
  CHECK(a == b);
  CHECK(a == c);
  CHECK(a.dump().find("seconds") == std::string::npos);

  CHECK(run_benchmark(t.dataset, t.classifier, s, RunOptions{0, 5, 1, std::nullopt}).attempted == 0);
  CHECK(item_seed(5, 1) != item_seed(5, 2));
  CHECK(item_seed(5, 1) == item_seed(5, 1));
}

TEST_CASE("run directory artifacts") {
  const Toy t = make_toy(4, 4);
  AttackSettings s = toy_settings();
  s.iterations = 5;
  const auto dir = testing::scratch_dir("bench_run");
  const BenchmarkReport r = run_benchmark(t.dataset, t.classifier, s, RunOptions{2, 1, 2, dir});
  for (const char* f : {"config.json", "report.json", "report.txt", "timings.json"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  for (const ItemResult& item : r.items) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "item_%06zu", item.dataset_index);
    CHECK(std::filesystem::exists(dir / "items" / (std::string(stem) + ".json")));
    CHECK(read_png(dir / "items" / (std::string(stem) + ".png")).size() == 16);
  }
  std::ifstream in(dir / "report.json");
  CHECK(json::parse(in)["attempted"] == r.attempted);
}

TEST_CASE("mismatched classifier input is refused") {
  const Toy t = make_toy(5, 2);
  Vector w = Vector::Ones(9);
  auto other = std::make_shared<const Classifier>(testing::symmetric_halfplane_spec(w, -4.5));
  CHECK_THROWS_AS(run_benchmark(t.dataset, other, toy_settings(), RunOptions{}), std::invalid_argument);
}

TEST_CASE("mode presets") {
  const AttackSettings p = mode_defaults("per_pixel");
  CHECK(p.iterations == 180);
  CHECK(p.strategy.population_size == 4u);
  CHECK(p.strategy.parent_count == 2u);
  const AttackSettings c = mode_defaults("color");
  CHECK(c.parameterization == Parameterization::color_darkening);
  CHECK(c.iterations == 3);
  CHECK(c.strategy.population_size == 240u);
  CHECK(c.strategy.parent_count == 120u);
  const AttackSettings h = mode_defaults("perception");
  CHECK(h.strategy.population_size == 20u);
  CHECK(h.strategy.parent_count == 5u);
  CHECK_THROWS(mode_defaults("other"));
  const AttackSettings l = linf_defaults();
  CHECK(l.norm == NormKind::linf);
  CHECK(l.iterations == 3);
}

TEST_CASE("bisection never widens the Linf column") {
  const Toy t = make_toy(6, 12);
  const AttackSettings s = linf_defaults();
  const RunOptions opts{5, 3, 2, std::nullopt};
  const LinfReport with = run_linf_comparison(t.dataset, t.classifier, s, BisectionConfig{}, opts);
  REQUIRE(with.rows.size() == 2);
  for (const LinfRow& row : with.rows) {
    CHECK(row.items == 5);
    CHECK(row.bisection_percent <= row.pure_percent);
  }
  for (const LinfItem& item : with.items) {
    if (!item.success) continue;
    CHECK(item.bisection_linf <= item.pure_linf);
    CHECK(item.bisection_linf >= margin_linf(t, t.dataset.images[item.dataset_index]) * (1.0 - 1e-9));
    CHECK(item.bisection_queries >= item.pure_queries);
  }
  CHECK(with.mean_reduction_percent > 0.0);

  const LinfReport without = run_linf_comparison(t.dataset, t.classifier, s, std::nullopt, opts);
  for (const LinfRow& row : without.rows) CHECK(row.bisection_percent == row.pure_percent);
  CHECK(without.mean_reduction_percent == 0.0);
  for (std::size_t i = 0; i < with.items.size(); ++i) CHECK(with.items[i].pure_linf == without.items[i].pure_linf);
}

TEST_CASE("agreement analysis from a file") {
  SelectionLog log;
  log.population_size = 4;
  log.parent_count = 2;
  log.stimuli.push_back(StimulusLog{"a", {{1, 1, 0, 0}, {1, 0, 1, 0}}, ChoiceVector{1, 1, 0, 0}});
  log.stimuli.push_back(StimulusLog{"b", {{0, 0, 1, 1}, {0, 0, 1, 1}}, ChoiceVector{0, 0, 1, 1}});
  const auto dir = testing::scratch_dir("bench_agree");
  std::ofstream(dir / "log.json") << selection_log_to_json(log).dump();
  const AgreementReport r = analyze_agreement(dir / "log.json");
  CHECK(r.participants == 2);
  CHECK(std::abs(r.epsilon - 0.25) <= 1e-12);
  REQUIRE(r.e_div);
  CHECK(std::abs(*r.e_div - 0.25) <= 1e-12);
  REQUIRE(r.stimuli.size() == 2);
  CHECK(r.stimuli[0].spread == 0.5);
  CHECK(r.stimuli[1].spread == 0.0);
  CHECK(agreement_report_to_json(r)["epsilon"] == r.epsilon);
  CHECK_THROWS(analyze_agreement(dir / "missing.json"));
}
