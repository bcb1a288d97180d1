#include "test_support.hpp"

#include <doctest.h>

using namespace advcma;

namespace {

SelectionLog hand_log(std::vector<ChoiceVector> participants, std::optional<ChoiceVector> l1 = std::nullopt) {
  SelectionLog log;
  log.population_size = participants.front().size();
  log.parent_count = 2;
  log.stimuli.push_back(StimulusLog{"only", std::move(participants), std::move(l1)});
  return log;
}

}  // namespace

TEST_CASE("hand cases") {
  CHECK(agreement_spread(hand_log({{1, 1, 0, 0}, {1, 0, 1, 0}})) == 0.5);
  CHECK(agreement_spread(hand_log({{1, 1, 0, 0}, {1, 1, 0, 0}, {1, 1, 0, 0}})) == 0.0);
  CHECK(agreement_vs_l1(hand_log({{0, 1, 1, 0}, {0, 1, 1, 0}}, ChoiceVector{0, 1, 1, 0})) == 0.0);
  CHECK(agreement_vs_l1(hand_log({{0, 1, 1, 0}, {0, 1, 1, 0}}, ChoiceVector{1, 1, 0, 0})) == 1.0);
}

TEST_CASE("random logs match the per-definition evaluator") {
  std::mt19937_64 rng(1234);
  for (int t = 0; t < 50; ++t) {
    const std::size_t L = 4 + rng() % 20;
    const std::size_t K = 1 + rng() % (L - 1);
    const auto log = testing::random_log(rng, 1 + rng() % 12, 1 + rng() % 15, L, K);
    CHECK(std::abs(agreement_spread(log) - testing::naive_spread(log)) <= 1e-12);
    CHECK(std::abs(agreement_vs_l1(log) - testing::naive_e_div(log)) <= 1e-12);
  }
  const auto big = testing::random_log(rng, 20, 10, 20, 5);
  CHECK(std::abs(agreement_spread(big) - testing::naive_spread(big)) <= 1e-12);
}

TEST_CASE("spread is invariant under relabeling participants and permuting stimuli") {
  std::mt19937_64 rng(55);
  for (int t = 0; t < 50; ++t) {
    auto log = testing::random_log(rng, 2 + rng() % 6, 2 + rng() % 6, 10, 3);
    const double base = agreement_spread(log);
    std::vector<std::size_t> perm(log.participant_count());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (auto& s : log.stimuli) {
      auto old = s.participants;
      for (std::size_t i = 0; i < perm.size(); ++i) s.participants[i] = old[perm[i]];
    }
    std::shuffle(log.stimuli.begin(), log.stimuli.end(), rng);
    CHECK(std::abs(agreement_spread(log) - base) <= 1e-12);
  }
}

TEST_CASE("spread bounds are attained on small logs") {
  // Enumerate every 2- and 3-participant log over L=4, K=2 with one stimulus.
  std::vector<ChoiceVector> all;
  for (int mask = 0; mask < 16; ++mask) {
    if (__builtin_popcount(mask) != 2) continue;
    all.push_back({mask & 1, (mask >> 1) & 1, (mask >> 2) & 1, (mask >> 3) & 1});
  }
  for (std::size_t np : {2u, 3u}) {
    const double upper = 2.0 * static_cast<double>(np - 1) / static_cast<double>(np);
    double lo = INFINITY, hi = 0.0;
    std::vector<std::size_t> pick(np, 0);
    while (true) {
      std::vector<ChoiceVector> ps;
      for (std::size_t i : pick) ps.push_back(all[i]);
      const double e = agreement_spread(hand_log(ps));
      lo = std::min(lo, e);
      hi = std::max(hi, e);
      CHECK(e >= 0.0);
      CHECK(e <= upper + 1e-12);
      std::size_t d = 0;
      while (d < np && ++pick[d] == all.size()) pick[d++] = 0;
      if (d == np) break;
    }
    CHECK(lo == 0.0);
    // Disjoint choices are possible for np=2 (K=2, L=4) and attain the bound.
    if (np == 2) CHECK(hi == doctest::Approx(upper));
  }
}

TEST_CASE("malformed logs are rejected") {
  SelectionLog ragged;
  ragged.population_size = 4;
  ragged.parent_count = 2;
  ragged.stimuli.push_back({"a", {{1, 1, 0, 0}, {1, 0, 1, 0}}, std::nullopt});
  ragged.stimuli.push_back({"b", {{1, 1, 0, 0}}, std::nullopt});
  CHECK_THROWS_AS(agreement_spread(ragged), AgreementError);

  CHECK_THROWS_AS(agreement_spread(hand_log({{1, 1, 1, 0}})), AgreementError);
  CHECK_THROWS_AS(agreement_spread(hand_log({{1, 2, 0, 0}})), AgreementError);
  CHECK_THROWS_AS(agreement_spread(hand_log({{1, 1, 0}, {1, 1, 0, 0}})), AgreementError);
  CHECK_THROWS_AS(agreement_vs_l1(hand_log({{1, 1, 0, 0}})), AgreementError);
  SelectionLog empty;
  empty.population_size = 4;
  empty.parent_count = 2;
  CHECK_THROWS_AS(agreement_spread(empty), AgreementError);
}

TEST_CASE("per-stimulus breakdown averages to the totals") {
  std::mt19937_64 rng(8);
  const auto log = testing::random_log(rng, 5, 7, 12, 4);
  const auto per = per_stimulus_agreement(log);
  REQUIRE(per.size() == 7);
  double s = 0.0, e = 0.0;
  for (const auto& p : per) {
    s += p.spread;
    e += *p.l1_divergence;
  }
  CHECK(s / 7.0 == doctest::Approx(agreement_spread(log)).epsilon(1e-12));
  CHECK(e / 7.0 == doctest::Approx(agreement_vs_l1(log)).epsilon(1e-12));
}

TEST_CASE("log documents round-trip") {
  std::mt19937_64 rng(3);
  const auto log = testing::random_log(rng, 3, 4, 8, 2);
  const auto doc = selection_log_to_json(log);
  const auto back = selection_log_from_json(doc);
  CHECK(agreement_spread(back) == agreement_spread(log));
  CHECK(selection_log_to_json(back) == doc);
  const auto dir = testing::scratch_dir("agreement");
  {
    std::ofstream(dir / "log.json") << doc.dump();
    std::ofstream(dir / "broken.json") << "{\"population_size\": 4,";
  }
  CHECK(agreement_vs_l1(load_selection_log(dir / "log.json")) == agreement_vs_l1(log));
  CHECK_THROWS_AS(load_selection_log(dir / "broken.json"), AgreementError);
  CHECK_THROWS_AS(load_selection_log(dir / "missing.json"), AgreementError);
  CHECK_THROWS_AS(selection_log_from_json(nlohmann::json::parse(R"({"stimuli": []})")), AgreementError);
  CHECK(choice_vector(5, {0, 3}) == ChoiceVector{1, 0, 0, 1, 0});
  CHECK_THROWS_AS(choice_vector(5, {5}), AgreementError);
}
