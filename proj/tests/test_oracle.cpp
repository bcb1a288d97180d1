#include "test_support.hpp"

#include "advcma/oracle.hpp"

#include <doctest.h>

#include <set>
#include <thread>

using namespace advcma;

namespace {

// 1-channel 1×n request; candidate i differs from the reference only in pixel 0.
SelectionRequest request_with_l1(const std::vector<double>& distances, const std::vector<bool>& selectable,
                                 std::size_t k) {
  SelectionRequest r;
  r.k_required = k;
  r.reference_image = Image(1, 1, 2, 0.0);
  for (std::size_t i = 0; i < distances.size(); ++i) {
    CandidateEntry e;
    e.index = i;
    e.image = r.reference_image;
    e.image.values[0] = distances[i];
    e.selectable = selectable[i];
    r.candidates.push_back(e);
  }
  return r;
}

SelectionRequest random_request(std::mt19937_64& rng, std::size_t L, std::size_t K, std::size_t dims = 6) {
  std::uniform_real_distribution<double> u;
  SelectionRequest r;
  r.k_required = K;
  r.reference_image = Image(1, 1, dims);
  for (double& v : r.reference_image.values) v = u(rng);
  for (std::size_t i = 0; i < L; ++i) {
    CandidateEntry e;
    e.index = i;
    e.image = Image(1, 1, dims);
    for (double& v : e.image.values) v = u(rng);
    e.selectable = rng() % 3 != 0;
    r.candidates.push_back(e);
  }
  return r;
}

std::set<std::size_t> as_set(const std::vector<std::size_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("metric_select orders by distance") {
  const auto r = request_with_l1({0.3, 0.1, 0.9, 0.5}, {true, true, true, true}, 2);
  CHECK(metric_select(r, NormKind::l1, {}).chosen == std::vector<std::size_t>{1, 0});
  const auto one = request_with_l1({0.3, 0.1, 0.9, 0.5}, {false, false, true, false}, 2);
  CHECK(metric_select(one, NormKind::l1, {}).chosen == std::vector<std::size_t>{2});
  const auto ties = request_with_l1({0.2, 0.2, 0.2}, {true, true, true}, 2);
  CHECK(metric_select(ties, NormKind::l1, {}).chosen == std::vector<std::size_t>{0, 1});
}

TEST_CASE("full ranking puts every selectable candidate first") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 200; ++t) {
    const auto r = random_request(rng, 6 + rng() % 10, 3);
    const auto ranking = metric_ranking(r, MetricSpec{});
    REQUIRE(ranking.size() == r.candidates.size());
    bool seen_hidden = false;
    for (std::size_t idx : ranking) {
      if (!r.candidates[idx].selectable) seen_hidden = true;
      else CHECK_FALSE(seen_hidden);
    }
    // Brute-force check of the order within the selectable block.
    for (std::size_t a = 0; a + 1 < ranking.size(); ++a) {
      const auto& x = r.candidates[ranking[a]];
      const auto& y = r.candidates[ranking[a + 1]];
      if (x.selectable == y.selectable) {
        CHECK(norm_distance(NormKind::l1, x.image.span(), r.reference_image.span()) <=
              norm_distance(NormKind::l1, y.image.span(), r.reference_image.span()));
      }
    }
  }
}

TEST_CASE("metric oracle returns the head of the full ranking") {
  const auto r = request_with_l1({0.3, 0.1, 0.9, 0.5}, {false, false, true, false}, 2);
  MetricOracle oracle(MetricSpec{});
  CHECK_FALSE(oracle.perceptual());
  CHECK(oracle.respond(r).chosen == std::vector<std::size_t>{2, 1});
}

TEST_CASE("color ranking uses the darkening factors") {
  SelectionRequest r;
  r.k_required = 2;
  r.reference_image = Image(3, 1, 1, 0.5);
  const std::vector<Vector> betas{Vector{{0.9, 0.9, 0.9}}, Vector{{1.0, 1.0, 0.95}}, Vector{{0.1, 0.1, 0.1}}};
  for (std::size_t i = 0; i < 3; ++i) {
    CandidateEntry e;
    e.index = i;
    e.image = r.reference_image;
    e.parameters = betas[i];
    e.selectable = i != 1;
    r.candidates.push_back(e);
  }
  MetricSpec spec;
  spec.color_darkening = true;
  CHECK(metric_ranking(r, spec) == std::vector<std::size_t>{0, 2, 1});
}

TEST_CASE("choice set is invariant under candidate reordering") {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 100; ++t) {
    auto r = random_request(rng, 10, 4);
    const auto before = as_set(metric_select(r, NormKind::l2, {}).chosen);
    std::shuffle(r.candidates.begin(), r.candidates.end(), rng);
    CHECK(as_set(metric_select(r, NormKind::l2, {}).chosen) == before);
  }
}

TEST_CASE("uniform simulated human equals L1 metric selection") {
  std::mt19937_64 rng(500);
  for (int t = 0; t < 500; ++t) {
    const auto r = random_request(rng, 4 + rng() % 20, 1 + rng() % 5);
    const Image w = SimulatedHumanOracle::uniform_weights(r.reference_image);
    CHECK(as_set(simulated_human_select(r, w).chosen) == as_set(metric_select(r, NormKind::l1, {}).chosen));
  }
}

TEST_CASE("zero-weight region makes every candidate tie") {
  SelectionRequest r;
  r.k_required = 2;
  r.reference_image = Image(1, 6, 6, 0.5);
  const Image w = SimulatedHumanOracle::center_weights(r.reference_image, 0.5);
  CHECK(w.at(0, 2, 2) == 1.0);
  CHECK(w.at(0, 0, 0) == 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    CandidateEntry e;
    e.index = i;
    e.image = r.reference_image;
    e.image.at(0, 0, i) = 0.5 + 0.1 * static_cast<double>(4 - i);
    e.selectable = true;
    r.candidates.push_back(e);
  }
  CHECK(simulated_human_select(r, w).chosen == std::vector<std::size_t>{0, 1});
  CHECK(metric_select(r, NormKind::l1, {}).chosen == std::vector<std::size_t>{3, 2});
}

TEST_CASE("emphasized region flips a two-candidate ranking") {
  SelectionRequest r;
  r.k_required = 1;
  r.reference_image = Image(1, 1, 2, 0.5);
  CandidateEntry a{0, r.reference_image, {}, true};
  a.image.values[0] = 0.6;  // small change where the weight is high
  CandidateEntry b{1, r.reference_image, {}, true};
  b.image.values[1] = 0.8;  // larger change where the weight is low
  r.candidates = {a, b};
  Image w(1, 1, 2);
  w.values = {10.0, 1.0};
  CHECK(metric_select(r, NormKind::l1, {}).chosen == std::vector<std::size_t>{0});
  CHECK(simulated_human_select(r, w).chosen == std::vector<std::size_t>{1});
  CHECK_THROWS_AS(simulated_human_select(r, Image(1, 2, 2)), SelectionError);
}

TEST_CASE("simulated human picks a final image on the last generation") {
  auto r = request_with_l1({0.3, 0.1}, {true, true}, 2);
  r.final_generation = true;
  SimulatedHumanOracle oracle(SimulatedHumanOracle::uniform_weights(r.reference_image));
  const auto resp = oracle.respond(r);
  REQUIRE(resp.final_pick);
  CHECK(*resp.final_pick == 1);
}

TEST_CASE("response validation") {
  const auto r = request_with_l1({0.3, 0.1, 0.9, 0.5}, {true, false, true, true}, 2);
  CHECK(required_choice_count(r) == 2);
  CHECK_NOTHROW(validate_response(r, {{0, 2}, std::nullopt}, true));
  CHECK_NOTHROW(validate_response(r, {{3}, std::nullopt}, false));
  CHECK_THROWS_AS(validate_response(r, {{3}, std::nullopt}, true), SelectionError);
  CHECK_THROWS_AS(validate_response(r, {{}, std::nullopt}), SelectionError);
  CHECK_THROWS_AS(validate_response(r, {{1}, std::nullopt}), SelectionError);
  CHECK_THROWS_AS(validate_response(r, {{0, 0}, std::nullopt}), SelectionError);
  CHECK_THROWS_AS(validate_response(r, {{0, 2, 3}, std::nullopt}), SelectionError);
  CHECK_THROWS_AS(validate_response(r, {{7}, std::nullopt}), SelectionError);
  CHECK_THROWS_AS(validate_response(r, {{0}, 1}), SelectionError);
  const auto few = request_with_l1({0.3, 0.1}, {false, true}, 5);
  CHECK(required_choice_count(few) == 1);
  CHECK_NOTHROW(validate_response(few, {{1}, 1}, true));
}

TEST_CASE("response documents") {
  const SelectionResponse r{{4, 1}, 4};
  const auto doc = response_to_json(7, r);
  CHECK(doc == nlohmann::json::parse(R"({"generation": 7, "chosen": [4, 1], "final_pick": 4})"));
  const auto back = response_from_json(doc);
  CHECK(back.chosen == r.chosen);
  CHECK(back.final_pick == r.final_pick);
  CHECK_FALSE(response_from_json(nlohmann::json::parse(R"({"chosen": [0]})")).final_pick);
  CHECK_THROWS_AS(response_from_json(nlohmann::json::parse(R"({"chosen": "x"})")), SelectionError);
}

TEST_CASE("human channel parks until an answer arrives") {
  HumanChannelOracle channel(std::chrono::seconds(5));
  auto r = request_with_l1({0.3, 0.1, 0.9}, {true, true, true}, 2);
  r.generation = 3;
  SelectionResponse got;
  std::thread engine([&] { got = channel.respond(r); });
  const auto pending = channel.wait_for_request(std::chrono::seconds(5));
  REQUIRE(pending);
  CHECK(pending->generation == 3);
  CHECK_THROWS_AS(channel.submit(2, {{0, 1}, std::nullopt}), SelectionError);
  CHECK_THROWS_AS(channel.submit(3, {{0}, std::nullopt}), SelectionError);  // short: exact count enforced
  channel.submit(3, {{2, 0}, std::nullopt});
  engine.join();
  CHECK(got.chosen == std::vector<std::size_t>{2, 0});
  CHECK_FALSE(channel.pending());
  CHECK_THROWS_AS(channel.submit(3, {{2, 0}, std::nullopt}), SelectionError);
}

TEST_CASE("human channel times out and aborts") {
  HumanChannelOracle slow(std::chrono::milliseconds(20));
  const auto r = request_with_l1({0.3}, {true}, 1);
  CHECK_THROWS_AS(slow.respond(r), OracleAborted);
  CHECK_THROWS_AS(slow.respond(r), OracleAborted);

  HumanChannelOracle channel(std::chrono::seconds(5));
  std::thread engine([&] { CHECK_THROWS_AS(channel.respond(r), OracleAborted); });
  REQUIRE(channel.wait_for_request(std::chrono::seconds(5)));
  channel.abort("participant left");
  engine.join();
}
