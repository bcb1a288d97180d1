#include "test_support.hpp"

#include <doctest.h>

using namespace advcma;
using testing::Plain2;

namespace {

Plain2 to_plain(const StrategyState& s) {
  Plain2 p{};
  for (int i = 0; i < 2; ++i) {
    p.mean[i] = s.mean(i);
    p.pc[i] = s.path_cov(i);
    p.ps[i] = s.path_step(i);
    for (int j = 0; j < 2; ++j) p.cov[i][j] = s.covariance(i, j);
  }
  p.step = s.step_size;
  return p;
}

testing::Rates rates_of(const StrategyConfig& c) {
  return {c.learn_mean, c.learn_rank_one, c.learn_rank_k, c.learn_path, c.learn_step, c.damping_step};
}

StrategyState random_state(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> normal;
  Matrix a(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = normal(rng);
  Matrix cov = a * a.transpose() / static_cast<double>(n) + Matrix::Identity(n, n) * 0.5;
  Vector mean(n), pc(n), ps(n);
  for (std::size_t i = 0; i < n; ++i) {
    mean(i) = normal(rng);
    pc(i) = 0.3 * normal(rng);
    ps(i) = 0.3 * normal(rng);
  }
  return make_state(mean, cov, 0.2 + 0.1 * std::abs(normal(rng)), pc, ps, 3);
}

}  // namespace

TEST_CASE("default rates follow the closed forms") {
  for (std::size_t n : {2u, 10u, 100u, 784u}) {
    const StrategyConfig c = make_config(n);
    const std::size_t L = 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(static_cast<double>(n))));
    CHECK(c.population_size == L);
    CHECK(c.parent_count == L / 2);

    double sum = 0.0, sq = 0.0;
    std::vector<double> raw;
    for (std::size_t s = 1; s <= L / 2; ++s) raw.push_back(std::log(L / 2 + 1.0) - std::log(double(s)));
    for (double r : raw) sum += r;
    for (double r : raw) sq += (r / sum) * (r / sum);
    const double kappa = 1.0 / sq;
    const double nd = static_cast<double>(n);
    CHECK(effective_kappa(c) == doctest::Approx(kappa).epsilon(1e-12));
    const double c1 = 2.0 / ((nd + 1.3) * (nd + 1.3) + kappa);
    CHECK(c.learn_rank_one == doctest::Approx(c1).epsilon(1e-12));
    CHECK(c.learn_rank_k ==
          doctest::Approx(std::min(1.0 - c1, 2.0 * (kappa - 2.0 + 1.0 / kappa) / ((nd + 2) * (nd + 2) + kappa)))
              .epsilon(1e-12));
    CHECK(c.learn_path == doctest::Approx(4.0 / (nd + 4.0)).epsilon(1e-12));
    const double cg = (kappa + 2.0) / (nd + kappa + 5.0);
    CHECK(c.learn_step == doctest::Approx(cg).epsilon(1e-12));
    CHECK(c.damping_step ==
          doctest::Approx(1.0 + 2.0 * std::max(0.0, std::sqrt((kappa - 1.0) / (nd + 1.0)) - 1.0) + cg)
              .epsilon(1e-12));
    CHECK(c.learn_mean == 1.0);
    CHECK(c.weights.size() == static_cast<Eigen::Index>(L));
    CHECK(c.weights.sum() == doctest::Approx(1.0).epsilon(1e-14));
    for (Eigen::Index s = static_cast<Eigen::Index>(L / 2); s < c.weights.size(); ++s) CHECK(c.weights(s) == 0.0);
    for (Eigen::Index s = 1; s < static_cast<Eigen::Index>(L / 2); ++s) CHECK(c.weights(s) < c.weights(s - 1));
  }
}

TEST_CASE("expected chi norm matches small closed forms") {
  CHECK(expected_chi_norm(1) == doctest::Approx(std::sqrt(2.0 / M_PI)).epsilon(1e-13));
  CHECK(expected_chi_norm(2) == doctest::Approx(std::sqrt(M_PI / 2.0)).epsilon(1e-13));
  CHECK(expected_chi_norm(3) == doctest::Approx(2.0 * std::sqrt(2.0 / M_PI)).epsilon(1e-13));
  // Large n: √n (1 − 1/(4n) + 1/(21n²)).
  const double n = 784.0;
  CHECK(expected_chi_norm(784) == doctest::Approx(std::sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))).epsilon(1e-6));
}

TEST_CASE("automatic eigendecomposition cadence") {
  StrategyOverrides o;
  o.eigen_interval = 0;
  const StrategyConfig small = make_config(2, o);
  CHECK(small.eigen_interval == 1);
  const StrategyConfig big = make_config(784, o);
  const double expected = std::floor(1.0 / (10.0 * 784.0 * (big.learn_rank_one + big.learn_rank_k)));
  CHECK(big.eigen_interval == static_cast<std::size_t>(std::max(1.0, expected)));
  CHECK(make_config(784).eigen_interval == big.eigen_interval);
  StrategyOverrides every;
  every.eigen_interval = 1;
  CHECK(make_config(784, every).eigen_interval == 1);
}

TEST_CASE("invalid overrides are rejected") {
  StrategyOverrides o;
  o.population_size = 4;
  o.parent_count = 5;
  CHECK_THROWS_AS(make_config(10, o), CmaError);

  StrategyOverrides neg;
  neg.population_size = 4;
  neg.parent_count = 2;
  neg.weights = Vector::Constant(4, 0.0);
  (*neg.weights)(0) = 1.5;
  (*neg.weights)(1) = -0.5;
  CHECK_THROWS_AS(make_config(10, neg), CmaError);

  StrategyOverrides rates;
  rates.learn_rank_one = 0.6;
  rates.learn_rank_k = 0.6;
  CHECK_THROWS_AS(make_config(10, rates), CmaError);

  StrategyOverrides step;
  step.damping_step = 0.0;
  CHECK_THROWS_AS(make_config(10, step), CmaError);

  CHECK_THROWS_AS(make_config(0), CmaError);
}

TEST_CASE("sampling is deterministic and consistent with the raw steps") {
  auto [config, state] = init_strategy(5, {}, Vector::Zero(5), 0.5);
  const Population a = sample_population(state, config, 42);
  const Population b = sample_population(state, config, 42);
  const Population c = sample_population(state, config, 43);
  REQUIRE(a.candidates.size() == config.population_size);
  CHECK(a.generation == 1);
  for (std::size_t i = 0; i < a.candidates.size(); ++i) {
    CHECK(a.candidates[i] == b.candidates[i]);
    CHECK((a.candidates[i] - (state.mean + state.step_size * a.raw_steps[i])).norm() < 1e-14);
  }
  CHECK(a.candidates[0] != c.candidates[0]);
}

TEST_CASE("raw steps have the state covariance") {
  std::mt19937_64 rng(7);
  StrategyState state = random_state(rng, 3);
  StrategyOverrides o;
  o.population_size = 4000;
  o.parent_count = 2;
  const StrategyConfig config = make_config(3, o);
  const Population pop = sample_population(state, config, 11);
  Matrix acc = Matrix::Zero(3, 3);
  for (const Vector& z : pop.raw_steps) acc += z * z.transpose();
  acc /= static_cast<double>(pop.raw_steps.size());
  CHECK((acc - state.covariance).cwiseAbs().maxCoeff() < 0.1 * state.covariance.cwiseAbs().maxCoeff());
}

TEST_CASE("n=2 update matches the straight-line transcription") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    StrategyState state = random_state(rng, 2);
    const StrategyConfig config = make_config(2);
    const Population pop = sample_population(state, config, rng());
    std::vector<std::size_t> order(pop.candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(config.parent_count);
    const StrategyState next = update_strategy(state, config, pop, Selection{order, true});

    std::vector<std::array<double, 2>> xs;
    std::vector<double> ws;
    for (std::size_t s = 0; s < order.size(); ++s) {
      xs.push_back({pop.candidates[order[s]](0), pop.candidates[order[s]](1)});
      ws.push_back(config.weights(static_cast<Eigen::Index>(s)));
    }
    const Plain2 want = testing::plain_update(to_plain(state), rates_of(config), xs, ws);
    const Plain2 got = to_plain(next);
    for (int i = 0; i < 2; ++i) {
      CHECK(testing::rel_err(got.mean[i], want.mean[i]) < 1e-10);
      CHECK(testing::rel_err(got.pc[i], want.pc[i]) < 1e-10);
      CHECK(testing::rel_err(got.ps[i], want.ps[i]) < 1e-10);
      for (int j = 0; j < 2; ++j) CHECK(testing::rel_err(got.cov[i][j], want.cov[i][j]) < 1e-10);
    }
    CHECK(testing::rel_err(got.step, want.step) < 1e-10);
    CHECK(next.generation == state.generation + 1);
  }
}

TEST_CASE("uniform weights ignore the order of the selection") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 8;
    StrategyOverrides o;
    o.weight_mode = WeightMode::uniform_top_k;
    const StrategyConfig config = make_config(n, o);
    const StrategyState state = random_state(rng, n);
    const Population pop = sample_population(state, config, rng());
    std::vector<std::size_t> pick(pop.candidates.size());
    std::iota(pick.begin(), pick.end(), 0);
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(1 + rng() % config.parent_count);
    auto shuffled = pick;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const StrategyState a = update_strategy(state, config, pop, Selection{pick, true});
    const StrategyState b = update_strategy(state, config, pop, Selection{shuffled, false});
    CHECK(testing::max_rel_err(b.mean, a.mean) < 1e-12);
    CHECK(testing::max_rel_err(b.covariance, a.covariance) < 1e-12);
    CHECK(testing::max_rel_err(b.path_cov, a.path_cov) < 1e-12);
    CHECK(testing::max_rel_err(b.path_step, a.path_step) < 1e-12);
    CHECK(testing::rel_err(b.step_size, a.step_size) < 1e-12);
  }
}

TEST_CASE("selection weights") {
  const StrategyConfig c = make_config(10);
  CHECK(selection_weights(c, c.parent_count, true) == c.weights.head(c.parent_count));
  const Vector short_w = selection_weights(c, 2, true);
  CHECK(short_w.sum() == doctest::Approx(1.0));
  CHECK(short_w(0) / short_w(1) == doctest::Approx(c.weights(0) / c.weights(1)));
  const Vector full = selection_weights(c, c.population_size, true);
  CHECK(full.sum() == doctest::Approx(1.0));
  CHECK(full.tail(c.population_size - c.parent_count).isZero());
  CHECK(selection_weights(c, 3, false) == Vector::Constant(3, 1.0 / 3.0));
}

TEST_CASE("update rejects malformed selections") {
  auto [config, state] = init_strategy(4, {}, Vector::Zero(4), 1.0);
  const Population pop = sample_population(state, config, 1);
  CHECK_THROWS_AS(update_strategy(state, config, pop, Selection{{}, true}), CmaError);
  CHECK_THROWS_AS(update_strategy(state, config, pop, Selection{{0, 0}, true}), CmaError);
  CHECK_THROWS_AS(update_strategy(state, config, pop, Selection{{99}, true}), CmaError);
  std::vector<std::size_t> too_many(config.parent_count + 1);
  std::iota(too_many.begin(), too_many.end(), 0);
  CHECK_THROWS_AS(update_strategy(state, config, pop, Selection{too_many, false}), CmaError);
  StrategyState later = update_strategy(state, config, pop, Selection{{0}, true});
  CHECK_THROWS_AS(update_strategy(later, config, pop, Selection{{0}, true}), CmaError);
}

TEST_CASE("covariance stays symmetric positive definite") {
  std::mt19937_64 rng(5);
  auto [config, state] = init_strategy(6, {}, Vector::Ones(6), 0.5);
  for (int g = 0; g < 200; ++g) {
    const Population pop = sample_population(state, config, rng());
    std::vector<std::size_t> pick(config.parent_count);
    std::iota(pick.begin(), pick.end(), 0);
    state = update_strategy(state, config, pop, Selection{pick, true});
    CHECK((state.covariance - state.covariance.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(state.covariance);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("diagonal mode keeps off-diagonal entries zero") {
  StrategyOverrides o;
  o.covariance_mode = CovarianceMode::diagonal;
  auto [config, state] = init_strategy(5, o, Vector::Ones(5), 0.3);
  for (int g = 0; g < 20; ++g) {
    const Population pop = sample_population(state, config, 100 + g);
    state = update_strategy(state, config, pop, Selection{{2, 0}, true});
  }
  CHECK((state.covariance - Matrix(state.covariance.diagonal().asDiagonal())).isZero());
}

TEST_CASE("sphere and Rosenbrock converge") {
  const auto s = testing::minimize(testing::sphere, Vector::Constant(10, 1.0), 0.5, 3000, 3);
  CHECK(s.best < 1e-8);
  const auto r = testing::minimize(testing::rosenbrock, Vector::Zero(5), 0.5, 50000, 3);
  CHECK(r.best < 1e-3);
}

TEST_CASE("weight mode names") {
  CHECK(parse_weight_mode("uniform_top_k") == WeightMode::uniform_top_k);
  CHECK(parse_weight_mode(to_string(WeightMode::log_decreasing)) == WeightMode::log_decreasing);
  CHECK_THROWS(parse_weight_mode("nope"));
}
