#include "advcma/cma.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace advcma {

namespace {

constexpr double kWeightSumTolerance = 1e-12;
// Eigenvalues below this fraction of the mean eigenvalue are clamped.
constexpr double kEigenFloorRatio = 1e-14;

std::size_t default_population(std::size_t n) {
  return 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(static_cast<double>(n))));
}

std::size_t auto_eigen_interval(std::size_t n, double c1, double c2) {
  const double rate = c1 + c2;
  if (rate <= 0.0) {
    return 1;
  }
  const double interval = 1.0 / (10.0 * static_cast<double>(n) * rate);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(interval)));
}

void require(bool condition, const std::string& message) {
  if (!condition) {
    throw CmaError(message);
  }
}

}  // namespace

std::string_view to_string(WeightMode mode) {
  switch (mode) {
    case WeightMode::log_decreasing:
      return "log_decreasing";
    case WeightMode::uniform_top_k:
      return "uniform_top_k";
  }
  return "unknown";
}

WeightMode parse_weight_mode(std::string_view text) {
  if (text == "log_decreasing") return WeightMode::log_decreasing;
  if (text == "uniform_top_k") return WeightMode::uniform_top_k;
  throw CmaError("unknown weight mode '" + std::string(text) + "'");
}

Vector default_weights(std::size_t population_size, std::size_t parent_count, WeightMode mode) {
  require(parent_count >= 1 && parent_count < population_size,
          "default_weights: need 1 <= K < L");
  Vector w = Vector::Zero(static_cast<Eigen::Index>(population_size));
  const auto k = static_cast<Eigen::Index>(parent_count);
  if (mode == WeightMode::uniform_top_k) {
    w.head(k).setConstant(1.0 / static_cast<double>(parent_count));
    return w;
  }
  const double top = std::log(static_cast<double>(parent_count) + 1.0);
  for (Eigen::Index s = 0; s < k; ++s) {
    w(s) = top - std::log(static_cast<double>(s) + 1.0);
  }
  w.head(k) /= w.head(k).sum();
  return w;
}

double effective_kappa(const StrategyConfig& config) {
  const auto k = static_cast<Eigen::Index>(config.parent_count);
  return 1.0 / config.weights.head(k).squaredNorm();
}

double expected_chi_norm(std::size_t n) {
  require(n >= 1, "expected_chi_norm: dimension must be positive");
  const double half = static_cast<double>(n) / 2.0;
  return std::sqrt(2.0) * std::exp(std::lgamma(half + 0.5) - std::lgamma(half));
}

void validate_config(const StrategyConfig& c) {
  require(c.dimension >= 1, "dimension must be positive");
  require(c.population_size >= 2, "population size L must be at least 2");
  require(c.parent_count >= 1, "parent count K must be at least 1");
  require(c.parent_count < c.population_size,
          "parent count K=" + std::to_string(c.parent_count) +
              " must be smaller than population size L=" + std::to_string(c.population_size));
  require(static_cast<std::size_t>(c.weights.size()) == c.population_size,
          "weights must have length L");
  require(c.weights.allFinite(), "weights must be finite");

  const auto k = static_cast<Eigen::Index>(c.parent_count);
  require(std::abs(c.weights.head(k).sum() - 1.0) <= kWeightSumTolerance,
          "the first K weights must sum to 1");
  for (Eigen::Index s = 0; s + 1 < k; ++s) {
    require(c.weights(s) >= c.weights(s + 1), "the first K weights must be non-increasing");
  }
  require(c.weights(k - 1) > 0.0, "the first K weights must be positive");
  for (Eigen::Index s = k; s < c.weights.size(); ++s) {
    require(c.weights(s) <= 0.0, "weights beyond K must be non-positive");
  }

  require(c.learn_mean > 0.0 && c.learn_mean <= 1.0, "learn_mean must lie in (0, 1]");
  require(c.learn_rank_one >= 0.0, "learn_rank_one must be non-negative");
  require(c.learn_rank_k >= 0.0, "learn_rank_k must be non-negative");
  require(c.learn_path > 0.0 && c.learn_path <= 1.0, "learn_path must lie in (0, 1]");
  require(c.learn_step > 0.0 && c.learn_step < 1.0, "learn_step must lie in (0, 1)");
  require(c.damping_step > 0.0, "damping_step must be positive");
  require(c.learn_rank_one + c.learn_rank_k * c.weights.sum() <= 1.0 + kWeightSumTolerance,
          "learn_rank_one + learn_rank_k * sum(weights) must not exceed 1");
  require(c.eigen_interval >= 1, "eigen_interval must be resolved to at least 1");

  const double kappa = effective_kappa(c);
  require(kappa >= 1.0 - 1e-12 && kappa <= static_cast<double>(c.parent_count) + 1e-9,
          "effective kappa must lie in [1, K]");
}

StrategyConfig make_config(std::size_t dimension, const StrategyOverrides& o) {
  require(dimension >= 1, "dimension must be positive");
  StrategyConfig c;
  c.dimension = dimension;
  c.population_size = o.population_size.value_or(default_population(dimension));
  require(c.population_size >= 2, "population size L must be at least 2");
  c.parent_count = o.parent_count.value_or(c.population_size / 2);
  require(c.parent_count >= 1 && c.parent_count < c.population_size,
          "parent count K=" + std::to_string(c.parent_count) +
              " must satisfy 1 <= K < L=" + std::to_string(c.population_size));
  c.weight_mode = o.weight_mode.value_or(WeightMode::log_decreasing);
  c.covariance_mode = o.covariance_mode.value_or(CovarianceMode::full);
  c.weights = o.weights.value_or(default_weights(c.population_size, c.parent_count, c.weight_mode));
  require(static_cast<std::size_t>(c.weights.size()) == c.population_size,
          "weights must have length L");

  const double n = static_cast<double>(dimension);
  const double kappa = effective_kappa(c);
  c.learn_mean = o.learn_mean.value_or(1.0);
  c.learn_rank_one = o.learn_rank_one.value_or(2.0 / ((n + 1.3) * (n + 1.3) + kappa));
  c.learn_rank_k = o.learn_rank_k.value_or(
      std::min(1.0 - c.learn_rank_one,
               2.0 * (kappa - 2.0 + 1.0 / kappa) / ((n + 2.0) * (n + 2.0) + kappa)));
  c.learn_path = o.learn_path.value_or(4.0 / (n + 4.0));
  c.learn_step = o.learn_step.value_or((kappa + 2.0) / (n + kappa + 5.0));
  c.damping_step = o.damping_step.value_or(
      1.0 + 2.0 * std::max(0.0, std::sqrt((kappa - 1.0) / (n + 1.0)) - 1.0) + c.learn_step);

  const std::size_t interval = o.eigen_interval.value_or(0);
  c.eigen_interval =
      interval == 0 ? auto_eigen_interval(dimension, c.learn_rank_one, c.learn_rank_k) : interval;
  if (c.covariance_mode == CovarianceMode::diagonal) {
    c.eigen_interval = 1;
  }

  validate_config(c);
  return c;
}

void refresh_decomposition(StrategyState& state) {
  const auto n = state.covariance.rows();
  if (!state.covariance.allFinite()) {
    throw CmaError("covariance has non-finite entries; the strategy diverged");
  }
  state.covariance = 0.5 * (state.covariance + state.covariance.transpose()).eval();
  const double trace = state.covariance.trace();
  if (!(trace > 0.0)) {
    throw CmaError("covariance trace is not positive; the strategy diverged");
  }
  const double floor = kEigenFloorRatio * trace / static_cast<double>(n);

  if (state.covariance.isDiagonal(0.0)) {
    Vector diag = state.covariance.diagonal().cwiseMax(floor);
    state.covariance.diagonal() = diag;
    state.basis = Matrix::Identity(n, n);
    state.axis_lengths = diag.cwiseSqrt();
  } else {
    SymmetricEigen eig;
    try {
      eig = symmetric_eigen(state.covariance);
    } catch (const NumericalError& e) {
      throw CmaError(e.what());
    }
    if ((eig.values.array() < floor).any()) {
      eig.values = eig.values.cwiseMax(floor);
      state.covariance = eig.basis * eig.values.asDiagonal() * eig.basis.transpose();
      state.covariance = 0.5 * (state.covariance + state.covariance.transpose()).eval();
    }
    state.basis = std::move(eig.basis);
    state.axis_lengths = eig.values.cwiseSqrt();
  }
  state.decomposed_at = state.generation;
}

StrategyState make_state(Vector mean, Matrix covariance, double step_size, Vector path_cov,
                         Vector path_step, std::uint64_t generation) {
  const auto n = mean.size();
  require(n >= 1, "mean must be non-empty");
  require(covariance.rows() == n && covariance.cols() == n, "covariance must be n x n");
  require(path_cov.size() == n && path_step.size() == n, "evolution paths must have length n");
  require(step_size >= 0.0 && std::isfinite(step_size), "step size must be finite and >= 0");
  StrategyState s;
  s.mean = std::move(mean);
  s.covariance = std::move(covariance);
  s.step_size = step_size;
  s.path_cov = std::move(path_cov);
  s.path_step = std::move(path_step);
  s.generation = generation;
  s.chi_n = expected_chi_norm(static_cast<std::size_t>(n));
  refresh_decomposition(s);
  return s;
}

std::pair<StrategyConfig, StrategyState> init_strategy(std::size_t dimension,
                                                       const StrategyOverrides& overrides,
                                                       const Vector& initial_mean,
                                                       double initial_step) {
  require(dimension >= 1, "dimension must be positive");
  require(initial_step > 0.0 && std::isfinite(initial_step), "initial step size must be positive");
  require(static_cast<std::size_t>(initial_mean.size()) == dimension,
          "initial mean must have the configured dimension");
  StrategyConfig config = make_config(dimension, overrides);
  const auto n = static_cast<Eigen::Index>(dimension);
  StrategyState state;
  state.mean = initial_mean;
  state.covariance = Matrix::Identity(n, n);
  state.step_size = initial_step;
  state.path_cov = Vector::Zero(n);
  state.path_step = Vector::Zero(n);
  state.generation = 0;
  state.chi_n = expected_chi_norm(dimension);
  state.basis = Matrix::Identity(n, n);
  state.axis_lengths = Vector::Ones(n);
  state.decomposed_at = 0;
  return {std::move(config), std::move(state)};
}

Population sample_population(const StrategyState& state, const StrategyConfig& config,
                             std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(config.dimension);
  require(state.mean.size() == n, "state dimension does not match the configuration");
  if (!state.covariance.allFinite() || !state.mean.allFinite() || !std::isfinite(state.step_size)) {
    throw CmaError("cannot sample: state has non-finite entries");
  }

  const Matrix* basis = &state.basis;
  const Vector* lengths = &state.axis_lengths;
  StrategyState fresh;
  if (state.basis.rows() != n || state.axis_lengths.size() != n) {
    fresh = state;
    refresh_decomposition(fresh);
    basis = &fresh.basis;
    lengths = &fresh.axis_lengths;
  }
  const bool diagonal = config.covariance_mode == CovarianceMode::diagonal;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Population pop;
  pop.generation = state.generation + 1;
  pop.candidates.reserve(config.population_size);
  pop.raw_steps.reserve(config.population_size);
  Vector u(n);
  for (std::size_t i = 0; i < config.population_size; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      u(j) = normal(rng);
    }
    Vector z = diagonal ? Vector(lengths->cwiseProduct(u))
                        : Vector(*basis * lengths->cwiseProduct(u));
    pop.candidates.emplace_back(state.mean + state.step_size * z);
    pop.raw_steps.push_back(std::move(z));
  }
  return pop;
}

Vector selection_weights(const StrategyConfig& config, std::size_t count, bool ordered) {
  require(count >= 1, "selection is empty");
  const auto m = static_cast<Eigen::Index>(count);
  if (!ordered || config.weight_mode == WeightMode::uniform_top_k) {
    return Vector::Constant(m, 1.0 / static_cast<double>(count));
  }
  Vector w = config.weights.head(m);
  if (count < config.parent_count) {
    w /= w.sum();
  }
  return w;
}

StrategyState update_strategy(const StrategyState& state, const StrategyConfig& config,
                              const Population& population, const Selection& selection) {
  const auto n = static_cast<Eigen::Index>(config.dimension);
  const std::size_t count = selection.ranked_indices.size();
  require(count >= 1, "update_strategy: selection is empty");
  require(population.generation == state.generation + 1,
          "update_strategy: population does not belong to the next generation");
  require(population.candidates.size() == population.raw_steps.size(),
          "update_strategy: population candidates and steps differ in length");
  const bool uniform = !selection.ordered || config.weight_mode == WeightMode::uniform_top_k;
  require(count <= (uniform ? config.parent_count : config.population_size),
          "update_strategy: selection has more indices than allowed");

  std::vector<bool> seen(population.candidates.size(), false);
  for (std::size_t idx : selection.ranked_indices) {
    require(idx < population.candidates.size(),
            "update_strategy: index " + std::to_string(idx) + " out of range");
    require(!seen[idx], "update_strategy: duplicate index " + std::to_string(idx));
    seen[idx] = true;
  }

  const Vector w = selection_weights(config, count, selection.ordered);
  const double kappa = 1.0 / w.head(std::min<Eigen::Index>(
                                   w.size(), static_cast<Eigen::Index>(config.parent_count)))
                                 .squaredNorm();
  const double weight_sum = w.sum();

  StrategyState next = state;
  next.generation = state.generation + 1;

  // Mean.
  Vector shift = Vector::Zero(n);
  for (std::size_t s = 0; s < count; ++s) {
    shift += w(static_cast<Eigen::Index>(s)) *
             (population.candidates[selection.ranked_indices[s]] - state.mean);
  }
  next.mean = state.mean + config.learn_mean * shift;
  const Vector displacement = (next.mean - state.mean) / state.step_size;

  // Evolution path.
  const double c3 = config.learn_path;
  next.path_cov = (1.0 - c3) * state.path_cov + std::sqrt(c3 * (2.0 - c3) * kappa) * displacement;

  // Conjugate evolution path with C^{-1/2} = B D^{-1} Bᵀ of the previous covariance.
  const double cg = config.learn_step;
  Vector whitened;
  if (config.covariance_mode == CovarianceMode::diagonal) {
    whitened = displacement.cwiseQuotient(state.axis_lengths);
  } else {
    whitened = state.basis *
               (state.basis.transpose() * displacement).cwiseQuotient(state.axis_lengths);
  }
  next.path_step = (1.0 - cg) * state.path_step + std::sqrt(cg * (2.0 - cg) * kappa) * whitened;

  // Covariance.
  const double c1 = config.learn_rank_one;
  const double c2 = config.learn_rank_k;
  const double keep = 1.0 - c1 - c2 * weight_sum;
  if (config.covariance_mode == CovarianceMode::diagonal) {
    Vector diag = keep * state.covariance.diagonal() + c1 * next.path_cov.cwiseAbs2();
    for (std::size_t s = 0; s < count; ++s) {
      diag += c2 * w(static_cast<Eigen::Index>(s)) *
              population.raw_steps[selection.ranked_indices[s]].cwiseAbs2();
    }
    next.covariance = diag.asDiagonal();
  } else {
    next.covariance = keep * state.covariance;
    next.covariance.selfadjointView<Eigen::Lower>().rankUpdate(next.path_cov, c1);
    for (std::size_t s = 0; s < count; ++s) {
      next.covariance.selfadjointView<Eigen::Lower>().rankUpdate(
          population.raw_steps[selection.ranked_indices[s]], c2 * w(static_cast<Eigen::Index>(s)));
    }
    next.covariance.triangularView<Eigen::StrictlyUpper>() =
        next.covariance.transpose().triangularView<Eigen::StrictlyUpper>();
  }

  // Step size.
  next.step_size =
      state.step_size *
      std::exp((cg / config.damping_step) * (next.path_step.norm() / state.chi_n - 1.0));
  if (!std::isfinite(next.step_size) || !next.mean.allFinite()) {
    throw CmaError("update produced non-finite values; the strategy diverged");
  }

  if (next.generation - state.decomposed_at >= config.eigen_interval) {
    refresh_decomposition(next);
  } else if (!next.covariance.allFinite()) {
    throw CmaError("covariance has non-finite entries; the strategy diverged");
  }
  return next;
}

}  // namespace advcma
