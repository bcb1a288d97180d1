#pragma once

// Covariance matrix adaptation evolution strategy.
//
// The strategy only ever sees a population and an externally chosen set of
// "best" candidate indices, so any selector (a metric ranking, a simulated
// participant, a person clicking on a screen) can drive it.

#include "advcma/linalg.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace advcma {

class CmaError : public std::runtime_error {
 public:
  explicit CmaError(const std::string& what) : std::runtime_error(what) {}
};

enum class WeightMode {
  log_decreasing,  // ω_s ∝ ln(K+1) − ln(s), needs a full ranking
  uniform_top_k,   // ω_s = 1/|selection|, order of the selection is irrelevant
};

enum class CovarianceMode { full, diagonal };

std::string_view to_string(WeightMode mode);
WeightMode parse_weight_mode(std::string_view text);

struct StrategyConfig {
  std::size_t dimension = 0;
  std::size_t population_size = 0;  // L
  std::size_t parent_count = 0;     // K
  Vector weights;                   // length L, zero beyond K
  double learn_mean = 1.0;          // c_m
  double learn_rank_one = 0.0;      // c_1
  double learn_rank_k = 0.0;        // c_2
  double learn_path = 0.0;          // c_3
  double learn_step = 0.0;          // c_γ
  double damping_step = 1.0;        // d_γ
  WeightMode weight_mode = WeightMode::log_decreasing;
  CovarianceMode covariance_mode = CovarianceMode::full;
  // Generations between eigendecompositions of C. Resolved to ≥ 1 by
  // make_config; 0 in overrides asks for the automatic cadence.
  std::size_t eigen_interval = 1;
};

/// Every field left empty is filled with its default by make_config.
struct StrategyOverrides {
  std::optional<std::size_t> population_size;
  std::optional<std::size_t> parent_count;
  std::optional<Vector> weights;
  std::optional<double> learn_mean;
  std::optional<double> learn_rank_one;
  std::optional<double> learn_rank_k;
  std::optional<double> learn_path;
  std::optional<double> learn_step;
  std::optional<double> damping_step;
  std::optional<WeightMode> weight_mode;
  std::optional<CovarianceMode> covariance_mode;
  std::optional<std::size_t> eigen_interval;
};

struct StrategyState {
  Vector mean;
  Matrix covariance;
  double step_size = 0.0;
  Vector path_cov;
  Vector path_step;
  std::uint64_t generation = 0;
  double chi_n = 0.0;

  // Cached decomposition covariance ≈ basis · diag(axis_lengths²) · basisᵀ,
  // taken at generation `decomposed_at`. Used for sampling and for C^{-1/2}.
  Matrix basis;
  Vector axis_lengths;
  std::uint64_t decomposed_at = 0;
};

struct Population {
  std::vector<Vector> candidates;  // x_i = mean + step_size · raw_steps[i]
  std::vector<Vector> raw_steps;   // z_i ~ N(0, C)
  std::uint64_t generation = 0;    // generation of the state that sampled it, plus one
};

struct Selection {
  std::vector<std::size_t> ranked_indices;  // best first
  bool ordered = true;
};

/// Default recombination weights for (L, K): log-decreasing over the first K
/// entries, or uniform 1/K, zero for the rest.
Vector default_weights(std::size_t population_size, std::size_t parent_count, WeightMode mode);

/// 1 / Σ_{s≤K} ω_s².
double effective_kappa(const StrategyConfig& config);

/// E‖N(0, I_n)‖ = √2 Γ((n+1)/2) / Γ(n/2), evaluated through log-Γ.
double expected_chi_norm(std::size_t n);

/// Builds a validated configuration, deriving unset learning rates from the
/// weights. Throws CmaError on inconsistent values.
StrategyConfig make_config(std::size_t dimension, const StrategyOverrides& overrides = {});

/// Checks the weight and learning-rate invariants; throws CmaError.
void validate_config(const StrategyConfig& config);

std::pair<StrategyConfig, StrategyState> init_strategy(std::size_t dimension,
                                                       const StrategyOverrides& overrides,
                                                       const Vector& initial_mean,
                                                       double initial_step);

/// State with an arbitrary (symmetric positive-definite) covariance. The
/// decomposition is computed eagerly.
StrategyState make_state(Vector mean, Matrix covariance, double step_size, Vector path_cov,
                         Vector path_step, std::uint64_t generation = 0);

/// Recomputes basis and axis lengths from the current covariance.
void refresh_decomposition(StrategyState& state);

/// Draws L candidates; deterministic for a given seed.
Population sample_population(const StrategyState& state, const StrategyConfig& config,
                             std::uint64_t seed);

/// One generation of mean, evolution path, conjugate path, covariance and
/// step-size updates from the selected candidates.
///
/// When the selection is unordered, or the configuration uses uniform
/// weights, every selected candidate gets weight 1/|selection|. An ordered
/// selection shorter than K uses the leading weights renormalized to one.
StrategyState update_strategy(const StrategyState& state, const StrategyConfig& config,
                              const Population& population, const Selection& selection);

/// Weights the update applies for a selection of `count` candidates.
Vector selection_weights(const StrategyConfig& config, std::size_t count, bool ordered);

}  // namespace advcma
