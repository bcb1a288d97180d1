#pragma once

#include "advcma/image.hpp"
#include "advcma/label.hpp"

#include <array>
#include <span>
#include <string_view>

namespace advcma {

enum class NormKind { l0, l1, l2, linf };

std::string_view to_string(NormKind kind);
/// Accepts "l0", "l1", "l2", "linf" (case-insensitive, "L_inf"/"inf" too).
NormKind parse_norm(std::string_view text);

/// Constants of the penalized objectives. Same-class candidates score
/// same_class_offset + same_class_scale·distance, or color_penalty for the
/// darkening objective.
struct PenaltyParams {
  double same_class_offset = 1e6;  // M₁
  double same_class_scale = 1e3;   // M₂
  double color_penalty = 100.0;    // M, must exceed 3

  void validate() const;
};

/// Throws std::invalid_argument on length mismatch. L0 counts coordinates
/// that differ at all.
double norm_distance(NormKind kind, std::span<const double> a, std::span<const double> b);

double penalized_fitness(NormKind kind, bool adversarial, std::span<const double> candidate,
                         std::span<const double> reference, const PenaltyParams& params);
double penalized_fitness(NormKind kind, Label candidate_label, Label reference_label,
                         std::span<const double> candidate, std::span<const double> reference,
                         const PenaltyParams& params);

/// 3 − Σβ for an adversarial candidate, the color penalty otherwise.
/// Throws std::invalid_argument if any β lies outside [0, 1].
double color_fitness(const std::array<double, 3>& betas, bool adversarial,
                     const PenaltyParams& params);
double color_fitness(const std::array<double, 3>& betas, Label candidate_label,
                     Label reference_label, const PenaltyParams& params);

/// ‖a − b‖₁ / (k·h·w).
double average_perturbation(const Image& a, const Image& b);

}  // namespace advcma
