#include "advcma/fitness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>

namespace advcma {

std::string_view to_string(NormKind kind) {
  switch (kind) {
    case NormKind::l0:
      return "l0";
    case NormKind::l1:
      return "l1";
    case NormKind::l2:
      return "l2";
    case NormKind::linf:
      return "linf";
  }
  return "unknown";
}

NormKind parse_norm(std::string_view text) {
  std::string t;
  for (char c : text) {
    if (c != '_') t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (t == "l0") return NormKind::l0;
  if (t == "l1") return NormKind::l1;
  if (t == "l2") return NormKind::l2;
  if (t == "linf" || t == "inf" || t == "l∞") return NormKind::linf;
  throw std::invalid_argument("unknown norm '" + std::string(text) + "'");
}

void PenaltyParams::validate() const {
  if (!(same_class_offset > 1.0) || !(same_class_scale > 1.0)) {
    throw std::invalid_argument("penalty constants M1 and M2 must exceed 1");
  }
  if (!(color_penalty > 3.0)) {
    throw std::invalid_argument("color penalty must exceed 3");
  }
}

double norm_distance(NormKind kind, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("norm_distance: length mismatch (" + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()) + ")");
  }
  double acc = 0.0;
  switch (kind) {
    case NormKind::l0:
      for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] != b[i] ? 1.0 : 0.0;
      return acc;
    case NormKind::l1:
      for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
      return acc;
    case NormKind::l2:
      for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
      return std::sqrt(acc);
    case NormKind::linf:
      for (std::size_t i = 0; i < a.size(); ++i) acc = std::max(acc, std::abs(a[i] - b[i]));
      return acc;
  }
  return acc;
}

double penalized_fitness(NormKind kind, bool adversarial, std::span<const double> candidate,
                         std::span<const double> reference, const PenaltyParams& params) {
  const double d = norm_distance(kind, candidate, reference);
  return adversarial ? d : params.same_class_offset + params.same_class_scale * d;
}

double penalized_fitness(NormKind kind, Label candidate_label, Label reference_label,
                         std::span<const double> candidate, std::span<const double> reference,
                         const PenaltyParams& params) {
  return penalized_fitness(kind, candidate_label != reference_label, candidate, reference, params);
}

double color_fitness(const std::array<double, 3>& betas, bool adversarial,
                     const PenaltyParams& params) {
  for (double b : betas) {
    if (!(b >= 0.0 && b <= 1.0)) {
      throw std::invalid_argument("darkening factors must lie in [0, 1]");
    }
  }
  return adversarial ? 3.0 - (betas[0] + betas[1] + betas[2]) : params.color_penalty;
}

double color_fitness(const std::array<double, 3>& betas, Label candidate_label,
                     Label reference_label, const PenaltyParams& params) {
  return color_fitness(betas, candidate_label != reference_label, params);
}

double average_perturbation(const Image& a, const Image& b) {
  if (!a.same_shape(b) || a.size() != b.size()) {
    throw std::invalid_argument("average_perturbation: shape mismatch (" + a.shape_string() +
                                " vs " + b.shape_string() + ")");
  }
  const double count = static_cast<double>(a.channels * a.height * a.width);
  if (count == 0.0) {
    return 0.0;
  }
  return norm_distance(NormKind::l1, a.span(), b.span()) / count;
}

}  // namespace advcma
