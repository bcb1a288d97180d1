#pragma once

// Consistency statistics over recorded top-K choices.
//
// Every stimulus j shows up to L candidates; participant i marks K of them,
// giving a binary vector h_ij. With h̄_j the mean over participants:
//
//   spread      ε     = 1/(n_p·n_e) Σ_j Σ_i ‖h_ij − h̄_j‖₁ / 2
//   divergence  E_div = 1/n_e Σ_j ‖H_j − h̄_j‖₁ / 2
//
// where H_j marks the K candidates an L1 ranking would pick.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace advcma {

class AgreementError : public std::invalid_argument {
 public:
  explicit AgreementError(const std::string& what) : std::invalid_argument(what) {}
};

using ChoiceVector = std::vector<int>;  // 0/1 entries

struct StimulusLog {
  std::string id;
  std::vector<ChoiceVector> participants;  // h_ij, one per participant
  std::optional<ChoiceVector> l1_choice;   // H_j
};

struct SelectionLog {
  std::size_t population_size = 0;  // L
  std::size_t parent_count = 0;     // K
  std::vector<StimulusLog> stimuli;

  std::size_t participant_count() const;
  /// Throws AgreementError on ragged logs, wrong vector lengths, non-binary
  /// entries, or vectors that do not mark exactly K candidates.
  void validate(bool require_l1 = false) const;
};

/// Marks `chosen` in a length-L vector.
ChoiceVector choice_vector(std::size_t population_size, const std::vector<std::size_t>& chosen);

double agreement_spread(const SelectionLog& log);
double agreement_vs_l1(const SelectionLog& log);

struct StimulusAgreement {
  std::string id;
  double spread = 0.0;                     // (1/n_p) Σ_i ‖h_ij − h̄_j‖₁/2
  std::optional<double> l1_divergence;     // ‖H_j − h̄_j‖₁/2
};
std::vector<StimulusAgreement> per_stimulus_agreement(const SelectionLog& log);

SelectionLog selection_log_from_json(const nlohmann::json& doc);
nlohmann::json selection_log_to_json(const SelectionLog& log);
SelectionLog load_selection_log(const std::filesystem::path& path);

}  // namespace advcma
