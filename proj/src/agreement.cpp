#include "advcma/agreement.hpp"

#include <cmath>
#include <fstream>

namespace advcma {

using nlohmann::json;

std::size_t SelectionLog::participant_count() const {
  return stimuli.empty() ? 0 : stimuli.front().participants.size();
}

namespace {

void check_vector(const ChoiceVector& v, const SelectionLog& log, const std::string& where) {
  if (v.size() != log.population_size) {
    throw AgreementError(where + ": vector has length " + std::to_string(v.size()) +
                         ", expected L=" + std::to_string(log.population_size));
  }
  std::size_t ones = 0;
  for (int x : v) {
    if (x != 0 && x != 1) throw AgreementError(where + ": entries must be 0 or 1");
    ones += static_cast<std::size_t>(x);
  }
  if (ones != log.parent_count) {
    throw AgreementError(where + ": marks " + std::to_string(ones) + " candidates, expected K=" +
                         std::to_string(log.parent_count));
  }
}

std::vector<double> participant_mean(const StimulusLog& s, std::size_t length) {
  std::vector<double> mean(length, 0.0);
  for (const ChoiceVector& h : s.participants) {
    for (std::size_t l = 0; l < length; ++l) mean[l] += h[l];
  }
  for (double& m : mean) m /= static_cast<double>(s.participants.size());
  return mean;
}

double half_l1(const ChoiceVector& h, const std::vector<double>& mean) {
  double acc = 0.0;
  for (std::size_t l = 0; l < mean.size(); ++l) acc += std::abs(static_cast<double>(h[l]) - mean[l]);
  return acc / 2.0;
}

}  // namespace

void SelectionLog::validate(bool require_l1) const {
  if (population_size == 0 || parent_count == 0 || parent_count > population_size) {
    throw AgreementError("selection log needs 1 <= K <= L");
  }
  if (stimuli.empty()) {
    throw AgreementError("selection log has no stimuli");
  }
  const std::size_t np = stimuli.front().participants.size();
  if (np == 0) {
    throw AgreementError("selection log has no participants");
  }
  for (std::size_t j = 0; j < stimuli.size(); ++j) {
    const StimulusLog& s = stimuli[j];
    const std::string where = "stimulus " + (s.id.empty() ? std::to_string(j) : s.id);
    if (s.participants.size() != np) {
      throw AgreementError(where + ": has " + std::to_string(s.participants.size()) +
                           " participants, expected " + std::to_string(np) + " (ragged log)");
    }
    for (std::size_t i = 0; i < np; ++i) {
      check_vector(s.participants[i], *this, where + " participant " + std::to_string(i));
    }
    if (s.l1_choice) {
      check_vector(*s.l1_choice, *this, where + " L1 choice");
    } else if (require_l1) {
      throw AgreementError(where + ": missing the L1 choice vector H");
    }
  }
}

ChoiceVector choice_vector(std::size_t population_size, const std::vector<std::size_t>& chosen) {
  ChoiceVector v(population_size, 0);
  for (std::size_t idx : chosen) {
    if (idx >= population_size) {
      throw AgreementError("choice index " + std::to_string(idx) + " exceeds L");
    }
    v[idx] = 1;
  }
  return v;
}

std::vector<StimulusAgreement> per_stimulus_agreement(const SelectionLog& log) {
  log.validate(false);
  std::vector<StimulusAgreement> out;
  out.reserve(log.stimuli.size());
  for (std::size_t j = 0; j < log.stimuli.size(); ++j) {
    const StimulusLog& s = log.stimuli[j];
    const auto mean = participant_mean(s, log.population_size);
    StimulusAgreement a;
    a.id = s.id.empty() ? std::to_string(j) : s.id;
    for (const ChoiceVector& h : s.participants) a.spread += half_l1(h, mean);
    a.spread /= static_cast<double>(s.participants.size());
    if (s.l1_choice) a.l1_divergence = half_l1(*s.l1_choice, mean);
    out.push_back(std::move(a));
  }
  return out;
}

double agreement_spread(const SelectionLog& log) {
  log.validate(false);
  const double np = static_cast<double>(log.participant_count());
  const double ne = static_cast<double>(log.stimuli.size());
  double total = 0.0;
  for (const StimulusLog& s : log.stimuli) {
    const auto mean = participant_mean(s, log.population_size);
    for (const ChoiceVector& h : s.participants) total += half_l1(h, mean);
  }
  return total / (np * ne);
}

double agreement_vs_l1(const SelectionLog& log) {
  log.validate(true);
  double total = 0.0;
  for (const StimulusLog& s : log.stimuli) {
    total += half_l1(*s.l1_choice, participant_mean(s, log.population_size));
  }
  return total / static_cast<double>(log.stimuli.size());
}

SelectionLog selection_log_from_json(const json& doc) {
  SelectionLog log;
  try {
    log.population_size = doc.at("population_size").get<std::size_t>();
    log.parent_count = doc.at("parent_count").get<std::size_t>();
    for (const auto& s : doc.at("stimuli")) {
      StimulusLog st;
      st.id = s.value("id", std::string());
      st.participants = s.at("participants").get<std::vector<ChoiceVector>>();
      if (s.contains("l1") && !s["l1"].is_null()) st.l1_choice = s["l1"].get<ChoiceVector>();
      log.stimuli.push_back(std::move(st));
    }
  } catch (const json::exception& e) {
    throw AgreementError(std::string("malformed selection log: ") + e.what());
  }
  return log;
}

json selection_log_to_json(const SelectionLog& log) {
  json stimuli = json::array();
  for (const StimulusLog& s : log.stimuli) {
    json st{{"id", s.id}, {"participants", s.participants}};
    if (s.l1_choice) st["l1"] = *s.l1_choice;
    stimuli.push_back(std::move(st));
  }
  return {{"population_size", log.population_size},
          {"parent_count", log.parent_count},
          {"stimuli", stimuli}};
}

SelectionLog load_selection_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw AgreementError("cannot open selection log " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw AgreementError(path.string() + ": " + e.what());
  }
  return selection_log_from_json(doc);
}

}  // namespace advcma
