#pragma once

// Label-only access to a classifier. Nothing past this boundary may look at
// scores, so every kind of model answers with class indices only.

#include "advcma/label.hpp"
#include "advcma/linalg.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace advcma {

class ClassifierError : public std::runtime_error {
 public:
  explicit ClassifierError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or inconsistent weights document.
class WeightsFormatError : public ClassifierError {
 public:
  explicit WeightsFormatError(const std::string& what) : ClassifierError(what) {}
};

class DimensionError : public ClassifierError {
 public:
  explicit DimensionError(const std::string& what) : ClassifierError(what) {}
};

/// Network-level failure of a remote classifier. Retryable.
class TransportError : public ClassifierError {
 public:
  explicit TransportError(const std::string& what) : ClassifierError(what) {}
};

enum class Activation { relu, none };

struct DenseLayer {
  Matrix weight;  // rows = outputs, cols = inputs
  Vector bias;
  Activation activation = Activation::none;
};

struct WeightsManifest {
  int num_classes = 0;
  std::size_t input_dim = 0;
  std::string provenance;
  nlohmann::json extra = nlohmann::json::object();  // everything else in the manifest block
};

struct LinearModel {
  Matrix weight;  // num_classes × n
  Vector bias;
};

struct MlpModel {
  std::filesystem::path path;
  std::vector<DenseLayer> layers;
  WeightsManifest manifest;
};

struct RemoteModel {
  std::string url;  // scheme://host[:port][/base]; requests go to <base>/classify
  int timeout_ms = 10000;
  int retries = 2;
  int max_in_flight = 4;
  std::size_t input_dim = 0;  // 0 = not declared
  int num_classes = 0;        // 0 = not declared
};

struct ClassifierSpec {
  std::variant<LinearModel, MlpModel, RemoteModel> model;

  std::string_view kind() const;
  std::size_t input_dim() const;  // 0 when undeclared (remote)
  int num_classes() const;        // 0 when undeclared (remote)
};

/// Counts every input sent to a classifier. Thread-safe.
class QueryLedger {
 public:
  QueryLedger() = default;
  QueryLedger(const QueryLedger& other);
  QueryLedger& operator=(const QueryLedger& other);

  void begin_generation();
  void record(std::uint64_t count);

  std::uint64_t total() const { return total_.load(); }
  std::vector<std::uint64_t> per_generation() const;
  /// Restores a previously saved count (session recovery).
  void restore(std::uint64_t total, std::vector<std::uint64_t> per_generation);

 private:
  std::atomic<std::uint64_t> total_{0};
  mutable std::mutex mutex_;
  std::vector<std::uint64_t> per_generation_;
};

class RemoteConnection;

class Classifier {
 public:
  explicit Classifier(ClassifierSpec spec);
  ~Classifier();
  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;

  const ClassifierSpec& spec() const { return spec_; }

  /// One label per input, argmax with lowest-index tie-break.
  std::vector<Label> classify_batch(std::span<const Vector> inputs, QueryLedger& ledger) const;
  Label classify(const Vector& input, QueryLedger& ledger) const;

  /// Raw output layer; only for building local servers and tests, never used by attacks.
  Vector scores(const Vector& input) const;

 private:
  void check_input(const Vector& input) const;

  ClassifierSpec spec_;
  std::unique_ptr<RemoteConnection> remote_;
};

/// argmax with lowest index winning ties.
Label argmax_label(const Vector& scores);

std::vector<Label> classify_batch(const Classifier& classifier, std::span<const Vector> inputs,
                                  QueryLedger& ledger);

/// Parses and validates a weights document. Parse errors name the byte offset.
ClassifierSpec parse_weights(std::string_view text, const std::filesystem::path& origin = {});
ClassifierSpec load_weights(const std::filesystem::path& path);
nlohmann::json weights_document(const std::vector<DenseLayer>& layers,
                                const WeightsManifest& manifest);

/// {"kind": "linear"|"mlp_file"|"remote", ...} as used in problem documents.
ClassifierSpec classifier_from_json(const nlohmann::json& doc);
nlohmann::json classifier_to_json(const ClassifierSpec& spec);

/// Request body for POST /classify.
nlohmann::json classify_request_body(std::span<const Vector> inputs);
/// Parses a /classify response body; throws TransportError on malformed input.
std::vector<Label> parse_classify_response(std::string_view body, std::size_t expected);

}  // namespace advcma
