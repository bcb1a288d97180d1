#include "advcma/classifier.hpp"

#include <httplib.h>

#include <fstream>
#include <iterator>
#include <semaphore>
#include <sstream>
#include <thread>

namespace advcma {

using nlohmann::json;

// ----------------------------------------------------------------------------
// Spec

std::string_view ClassifierSpec::kind() const {
  switch (model.index()) {
    case 0:
      return "linear";
    case 1:
      return "mlp_file";
    default:
      return "remote";
  }
}

std::size_t ClassifierSpec::input_dim() const {
  if (const auto* m = std::get_if<LinearModel>(&model)) return static_cast<std::size_t>(m->weight.cols());
  if (const auto* m = std::get_if<MlpModel>(&model)) return m->manifest.input_dim;
  return std::get<RemoteModel>(model).input_dim;
}

int ClassifierSpec::num_classes() const {
  if (const auto* m = std::get_if<LinearModel>(&model)) return static_cast<int>(m->weight.rows());
  if (const auto* m = std::get_if<MlpModel>(&model)) return m->manifest.num_classes;
  return std::get<RemoteModel>(model).num_classes;
}

// ----------------------------------------------------------------------------
// Ledger

QueryLedger::QueryLedger(const QueryLedger& other) {
  std::lock_guard lock(other.mutex_);
  total_ = other.total_.load();
  per_generation_ = other.per_generation_;
}

QueryLedger& QueryLedger::operator=(const QueryLedger& other) {
  if (this != &other) {
    std::scoped_lock lock(mutex_, other.mutex_);
    total_ = other.total_.load();
    per_generation_ = other.per_generation_;
  }
  return *this;
}

void QueryLedger::begin_generation() {
  std::lock_guard lock(mutex_);
  per_generation_.push_back(0);
}

void QueryLedger::record(std::uint64_t count) {
  total_.fetch_add(count);
  std::lock_guard lock(mutex_);
  if (!per_generation_.empty()) {
    per_generation_.back() += count;
  }
}

std::vector<std::uint64_t> QueryLedger::per_generation() const {
  std::lock_guard lock(mutex_);
  return per_generation_;
}

void QueryLedger::restore(std::uint64_t total, std::vector<std::uint64_t> per_generation) {
  std::lock_guard lock(mutex_);
  total_ = total;
  per_generation_ = std::move(per_generation);
}

// ----------------------------------------------------------------------------
// Remote transport

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host:port
  std::string base;    // path prefix without trailing slash
};

ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ClassifierError("remote classifier url '" + url + "' has no scheme");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) {
    out.base = url.substr(path_start);
    while (!out.base.empty() && out.base.back() == '/') out.base.pop_back();
  }
  return out;
}

}  // namespace

class RemoteConnection {
 public:
  explicit RemoteConnection(const RemoteModel& model)
      : model_(model), url_(parse_url(model.url)), slots_(std::max(1, model.max_in_flight)) {}

  std::vector<Label> post(std::span<const Vector> inputs) {
    const std::string body = classify_request_body(inputs).dump();
    slots_.acquire();
    struct Release {
      std::counting_semaphore<1024>& s;
      ~Release() { s.release(); }
    } release{slots_};

    std::string last_error;
    for (int attempt = 0; attempt <= model_.retries; ++attempt) {
      httplib::Client client(url_.origin);
      const auto ms = std::chrono::milliseconds(model_.timeout_ms);
      client.set_connection_timeout(ms);
      client.set_read_timeout(ms);
      client.set_write_timeout(ms);
      auto res = client.Post(url_.base + "/classify", body, "application/json");
      if (!res) {
        last_error = "transport failure: " + httplib::to_string(res.error());
      } else if (res->status != 200) {
        last_error = "remote classifier answered HTTP " + std::to_string(res->status);
      } else {
        return parse_classify_response(res->body, inputs.size());
      }
      if (attempt < model_.retries) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
      }
    }
    throw TransportError(model_.url + ": " + last_error + " after " +
                         std::to_string(model_.retries + 1) + " attempt(s)");
  }

 private:
  RemoteModel model_;
  ParsedUrl url_;
  std::counting_semaphore<1024> slots_;
};

json classify_request_body(std::span<const Vector> inputs) {
  json instances = json::array();
  for (const Vector& v : inputs) {
    instances.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  }
  return json{{"instances", std::move(instances)}};
}

std::vector<Label> parse_classify_response(std::string_view body, std::size_t expected) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw TransportError(std::string("malformed /classify response: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("labels") || !doc["labels"].is_array()) {
    throw TransportError("/classify response lacks a 'labels' array");
  }
  const auto& labels = doc["labels"];
  if (labels.size() != expected) {
    throw TransportError("/classify returned " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(expected) + " instances");
  }
  std::vector<Label> out;
  out.reserve(expected);
  for (const auto& l : labels) {
    if (!l.is_number_integer()) {
      throw TransportError("/classify labels must be integers");
    }
    out.emplace_back(l.get<std::int32_t>());
  }
  return out;
}

// ----------------------------------------------------------------------------
// Classifier

Label argmax_label(const Vector& scores) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i) {
    if (scores(i) > scores(best)) best = i;
  }
  return Label(static_cast<std::int32_t>(best));
}

Classifier::Classifier(ClassifierSpec spec) : spec_(std::move(spec)) {
  if (const auto* r = std::get_if<RemoteModel>(&spec_.model)) {
    remote_ = std::make_unique<RemoteConnection>(*r);
  }
}

Classifier::~Classifier() = default;

void Classifier::check_input(const Vector& input) const {
  const std::size_t n = spec_.input_dim();
  if (n != 0 && static_cast<std::size_t>(input.size()) != n) {
    throw DimensionError("classifier expects inputs of length " + std::to_string(n) + ", got " +
                         std::to_string(input.size()));
  }
  if (!input.allFinite()) {
    throw DimensionError("classifier input has non-finite values");
  }
}

Vector Classifier::scores(const Vector& input) const {
  check_input(input);
  if (const auto* m = std::get_if<LinearModel>(&spec_.model)) {
    return m->weight * input + m->bias;
  }
  if (const auto* m = std::get_if<MlpModel>(&spec_.model)) {
    Vector h = input;
    for (const DenseLayer& layer : m->layers) {
      h = layer.weight * h + layer.bias;
      if (layer.activation == Activation::relu) h = h.cwiseMax(0.0);
    }
    return h;
  }
  throw ClassifierError("remote classifiers expose labels only");
}

std::vector<Label> Classifier::classify_batch(std::span<const Vector> inputs,
                                              QueryLedger& ledger) const {
  for (const Vector& v : inputs) check_input(v);
  std::vector<Label> labels;
  if (remote_) {
    labels = inputs.empty() ? std::vector<Label>{} : remote_->post(inputs);
    const int classes = spec_.num_classes();
    for (Label l : labels) {
      if (l.value < 0 || (classes > 0 && l.value >= classes)) {
        throw TransportError("remote classifier returned out-of-range label " +
                             std::to_string(l.value));
      }
    }
  } else {
    labels.reserve(inputs.size());
    for (const Vector& v : inputs) labels.push_back(argmax_label(scores(v)));
  }
  ledger.record(inputs.size());
  return labels;
}

Label Classifier::classify(const Vector& input, QueryLedger& ledger) const {
  return classify_batch(std::span<const Vector>(&input, 1), ledger).front();
}

std::vector<Label> classify_batch(const Classifier& classifier, std::span<const Vector> inputs,
                                  QueryLedger& ledger) {
  return classifier.classify_batch(inputs, ledger);
}

// ----------------------------------------------------------------------------
// Weights documents

namespace {

Activation parse_activation(const json& tag, std::size_t layer) {
  if (tag == "relu") return Activation::relu;
  if (tag == "none") return Activation::none;
  throw WeightsFormatError("layer " + std::to_string(layer) + ": unknown activation " + tag.dump());
}

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) {
    throw WeightsFormatError(where + ": missing field '" + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw WeightsFormatError(where + ": field '" + key + "' has the wrong type (" + e.what() + ")");
  }
}

}  // namespace

ClassifierSpec parse_weights(std::string_view text, const std::filesystem::path& origin) {
  const std::string name = origin.empty() ? std::string("weights document") : origin.string();
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw WeightsFormatError(name + ": parse error at byte offset " + std::to_string(e.byte) +
                             ": " + e.what());
  }
  if (!doc.is_object()) {
    throw WeightsFormatError(name + ": top level must be an object");
  }
  const json manifest_doc = doc.value("manifest", json::object());
  if (!doc.contains("layers") || !doc["layers"].is_array() || doc["layers"].empty()) {
    throw WeightsFormatError(name + ": 'layers' must be a non-empty array");
  }

  MlpModel model;
  model.path = origin;
  const auto& layers = doc["layers"];
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string where = name + " layer " + std::to_string(i);
    const json& l = layers[i];
    const auto rows = field<std::size_t>(l, "rows", where);
    const auto cols = field<std::size_t>(l, "cols", where);
    const auto weight = field<std::vector<double>>(l, "weight", where);
    const auto bias = field<std::vector<double>>(l, "bias", where);
    if (rows == 0 || cols == 0) {
      throw WeightsFormatError(where + ": rows and cols must be positive");
    }
    if (weight.size() != rows * cols) {
      throw WeightsFormatError(where + ": weight has " + std::to_string(weight.size()) +
                               " values, expected rows*cols=" + std::to_string(rows * cols));
    }
    if (bias.size() != rows) {
      throw WeightsFormatError(where + ": bias has " + std::to_string(bias.size()) +
                               " values, expected " + std::to_string(rows));
    }
    if (i > 0) {
      const auto prev = static_cast<std::size_t>(model.layers.back().weight.rows());
      if (cols != prev) {
        throw WeightsFormatError(where + ": expects " + std::to_string(cols) +
                                 " inputs but the previous layer has " + std::to_string(prev) +
                                 " outputs");
      }
    }
    DenseLayer layer;
    layer.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                  Eigen::RowMajor>>(
        weight.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    layer.bias = Eigen::Map<const Vector>(bias.data(), static_cast<Eigen::Index>(rows));
    layer.activation = parse_activation(l.value("activation", json("none")), i);
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw WeightsFormatError(where + ": non-finite parameters");
    }
    model.layers.push_back(std::move(layer));
  }

  const auto input_dim = static_cast<std::size_t>(model.layers.front().weight.cols());
  const auto classes = static_cast<int>(model.layers.back().weight.rows());
  model.manifest.input_dim = manifest_doc.value("input_dim", input_dim);
  model.manifest.num_classes = manifest_doc.value("num_classes", classes);
  model.manifest.provenance = manifest_doc.value("provenance", std::string());
  model.manifest.extra = manifest_doc;
  if (model.manifest.input_dim != input_dim) {
    throw WeightsFormatError(name + ": manifest input_dim " +
                             std::to_string(model.manifest.input_dim) +
                             " disagrees with the first layer (" + std::to_string(input_dim) + ")");
  }
  if (model.manifest.num_classes != classes) {
    throw WeightsFormatError(name + ": manifest num_classes " +
                             std::to_string(model.manifest.num_classes) +
                             " disagrees with the last layer (" + std::to_string(classes) + ")");
  }
  return ClassifierSpec{std::move(model)};
}

ClassifierSpec load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw WeightsFormatError("cannot open weights document " + path.string());
  }
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_weights(text, path);
}

json weights_document(const std::vector<DenseLayer>& layers, const WeightsManifest& manifest) {
  json out_layers = json::array();
  for (const DenseLayer& l : layers) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = l.weight;
    out_layers.push_back({
        {"rows", l.weight.rows()},
        {"cols", l.weight.cols()},
        {"weight", std::vector<double>(rm.data(), rm.data() + rm.size())},
        {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())},
        {"activation", l.activation == Activation::relu ? "relu" : "none"},
    });
  }
  json m = manifest.extra.is_object() ? manifest.extra : json::object();
  m["num_classes"] = manifest.num_classes;
  m["input_dim"] = manifest.input_dim;
  m["provenance"] = manifest.provenance;
  return json{{"format", "advcma-dense-v1"}, {"manifest", m}, {"layers", out_layers}};
}

ClassifierSpec classifier_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("kind")) {
    throw ClassifierError("classifier document needs a 'kind'");
  }
  const std::string kind = doc["kind"].get<std::string>();
  if (kind == "linear") {
    const auto rows = doc.at("weight").get<std::vector<std::vector<double>>>();
    const auto bias = doc.at("bias").get<std::vector<double>>();
    if (rows.empty() || rows.front().empty()) {
      throw ClassifierError("linear classifier needs a non-empty weight matrix");
    }
    if (bias.size() != rows.size()) {
      throw DimensionError("linear classifier bias length differs from the number of classes");
    }
    LinearModel m;
    m.weight.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows.front().size()) {
        throw DimensionError("linear classifier weight rows differ in length");
      }
      for (std::size_t c = 0; c < rows[r].size(); ++c) {
        m.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
    }
    m.bias = Eigen::Map<const Vector>(bias.data(), static_cast<Eigen::Index>(bias.size()));
    return ClassifierSpec{std::move(m)};
  }
  if (kind == "mlp_file") {
    return load_weights(doc.at("path").get<std::string>());
  }
  if (kind == "remote") {
    RemoteModel m;
    m.url = doc.at("url").get<std::string>();
    m.timeout_ms = doc.value("timeout_ms", m.timeout_ms);
    m.retries = doc.value("retries", m.retries);
    m.max_in_flight = doc.value("max_in_flight", m.max_in_flight);
    m.input_dim = doc.value("input_dim", std::size_t{0});
    m.num_classes = doc.value("num_classes", 0);
    if (m.timeout_ms <= 0 || m.retries < 0) {
      throw ClassifierError("remote classifier needs a positive timeout and non-negative retries");
    }
    return ClassifierSpec{std::move(m)};
  }
  throw ClassifierError("unknown classifier kind '" + kind + "'");
}

json classifier_to_json(const ClassifierSpec& spec) {
  if (const auto* m = std::get_if<LinearModel>(&spec.model)) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m->weight.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(m->weight.cols()));
      for (Eigen::Index c = 0; c < m->weight.cols(); ++c) row[static_cast<std::size_t>(c)] = m->weight(r, c);
      rows.push_back(row);
    }
    return {{"kind", "linear"},
            {"weight", rows},
            {"bias", std::vector<double>(m->bias.data(), m->bias.data() + m->bias.size())}};
  }
  if (const auto* m = std::get_if<MlpModel>(&spec.model)) {
    return {{"kind", "mlp_file"}, {"path", m->path.string()}};
  }
  const auto& r = std::get<RemoteModel>(spec.model);
  return {{"kind", "remote"},          {"url", r.url},
          {"timeout_ms", r.timeout_ms}, {"retries", r.retries},
          {"max_in_flight", r.max_in_flight}, {"input_dim", r.input_dim},
          {"num_classes", r.num_classes}};
}

}  // namespace advcma
