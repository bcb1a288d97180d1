#include "advcma/session.hpp"

#include "advcma/snapshot.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <regex>
#include <set>
#include <sstream>

namespace advcma {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(SessionStatus status) {
  switch (status) {
    case SessionStatus::awaiting_selection: return "awaiting_selection";
    case SessionStatus::computing: return "computing";
    case SessionStatus::finished: return "finished";
    case SessionStatus::aborted: return "aborted";
  }
  return "aborted";
}

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string new_session_id() {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mu);
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << rng();
  return out.str();
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

void write_text_file(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

std::string snapshot_name(std::uint64_t generation) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "gen_%06llu.bin", static_cast<unsigned long long>(generation));
  return buf;
}

std::optional<BisectionConfig> bisection_from_json(const json& doc) {
  if (doc.is_null() || (doc.is_boolean() && !doc.get<bool>())) return std::nullopt;
  BisectionConfig cfg;
  if (doc.is_object()) {
    cfg.max_steps = doc.value("max_steps", cfg.max_steps);
    cfg.min_interval = doc.value("min_interval", cfg.min_interval);
  }
  cfg.validate();
  return cfg;
}

json bisection_to_json(const std::optional<BisectionConfig>& cfg) {
  if (!cfg) return nullptr;
  return {{"max_steps", cfg->max_steps}, {"min_interval", cfg->min_interval}};
}

/// Screen positions for a generation, reproducible from the session seed.
std::vector<std::size_t> display_order(std::uint64_t seed, std::uint64_t generation, std::size_t count) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(generation_seed(seed ^ 0xD15B1A7ULL, generation));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

struct LoggedSelection {
  std::uint64_t generation = 0;
  SelectionResponse response;
};

/// Selections in log order, minus the ones whose processing failed.
std::vector<LoggedSelection> logged_selections(const std::vector<json>& events) {
  std::vector<LoggedSelection> out;
  for (const json& e : events) {
    const std::string type = e.value("type", "");
    if (type == "selection") {
      out.push_back({e.at("generation").get<std::uint64_t>(), response_from_json(e)});
    } else if (type == "selection_failed") {
      const auto g = e.at("generation").get<std::uint64_t>();
      if (!out.empty() && out.back().generation == g) out.pop_back();
    }
  }
  return out;
}

std::vector<json> read_events(const fs::path& path) {
  std::vector<json> events;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      events.push_back(json::parse(line));
    } catch (const json::exception&) {
      break;  // torn final line after a crash
    }
  }
  return events;
}

struct ManifestContents {
  AttackProblem problem;
  EngineOptions options;
};

ManifestContents parse_manifest(const json& manifest) {
  ManifestContents m;
  m.problem = problem_from_json(manifest.at("problem"));
  m.options.perceptual = true;
  m.options.seed = manifest.at("seed").get<std::uint64_t>();
  m.options.bisection = bisection_from_json(manifest.value("bisection", json(nullptr)));
  m.options.session_id = manifest.at("session_id").get<std::string>();
  return m;
}

}  // namespace

// ----------------------------------------------------------------------------

class Session {
 public:
  std::string id;
  fs::path dir;
  std::uint64_t seed = 0;
  std::int64_t created_at = 0;
  std::atomic<std::int64_t> updated_at{0};
  std::atomic<SessionStatus> status{SessionStatus::computing};

  std::mutex engine_mutex;  // serializes everything that touches the engine
  std::optional<AttackEngine> engine;
  std::set<std::uint64_t> presented;

  mutable std::mutex view_mutex;  // guards the documents below
  json generation_doc;
  json result_doc;
  std::string abort_reason;
  std::map<std::uint64_t, json> answered;
  std::uint64_t current_generation = 0;
  std::uint64_t total_generations = 0;
  std::size_t k_required = 0;

  void log(json event) {
    event["t"] = now_ms();
    std::ofstream out(dir / "events.ndjson", std::ios::app);
    out << event.dump() << '\n';
    updated_at = now_ms();
  }

  json status_doc() const {
    std::lock_guard lock(view_mutex);
    return status_doc_locked();
  }

  json status_doc_locked() const {
    json doc{{"session_id", id},
             {"status", std::string(to_string(status.load()))},
             {"generation", current_generation},
             {"total_generations", total_generations},
             {"k_required", k_required},
             {"created_at", created_at},
             {"updated_at", updated_at.load()}};
    if (status.load() == SessionStatus::aborted) doc["abort_reason"] = abort_reason;
    return doc;
  }

  /// Persists whatever the engine reached: a pending generation or the end.
  void publish() {
    for (const EngineEvent& e : engine->drain_events()) {
      log({{"type", e.type}, {"generation", e.generation}, {"detail", e.detail}});
    }
    if (engine->finished()) {
      const AttackResult& r = engine->result();
      json doc = result_to_json(r);
      doc["session_id"] = id;
      write_text_file(dir / "result.json", doc.dump(2));
      if (r.adversarial.channels == 1 || r.adversarial.channels == 3) {
        write_png(dir / "adversarial.png", r.adversarial);
      }
      log({{"type", "finished"}, {"success", r.success}, {"generations_used", r.generations_used}});
      std::lock_guard lock(view_mutex);
      result_doc = std::move(doc);
      generation_doc = nullptr;
      current_generation = r.generations_used;
      status = SessionStatus::finished;
      return;
    }
    const SelectionRequest& req = *engine->pending();
    fs::create_directories(dir / "snapshots");
    write_snapshot(dir / "snapshots" / snapshot_name(req.generation), engine->snapshot());
    const auto order = display_order(seed, req.generation, req.candidates.size());
    if (presented.insert(req.generation).second) {
      std::vector<int> labels;
      std::vector<bool> selectable;
      for (std::size_t i = 0; i < req.candidates.size(); ++i) {
        labels.push_back(engine->pending_labels()[i].value);
        selectable.push_back(req.candidates[i].selectable);
      }
      log({{"type", "presented"},
           {"generation", req.generation},
           {"labels", labels},
           {"selectable", selectable},
           {"display_order", order}});
    }
    json doc = render_generation(req, order);
    std::lock_guard lock(view_mutex);
    generation_doc = std::move(doc);
    current_generation = req.generation;
    status = SessionStatus::awaiting_selection;
  }

  json render_generation(const SelectionRequest& req, const std::vector<std::size_t>& order) const {
    const Image& ref = req.reference_image;
    const std::string black = base64_encode(encode_png(black_like(ref)));
    json candidates = json::array();
    for (const CandidateEntry& c : req.candidates) {
      json entry{{"index", c.index},
                 {"selectable", c.selectable},
                 {"png", base64_encode(encode_png(c.image))}};
      if (!c.selectable) entry["black_png"] = black;
      candidates.push_back(std::move(entry));
    }
    return {{"session_id", id},
            {"status", "awaiting_selection"},
            {"generation", req.generation},
            {"total_generations", req.total_generations},
            {"final_generation", req.final_generation},
            {"k_required", req.k_required},
            {"required_choices", required_choice_count(req)},
            {"selectable_count", req.selectable_count()},
            {"shape", {ref.channels, ref.height, ref.width}},
            {"reference_png", base64_encode(encode_png(ref))},
            {"candidates", std::move(candidates)},
            {"display_order", order}};
  }

  void mark_aborted(const std::string& reason) {
    log({{"type", "aborted"}, {"reason", reason}});
    std::lock_guard lock(view_mutex);
    abort_reason = reason;
    generation_doc = nullptr;
    status = SessionStatus::aborted;
  }
};

// ----------------------------------------------------------------------------

SessionManager::SessionManager(SessionConfig config) : config_(std::move(config)) {
  fs::create_directories(config_.root);
  recover();
}

SessionManager::~SessionManager() = default;

std::shared_ptr<Session> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw SessionNotFound(id);
  return it->second;
}

std::vector<std::string> SessionManager::list() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, _] : sessions_) ids.push_back(id);
  return ids;
}

json SessionManager::create(const json& body) {
  if (!body.is_object()) throw ProblemError("session body must be a JSON object");
  const json& problem_doc = body.contains("problem") ? body["problem"] : body;
  AttackProblem problem = problem_from_json(problem_doc, fs::current_path());

  auto s = std::make_shared<Session>();
  s->id = new_session_id();
  s->dir = config_.root / s->id;
  s->seed = body.contains("seed") ? body["seed"].get<std::uint64_t>() : std::random_device{}();
  s->created_at = now_ms();
  s->updated_at = s->created_at;
  s->total_generations = problem.iterations;

  EngineOptions options;
  options.perceptual = true;
  options.seed = s->seed;
  options.session_id = s->id;
  options.bisection = bisection_from_json(body.value("bisection", json(nullptr)));

  const json manifest{{"session_id", s->id},
                      {"created_at", s->created_at},
                      {"seed", s->seed},
                      {"bisection", bisection_to_json(options.bisection)},
                      {"problem", problem_to_json(problem)}};

  // Validation and the first generation happen before anything touches disk.
  s->engine.emplace(std::move(problem), std::move(options));
  s->k_required = s->engine->config().parent_count;

  fs::create_directories(s->dir);
  write_text_file(s->dir / "manifest.json", manifest.dump(2));
  s->log({{"type", "created"}, {"seed", s->seed}});
  {
    std::lock_guard lock(s->engine_mutex);
    s->publish();
  }
  {
    std::lock_guard lock(mutex_);
    sessions_[s->id] = s;
  }
  return s->status_doc();
}

json SessionManager::status(const std::string& id) {
  auto s = find(id);
  return s->status_doc();
}

json SessionManager::generation(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->view_mutex);
  const SessionStatus st = s->status.load();
  if (st != SessionStatus::awaiting_selection) {
    throw SessionConflict("session " + id + " is " + std::string(to_string(st)) +
                          "; no generation awaits a selection");
  }
  return s->generation_doc;
}

json SessionManager::submit(const std::string& id, const json& body) {
  auto s = find(id);
  std::lock_guard engine_lock(s->engine_mutex);

  std::uint64_t generation = 0;
  {
    std::lock_guard lock(s->view_mutex);
    generation = body.contains("generation") ? body["generation"].get<std::uint64_t>()
                                             : s->current_generation;
    auto it = s->answered.find(generation);
    if (it != s->answered.end()) return it->second;
  }
  const SessionStatus st = s->status.load();
  if (st != SessionStatus::awaiting_selection || !s->engine || !s->engine->pending()) {
    throw SessionConflict("session " + id + " is " + std::string(to_string(st)) +
                          "; selections are not accepted");
  }
  const SelectionRequest& pending = *s->engine->pending();
  if (generation != pending.generation) {
    throw SessionConflict("selection for generation " + std::to_string(generation) +
                          " but generation " + std::to_string(pending.generation) + " is pending");
  }
  SelectionResponse response = response_from_json(body);
  validate_response(pending, response, false);

  json event = response_to_json(generation, response);
  event["type"] = "selection";
  s->log(event);
  s->status = SessionStatus::computing;
  try {
    s->engine->submit(response);
    s->publish();
  } catch (const std::exception& e) {
    // Roll back to the saved state for this generation; the UI can retry.
    s->log({{"type", "selection_failed"}, {"generation", generation}, {"error", e.what()}});
    const fs::path snap = s->dir / "snapshots" / snapshot_name(generation);
    ManifestContents m = parse_manifest(read_json_file(s->dir / "manifest.json"));
    s->engine.emplace(AttackEngine::restore(std::move(m.problem), std::move(m.options),
                                            read_snapshot(snap)));
    s->status = SessionStatus::awaiting_selection;
    throw;
  }
  json doc = s->status_doc();
  s->log({{"type", "answered"}, {"generation", generation}, {"response", doc}});
  std::lock_guard lock(s->view_mutex);
  s->answered[generation] = doc;
  return doc;
}

json SessionManager::result(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->view_mutex);
  switch (s->status.load()) {
    case SessionStatus::finished: return s->result_doc;
    case SessionStatus::aborted: throw SessionConflict("session " + id + " was aborted: " + s->abort_reason);
    default: throw SessionConflict("session " + id + " has not finished");
  }
}

json SessionManager::abort(const std::string& id, const std::string& reason) {
  auto s = find(id);
  std::lock_guard engine_lock(s->engine_mutex);
  const SessionStatus st = s->status.load();
  if (st == SessionStatus::finished || st == SessionStatus::aborted) {
    throw SessionConflict("session " + id + " is already " + std::string(to_string(st)));
  }
  s->mark_aborted(reason);
  s->engine.reset();
  return s->status_doc();
}

std::size_t SessionManager::expire_inactive() {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [_, s] : sessions_) all.push_back(s);
  }
  const std::int64_t now = now_ms();
  std::size_t expired = 0;
  for (const auto& s : all) {
    if (s->status.load() != SessionStatus::awaiting_selection) continue;
    if (now - s->updated_at.load() <= config_.inactivity_timeout.count()) continue;
    std::unique_lock engine_lock(s->engine_mutex, std::try_to_lock);
    if (!engine_lock.owns_lock() || s->status.load() != SessionStatus::awaiting_selection) continue;
    s->mark_aborted("inactive for more than " + std::to_string(config_.inactivity_timeout.count()) + " ms");
    s->engine.reset();
    ++expired;
  }
  return expired;
}

void SessionManager::recover() {
  for (const auto& entry : fs::directory_iterator(config_.root)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / "manifest.json")) continue;
    auto s = std::make_shared<Session>();
    s->dir = entry.path();
    const json manifest = read_json_file(s->dir / "manifest.json");
    s->id = manifest.at("session_id").get<std::string>();
    s->seed = manifest.at("seed").get<std::uint64_t>();
    s->created_at = manifest.value("created_at", std::int64_t{0});
    s->total_generations = manifest.at("problem").value("iterations", std::uint64_t{0});

    const std::vector<json> events = read_events(s->dir / "events.ndjson");
    s->updated_at = events.empty() ? s->created_at : events.back().value("t", s->created_at);
    std::optional<std::string> aborted;
    for (const json& e : events) {
      const std::string type = e.value("type", "");
      if (type == "presented") s->presented.insert(e.at("generation").get<std::uint64_t>());
      if (type == "answered") s->answered[e.at("generation").get<std::uint64_t>()] = e.at("response");
      if (type == "aborted") aborted = e.value("reason", "");
    }

    if (aborted) {
      s->abort_reason = *aborted;
      s->status = SessionStatus::aborted;
    } else if (fs::exists(s->dir / "result.json")) {
      s->result_doc = read_json_file(s->dir / "result.json");
      s->current_generation = s->result_doc.value("generations_used", std::uint64_t{0});
      s->status = SessionStatus::finished;
    }
    if (s->status.load() == SessionStatus::computing) {
      ManifestContents m = parse_manifest(manifest);
      std::uint64_t latest = 0;
      if (fs::exists(s->dir / "snapshots")) {
        for (const auto& snap : fs::directory_iterator(s->dir / "snapshots")) {
          unsigned long long g = 0;
          if (std::sscanf(snap.path().filename().c_str(), "gen_%llu.bin", &g) == 1 &&
              snap.path().extension() == ".bin") {
            latest = std::max<std::uint64_t>(latest, g);
          }
        }
      }
      if (latest > 0) {
        s->engine.emplace(AttackEngine::restore(std::move(m.problem), std::move(m.options),
                                                read_snapshot(s->dir / "snapshots" / snapshot_name(latest))));
      } else {
        s->engine.emplace(std::move(m.problem), std::move(m.options));
      }
      for (const LoggedSelection& sel : logged_selections(events)) {
        const SelectionRequest* pending = s->engine->pending();
        if (!pending || sel.generation < pending->generation) continue;
        s->engine->submit(sel.response);
      }
      s->k_required = s->engine->config().parent_count;
      s->log({{"type", "recovered"}});
      s->publish();
    }
    if (s->k_required == 0) {
      s->k_required = manifest.at("problem").at("strategy").value("parent_count", std::size_t{0});
    }
    sessions_[s->id] = s;
    ++recovered_;
  }
}

AttackResult replay_session(const fs::path& session_dir) {
  const json manifest = read_json_file(session_dir / "manifest.json");
  ManifestContents m = parse_manifest(manifest);
  AttackEngine engine(std::move(m.problem), std::move(m.options));
  for (const LoggedSelection& sel : logged_selections(read_events(session_dir / "events.ndjson"))) {
    const SelectionRequest* pending = engine.pending();
    if (!pending) break;
    if (pending->generation != sel.generation) {
      throw EngineError("log selection for generation " + std::to_string(sel.generation) +
                        " does not match pending generation " + std::to_string(pending->generation));
    }
    engine.submit(sel.response);
  }
  if (!engine.finished()) throw EngineError("selection log ends before the session finished");
  return engine.result();
}

// ----------------------------------------------------------------------------
// HTTP

struct SessionServer::Impl {
  httplib::Server server;
};

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const SessionNotFound& e) {
    reply(res, 404, {{"error", e.what()}});
  } catch (const SessionConflict& e) {
    reply(res, 409, {{"error", e.what()}});
  } catch (const TransportError& e) {
    reply(res, 502, {{"error", std::string("classifier unreachable: ") + e.what()}});
  } catch (const json::exception& e) {
    reply(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
  } catch (const std::invalid_argument& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const ClassifierError& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const CmaError& e) {
    reply(res, 400, {{"error", e.what()}});
  } catch (const std::exception& e) {
    reply(res, 500, {{"error", e.what()}});
  }
}

}  // namespace

SessionServer::SessionServer(SessionManager& manager)
    : manager_(manager), impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  srv.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"status", "ok"}});
  });
  srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 201, manager_.create(json::parse(req.body))); });
  });
  srv.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, manager_.status(req.matches[1])); });
  });
  srv.Get(R"(/sessions/([^/]+)/generation)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, manager_.generation(req.matches[1])); });
  });
  srv.Post(R"(/sessions/([^/]+)/selection)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, manager_.submit(req.matches[1], json::parse(req.body))); });
  });
  srv.Get(R"(/sessions/([^/]+)/result)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, manager_.result(req.matches[1])); });
  });
  srv.Get(R"(/sessions/([^/]+)/adversarial\.png)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json r = manager_.result(req.matches[1]);
      if (!r.contains("adversarial_png")) throw SessionConflict("result has no PNG rendering");
      res.set_content(base64_decode(r["adversarial_png"].get<std::string>()), "image/png");
    });
  });
  srv.Post(R"(/sessions/([^/]+)/abort)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::string reason = "closed by participant";
      if (!req.body.empty()) reason = json::parse(req.body).value("reason", reason);
      reply(res, 200, manager_.abort(req.matches[1], reason));
    });
  });
}

SessionServer::~SessionServer() { stop(); }

void SessionServer::start_sweeper() {
  sweeper_ = std::thread([this] {
    std::unique_lock lock(sweep_mutex_);
    while (!stopping_) {
      sweep_cv_.wait_for(lock, manager_.config().sweep_interval);
      if (stopping_) break;
      lock.unlock();
      manager_.expire_inactive();
      lock.lock();
    }
  });
}

int SessionServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind session server to " + host + ":" + std::to_string(port));
  start_sweeper();
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

bool SessionServer::listen(const std::string& host, int port) {
  start_sweeper();
  return impl_->server.listen(host, port);
}

void SessionServer::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
  {
    std::lock_guard lock(sweep_mutex_);
    stopping_ = true;
  }
  sweep_cv_.notify_all();
  if (sweeper_.joinable()) sweeper_.join();
}

}  // namespace advcma
