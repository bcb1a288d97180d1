#pragma once

// Attack sessions driven over HTTP by a person choosing candidates.
//
// On disk, one directory per session:
//   manifest.json        problem, seed, bisection settings, creation time
//   events.ndjson        append-only log (presentations, selections, fallbacks, end)
//   snapshots/gen_N.bin  engine state while generation N awaits a selection
//   result.json          final result once finished
//   adversarial.png      final image once finished (1- or 3-channel)

#include "advcma/attack.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

#include <json.hpp>

namespace advcma {

enum class SessionStatus { awaiting_selection, computing, finished, aborted };
std::string_view to_string(SessionStatus status);

class SessionNotFound : public std::runtime_error {
 public:
  explicit SessionNotFound(const std::string& id) : std::runtime_error("unknown session '" + id + "'") {}
};

/// Request does not fit the session's current status (HTTP 409).
class SessionConflict : public std::runtime_error {
 public:
  explicit SessionConflict(const std::string& what) : std::runtime_error(what) {}
};

struct SessionConfig {
  std::filesystem::path root = "sessions";
  std::chrono::milliseconds inactivity_timeout = std::chrono::hours(24);
  std::chrono::milliseconds sweep_interval = std::chrono::minutes(1);
};

class Session;

/// Owns every session under `root`; existing directories are recovered on
/// construction. Operations on different sessions never wait on each other.
class SessionManager {
 public:
  explicit SessionManager(SessionConfig config);
  ~SessionManager();
  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  /// Body: {"problem": {...}, "seed": n, "bisection": {...}|null}. A bare
  /// problem document is accepted too. Returns the status document.
  nlohmann::json create(const nlohmann::json& body);
  nlohmann::json status(const std::string& id);
  nlohmann::json generation(const std::string& id);
  /// Body: {"generation": g, "chosen": [...], "final_pick": i}. Resubmitting an
  /// answered generation returns the first answer unchanged.
  nlohmann::json submit(const std::string& id, const nlohmann::json& body);
  nlohmann::json result(const std::string& id);
  nlohmann::json abort(const std::string& id, const std::string& reason);
  std::vector<std::string> list() const;

  /// Aborts sessions idle longer than the configured timeout. Returns how many.
  std::size_t expire_inactive();

  const SessionConfig& config() const { return config_; }
  std::size_t recovered() const { return recovered_; }

 private:
  std::shared_ptr<Session> find(const std::string& id) const;
  void recover();

  SessionConfig config_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::size_t recovered_ = 0;
};

/// Re-runs a recorded session through a fresh engine using its manifest and
/// the selections in its event log.
AttackResult replay_session(const std::filesystem::path& session_dir);

/// HTTP front end: POST /sessions, GET /sessions/{id}, GET /sessions/{id}/generation,
/// POST /sessions/{id}/selection, GET /sessions/{id}/result,
/// POST /sessions/{id}/abort, GET /healthz.
class SessionServer {
 public:
  explicit SessionServer(SessionManager& manager);
  ~SessionServer();
  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;

  /// Binds (port 0 picks a free one) and serves on background threads.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Serves on the calling thread until stop().
  bool listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  void start_sweeper();

  SessionManager& manager_;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  std::thread sweeper_;
  std::mutex sweep_mutex_;
  std::condition_variable sweep_cv_;
  bool stopping_ = false;
};

}  // namespace advcma
