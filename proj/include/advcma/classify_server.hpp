#pragma once

#include "advcma/classifier.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <thread>

namespace advcma {

/// Serves POST /classify for a local classifier. Used to expose a weights file
/// as a remote model and as the reference peer in protocol tests.
class ClassifyServer {
 public:
  explicit ClassifyServer(std::shared_ptr<const Classifier> classifier);
  ~ClassifyServer();
  ClassifyServer(const ClassifyServer&) = delete;
  ClassifyServer& operator=(const ClassifyServer&) = delete;

  /// Binds (port 0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Binds and serves on the calling thread until stop().
  bool listen(const std::string& host, int port);
  void stop();

  std::uint64_t queries_served() const { return ledger_.total(); }

 private:
  struct Impl;
  std::shared_ptr<const Classifier> classifier_;
  QueryLedger ledger_;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

}  // namespace advcma
