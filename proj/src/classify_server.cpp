#include "advcma/classify_server.hpp"

#include <httplib.h>

namespace advcma {

using nlohmann::json;

struct ClassifyServer::Impl {
  httplib::Server server;
};

ClassifyServer::ClassifyServer(std::shared_ptr<const Classifier> classifier)
    : classifier_(std::move(classifier)), impl_(std::make_unique<Impl>()) {
  impl_->server.Post("/classify", [this](const httplib::Request& req, httplib::Response& res) {
    std::vector<Vector> inputs;
    try {
      const json doc = json::parse(req.body);
      for (const auto& row : doc.at("instances")) {
        const auto values = row.get<std::vector<double>>();
        inputs.emplace_back(Eigen::Map<const Vector>(values.data(),
                                                     static_cast<Eigen::Index>(values.size())));
      }
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", std::string("bad request: ") + e.what()}}.dump(),
                      "application/json");
      return;
    }
    try {
      const auto labels = classifier_->classify_batch(inputs, ledger_);
      json out = json::array();
      for (Label l : labels) out.push_back(l.value);
      res.set_content(json{{"labels", out}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 422;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });
  impl_->server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });
}

ClassifyServer::~ClassifyServer() { stop(); }

int ClassifyServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    throw ClassifierError("cannot bind classify server to " + host + ":" + std::to_string(port));
  }
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

bool ClassifyServer::listen(const std::string& host, int port) {
  return impl_->server.listen(host, port);
}

void ClassifyServer::stop() {
  if (impl_) impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace advcma
