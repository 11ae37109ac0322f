#pragma once

// HTTP binding of the service under /api/v1. All responses are JSON; errors
// are {"error": message} with 400 / 404 / 409 / 500.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "cedlog/service.hpp"

namespace httplib {
class Server;
}

namespace cedlog::http {

class ApiServer {
 public:
  // `static_dir`, when set, is mounted at / (the review UI build output).
  explicit ApiServer(service::Service& service,
                     std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  // Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks serving requests until stop().
  void serve();
  void stop();
  bool running() const;

 private:
  void routes();

  service::Service& service_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace cedlog::http
