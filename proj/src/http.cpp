#include "cedlog/http.hpp"

#include <httplib.h>

#include "cedlog/error.hpp"

namespace cedlog::http {

using nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    auto doc = json::parse(req.body);
    if (!doc.is_object()) throw FormatError("request body must be a JSON object");
    return doc;
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed JSON body: ") + e.what());
  }
}

std::size_t query_size(const httplib::Request& req, const char* key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string v = req.get_param_value(key);
  std::size_t used = 0;
  long long n = 0;
  try {
    n = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || n < 1) {
    throw InvalidArgument(std::string(key) + " must be a positive integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(n);
}

// Maps the library's exception types to status codes.
template <class F>
httplib::Server::Handler guarded(F body) {
  return [body](const httplib::Request& req, httplib::Response& res) {
    try {
      body(req, res);
    } catch (const NotFound& e) {
      reply(res, 404, {{"error", e.what()}});
    } catch (const Conflict& e) {
      reply(res, 409, {{"error", e.what()}});
    } catch (const InvalidArgument& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const FormatError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  };
}

}  // namespace

ApiServer::ApiServer(service::Service& service, std::optional<std::filesystem::path> static_dir)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  routes();
  if (static_dir && !server_->set_mount_point("/", static_dir->string())) {
    throw NotFound("static directory " + static_dir->string() + " does not exist");
  }
}

ApiServer::~ApiServer() { stop(); }

void ApiServer::routes() {
  auto& s = *server_;
  auto& svc = service_;

  s.Get("/api/v1/health", guarded([&svc](const httplib::Request&, httplib::Response& res) {
    const auto v = svc.active_version();
    reply(res, 200, {{"status", "ok"}, {"active_version", v ? json(*v) : json()}});
  }));

  s.Post("/api/v1/ingest", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const std::string source = req.has_param("source") ? req.get_param_value("source") : "api";
    reply(res, 201, svc.ingest(req.body, source).to_json());
  }));

  s.Post("/api/v1/infer", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    if (!body.contains("batch_id") || !body["batch_id"].is_string()) {
      throw InvalidArgument("batch_id is required");
    }
    std::optional<std::uint64_t> version;
    if (body.contains("version") && !body["version"].is_null()) {
      version = body["version"].get<std::uint64_t>();
    }
    reply(res, 200, svc.run_inference(body["batch_id"].get<std::string>(), version).to_json());
  }));

  s.Get("/api/v1/alerts", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    service::AlertFilter f;
    if (req.has_param("status") && !req.get_param_value("status").empty()) {
      f.status = service::alert_status_from_string(req.get_param_value("status"));
    }
    if (req.has_param("since") && !req.get_param_value("since").empty()) {
      f.since = req.get_param_value("since");
    }
    f.page = query_size(req, "page", 1);
    f.page_size = query_size(req, "page_size", f.page_size);
    reply(res, 200, svc.list_alerts(f).to_json());
  }));

  s.Get(R"(/api/v1/alerts/([^/]+))",
        guarded([&svc](const httplib::Request& req, httplib::Response& res) {
          reply(res, 200, svc.get_alert(req.matches[1]).to_json());
        }));

  s.Post(R"(/api/v1/alerts/([^/]+)/feedback)",
         guarded([&svc](const httplib::Request& req, httplib::Response& res) {
           const auto body = parse_body(req);
           const auto alert = svc.submit_feedback(req.matches[1], body.value("verdict", ""),
                                                  body.value("analyst", ""));
           reply(res, 200, {{"acknowledged", true}, {"alert", alert.to_json()}});
         }));

  s.Post("/api/v1/retrain", guarded([&svc](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, svc.trigger_retrain().to_json());
  }));

  s.Get("/api/v1/models", guarded([&svc](const httplib::Request&, httplib::Response& res) {
    json versions = json::array();
    for (const auto& m : svc.models()) {
      versions.push_back({{"version", m.version}, {"created_at", m.created_at},
                          {"path", m.path}, {"origin", m.origin}, {"metrics", m.metrics}});
    }
    const auto active = svc.active_version();
    json body = {{"active_version", active ? json(*active) : json()}, {"versions", versions}};
    if (auto b = svc.active_bundle()) {
      const auto w = b->fusion_weights();
      body["fusion_weights"] = {{"s0", w.s0}, {"s1", w.s1}};
    }
    reply(res, 200, body);
  }));

  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) reply(res, res.status, {{"error", "no such endpoint"}});
  });
}

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = server_->bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!server_->bind_to_port(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void ApiServer::serve() { server_->listen_after_bind(); }

void ApiServer::stop() {
  if (server_) server_->stop();
}

bool ApiServer::running() const { return server_->is_running(); }

}  // namespace cedlog::http
