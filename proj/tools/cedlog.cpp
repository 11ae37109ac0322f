// cedlog command line: offline parsing and evaluation, DAG runs, and the
// service operations (locally against a state directory, or against a
// running server with --server).

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "cedlog/datasets.hpp"
#include "cedlog/drain.hpp"
#include "cedlog/error.hpp"
#include "cedlog/fusion.hpp"
#include "cedlog/http.hpp"
#include "cedlog/orchestrator.hpp"
#include "cedlog/service.hpp"

// httplib pulls in <resolv.h>, whose `_res` macro breaks Eigen headers
// included after it.
#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;
using namespace cedlog;

namespace {

struct ServiceArgs {
  std::string config;
  std::string state;
  std::string server;  // http://host:port; empty means local

  service::ServiceConfig load() const {
    service::ServiceConfig c;
    if (!config.empty()) c = service::ServiceConfig::load(config);
    if (!state.empty()) c.state_dir = state;
    return c;
  }
};

void print(const json& doc) { std::cout << doc.dump(2) << '\n'; }

// Sends one API request and returns the decoded body; non-2xx is an error.
json remote(const std::string& server, const std::string& method, const std::string& path,
            const std::string& body = "", const std::string& type = "application/json") {
  httplib::Client client(server);
  client.set_read_timeout(600, 0);
  httplib::Result res = method == "GET" ? client.Get(path) : client.Post(path, body, type);
  if (!res) throw Error("cannot reach " + server + ": " + httplib::to_string(res.error()));
  json doc = json::parse(res->body, nullptr, false);
  if (res->status >= 300) {
    const std::string msg = doc.is_object() ? doc.value("error", res->body) : res->body;
    throw Error("HTTP " + std::to_string(res->status) + ": " + msg);
  }
  return doc;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::atomic<http::ApiServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cedlog: log anomaly detection with parser, dual models and feedback retraining"};
  app.require_subcommand(1);

  // parse
  auto* parse = app.add_subcommand("parse", "Mine templates from JSON Lines (or raw) logs");
  std::string p_input, p_out, p_csv, p_profile = "hdfs";
  std::size_t p_parts = 1;
  drain::TreeConfig p_tree;
  parse->add_option("--input", p_input, "Input .jsonl (or a raw .log)")->required();
  parse->add_option("--profile", p_profile, "Header profile (hdfs, bgl, plain) or a JSON file");
  parse->add_option("--partitions", p_parts, "Partition count")->check(CLI::PositiveNumber);
  parse->add_option("--out", p_out, "Output JSON Lines of parsed events")->required();
  parse->add_option("--csv", p_csv, "Also write the CSV export here");
  parse->add_option("--depth", p_tree.depth, "Tree depth D");
  parse->add_option("--theta", p_tree.similarity_threshold, "Similarity threshold");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against labels");
  std::string e_pred, e_labels;
  bool e_json = false;
  evaluate->add_option("--pred", e_pred, "Predictions, 0/1 per line or a JSON array")->required();
  evaluate->add_option("--labels", e_labels, "Labels, same format")->required();
  evaluate->add_flag("--json", e_json, "Print the full report as JSON");

  // dag
  auto* dag = app.add_subcommand("dag", "Run DAG files and inspect their journals");
  dag->require_subcommand(1);
  std::string d_journal = "cedlog-runs";
  dag->add_option("--journal", d_journal, "Status journal directory");
  auto* dag_run = dag->add_subcommand("run", "Run a DAG definition once");
  std::string d_file;
  std::size_t d_workers = 2;
  dag_run->add_option("file", d_file, "DAG definition (JSON)")->required();
  dag_run->add_option("--workers", d_workers, "Worker count")->check(CLI::PositiveNumber);
  auto* dag_list = dag->add_subcommand("list-runs", "List recorded runs of a DAG");
  std::string d_id;
  dag_list->add_option("dag_id", d_id, "DAG id")->required();

  // service commands
  ServiceArgs sa;
  auto add_service_opts = [&](CLI::App* cmd, bool remote_ok) {
    cmd->add_option("--config", sa.config, "Service config (JSON)");
    cmd->add_option("--state", sa.state, "State directory (overrides the config)");
    if (remote_ok) cmd->add_option("--server", sa.server, "Use a running server, e.g. http://127.0.0.1:8080");
  };

  auto* train = app.add_subcommand("train", "Train and activate a model bundle from labeled logs");
  std::string t_input, t_block_labels, t_source = "train";
  train->add_option("--input", t_input, "Labeled .jsonl, or a raw .log")->required();
  train->add_option("--block-labels", t_block_labels, "HDFS anomaly_label.csv for raw logs");
  train->add_option("--source", t_source, "Source name for raw logs");
  add_service_opts(train, false);

  auto* serve = app.add_subcommand("serve", "Serve the HTTP API and run scheduled retrains");
  std::string s_host = "127.0.0.1", s_static;
  int s_port = 8080;
  serve->add_option("--host", s_host, "Bind address");
  serve->add_option("--port", s_port, "Port (0 picks a free one)");
  serve->add_option("--static", s_static, "Directory served at / (review UI build)");
  add_service_opts(serve, false);

  auto* ingest = app.add_subcommand("ingest", "Ingest a JSON Lines file as a batch");
  std::string i_input, i_source = "cli";
  ingest->add_option("--input", i_input, "JSON Lines file")->required();
  ingest->add_option("--source", i_source, "Source name");
  add_service_opts(ingest, true);

  auto* infer = app.add_subcommand("infer", "Run inference on an ingested batch");
  std::string n_batch;
  std::optional<std::uint64_t> n_version;
  infer->add_option("--batch", n_batch, "Batch id")->required();
  infer->add_option("--version", n_version, "Model version (default: active)");
  add_service_opts(infer, true);

  auto* alerts = app.add_subcommand("alerts", "List alerts");
  std::string a_status, a_since;
  std::size_t a_page = 1, a_size = 50;
  alerts->add_option("--status", a_status, "open | false_positive | confirmed");
  alerts->add_option("--since", a_since, "ISO-8601 lower bound on created_at");
  alerts->add_option("--page", a_page, "Page number");
  alerts->add_option("--page-size", a_size, "Page size");
  add_service_opts(alerts, true);

  auto* feedback = app.add_subcommand("feedback", "Record an analyst verdict on an alert");
  std::string f_id, f_verdict, f_analyst;
  feedback->add_option("alert_id", f_id, "Alert id")->required();
  feedback->add_option("--verdict", f_verdict, "false_positive | confirmed")->required();
  feedback->add_option("--analyst", f_analyst, "Analyst name")->required();
  add_service_opts(feedback, true);

  auto* retrain = app.add_subcommand("retrain", "Fine-tune on pending feedback and activate");
  add_service_opts(retrain, true);

  auto* models = app.add_subcommand("models", "List model versions");
  add_service_opts(models, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (parse->parsed()) {
      drain::HeaderProfile profile =
          fs::exists(p_profile) ? drain::HeaderProfile::from_json(json::parse(read_file(p_profile)))
                                : drain::builtin_profile(p_profile);
      const auto lines = datasets::read_lines(p_input, "cli");
      drain::LineParser parser(profile);
      const auto result = drain::parse_batch(lines, parser, p_tree, p_parts);
      datasets::write_events_jsonl(p_out, result.events);
      if (!p_csv.empty()) datasets::write_events_csv(p_csv, result.events);
      for (const auto& q : result.quarantine) {
        std::cerr << "quarantined line " << q.line_id << ": " << q.reason << '\n';
      }
      std::cout << result.events.size() << " events, " << result.tree.size() << " templates, "
                << result.quarantine.size() << " quarantined\n";
      return 0;
    }

    if (evaluate->parsed()) {
      const auto pred = datasets::read_labels(e_pred);
      const auto labels = datasets::read_labels(e_labels);
      const auto report = fusion::compute_metrics(pred, labels);
      if (e_json) print(report.to_json());
      else std::cout << report.table_row() << '\n';
      return 0;
    }

    if (dag_run->parsed()) {
      const auto d = orchestrator::load_dag(d_file);
      orchestrator::WorkerPool pool(d_workers);
      orchestrator::StatusJournal journal(d_journal);
      const auto registry = orchestrator::TaskRegistry::with_builtins();
      const auto report = orchestrator::run(d, pool, registry, journal);
      print(report.to_json());
      return report.succeeded() ? 0 : 1;
    }

    if (dag_list->parsed()) {
      for (const auto& r : orchestrator::list_runs(d_journal, d_id)) {
        std::cout << r.run_id << "  " << (r.complete() ? (r.succeeded() ? "succeeded" : "failed")
                                                        : "incomplete");
        for (const auto& [task, rec] : r.latest) {
          std::cout << "  " << task << "=" << orchestrator::to_string(rec.state);
        }
        std::cout << '\n';
      }
      return 0;
    }

    const bool is_remote = !sa.server.empty();
    if (is_remote) {
      if (ingest->parsed()) {
        print(remote(sa.server, "POST", "/api/v1/ingest?source=" + i_source, read_file(i_input),
                     "application/x-ndjson"));
      } else if (infer->parsed()) {
        json body = {{"batch_id", n_batch}};
        if (n_version) body["version"] = *n_version;
        print(remote(sa.server, "POST", "/api/v1/infer", body.dump()));
      } else if (alerts->parsed()) {
        httplib::Params q{{"page", std::to_string(a_page)}, {"page_size", std::to_string(a_size)}};
        if (!a_status.empty()) q.emplace("status", a_status);
        if (!a_since.empty()) q.emplace("since", a_since);
        print(remote(sa.server, "GET", httplib::append_query_params("/api/v1/alerts", q)));
      } else if (feedback->parsed()) {
        print(remote(sa.server, "POST", "/api/v1/alerts/" + f_id + "/feedback",
                     json{{"verdict", f_verdict}, {"analyst", f_analyst}}.dump()));
      } else if (retrain->parsed()) {
        print(remote(sa.server, "POST", "/api/v1/retrain"));
      } else if (models->parsed()) {
        print(remote(sa.server, "GET", "/api/v1/models"));
      }
      return 0;
    }

    service::Service svc(sa.load());

    if (train->parsed()) {
      auto lines = datasets::read_lines(t_input, t_source);
      if (!t_block_labels.empty()) datasets::apply_block_labels(lines, t_block_labels);
      const auto info = svc.train(lines);
      print({{"version", info.version}, {"path", info.path}, {"metrics", info.metrics}});
    } else if (serve->parsed()) {
      http::ApiServer server(svc, s_static.empty() ? std::nullopt
                                                   : std::optional<fs::path>(s_static));
      const int port = server.bind(s_host, s_port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);

      orchestrator::SteadyClock clock;
      orchestrator::ScheduleLoop loop(clock, [&svc](const orchestrator::TaskDag&) {
        try {
          const auto r = svc.trigger_retrain();
          std::cerr << "scheduled retrain: " << r.status << '\n';
        } catch (const std::exception& e) {
          std::cerr << "scheduled retrain failed: " << e.what() << '\n';
        }
      });
      std::jthread scheduler;
      if (const auto interval = svc.config().retrain_interval_seconds) {
        loop.add(orchestrator::define_dag("scheduled-retrain", {{"retrain", "noop", {}}}, {},
                                          *interval));
        scheduler = std::jthread([&loop](std::stop_token st) { loop.run(st); });
      }
      std::cerr << "cedlog listening on http://" << s_host << ":" << port << '\n';
      server.serve();
      g_server = nullptr;
      if (scheduler.joinable()) {
        scheduler.request_stop();
        scheduler.join();
      }
    } else if (ingest->parsed()) {
      print(svc.ingest(read_file(i_input), i_source).to_json());
    } else if (infer->parsed()) {
      print(svc.run_inference(n_batch, n_version).to_json());
    } else if (alerts->parsed()) {
      service::AlertFilter f;
      if (!a_status.empty()) f.status = service::alert_status_from_string(a_status);
      if (!a_since.empty()) f.since = a_since;
      f.page = a_page;
      f.page_size = a_size;
      print(svc.list_alerts(f).to_json());
    } else if (feedback->parsed()) {
      print(svc.submit_feedback(f_id, f_verdict, f_analyst).to_json());
    } else if (retrain->parsed()) {
      print(svc.trigger_retrain().to_json());
    } else if (models->parsed()) {
      json out = json::array();
      for (const auto& m : svc.models()) {
        out.push_back({{"version", m.version}, {"created_at", m.created_at}, {"path", m.path},
                       {"origin", m.origin}, {"metrics", m.metrics},
                       {"active", svc.active_version() == m.version}});
      }
      print(out);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "cedlog: " << e.what() << '\n';
    return 1;
  }
}
