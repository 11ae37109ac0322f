#pragma once

// The service layer: ingestion, inference and retraining runs, alerts and
// analyst feedback, all persisted as JSON Lines journals in a state
// directory. The HTTP binding lives in http.hpp.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cedlog/bundle.hpp"
#include "cedlog/continual.hpp"
#include "cedlog/drain.hpp"
#include "cedlog/orchestrator.hpp"

namespace cedlog::service {

struct SinkConfig {
  std::string kind = "file";  // file | webhook | none
  std::string path;           // file sink; default <state>/alerts_sink.jsonl
  std::string url;            // webhook, http://host:port/path
};

struct ServiceConfig {
  std::filesystem::path state_dir = "cedlog-state";
  drain::HeaderProfile profile = drain::builtin_profile("hdfs");
  drain::TreeConfig tree;
  TrainingOptions training;
  nn::TrainConfig retrain;
  double replay_ratio = 2.0;
  double validation_fraction = 0.1;
  std::size_t workers = 2;
  std::size_t partitions = 1;
  std::size_t max_page_size = 500;
  std::optional<double> retrain_interval_seconds = 86400.0;
  SinkConfig sink;

  // Keys mirror the field names; "profile" is a built-in name or an object.
  static ServiceConfig from_json(const nlohmann::json& doc);
  static ServiceConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct IngestBatch {
  std::string batch_id;
  std::string source;
  std::size_t raw_count = 0;
  std::size_t parsed_count = 0;
  std::size_t quarantine_count = 0;
  std::string storage_path;
  std::string created_at;

  nlohmann::json to_json() const;
  static IngestBatch from_json(const nlohmann::json& doc);
};

enum class AlertStatus { Open, FalsePositive, Confirmed };
std::string to_string(AlertStatus s);
AlertStatus alert_status_from_string(const std::string& s);

struct AlertRecord {
  std::string alert_id;
  std::string batch_id;
  std::int64_t line_id = 0;
  std::string event_id;
  std::string event_template;
  std::vector<std::string> parameters;
  double p1 = 0.0, p2 = 0.0, f = 0.0;
  double s0 = 0.0, s1 = 0.0;
  int y_hat = 1;
  std::uint64_t model_version = 0;
  std::string created_at;
  std::uint64_t seq = 0;
  AlertStatus status = AlertStatus::Open;
  std::string analyst;
  features::FeatureBundle features;

  // `with_features` adds the model input, needed to replay the journal.
  nlohmann::json to_json(bool with_features = false) const;
  static AlertRecord from_json(const nlohmann::json& doc);
};

struct AlertFilter {
  std::optional<AlertStatus> status;
  std::optional<std::string> since;  // ISO-8601, inclusive
  std::size_t page = 1;
  std::size_t page_size = 50;
};

struct AlertPage {
  std::vector<AlertRecord> items;
  std::size_t total = 0;
  std::size_t page = 1;
  std::size_t page_size = 50;

  nlohmann::json to_json() const;
};

struct InferenceResult {
  std::string batch_id;
  std::uint64_t model_version = 0;
  std::string run_id;
  std::size_t events = 0;
  std::size_t quarantined = 0;
  std::vector<AlertRecord> alerts;

  nlohmann::json to_json() const;
};

struct RetrainReport {
  std::string status;  // "activated" or "skipped: no feedback"
  std::uint64_t old_version = 0;
  std::uint64_t new_version = 0;
  std::size_t corrected = 0;
  std::size_t replay = 0;
  std::string run_id;
  nlohmann::json metrics_before;
  nlohmann::json metrics_after;

  nlohmann::json to_json() const;
};

struct ModelVersionInfo {
  std::uint64_t version = 0;
  std::string created_at;
  std::string path;
  std::string origin;  // "train" or "retrain"
  nlohmann::json metrics;
};

// Delivers alert and verdict events to the configured sink.
class AlertSink {
 public:
  virtual ~AlertSink() = default;
  virtual void send(const nlohmann::json& event) = 0;
};

std::unique_ptr<AlertSink> make_sink(const SinkConfig& config,
                                     const std::filesystem::path& state_dir);

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Initial training on labeled lines: parse, hold out a validation slice,
  // fit, and activate the resulting bundle.
  ModelVersionInfo train(std::span<const drain::RawLogLine> lines);

  // Body is JSON Lines. Malformed lines are quarantined with a reason.
  IngestBatch ingest(const std::string& body, const std::string& source = "api");
  InferenceResult run_inference(const std::string& batch_id,
                                std::optional<std::uint64_t> version = std::nullopt);
  AlertPage list_alerts(const AlertFilter& filter) const;
  AlertRecord get_alert(const std::string& alert_id) const;
  AlertRecord submit_feedback(const std::string& alert_id, const std::string& verdict,
                              const std::string& analyst);
  RetrainReport trigger_retrain();

  std::vector<ModelVersionInfo> models() const;
  std::optional<std::uint64_t> active_version() const;
  std::shared_ptr<const ModelBundle> active_bundle() const;
  std::vector<IngestBatch> batches() const;
  const continual::FeedbackStore& feedback() const { return *feedback_; }
  const ServiceConfig& config() const { return config_; }
  orchestrator::StatusJournal& run_journal() { return *runs_; }

  // Replace the sink (tests capture events this way).
  void set_sink(std::unique_ptr<AlertSink> sink);

 private:
  struct LoadedBatch {
    IngestBatch info;
    std::vector<drain::RawLogLine> lines;
  };
  LoadedBatch load_batch(const std::string& batch_id) const;
  std::shared_ptr<const ModelBundle> bundle_for(std::optional<std::uint64_t> version) const;
  void activate(std::shared_ptr<const ModelBundle> bundle, const std::string& origin,
                nlohmann::json metrics);
  void append_line(const std::filesystem::path& file, const nlohmann::json& doc);
  void replay_journals();
  void emit(const nlohmann::json& event);
  nlohmann::json evaluate(const ModelBundle& bundle,
                          std::span<const features::FeatureBundle> data) const;
  std::vector<features::FeatureBundle> read_bundles(const std::filesystem::path& file) const;

  ServiceConfig config_;
  drain::LineParser parser_;
  std::unique_ptr<orchestrator::WorkerPool> pool_;
  std::unique_ptr<orchestrator::StatusJournal> runs_;
  std::unique_ptr<continual::FeedbackStore> feedback_;

  mutable std::mutex mu_;  // guards everything below
  std::shared_ptr<const ModelBundle> active_;
  std::vector<ModelVersionInfo> versions_;
  std::map<std::string, IngestBatch> batches_;
  std::vector<AlertRecord> alerts_;
  std::map<std::string, std::size_t> alert_index_;
  std::uint64_t next_alert_ = 1;
  std::uint64_t next_batch_ = 1;
  std::int64_t next_line_id_ = 1;
  std::int64_t finetune_cursor_ = 0;

  std::mutex sink_mu_;
  std::unique_ptr<AlertSink> sink_;
  // Held for a whole retrain. Inference does not take it: it runs on the
  // bundle snapshot it started with.
  std::mutex retrain_mu_;
};

}  // namespace cedlog::service
