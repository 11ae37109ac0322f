#include "cedlog/service.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include <httplib.h>

#include "cedlog/clock.hpp"
#include "cedlog/error.hpp"

namespace cedlog::service {

using nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------------------------------------------- config

ServiceConfig ServiceConfig::from_json(const json& doc) {
  ServiceConfig c;
  try {
    c.state_dir = doc.value("state_dir", c.state_dir.string());
    if (doc.contains("profile")) {
      const auto& p = doc["profile"];
      c.profile = p.is_string() ? drain::builtin_profile(p.get<std::string>())
                                : drain::HeaderProfile::from_json(p);
    }
    if (doc.contains("tree")) {
      const auto& t = doc["tree"];
      c.tree.depth = t.value("depth", c.tree.depth);
      c.tree.similarity_threshold = t.value("similarity_threshold", c.tree.similarity_threshold);
      c.tree.max_children = t.value("max_children", c.tree.max_children);
      c.tree.validate();
    }
    if (doc.contains("training")) c.training = TrainingOptions::from_json(doc["training"]);
    if (doc.contains("retrain")) c.retrain = nn::TrainConfig::from_json(doc["retrain"]);
    c.replay_ratio = doc.value("replay_ratio", c.replay_ratio);
    c.validation_fraction = doc.value("validation_fraction", c.validation_fraction);
    c.workers = doc.value("workers", c.workers);
    c.partitions = doc.value("partitions", c.partitions);
    c.max_page_size = doc.value("max_page_size", c.max_page_size);
    if (doc.contains("retrain_interval_seconds")) {
      const auto& r = doc["retrain_interval_seconds"];
      c.retrain_interval_seconds = r.is_null() ? std::nullopt : std::optional(r.get<double>());
    }
    if (doc.contains("sink")) {
      const auto& s = doc["sink"];
      c.sink.kind = s.value("kind", c.sink.kind);
      c.sink.path = s.value("path", c.sink.path);
      c.sink.url = s.value("url", c.sink.url);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed service config: ") + e.what());
  }
  if (c.workers < 1) throw InvalidArgument("workers must be >= 1");
  if (c.partitions < 1) throw InvalidArgument("partitions must be >= 1");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 1.0)) {
    throw InvalidArgument("validation_fraction must lie in [0, 1)");
  }
  if (!(c.replay_ratio >= 0.0)) throw InvalidArgument("replay_ratio must be >= 0");
  if (c.max_page_size < 1) throw InvalidArgument("max_page_size must be >= 1");
  return c;
}

ServiceConfig ServiceConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open config " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

json ServiceConfig::to_json() const {
  return {{"state_dir", state_dir.string()},
          {"profile", profile.to_json()},
          {"tree",
           {{"depth", tree.depth},
            {"similarity_threshold", tree.similarity_threshold},
            {"max_children", tree.max_children}}},
          {"training", training.to_json()},
          {"retrain", retrain.to_json()},
          {"replay_ratio", replay_ratio},
          {"validation_fraction", validation_fraction},
          {"workers", workers},
          {"partitions", partitions},
          {"max_page_size", max_page_size},
          {"retrain_interval_seconds",
           retrain_interval_seconds ? json(*retrain_interval_seconds) : json()},
          {"sink", {{"kind", sink.kind}, {"path", sink.path}, {"url", sink.url}}}};
}

// ------------------------------------------------------------------ records

json IngestBatch::to_json() const {
  return {{"batch_id", batch_id},         {"source", source},
          {"raw_count", raw_count},       {"parsed_count", parsed_count},
          {"quarantine_count", quarantine_count}, {"storage_path", storage_path},
          {"created_at", created_at}};
}

IngestBatch IngestBatch::from_json(const json& doc) {
  IngestBatch b;
  b.batch_id = doc.at("batch_id").get<std::string>();
  b.source = doc.value("source", "");
  b.raw_count = doc.at("raw_count").get<std::size_t>();
  b.parsed_count = doc.at("parsed_count").get<std::size_t>();
  b.quarantine_count = doc.at("quarantine_count").get<std::size_t>();
  b.storage_path = doc.value("storage_path", "");
  b.created_at = doc.value("created_at", "");
  return b;
}

std::string to_string(AlertStatus s) {
  switch (s) {
    case AlertStatus::Open: return "open";
    case AlertStatus::FalsePositive: return "false_positive";
    case AlertStatus::Confirmed: return "confirmed";
  }
  return "open";
}

AlertStatus alert_status_from_string(const std::string& s) {
  if (s == "open") return AlertStatus::Open;
  if (s == "false_positive") return AlertStatus::FalsePositive;
  if (s == "confirmed") return AlertStatus::Confirmed;
  throw InvalidArgument("unknown alert status '" + s + "'");
}

json AlertRecord::to_json(bool with_features) const {
  json j = {{"alert_id", alert_id},
            {"batch_id", batch_id},
            {"line_id", line_id},
            {"event_id", event_id},
            {"event_template", event_template},
            {"parameter_list", parameters},
            {"p1", p1},
            {"p2", p2},
            {"F", f},
            {"s0", s0},
            {"s1", s1},
            {"y_hat", y_hat},
            {"model_version", model_version},
            {"created_at", created_at},
            {"seq", seq},
            {"status", to_string(status)},
            {"analyst", analyst}};
  if (with_features) j["features"] = features::to_json(features);
  return j;
}

AlertRecord AlertRecord::from_json(const json& doc) {
  AlertRecord a;
  a.alert_id = doc.at("alert_id").get<std::string>();
  a.batch_id = doc.at("batch_id").get<std::string>();
  a.line_id = doc.at("line_id").get<std::int64_t>();
  a.event_id = doc.at("event_id").get<std::string>();
  a.event_template = doc.at("event_template").get<std::string>();
  a.parameters = doc.at("parameter_list").get<std::vector<std::string>>();
  a.p1 = doc.at("p1").get<double>();
  a.p2 = doc.at("p2").get<double>();
  a.f = doc.at("F").get<double>();
  a.s0 = doc.at("s0").get<double>();
  a.s1 = doc.at("s1").get<double>();
  a.y_hat = doc.at("y_hat").get<int>();
  a.model_version = doc.at("model_version").get<std::uint64_t>();
  a.created_at = doc.at("created_at").get<std::string>();
  a.seq = doc.at("seq").get<std::uint64_t>();
  a.status = alert_status_from_string(doc.at("status").get<std::string>());
  a.analyst = doc.value("analyst", "");
  if (doc.contains("features")) a.features = features::feature_bundle_from_json(doc["features"]);
  return a;
}

json AlertPage::to_json() const {
  json items_doc = json::array();
  for (const auto& a : items) items_doc.push_back(a.to_json());
  return {{"items", items_doc}, {"total", total}, {"page", page}, {"page_size", page_size}};
}

json InferenceResult::to_json() const {
  json items = json::array();
  for (const auto& a : alerts) items.push_back(a.to_json());
  return {{"batch_id", batch_id},   {"model_version", model_version}, {"run_id", run_id},
          {"events", events},       {"quarantined", quarantined},     {"alert_count", alerts.size()},
          {"alerts", items}};
}

json RetrainReport::to_json() const {
  return {{"status", status},          {"old_version", old_version},
          {"new_version", new_version}, {"corrected", corrected},
          {"replay", replay},          {"run_id", run_id},
          {"metrics_before", metrics_before}, {"metrics_after", metrics_after}};
}

// -------------------------------------------------------------------- sinks

namespace {

class FileSink : public AlertSink {
 public:
  explicit FileSink(fs::path path) : path_(std::move(path)) {}
  void send(const json& event) override {
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app);
    out << event.dump() << '\n';
  }

 private:
  fs::path path_;
  std::mutex mu_;
};

class WebhookSink : public AlertSink {
 public:
  explicit WebhookSink(const std::string& url) {
    const auto scheme = url.find("://");
    if (url.rfind("http://", 0) != 0) throw InvalidArgument("webhook url must start with http://");
    const auto slash = url.find('/', scheme + 3);
    origin_ = url.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : url.substr(slash);
  }
  void send(const json& event) override {
    httplib::Client client(origin_);
    client.set_connection_timeout(2);
    auto res = client.Post(path_, event.dump(), "application/json");
    if (!res || res->status >= 300) {
      std::cerr << "cedlog: webhook delivery to " << origin_ << path_ << " failed\n";
    }
  }

 private:
  std::string origin_;
  std::string path_;
};

class NullSink : public AlertSink {
 public:
  void send(const json&) override {}
};

}  // namespace

std::unique_ptr<AlertSink> make_sink(const SinkConfig& config, const fs::path& state_dir) {
  if (config.kind == "file") {
    return std::make_unique<FileSink>(config.path.empty() ? state_dir / "alerts_sink.jsonl"
                                                          : fs::path(config.path));
  }
  if (config.kind == "webhook") return std::make_unique<WebhookSink>(config.url);
  if (config.kind == "none") return std::make_unique<NullSink>();
  throw InvalidArgument("unknown sink kind '" + config.kind + "'");
}

// ------------------------------------------------------------------ service

namespace {

std::vector<json> read_jsonl(const fs::path& file) {
  std::vector<json> out;
  std::ifstream in(file);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error&) {
      if (in.peek() == std::char_traits<char>::eof()) break;  // torn tail write
      throw FormatError(file.string() + ":" + std::to_string(lineno) + ": corrupt journal line");
    }
  }
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out.flush()) throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string lines_of(const std::vector<json>& docs) {
  std::string s;
  for (const auto& d : docs) s += d.dump() + '\n';
  return s;
}

}  // namespace

Service::Service(ServiceConfig config)
    : config_(std::move(config)), parser_(config_.profile) {
  fs::create_directories(config_.state_dir / "batches");
  fs::create_directories(config_.state_dir / "models");
  pool_ = std::make_unique<orchestrator::WorkerPool>(config_.workers);
  runs_ = std::make_unique<orchestrator::StatusJournal>(config_.state_dir / "runs");
  sink_ = make_sink(config_.sink, config_.state_dir);
  // record_feedback is only reached from submit_feedback, which holds mu_.
  feedback_ = std::make_unique<continual::FeedbackStore>(
      config_.state_dir / "feedback.jsonl",
      [this](const std::string& id) { return alert_index_.contains(id); });
  replay_journals();
}

Service::~Service() = default;

void Service::set_sink(std::unique_ptr<AlertSink> sink) {
  std::lock_guard lock(sink_mu_);
  sink_ = std::move(sink);
}

void Service::emit(const json& event) {
  std::lock_guard lock(sink_mu_);
  if (sink_) sink_->send(event);
}

void Service::append_line(const fs::path& file, const json& doc) {
  std::ofstream out(file, std::ios::app);
  out << doc.dump() << '\n';
  if (!out.flush()) throw Error("cannot append to " + file.string());
}

void Service::replay_journals() {
  const auto dir = config_.state_dir;
  for (const auto& doc : read_jsonl(dir / "models.jsonl")) {
    ModelVersionInfo v{doc.at("version").get<std::uint64_t>(), doc.value("created_at", ""),
                       doc.at("path").get<std::string>(), doc.value("origin", ""),
                       doc.value("metrics", json())};
    versions_.push_back(v);
    if (doc.contains("consumed_through")) {
      finetune_cursor_ = doc["consumed_through"].get<std::int64_t>();
    }
  }
  if (!versions_.empty()) {
    active_ = std::make_shared<const ModelBundle>(load_bundle(versions_.back().path));
  }
  for (const auto& doc : read_jsonl(dir / "batches.jsonl")) {
    auto b = IngestBatch::from_json(doc);
    next_line_id_ = std::max(next_line_id_, doc.value("last_line_id", std::int64_t{0}) + 1);
    batches_[b.batch_id] = b;
    ++next_batch_;
  }
  for (const auto& doc : read_jsonl(dir / "alerts.jsonl")) {
    if (doc.value("type", "") == "verdict") {
      auto it = alert_index_.find(doc.at("alert_id").get<std::string>());
      if (it == alert_index_.end()) continue;
      alerts_[it->second].status = alert_status_from_string(doc.at("status").get<std::string>());
      alerts_[it->second].analyst = doc.value("analyst", "");
      continue;
    }
    auto a = AlertRecord::from_json(doc);
    next_alert_ = std::max(next_alert_, a.seq + 1);
    alert_index_[a.alert_id] = alerts_.size();
    alerts_.push_back(std::move(a));
  }
}

std::vector<features::FeatureBundle> Service::read_bundles(const fs::path& file) const {
  std::vector<features::FeatureBundle> out;
  for (const auto& doc : read_jsonl(file)) out.push_back(features::feature_bundle_from_json(doc));
  return out;
}

json Service::evaluate(const ModelBundle& bundle,
                       std::span<const features::FeatureBundle> data) const {
  if (data.empty()) return json();
  const auto fused = bundle.predict(data);
  std::vector<int> pred, truth;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!data[i].label) continue;
    pred.push_back(fused[i].y_hat);
    truth.push_back(*data[i].label);
  }
  if (truth.empty()) return json();
  return fusion::compute_metrics(pred, truth).to_json();
}

void Service::activate(std::shared_ptr<const ModelBundle> bundle, const std::string& origin,
                       json metrics) {
  const fs::path path = config_.state_dir / "models" / ("v" + std::to_string(bundle->version) + ".json");
  save_bundle(*bundle, path);
  ModelVersionInfo info{bundle->version, bundle->created_at, path.string(), origin, metrics};
  json doc = {{"version", info.version}, {"created_at", info.created_at}, {"path", info.path},
              {"origin", origin},        {"metrics", metrics}};
  std::lock_guard lock(mu_);
  if (origin == "retrain") doc["consumed_through"] = finetune_cursor_;
  append_line(config_.state_dir / "models.jsonl", doc);
  versions_.push_back(info);
  active_ = std::move(bundle);
}

ModelVersionInfo Service::train(std::span<const drain::RawLogLine> lines) {
  if (lines.empty()) throw InvalidArgument("no training lines");
  auto parsed = drain::parse_batch(lines, parser_, config_.tree, config_.partitions);
  if (parsed.events.empty()) throw InvalidArgument("no training line could be parsed");
  for (const auto& e : parsed.events) {
    if (!e.label) throw InvalidArgument("training line " + std::to_string(e.line_id) + " has no label");
  }
  // Deterministic hold-out slice for retrain validation reports.
  std::vector<std::size_t> order(parsed.events.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config_.training.model_seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = static_cast<std::size_t>(config_.validation_fraction *
                                              static_cast<double>(order.size()));
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::vector<drain::ParsedEvent> train_events, val_events;
  for (auto i : train_idx) train_events.push_back(parsed.events[i]);
  for (auto i : val_idx) val_events.push_back(parsed.events[i]);

  auto bundle = std::make_shared<ModelBundle>(
      train_bundle(train_events, parsed.tree, config_.profile, config_.training));
  {
    std::lock_guard lock(mu_);
    bundle->version = versions_.empty() ? 1 : versions_.back().version + 1;
  }
  const auto train_data = bundle->space.build_all(train_events, config_.partitions);
  const auto val_data = bundle->space.build_all(val_events, config_.partitions);
  std::vector<json> docs;
  for (const auto& b : train_data) docs.push_back(features::to_json(b));
  write_file_atomic(config_.state_dir / "replay.jsonl", lines_of(docs));
  docs.clear();
  for (const auto& b : val_data) docs.push_back(features::to_json(b));
  write_file_atomic(config_.state_dir / "validation.jsonl", lines_of(docs));

  json metrics = {{"validation", evaluate(*bundle, val_data)},
                  {"train_events", train_events.size()},
                  {"templates", bundle->templates.size()}};
  activate(bundle, "train", metrics);
  std::lock_guard lock(mu_);
  return versions_.back();
}

IngestBatch Service::ingest(const std::string& body, const std::string& source) {
  if (body.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw InvalidArgument("empty ingest body");
  }
  std::vector<json> good, quarantine;
  std::vector<std::string> raw_lines;
  {
    std::istringstream in(body);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      raw_lines.push_back(std::move(line));
    }
  }

  std::lock_guard lock(mu_);
  const std::string batch_id = "B" + std::to_string(next_batch_);
  std::int64_t next_id = next_line_id_;
  std::int64_t last_id = next_line_id_ - 1;
  for (std::size_t i = 0; i < raw_lines.size(); ++i) {
    json bad = {{"index", i}, {"text", raw_lines[i]}};
    drain::RawLogLine l;
    try {
      json doc = json::parse(raw_lines[i]);
      if (!doc.is_object()) throw FormatError("line is not a JSON object");
      if (!doc.contains("source")) doc["source"] = source;
      l = drain::raw_line_from_json(doc);
    } catch (const std::exception& e) {
      bad["reason"] = std::string("malformed JSON line: ") + e.what();
      quarantine.push_back(bad);
      continue;
    }
    try {
      parser_.preprocessor().apply(parser_.split_header(l.text).message);
    } catch (const std::exception& e) {
      bad["reason"] = e.what();
      quarantine.push_back(bad);
      continue;
    }
    if (l.line_id == 0) l.line_id = next_id++;
    next_id = std::max(next_id, l.line_id + 1);
    last_id = std::max(last_id, l.line_id);
    if (l.received_at.empty()) l.received_at = now_iso8601();
    good.push_back(drain::to_json(l));
  }

  const fs::path file = config_.state_dir / "batches" / (batch_id + ".jsonl");
  const fs::path qfile = config_.state_dir / "batches" / (batch_id + ".quarantine.jsonl");
  // Data files first, journal entry last: a crash in between leaves orphans
  // that are never referenced.
  write_file_atomic(file, lines_of(good));
  write_file_atomic(qfile, lines_of(quarantine));
  IngestBatch b{batch_id, source, raw_lines.size(), good.size(), quarantine.size(),
                file.string(), now_iso8601()};
  json doc = b.to_json();
  doc["last_line_id"] = last_id;
  append_line(config_.state_dir / "batches.jsonl", doc);
  batches_[batch_id] = b;
  ++next_batch_;
  next_line_id_ = std::max(next_line_id_, last_id + 1);
  return b;
}

Service::LoadedBatch Service::load_batch(const std::string& batch_id) const {
  LoadedBatch out;
  {
    std::lock_guard lock(mu_);
    auto it = batches_.find(batch_id);
    if (it == batches_.end()) throw NotFound("unknown batch '" + batch_id + "'");
    out.info = it->second;
  }
  for (const auto& doc : read_jsonl(out.info.storage_path)) {
    out.lines.push_back(drain::raw_line_from_json(doc));
  }
  return out;
}

std::shared_ptr<const ModelBundle> Service::bundle_for(std::optional<std::uint64_t> version) const {
  std::string path;
  {
    std::lock_guard lock(mu_);
    if (!active_) throw NotFound("no trained model bundle; run train first");
    if (!version || *version == active_->version) return active_;
    for (const auto& v : versions_) {
      if (v.version == *version) path = v.path;
    }
  }
  if (path.empty()) throw NotFound("unknown model version " + std::to_string(*version));
  return std::make_shared<const ModelBundle>(load_bundle(path));
}

InferenceResult Service::run_inference(const std::string& batch_id,
                                       std::optional<std::uint64_t> version) {
  std::size_t ingest_quarantine = 0;
  {
    std::lock_guard lock(mu_);
    auto it = batches_.find(batch_id);
    if (it == batches_.end()) throw NotFound("unknown batch '" + batch_id + "'");
    ingest_quarantine = it->second.quarantine_count;
  }
  auto bundle = bundle_for(version);
  using orchestrator::TaskContext;
  using Fused = std::vector<fusion::FusedPrediction>;
  orchestrator::TaskRegistry registry;
  const std::size_t parts = config_.partitions;

  registry.add("load", [&](TaskContext& ctx) {
    ctx.board.put("lines", std::make_shared<LoadedBatch>(load_batch(batch_id)));
  });
  registry.add("parse", [&](TaskContext& ctx) {
    auto batch = ctx.board.get<std::shared_ptr<LoadedBatch>>("lines");
    drain::LineParser parser(bundle->profile);
    ctx.board.put("parsed", std::make_shared<drain::BatchResult>(drain::parse_batch(
                                batch->lines, parser, bundle->templates.config(), parts,
                                &bundle->templates)));
  });
  registry.add("features", [&](TaskContext& ctx) {
    auto parsed = ctx.board.get<std::shared_ptr<drain::BatchResult>>("parsed");
    ctx.board.put("features", std::make_shared<std::vector<features::FeatureBundle>>(
                                  bundle->space.build_all(parsed->events, parts)));
  });
  registry.add("mlp", [&](TaskContext& ctx) {
    auto data = ctx.board.get<std::shared_ptr<std::vector<features::FeatureBundle>>>("features");
    ctx.board.put("p_mlp", bundle->mlp.predict(*data));
  });
  registry.add("gcn", [&](TaskContext& ctx) {
    auto data = ctx.board.get<std::shared_ptr<std::vector<features::FeatureBundle>>>("features");
    ctx.board.put("p_gcn", bundle->gcn.predict(*data));
  });
  registry.add("fuse", [&](TaskContext& ctx) {
    const auto pm = ctx.board.get<std::vector<double>>("p_mlp");
    const auto pg = ctx.board.get<std::vector<double>>("p_gcn");
    const auto w = bundle->fusion_weights();
    Fused out;
    for (std::size_t i = 0; i < pm.size(); ++i) out.push_back(fusion::fuse_anomaly_probs(pm[i], pg[i], w));
    ctx.board.put("fused", out);
  });

  auto dag = orchestrator::define_dag(
      "inference",
      {{"load", "load", {}}, {"parse", "parse", {}}, {"features", "features", {}},
       {"mlp", "mlp", {}}, {"gcn", "gcn", {}}, {"fuse", "fuse", {}}},
      {{"load", "parse"}, {"parse", "features"}, {"features", "mlp"}, {"features", "gcn"},
       {"mlp", "fuse"}, {"gcn", "fuse"}});
  orchestrator::Blackboard board;
  auto report = orchestrator::run(dag, *pool_, registry, *runs_, board);
  if (!report.succeeded()) {
    const auto failed = report.failed();
    std::string why;
    for (const auto& h : report.history) {
      if (!failed.empty() && h.task == failed.front() && !h.error.empty()) why = h.error;
    }
    throw Error("inference DAG failed at task '" + (failed.empty() ? "?" : failed.front()) +
                "': " + why);
  }

  const auto parsed = board.get<std::shared_ptr<drain::BatchResult>>("parsed");
  const auto data = board.get<std::shared_ptr<std::vector<features::FeatureBundle>>>("features");
  const auto fused = board.get<Fused>("fused");
  const auto w = bundle->fusion_weights();

  InferenceResult result;
  result.batch_id = batch_id;
  result.model_version = bundle->version;
  result.run_id = report.run_id;
  result.events = parsed->events.size();
  // Lines rejected at ingest plus lines the parser rejected.
  result.quarantined = ingest_quarantine + parsed->quarantine.size();
  {
    std::lock_guard lock(mu_);
    const std::string now = now_iso8601();
    for (std::size_t i = 0; i < fused.size(); ++i) {
      if (fused[i].y_hat != 1) continue;
      const auto& ev = parsed->events[i];
      AlertRecord a;
      a.seq = next_alert_++;
      a.alert_id = "A" + std::to_string(a.seq);
      a.batch_id = batch_id;
      a.line_id = ev.line_id;
      a.event_id = ev.event_id;
      a.event_template = ev.event_template;
      a.parameters = ev.parameters;
      a.p1 = fused[i].p1;
      a.p2 = fused[i].p2;
      a.f = fused[i].f;
      a.s0 = w.s0;
      a.s1 = w.s1;
      a.y_hat = fused[i].y_hat;
      a.model_version = bundle->version;
      a.created_at = now;
      a.features = (*data)[i];
      json doc = a.to_json(true);
      doc["type"] = "alert";
      append_line(config_.state_dir / "alerts.jsonl", doc);
      alert_index_[a.alert_id] = alerts_.size();
      alerts_.push_back(a);
      result.alerts.push_back(std::move(a));
    }
  }
  for (const auto& a : result.alerts) {
    json ev = a.to_json();
    ev["type"] = "alert";
    emit(ev);
  }
  return result;
}

AlertPage Service::list_alerts(const AlertFilter& filter) const {
  if (filter.page < 1) throw InvalidArgument("page must be >= 1");
  if (filter.page_size < 1 || filter.page_size > config_.max_page_size) {
    throw InvalidArgument("page_size must lie in [1, " + std::to_string(config_.max_page_size) + "]");
  }
  std::optional<std::int64_t> since;
  if (filter.since) since = parse_iso8601(*filter.since);

  std::lock_guard lock(mu_);
  std::vector<const AlertRecord*> hits;
  for (const auto& a : alerts_) {
    if (filter.status && a.status != *filter.status) continue;
    if (since && parse_iso8601(a.created_at) < *since) continue;
    hits.push_back(&a);
  }
  std::sort(hits.begin(), hits.end(), [](const AlertRecord* x, const AlertRecord* y) {
    if (x->created_at != y->created_at) return x->created_at > y->created_at;
    return x->seq > y->seq;
  });
  AlertPage page;
  page.total = hits.size();
  page.page = filter.page;
  page.page_size = filter.page_size;
  const std::size_t begin = (filter.page - 1) * filter.page_size;
  for (std::size_t i = begin; i < hits.size() && i < begin + filter.page_size; ++i) {
    page.items.push_back(*hits[i]);
  }
  return page;
}

AlertRecord Service::get_alert(const std::string& alert_id) const {
  std::lock_guard lock(mu_);
  auto it = alert_index_.find(alert_id);
  if (it == alert_index_.end()) throw NotFound("unknown alert '" + alert_id + "'");
  return alerts_[it->second];
}

AlertRecord Service::submit_feedback(const std::string& alert_id, const std::string& verdict,
                                     const std::string& analyst) {
  const auto v = continual::verdict_from_string(verdict);
  if (analyst.empty()) throw InvalidArgument("analyst is required");
  AlertRecord updated;
  {
    std::lock_guard lock(mu_);
    auto it = alert_index_.find(alert_id);
    if (it == alert_index_.end()) throw NotFound("unknown alert '" + alert_id + "'");
    AlertRecord& a = alerts_[it->second];
    if (a.status != AlertStatus::Open) {
      throw Conflict("alert '" + alert_id + "' is already " + to_string(a.status));
    }
    if (v == continual::Verdict::FalsePositive) {
      continual::record_feedback({alert_id, v, analyst, 0, a.features}, *feedback_);
    }
    a.status = v == continual::Verdict::FalsePositive ? AlertStatus::FalsePositive
                                                      : AlertStatus::Confirmed;
    a.analyst = analyst;
    append_line(config_.state_dir / "alerts.jsonl", {{"type", "verdict"},
                                                     {"alert_id", alert_id},
                                                     {"status", to_string(a.status)},
                                                     {"analyst", analyst},
                                                     {"at", now_iso8601()}});
    updated = a;
  }
  emit({{"type", "verdict"}, {"alert_id", alert_id}, {"status", to_string(updated.status)},
        {"analyst", analyst}});
  return updated;
}

RetrainReport Service::trigger_retrain() {
  std::unique_lock guard(retrain_mu_, std::try_to_lock);
  if (!guard.owns_lock()) throw Conflict("a retrain is already in progress");
  auto current = bundle_for(std::nullopt);
  std::int64_t cursor;
  {
    std::lock_guard lock(mu_);
    cursor = finetune_cursor_;
  }

  using orchestrator::TaskContext;
  using BundlePtr = std::shared_ptr<const ModelBundle>;
  orchestrator::TaskRegistry registry;
  continual::RetrainOptions base_opts;
  base_opts.lambda = config_.training.lambda;
  base_opts.fisher_samples = config_.training.fisher_samples;
  base_opts.seed = config_.training.model_seed + current->version;

  registry.add("finetune", [&](TaskContext& ctx) {
    const auto pool = read_bundles(config_.state_dir / "replay.jsonl");
    ctx.board.put("set", std::make_shared<continual::FinetuneSet>(continual::build_finetune_set(
                             *feedback_, cursor, pool, config_.replay_ratio, base_opts.seed)));
  });
  auto retrain_part = [&](bool mlp) {
    return [&, mlp](TaskContext& ctx) {
      auto set = ctx.board.get<std::shared_ptr<continual::FinetuneSet>>("set");
      if (set->empty()) return;
      auto opts = base_opts;
      opts.retrain_mlp = mlp;
      opts.retrain_gcn = !mlp;
      const auto data = set->all();
      ctx.board.put(mlp ? "mlp" : "gcn", BundlePtr(std::make_shared<const ModelBundle>(
                                             continual::retrain_ewc(*current, data, config_.retrain, opts))));
    };
  };
  registry.add("retrain_mlp", retrain_part(true));
  registry.add("retrain_gcn", retrain_part(false));
  registry.add("validate", [&](TaskContext& ctx) {
    auto set = ctx.board.get<std::shared_ptr<continual::FinetuneSet>>("set");
    if (set->empty()) return;
    auto next = std::make_shared<ModelBundle>(*ctx.board.get<BundlePtr>("mlp"));
    const auto gcn = ctx.board.get<BundlePtr>("gcn");
    next->gcn = gcn->gcn;
    next->gcn_anchor = gcn->gcn_anchor;
    const auto val = read_bundles(config_.state_dir / "validation.jsonl");
    json before = {{"validation", evaluate(*current, val)}, {"corrected", evaluate(*current, set->corrected)}};
    json after = {{"validation", evaluate(*next, val)}, {"corrected", evaluate(*next, set->corrected)}};
    ctx.board.put("before", before);
    ctx.board.put("after", after);
    ctx.board.put("next", BundlePtr(next));
  });
  registry.add("activate", [&](TaskContext& ctx) {
    auto set = ctx.board.get<std::shared_ptr<continual::FinetuneSet>>("set");
    if (set->empty()) return;
    {
      std::lock_guard lock(mu_);
      finetune_cursor_ = set->consumed_through;
    }
    activate(ctx.board.get<BundlePtr>("next"), "retrain", ctx.board.get<json>("after"));
  });

  auto dag = orchestrator::define_dag(
      "retrain",
      {{"finetune", "finetune", {}}, {"retrain_mlp", "retrain_mlp", {}},
       {"retrain_gcn", "retrain_gcn", {}}, {"validate", "validate", {}},
       {"activate", "activate", {}}},
      {{"finetune", "retrain_mlp"}, {"finetune", "retrain_gcn"}, {"retrain_mlp", "validate"},
       {"retrain_gcn", "validate"}, {"validate", "activate"}});
  orchestrator::Blackboard board;
  // Training is deterministic, so a second attempt cannot help.
  orchestrator::RunOptions once;
  once.max_attempts = 1;
  auto report = orchestrator::run(dag, *pool_, registry, *runs_, board, once);
  if (!report.succeeded()) {
    std::lock_guard lock(mu_);
    finetune_cursor_ = cursor;
    std::string why;
    for (const auto& h : report.history) {
      if (h.state == orchestrator::TaskState::Failed) why = h.task + ": " + h.error;
    }
    throw Error("retrain failed, version " + std::to_string(current->version) +
                " stays active (" + why + ")");
  }

  RetrainReport out;
  out.run_id = report.run_id;
  out.old_version = current->version;
  const auto set = board.get<std::shared_ptr<continual::FinetuneSet>>("set");
  out.corrected = set->corrected.size();
  out.replay = set->replay.size();
  if (set->empty()) {
    out.status = "skipped: no feedback";
    out.new_version = current->version;
    return out;
  }
  out.status = "activated";
  out.new_version = board.get<BundlePtr>("next")->version;
  out.metrics_before = board.get<json>("before");
  out.metrics_after = board.get<json>("after");
  return out;
}

std::vector<ModelVersionInfo> Service::models() const {
  std::lock_guard lock(mu_);
  return versions_;
}

std::optional<std::uint64_t> Service::active_version() const {
  std::lock_guard lock(mu_);
  if (!active_) return std::nullopt;
  return active_->version;
}

std::shared_ptr<const ModelBundle> Service::active_bundle() const {
  std::lock_guard lock(mu_);
  return active_;
}

std::vector<IngestBatch> Service::batches() const {
  std::lock_guard lock(mu_);
  std::vector<IngestBatch> out;
  for (const auto& [id, b] : batches_) out.push_back(b);
  return out;
}

}  // namespace cedlog::service
