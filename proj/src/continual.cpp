#include "cedlog/continual.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cedlog/clock.hpp"
#include "cedlog/error.hpp"

namespace cedlog::continual {

using nlohmann::json;

std::string to_string(Verdict v) {
  return v == Verdict::FalsePositive ? "false_positive" : "confirmed";
}

Verdict verdict_from_string(std::string_view s) {
  if (s == "false_positive") return Verdict::FalsePositive;
  if (s == "confirmed") return Verdict::Confirmed;
  throw InvalidArgument("unknown verdict '" + std::string(s) + "'");
}

int corrected_label(Verdict v) { return v == Verdict::FalsePositive ? 0 : 1; }

json FeedbackEntry::to_json() const {
  return {{"alert_id", alert_id},
          {"verdict", to_string(verdict)},
          {"analyst", analyst},
          {"timestamp_ms", timestamp_ms},
          {"timestamp", iso8601(timestamp_ms)},
          {"bundle", features::to_json(bundle)}};
}

FeedbackEntry FeedbackEntry::from_json(const json& doc) {
  try {
    FeedbackEntry e;
    e.alert_id = doc.at("alert_id").get<std::string>();
    e.verdict = verdict_from_string(doc.at("verdict").get<std::string>());
    e.analyst = doc.value("analyst", "");
    e.timestamp_ms = doc.at("timestamp_ms").get<std::int64_t>();
    e.bundle = features::feature_bundle_from_json(doc.at("bundle"));
    return e;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("malformed feedback entry: ") + ex.what());
  }
}

FeedbackStore::FeedbackStore(std::filesystem::path path, AlertExists exists)
    : path_(std::move(path)), exists_(std::move(exists)) {
  if (path_.empty() || !std::filesystem::exists(path_)) return;
  std::ifstream in(path_);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::parse_error&) {
      // A torn final write is tolerated; anything earlier is corruption.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw FormatError(path_.string() + ":" + std::to_string(lineno) + ": corrupt journal line");
    }
    auto e = FeedbackEntry::from_json(doc);
    last_ts_ = std::max(last_ts_, e.timestamp_ms);
    latest_[e.alert_id] = std::move(e);
    ++journal_size_;
  }
}

void FeedbackStore::set_alert_lookup(AlertExists exists) {
  std::lock_guard lock(mu_);
  exists_ = std::move(exists);
}

std::vector<FeedbackEntry> FeedbackStore::latest() const {
  std::lock_guard lock(mu_);
  std::vector<FeedbackEntry> out;
  for (const auto& [id, e] : latest_) out.push_back(e);
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.timestamp_ms < b.timestamp_ms; });
  return out;
}

std::optional<FeedbackEntry> FeedbackStore::find(const std::string& alert_id) const {
  std::lock_guard lock(mu_);
  auto it = latest_.find(alert_id);
  if (it == latest_.end()) return std::nullopt;
  return it->second;
}

std::size_t FeedbackStore::journal_size() const {
  std::lock_guard lock(mu_);
  return journal_size_;
}

std::int64_t FeedbackStore::last_timestamp() const {
  std::lock_guard lock(mu_);
  return last_ts_;
}

FeedbackEntry FeedbackStore::append(FeedbackEntry entry) {
  std::lock_guard lock(mu_);
  if (exists_ && !exists_(entry.alert_id)) {
    throw NotFound("unknown alert id '" + entry.alert_id + "'");
  }
  entry.timestamp_ms = std::max({entry.timestamp_ms, now_ms(), last_ts_ + 1});
  entry.bundle.label = corrected_label(entry.verdict);
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app);
    out << entry.to_json().dump() << '\n';
    if (!out.flush()) throw Error("cannot append to " + path_.string());
  }
  last_ts_ = entry.timestamp_ms;
  ++journal_size_;
  latest_[entry.alert_id] = entry;
  return entry;
}

FeedbackEntry record_feedback(FeedbackEntry entry, FeedbackStore& store) {
  if (entry.alert_id.empty()) throw InvalidArgument("feedback needs an alert id");
  return store.append(std::move(entry));
}

std::vector<features::FeatureBundle> FinetuneSet::all() const {
  std::vector<features::FeatureBundle> out = corrected;
  out.insert(out.end(), replay.begin(), replay.end());
  return out;
}

FinetuneSet build_finetune_set(const FeedbackStore& store, std::int64_t since,
                               std::span<const features::FeatureBundle> replay_pool,
                               double replay_ratio, std::uint64_t seed) {
  if (!(replay_ratio >= 0.0)) throw InvalidArgument("replay ratio must be >= 0");
  FinetuneSet set;
  set.consumed_through = since;
  for (const auto& e : store.latest()) {
    if (e.timestamp_ms <= since) continue;
    set.consumed_through = std::max(set.consumed_through, e.timestamp_ms);
    if (e.verdict != Verdict::FalsePositive) continue;
    set.corrected.push_back(e.bundle);
  }
  if (set.corrected.empty()) return set;
  const auto want = static_cast<std::size_t>(
      std::llround(replay_ratio * static_cast<double>(set.corrected.size())));
  const std::size_t n = std::min(want, replay_pool.size());
  for (std::size_t i : ewc::detail::sample_indices(replay_pool.size(), n, seed)) {
    set.replay.push_back(replay_pool[i]);
  }
  return set;
}

namespace {

template <class M>
ewc::EwcAnchor retrain_one(M& model, const std::optional<ewc::EwcAnchor>& current,
                           std::span<const features::FeatureBundle> data,
                           const nn::TrainConfig& cfg, const RetrainOptions& o,
                           const std::string& tag) {
  if (!current) throw InvalidArgument("bundle has no EWC anchor; train it first");
  ewc::EwcAnchor anchor = *current;
  anchor.lambda = o.lambda;
  nn::Penalty penalty;
  if (o.lambda > 0.0) penalty = ewc::make_penalty(anchor);
  nn::fit(model, data, cfg, penalty);
  return ewc::make_anchor(model, data, o.lambda, tag, o.fisher_samples, o.seed);
}

}  // namespace

ModelBundle retrain_ewc(const ModelBundle& bundle,
                        std::span<const features::FeatureBundle> finetune,
                        const nn::TrainConfig& cfg, const RetrainOptions& options) {
  if (finetune.empty()) throw InvalidArgument("fine-tune set is empty");
  if (!(options.lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
  ModelBundle next = bundle;
  next.version = bundle.version + 1;
  const std::string tag = "v" + std::to_string(next.version);
  if (options.retrain_mlp && next.mlp.x_dim() > 0) {
    next.mlp_anchor = retrain_one(next.mlp, bundle.mlp_anchor, finetune, cfg, options, tag);
  }
  if (options.retrain_gcn) {
    next.gcn_anchor = retrain_one(next.gcn, bundle.gcn_anchor, finetune, cfg, options, tag);
  }
  next.created_at = now_iso8601();
  return next;
}

}  // namespace cedlog::continual
