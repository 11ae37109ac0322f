#pragma once

// Analyst feedback journal, fine-tune set assembly and EWC retraining.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cedlog/bundle.hpp"

namespace cedlog::continual {

enum class Verdict { FalsePositive, Confirmed };

std::string to_string(Verdict v);
Verdict verdict_from_string(std::string_view s);
// Label implied by a verdict: a false positive is normal (0).
int corrected_label(Verdict v);

struct FeedbackEntry {
  std::string alert_id;
  Verdict verdict = Verdict::FalsePositive;
  std::string analyst;
  std::int64_t timestamp_ms = 0;  // assigned by the store when 0
  features::FeatureBundle bundle;  // label set to the corrected label

  nlohmann::json to_json() const;
  static FeedbackEntry from_json(const nlohmann::json& doc);
};

// Append-only JSON Lines journal with a latest-verdict index. An empty path
// keeps the store in memory. Timestamps handed out by the store are strictly
// increasing, so `since` cursors never split two entries.
class FeedbackStore {
 public:
  using AlertExists = std::function<bool(const std::string&)>;

  explicit FeedbackStore(std::filesystem::path path = {}, AlertExists exists = {});

  void set_alert_lookup(AlertExists exists);
  // Latest entry per alert.
  std::vector<FeedbackEntry> latest() const;
  std::optional<FeedbackEntry> find(const std::string& alert_id) const;
  std::size_t journal_size() const;
  std::int64_t last_timestamp() const;

 private:
  friend FeedbackEntry record_feedback(FeedbackEntry entry, FeedbackStore& store);
  FeedbackEntry append(FeedbackEntry entry);

  std::filesystem::path path_;
  AlertExists exists_;
  mutable std::mutex mu_;
  std::map<std::string, FeedbackEntry> latest_;
  std::size_t journal_size_ = 0;
  std::int64_t last_ts_ = 0;
};

// Persists the entry (label forced to the corrected label) and returns it with
// its timestamp. Throws NotFound for an unknown alert id.
FeedbackEntry record_feedback(FeedbackEntry entry, FeedbackStore& store);

struct FinetuneSet {
  std::vector<features::FeatureBundle> corrected;
  std::vector<features::FeatureBundle> replay;
  std::int64_t consumed_through = 0;  // newest timestamp taken from the store

  bool empty() const { return corrected.empty(); }
  std::size_t size() const { return corrected.size() + replay.size(); }
  std::vector<features::FeatureBundle> all() const;
};

// False-positive entries newer than `since` (one per alert) plus
// round(replay_ratio * count) items sampled from the original training data.
// An empty store or no new entries yields an empty set with no replay.
FinetuneSet build_finetune_set(const FeedbackStore& store, std::int64_t since,
                               std::span<const features::FeatureBundle> replay_pool,
                               double replay_ratio = 2.0, std::uint64_t seed = 0);

struct RetrainOptions {
  double lambda = 10.0;
  std::size_t fisher_samples = 512;
  std::uint64_t seed = 0;
  bool retrain_mlp = true;
  bool retrain_gcn = true;
};

// Fine-tunes both models with the EWC penalty of the current anchors (lambda
// taken from the options), then re-anchors on the fine-tune set and bumps the
// version. The input bundle is never modified; TrainingDiverged propagates.
ModelBundle retrain_ewc(const ModelBundle& bundle,
                        std::span<const features::FeatureBundle> finetune,
                        const nn::TrainConfig& cfg, const RetrainOptions& options = {});

}  // namespace cedlog::continual
