#pragma once

// Feature engineering: column importance, column selection, the ordinal
// encoder for the MLP input, and the per-event star graph for the GCN.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cedlog/drain.hpp"
#include "cedlog/forest.hpp"

namespace cedlog::features {

inline constexpr std::string_view kParameterList = "ParameterList";
inline constexpr int kFeatureSchemaVersion = 1;

// Columns considered for learning, in canonical order. Datetime, RecordId and
// LineId are identifiers and never enter the model.
const std::vector<std::string>& learning_columns();

// Value of a learning column for an event; missing header fields read as "".
// ParameterList is the parameters joined by a single space.
std::string column_value(const drain::ParsedEvent& event, std::string_view column);

using ImportanceMap = std::map<std::string, double>;

// Impurity-based importance of `columns` for predicting the event labels.
// Every event must carry a label.
ImportanceMap train_importance(std::span<const drain::ParsedEvent> events,
                               const ForestConfig& config,
                               const std::vector<std::string>& columns = learning_columns());

// Columns whose importance is strictly greater than tau.
std::vector<std::string> select_columns(const ImportanceMap& importance, double tau);

struct WeightDictionary {
  std::map<std::string, double> weights;
  double tau = 0.01;

  static WeightDictionary build(const ImportanceMap& importance, double tau);
  bool has(std::string_view column) const { return weights.contains(std::string(column)); }
};

// Ordinal codes fitted on training events. Codes start at 1 in sorted value
// order; 0 is reserved for values never seen during fitting.
class OrdinalEncoder {
 public:
  static constexpr double kUnknownCode = 0.0;

  OrdinalEncoder() = default;
  static OrdinalEncoder fit(std::span<const drain::ParsedEvent> events,
                            std::vector<std::string> columns);

  std::vector<double> encode(const drain::ParsedEvent& event) const;
  double code(std::string_view column, std::string_view value) const;
  const std::vector<std::string>& columns() const { return columns_; }
  std::size_t dim() const { return columns_.size(); }

  nlohmann::json to_json() const;
  static OrdinalEncoder from_json(const nlohmann::json& doc);

 private:
  std::vector<std::string> columns_;
  std::vector<std::map<std::string, int, std::less<>>> codes_;
};

// Rows of the MLP input: the selected columns except ParameterList.
Eigen::MatrixXd build_feature_matrix(std::span<const drain::ParsedEvent> events,
                                     const std::vector<std::string>& selected,
                                     const OrdinalEncoder& encoder);

// Paths keep their last two segments; values matching a drop pattern are
// removed; everything else passes through.
class ParameterNormalizer {
 public:
  explicit ParameterNormalizer(std::vector<std::string> drop_patterns = default_drop_patterns());
  ~ParameterNormalizer();
  ParameterNormalizer(const ParameterNormalizer&);
  ParameterNormalizer& operator=(const ParameterNormalizer&);

  std::optional<std::string> operator()(std::string_view param) const;
  const std::vector<std::string>& drop_patterns() const { return patterns_; }

  static std::vector<std::string> default_drop_patterns();

 private:
  struct Compiled;
  std::vector<std::string> patterns_;
  std::shared_ptr<const Compiled> compiled_;
};

// Deterministic token embedding. Tokens found in the optional pretrained table
// use their stored vector; others average hashed character-trigram vectors
// and are scaled to unit norm. The empty token maps to zeros.
class TokenEmbedder {
 public:
  explicit TokenEmbedder(std::size_t dim = 50, std::uint64_t seed = 0x5eedULL);

  // Text file, one token per line followed by `dim` floats.
  void load_vectors(const std::filesystem::path& path);
  void add_vector(std::string token, std::vector<double> values);

  Eigen::VectorXd embed(std::string_view token) const;
  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t vocabulary_size() const { return table_.size(); }
  const std::optional<std::string>& vectors_path() const { return vectors_path_; }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::unordered_map<std::string, Eigen::VectorXd> table_;
  std::optional<std::string> vectors_path_;
};

// Star graph: node 0 is the event id, nodes 1..n-1 the surviving parameters.
struct EventGraph {
  std::vector<std::string> nodes;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  Eigen::MatrixXd node_features;  // nodes x dim

  std::size_t node_count() const { return nodes.size(); }
  bool is_star() const;
};

EventGraph build_event_graph(const drain::ParsedEvent& event, const ParameterNormalizer& normalizer,
                             const TokenEmbedder& embedder);

struct FeatureBundle {
  std::int64_t line_id = 0;
  std::vector<double> x;
  EventGraph graph;
  std::optional<int> label;
};

nlohmann::json to_json(const FeatureBundle& bundle);
FeatureBundle feature_bundle_from_json(const nlohmann::json& doc);

// Everything needed to turn parsed events into model inputs; fitted once at
// training time and frozen in the model bundle.
class FeatureSpace {
 public:
  FeatureSpace() = default;
  FeatureSpace(WeightDictionary weights, OrdinalEncoder encoder, ParameterNormalizer normalizer,
               TokenEmbedder embedder);

  // Importance -> selection -> encoder fit, all on the labeled events.
  static FeatureSpace fit(std::span<const drain::ParsedEvent> events, const ForestConfig& forest,
                          double tau, TokenEmbedder embedder,
                          ParameterNormalizer normalizer = ParameterNormalizer());

  FeatureBundle build(const drain::ParsedEvent& event) const;
  std::vector<FeatureBundle> build_all(std::span<const drain::ParsedEvent> events,
                                       std::size_t partitions = 1) const;

  const WeightDictionary& weights() const { return weights_; }
  const OrdinalEncoder& encoder() const { return encoder_; }
  const ParameterNormalizer& normalizer() const { return normalizer_; }
  const TokenEmbedder& embedder() const { return *embedder_; }
  const ImportanceMap& importance() const { return importance_; }
  std::size_t x_dim() const { return encoder_.dim(); }
  std::size_t embed_dim() const { return embedder_->dim(); }

  nlohmann::json to_json() const;
  static FeatureSpace from_json(const nlohmann::json& doc);

 private:
  WeightDictionary weights_;
  ImportanceMap importance_;
  OrdinalEncoder encoder_;
  ParameterNormalizer normalizer_;
  std::shared_ptr<const TokenEmbedder> embedder_ = std::make_shared<TokenEmbedder>();
};

}  // namespace cedlog::features
