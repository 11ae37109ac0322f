#include "cedlog/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/regex.hpp>

#include "cedlog/error.hpp"
#include "cedlog/partition.hpp"

namespace cedlog::features {

using nlohmann::json;

const std::vector<std::string>& learning_columns() {
  static const std::vector<std::string> cols{"EventId", "Context", "Level",
                                             std::string(kParameterList)};
  return cols;
}

std::string column_value(const drain::ParsedEvent& e, std::string_view column) {
  if (column == "EventId") return e.event_id;
  if (column == "EventTemplate") return e.event_template;
  if (column == "Context") return e.context.value_or("");
  if (column == "Level") return e.level.value_or("");
  if (column == "Source") return e.source;
  if (column == kParameterList) {
    std::string out;
    for (std::size_t i = 0; i < e.parameters.size(); ++i) {
      if (i) out += ' ';
      out += e.parameters[i];
    }
    return out;
  }
  throw ShapeError("unknown column '" + std::string(column) + "'");
}

ImportanceMap train_importance(std::span<const drain::ParsedEvent> events,
                               const ForestConfig& config,
                               const std::vector<std::string>& columns) {
  CodedTable table;
  table.labels.reserve(events.size());
  for (const auto& e : events) {
    if (!e.label) throw InvalidArgument("importance needs labeled events");
    table.labels.push_back(*e.label);
  }
  for (const auto& col : columns) {
    std::vector<std::string> values;
    values.reserve(events.size());
    for (const auto& e : events) values.push_back(column_value(e, col));
    std::vector<std::string> uniq = values;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<std::int32_t> codes;
    codes.reserve(values.size());
    for (const auto& v : values) {
      codes.push_back(static_cast<std::int32_t>(
          std::lower_bound(uniq.begin(), uniq.end(), v) - uniq.begin()));
    }
    table.columns.push_back(std::move(codes));
  }
  const auto imp = forest_importance(table, config);
  ImportanceMap out;
  for (std::size_t i = 0; i < columns.size(); ++i) out[columns[i]] = imp[i];
  return out;
}

std::vector<std::string> select_columns(const ImportanceMap& importance, double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) throw InvalidArgument("tau must lie in [0, 1)");
  std::vector<std::string> out;
  for (const auto& [col, v] : importance) {
    if (v > tau) out.push_back(col);
  }
  if (out.empty()) throw InvalidArgument("threshold too high: no column has importance above tau");
  return out;
}

WeightDictionary WeightDictionary::build(const ImportanceMap& importance, double tau) {
  WeightDictionary w;
  w.tau = tau;
  for (const auto& col : select_columns(importance, tau)) w.weights[col] = importance.at(col);
  return w;
}

// ------------------------------------------------------------------ encoder

OrdinalEncoder OrdinalEncoder::fit(std::span<const drain::ParsedEvent> events,
                                   std::vector<std::string> columns) {
  OrdinalEncoder enc;
  for (const auto& col : columns) {
    if (col == kParameterList) throw ShapeError("ParameterList is not an encoder column");
    std::set<std::string> seen;
    for (const auto& e : events) seen.insert(column_value(e, col));
    std::map<std::string, int, std::less<>> codes;
    int next = 1;
    for (const auto& v : seen) codes.emplace(v, next++);
    enc.codes_.push_back(std::move(codes));
  }
  enc.columns_ = std::move(columns);
  return enc;
}

double OrdinalEncoder::code(std::string_view column, std::string_view value) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i] != column) continue;
    auto it = codes_[i].find(value);
    return it == codes_[i].end() ? kUnknownCode : static_cast<double>(it->second);
  }
  throw ShapeError("column '" + std::string(column) + "' is not encoded");
}

std::vector<double> OrdinalEncoder::encode(const drain::ParsedEvent& event) const {
  std::vector<double> x(columns_.size());
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    const std::string v = column_value(event, columns_[i]);
    auto it = codes_[i].find(v);
    x[i] = it == codes_[i].end() ? kUnknownCode : static_cast<double>(it->second);
  }
  return x;
}

json OrdinalEncoder::to_json() const {
  json codes = json::object();
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    json m = json::object();
    for (const auto& [k, v] : codes_[i]) m[k] = v;
    codes[columns_[i]] = std::move(m);
  }
  return {{"columns", columns_}, {"codes", std::move(codes)}};
}

OrdinalEncoder OrdinalEncoder::from_json(const json& doc) {
  OrdinalEncoder enc;
  enc.columns_ = doc.at("columns").get<std::vector<std::string>>();
  for (const auto& col : enc.columns_) {
    std::map<std::string, int, std::less<>> m;
    for (const auto& [k, v] : doc.at("codes").at(col).items()) m.emplace(k, v.get<int>());
    enc.codes_.push_back(std::move(m));
  }
  return enc;
}

Eigen::MatrixXd build_feature_matrix(std::span<const drain::ParsedEvent> events,
                                     const std::vector<std::string>& selected,
                                     const OrdinalEncoder& encoder) {
  std::vector<std::string> cols;
  for (const auto& c : selected) {
    if (c == kParameterList) continue;
    if (std::find(encoder.columns().begin(), encoder.columns().end(), c) ==
        encoder.columns().end()) {
      throw ShapeError("selected column '" + c + "' is not fitted by the encoder");
    }
    cols.push_back(c);
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(events.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t r = 0; r < events.size(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          encoder.code(cols[c], column_value(events[r], cols[c]));
    }
  }
  return x;
}

// --------------------------------------------------------------- normalizer

struct ParameterNormalizer::Compiled {
  std::vector<boost::regex> drops;
};

ParameterNormalizer::ParameterNormalizer(std::vector<std::string> drop_patterns)
    : patterns_(std::move(drop_patterns)) {
  auto c = std::make_shared<Compiled>();
  for (const auto& p : patterns_) {
    try {
      c->drops.emplace_back(p, boost::regex::perl | boost::regex::optimize);
    } catch (const boost::regex_error& e) {
      throw InvalidArgument("invalid drop pattern '" + p + "': " + e.what());
    }
  }
  compiled_ = std::move(c);
}

ParameterNormalizer::~ParameterNormalizer() = default;
ParameterNormalizer::ParameterNormalizer(const ParameterNormalizer&) = default;
ParameterNormalizer& ParameterNormalizer::operator=(const ParameterNormalizer&) = default;

std::vector<std::string> ParameterNormalizer::default_drop_patterns() {
  return {R"(^blk_-?\d+$)"};
}

std::optional<std::string> ParameterNormalizer::operator()(std::string_view param) const {
  if (param.empty()) return std::nullopt;
  for (const auto& re : compiled_->drops) {
    if (boost::regex_search(param.begin(), param.end(), re)) return std::nullopt;
  }
  if (param.find('/') == std::string_view::npos) return std::string(param);

  std::vector<std::string_view> segs;
  std::size_t i = 0;
  while (i <= param.size()) {
    const std::size_t j = std::min(param.find('/', i), param.size());
    if (j > i) segs.push_back(param.substr(i, j - i));
    i = j + 1;
  }
  if (segs.empty()) return std::nullopt;
  if (segs.size() == 1) return std::string(segs.back());
  return std::string(segs[segs.size() - 2]) + "/" + std::string(segs.back());
}

// ----------------------------------------------------------------- embedder

namespace {

std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

TokenEmbedder::TokenEmbedder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim_ == 0) throw InvalidArgument("embedding dimension must be positive");
}

void TokenEmbedder::add_vector(std::string token, std::vector<double> values) {
  if (values.size() != dim_) {
    throw ShapeError("vector for '" + token + "' has " + std::to_string(values.size()) +
                     " values, expected " + std::to_string(dim_));
  }
  table_[std::move(token)] = Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                               static_cast<Eigen::Index>(dim_));
}

void TokenEmbedder::load_vectors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open vector file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    std::vector<double> vals;
    double v;
    while (ss >> v) vals.push_back(v);
    if (vals.size() != dim_) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(dim_) + " values");
    }
    add_vector(std::move(token), std::move(vals));
  }
  vectors_path_ = path.string();
}

Eigen::VectorXd TokenEmbedder::embed(std::string_view token) const {
  const auto n = static_cast<Eigen::Index>(dim_);
  if (token.empty()) return Eigen::VectorXd::Zero(n);
  if (auto it = table_.find(std::string(token)); it != table_.end()) return it->second;

  const std::string padded = "^" + std::string(token) + "$";
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
  const std::size_t grams = padded.size() - 2;
  for (std::size_t i = 0; i < grams; ++i) {
    std::uint64_t state = fnv1a(std::string_view(padded).substr(i, 3), seed_);
    for (Eigen::Index k = 0; k < n; ++k) {
      // Uniform in [-1, 1) from the top 53 bits.
      acc[k] += static_cast<double>(splitmix(state) >> 11) * 0x1.0p-52 - 1.0;
    }
  }
  acc /= static_cast<double>(grams);
  const double norm = acc.norm();
  if (norm > 0.0) acc /= norm;
  return acc;
}

// -------------------------------------------------------------------- graph

bool EventGraph::is_star() const {
  if (nodes.empty()) return false;
  if (edges.size() != nodes.size() - 1) return false;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (edges[i].first != 0 || edges[i].second != i + 1) return false;
  }
  return static_cast<std::size_t>(node_features.rows()) == nodes.size();
}

EventGraph build_event_graph(const drain::ParsedEvent& event, const ParameterNormalizer& normalizer,
                             const TokenEmbedder& embedder) {
  EventGraph g;
  g.nodes.push_back(event.event_id);
  for (const auto& p : event.parameters) {
    if (auto norm = normalizer(p)) g.nodes.push_back(std::move(*norm));
  }
  g.node_features.resize(static_cast<Eigen::Index>(g.nodes.size()),
                         static_cast<Eigen::Index>(embedder.dim()));
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    g.node_features.row(static_cast<Eigen::Index>(i)) = embedder.embed(g.nodes[i]).transpose();
    if (i > 0) g.edges.emplace_back(0, i);
  }
  return g;
}

json to_json(const FeatureBundle& b) {
  json feats = json::array();
  for (Eigen::Index r = 0; r < b.graph.node_features.rows(); ++r) {
    std::vector<double> row(b.graph.node_features.cols());
    for (Eigen::Index c = 0; c < b.graph.node_features.cols(); ++c) row[c] = b.graph.node_features(r, c);
    feats.push_back(std::move(row));
  }
  return {{"line_id", b.line_id},
          {"x", b.x},
          {"nodes", b.graph.nodes},
          {"node_features", std::move(feats)},
          {"label", b.label ? json(*b.label) : json(nullptr)}};
}

FeatureBundle feature_bundle_from_json(const json& doc) {
  try {
    FeatureBundle b;
    b.line_id = doc.at("line_id").get<std::int64_t>();
    b.x = doc.at("x").get<std::vector<double>>();
    b.graph.nodes = doc.at("nodes").get<std::vector<std::string>>();
    const auto& feats = doc.at("node_features");
    if (feats.size() != b.graph.nodes.size() || feats.empty()) {
      throw FormatError("node feature rows do not match nodes");
    }
    const std::size_t d = feats.at(0).size();
    b.graph.node_features.resize(static_cast<Eigen::Index>(feats.size()), static_cast<Eigen::Index>(d));
    for (std::size_t r = 0; r < feats.size(); ++r) {
      const auto row = feats[r].get<std::vector<double>>();
      if (row.size() != d) throw FormatError("ragged node features");
      for (std::size_t c = 0; c < d; ++c) {
        b.graph.node_features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
      }
    }
    for (std::size_t i = 1; i < b.graph.nodes.size(); ++i) b.graph.edges.emplace_back(0, i);
    if (!doc.at("label").is_null()) b.label = doc.at("label").get<int>();
    return b;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed feature bundle: ") + e.what());
  }
}

// ------------------------------------------------------------ feature space

FeatureSpace::FeatureSpace(WeightDictionary weights, OrdinalEncoder encoder,
                           ParameterNormalizer normalizer, TokenEmbedder embedder)
    : weights_(std::move(weights)),
      encoder_(std::move(encoder)),
      normalizer_(std::move(normalizer)),
      embedder_(std::make_shared<const TokenEmbedder>(std::move(embedder))) {}

FeatureSpace FeatureSpace::fit(std::span<const drain::ParsedEvent> events,
                               const ForestConfig& forest, double tau, TokenEmbedder embedder,
                               ParameterNormalizer normalizer) {
  auto importance = train_importance(events, forest);
  auto weights = WeightDictionary::build(importance, tau);
  std::vector<std::string> x_cols;
  for (const auto& col : learning_columns()) {
    if (col != kParameterList && weights.has(col)) x_cols.push_back(col);
  }
  auto encoder = OrdinalEncoder::fit(events, std::move(x_cols));
  FeatureSpace fs(std::move(weights), std::move(encoder), std::move(normalizer), std::move(embedder));
  fs.importance_ = std::move(importance);
  return fs;
}

FeatureBundle FeatureSpace::build(const drain::ParsedEvent& event) const {
  FeatureBundle b;
  b.line_id = event.line_id;
  b.x = encoder_.encode(event);
  b.graph = build_event_graph(event, normalizer_, *embedder_);
  b.label = event.label;
  return b;
}

std::vector<FeatureBundle> FeatureSpace::build_all(std::span<const drain::ParsedEvent> events,
                                                   std::size_t partitions) const {
  return pipeline::map_partitions(
      events,
      [this](std::span<const drain::ParsedEvent> part) {
        std::vector<FeatureBundle> out;
        out.reserve(part.size());
        for (const auto& e : part) out.push_back(build(e));
        return out;
      },
      partitions);
}

json FeatureSpace::to_json() const {
  json emb = {{"dim", embedder_->dim()}, {"seed", embedder_->seed()}};
  emb["vectors_path"] = embedder_->vectors_path() ? json(*embedder_->vectors_path()) : json(nullptr);
  return {{"schema_version", kFeatureSchemaVersion},
          {"tau", weights_.tau},
          {"weights", weights_.weights},
          {"importance", importance_},
          {"encoder", encoder_.to_json()},
          {"drop_patterns", normalizer_.drop_patterns()},
          {"embedding", std::move(emb)}};
}

FeatureSpace FeatureSpace::from_json(const json& doc) {
  try {
    if (doc.at("schema_version").get<int>() != kFeatureSchemaVersion) {
      throw FormatError("unsupported feature schema version");
    }
    WeightDictionary w;
    w.tau = doc.at("tau").get<double>();
    w.weights = doc.at("weights").get<std::map<std::string, double>>();
    const auto& emb = doc.at("embedding");
    TokenEmbedder embedder(emb.at("dim").get<std::size_t>(), emb.at("seed").get<std::uint64_t>());
    if (!emb.at("vectors_path").is_null()) {
      embedder.load_vectors(emb.at("vectors_path").get<std::string>());
    }
    FeatureSpace fs(std::move(w), OrdinalEncoder::from_json(doc.at("encoder")),
                    ParameterNormalizer(doc.at("drop_patterns").get<std::vector<std::string>>()),
                    std::move(embedder));
    fs.importance_ = doc.at("importance").get<ImportanceMap>();
    return fs;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed feature space: ") + e.what());
  }
}

}  // namespace cedlog::features
