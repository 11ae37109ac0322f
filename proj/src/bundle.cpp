#include "cedlog/bundle.hpp"

#include <fstream>
#include <sstream>

#include "cedlog/clock.hpp"
#include "cedlog/error.hpp"

namespace cedlog {

using nlohmann::json;

std::vector<fusion::FusedPrediction> ModelBundle::predict(
    std::span<const features::FeatureBundle> data) const {
  const auto w = fusion_weights();
  const auto p_mlp = mlp.predict(data);
  const auto p_gcn = gcn.predict(data);
  std::vector<fusion::FusedPrediction> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.push_back(fusion::fuse_anomaly_probs(p_mlp[i], p_gcn[i], w));
  }
  return out;
}

json ModelBundle::to_json() const {
  auto anchor = [](const std::optional<ewc::EwcAnchor>& a) { return a ? a->to_json() : json(); };
  return {{"schema_version", kBundleSchemaVersion},
          {"version", version},
          {"created_at", created_at},
          {"shape", {{"x_dim", mlp.x_dim()}, {"d", gcn.embed_dim()}}},
          {"profile", profile.to_json()},
          {"templates", templates.to_json()},
          {"feature_space", space.to_json()},
          {"mlp", nn::to_json(mlp)},
          {"gcn", nn::to_json(gcn)},
          {"mlp_anchor", anchor(mlp_anchor)},
          {"gcn_anchor", anchor(gcn_anchor)},
          {"mlp_config", mlp_config.to_json()},
          {"gcn_config", gcn_config.to_json()}};
}

ModelBundle ModelBundle::from_json(const json& doc) {
  try {
    const int schema = doc.at("schema_version").get<int>();
    if (schema != kBundleSchemaVersion) {
      throw FormatError("unsupported bundle schema version " + std::to_string(schema));
    }
    ModelBundle b;
    b.version = doc.at("version").get<std::uint64_t>();
    b.created_at = doc.at("created_at").get<std::string>();
    b.profile = drain::HeaderProfile::from_json(doc.at("profile"));
    b.templates = drain::TemplateTree::from_json(doc.at("templates"));
    b.space = features::FeatureSpace::from_json(doc.at("feature_space"));
    b.mlp = nn::mlp_from_json(doc.at("mlp"));
    b.gcn = nn::gcn_from_json(doc.at("gcn"));
    if (!doc.at("mlp_anchor").is_null()) b.mlp_anchor = ewc::EwcAnchor::from_json(doc["mlp_anchor"]);
    if (!doc.at("gcn_anchor").is_null()) b.gcn_anchor = ewc::EwcAnchor::from_json(doc["gcn_anchor"]);
    b.mlp_config = nn::TrainConfig::from_json(doc.at("mlp_config"));
    b.gcn_config = nn::TrainConfig::from_json(doc.at("gcn_config"));
    const auto& shape = doc.at("shape");
    if (shape.at("x_dim").get<std::size_t>() != b.mlp.x_dim() ||
        shape.at("d").get<std::size_t>() != b.gcn.embed_dim() ||
        b.space.x_dim() != b.mlp.x_dim() || b.space.embed_dim() != b.gcn.embed_dim()) {
      throw FormatError("bundle shape header does not match its models");
    }
    return b;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model bundle: ") + e.what());
  }
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  if (!bundle.mlp_anchor || !bundle.gcn_anchor) {
    throw InvalidArgument("refusing to save a bundle without EWC anchors (train it first)");
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << bundle.to_json().dump();
    if (!out.flush()) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open bundle " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json doc;
  try {
    doc = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw FormatError("corrupt bundle " + path.string() + ": " + e.what());
  }
  return ModelBundle::from_json(doc);
}

json TrainingOptions::to_json() const {
  json forest_doc = {{"trees", forest.trees},
                     {"max_depth", forest.max_depth},
                     {"min_samples_split", forest.min_samples_split},
                     {"seed", forest.seed}};
  if (forest.features_per_split) forest_doc["features_per_split"] = *forest.features_per_split;
  return {{"forest", forest_doc},
          {"tau", tau},
          {"embed_dim", embed_dim},
          {"embed_seed", embed_seed},
          {"vectors_path", vectors_path ? json(*vectors_path) : json()},
          {"mlp", mlp.to_json()},
          {"gcn", gcn.to_json()},
          {"model_seed", model_seed},
          {"lambda", lambda},
          {"fisher_samples", fisher_samples},
          {"partitions", partitions}};
}

TrainingOptions TrainingOptions::from_json(const json& doc) {
  TrainingOptions o;
  try {
    if (doc.contains("forest")) {
      const auto& f = doc["forest"];
      o.forest.trees = f.value("trees", o.forest.trees);
      o.forest.max_depth = f.value("max_depth", o.forest.max_depth);
      o.forest.min_samples_split = f.value("min_samples_split", o.forest.min_samples_split);
      o.forest.seed = f.value("seed", o.forest.seed);
      if (f.contains("features_per_split")) {
        o.forest.features_per_split = f["features_per_split"].get<std::size_t>();
      }
    }
    o.tau = doc.value("tau", o.tau);
    o.embed_dim = doc.value("embed_dim", o.embed_dim);
    o.embed_seed = doc.value("embed_seed", o.embed_seed);
    if (doc.contains("vectors_path") && !doc["vectors_path"].is_null()) {
      o.vectors_path = doc["vectors_path"].get<std::string>();
    }
    if (doc.contains("mlp")) o.mlp = nn::TrainConfig::from_json(doc["mlp"]);
    if (doc.contains("gcn")) o.gcn = nn::TrainConfig::from_json(doc["gcn"]);
    o.model_seed = doc.value("model_seed", o.model_seed);
    o.lambda = doc.value("lambda", o.lambda);
    o.fisher_samples = doc.value("fisher_samples", o.fisher_samples);
    o.partitions = doc.value("partitions", o.partitions);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed training options: ") + e.what());
  }
  if (o.lambda < 0.0) throw InvalidArgument("lambda must be >= 0");
  if (o.fisher_samples == 0) throw InvalidArgument("fisher_samples must be >= 1");
  return o;
}

ModelBundle train_bundle(std::span<const drain::ParsedEvent> events,
                         const drain::TemplateTree& templates,
                         const drain::HeaderProfile& profile, const TrainingOptions& options) {
  if (events.empty()) throw InvalidArgument("no training events");
  features::TokenEmbedder embedder(options.embed_dim, options.embed_seed);
  if (options.vectors_path) embedder.load_vectors(*options.vectors_path);

  ModelBundle b;
  b.profile = profile;
  b.templates = templates;
  b.space = features::FeatureSpace::fit(events, options.forest, options.tau, std::move(embedder));
  const auto data = b.space.build_all(events, options.partitions);

  b.mlp = nn::MlpModel(b.space.x_dim(), options.model_seed);
  b.gcn = nn::GcnModel(b.space.embed_dim(), options.model_seed + 1);
  b.mlp_config = options.mlp;
  b.gcn_config = options.gcn;
  if (b.space.x_dim() > 0) nn::train(b.mlp, data, options.mlp);
  nn::train(b.gcn, data, options.gcn);

  b.mlp_anchor = ewc::make_anchor(b.mlp, data, options.lambda, "v1", options.fisher_samples,
                                  options.model_seed);
  b.gcn_anchor = ewc::make_anchor(b.gcn, data, options.lambda, "v1", options.fisher_samples,
                                  options.model_seed);
  b.version = 1;
  b.created_at = now_iso8601();
  return b;
}

}  // namespace cedlog
