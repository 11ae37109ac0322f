#pragma once

// The trained artifact: parser state, feature space, both models and their
// EWC anchors, under one version number.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cedlog/drain.hpp"
#include "cedlog/ewc.hpp"
#include "cedlog/features.hpp"
#include "cedlog/fusion.hpp"
#include "cedlog/nn.hpp"

namespace cedlog {

inline constexpr int kBundleSchemaVersion = 1;

struct ModelBundle {
  std::uint64_t version = 0;
  std::string created_at;
  drain::HeaderProfile profile;
  drain::TemplateTree templates;
  features::FeatureSpace space;
  nn::MlpModel mlp;
  nn::GcnModel gcn;
  std::optional<ewc::EwcAnchor> mlp_anchor;
  std::optional<ewc::EwcAnchor> gcn_anchor;
  nn::TrainConfig mlp_config;
  nn::TrainConfig gcn_config;

  fusion::FusionWeights fusion_weights() const {
    return fusion::relative_scores(space.weights());
  }
  std::vector<fusion::FusedPrediction> predict(std::span<const features::FeatureBundle> data) const;

  nlohmann::json to_json() const;
  static ModelBundle from_json(const nlohmann::json& doc);
};

// Throws InvalidArgument for a bundle without anchors (never trained).
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
// Throws FormatError on a corrupt file or an unsupported schema version.
ModelBundle load_bundle(const std::filesystem::path& path);

struct TrainingOptions {
  features::ForestConfig forest;
  double tau = 0.01;
  std::size_t embed_dim = 50;
  std::uint64_t embed_seed = 0x5eedULL;
  std::optional<std::string> vectors_path;
  nn::TrainConfig mlp;
  nn::TrainConfig gcn;
  std::uint64_t model_seed = 1;
  double lambda = 10.0;
  std::size_t fisher_samples = 512;
  std::size_t partitions = 1;

  nlohmann::json to_json() const;
  static TrainingOptions from_json(const nlohmann::json& doc);
};

// First training run on labeled parsed events: feature space, both models,
// and the initial anchors. The result has version 1.
ModelBundle train_bundle(std::span<const drain::ParsedEvent> events,
                         const drain::TemplateTree& templates,
                         const drain::HeaderProfile& profile, const TrainingOptions& options);

}  // namespace cedlog
