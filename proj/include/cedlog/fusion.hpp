#pragma once

// Decision fusion of the two model outputs and the evaluation metrics.

#include <cstddef>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "cedlog/features.hpp"

namespace cedlog::fusion {

struct FusionWeights {
  double s0 = 1.0;  // mass of every selected column except ParameterList
  double s1 = 0.0;  // mass of ParameterList
};

FusionWeights relative_scores(const features::WeightDictionary& w);

// p1, p2 are the class-0 (normal) probabilities of the MLP and the GCN.
double fuse(double p1, double p2, const FusionWeights& w);

// 0 (normal) when F > 0.5, else 1.
int decide(double f);

struct FusedPrediction {
  double p1 = 0.0;
  double p2 = 0.0;
  double f = 0.0;
  int y_hat = 1;
};

// Takes the models' anomaly probabilities, as produced by predict().
FusedPrediction fuse_anomaly_probs(double mlp_anomaly, double gcn_anomaly,
                                   const FusionWeights& w);

struct MetricReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0, fpr = 0.0;
  bool precision_undefined = false;  // no positive predictions
  bool recall_undefined = false;     // no positive labels
  bool fpr_undefined = false;        // no negative labels

  std::size_t total() const { return tp + fp + tn + fn; }
  nlohmann::json to_json() const;
  std::string table_row() const;
};

MetricReport compute_metrics(std::span<const int> predictions, std::span<const int> labels,
                             int positive_class = 1);

}  // namespace cedlog::fusion
