#pragma once

// Binary classifiers trained from scratch: an MLP over the encoded columns
// and a GCN over the per-event parameter graph. Both keep their trainable
// parameters in one flat vector so optimizers, Fisher estimation and the EWC
// penalty can treat them uniformly.

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cedlog/error.hpp"
#include "cedlog/features.hpp"

namespace cedlog::nn {

using features::EventGraph;
using features::FeatureBundle;

enum class Mode { Train, Infer };

double sigmoid(double z);
// Binary cross-entropy of label y for logit z, computed stably.
double bce_with_logits(double z, double y);

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------- MLP

class MlpModel {
 public:
  static constexpr std::size_t kHidden1 = 64;
  static constexpr std::size_t kHidden2 = 32;
  static constexpr double kBnMomentum = 0.9;
  static constexpr double kBnEpsilon = 1e-5;

  MlpModel() : MlpModel(0, 0) {}
  MlpModel(std::size_t x_dim, std::uint64_t seed);

  std::size_t x_dim() const { return x_dim_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t parameter_count() const { return theta_.size(); }
  std::span<double> parameters() { return theta_; }
  std::span<const double> parameters() const { return theta_; }
  void set_parameters(std::span<const double> values);
  const std::vector<double>& running_stats() const { return running_; }
  void set_running_stats(std::span<const double> values);

  // P(anomaly) per row of x. Train mode normalizes with batch moments and
  // updates the running statistics; infer mode uses the running statistics.
  Eigen::VectorXd forward(const Eigen::MatrixXd& x, Mode mode);
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
  std::vector<double> predict(std::span<const FeatureBundle> data) const;

  // Weighted mean BCE over the batch; writes d(loss)/d(theta) into grad.
  double loss_and_gradient(std::span<const FeatureBundle* const> batch,
                           std::span<const double> labels, std::span<const double> weights,
                           Mode mode, std::span<double> grad, bool update_stats);
  double loss(std::span<const FeatureBundle* const> batch, std::span<const double> labels,
              std::span<const double> weights, Mode mode) const;

  // Batch-normalized pre-activations of the first hidden layer in train mode
  // (before scale and shift); exposed for inspection.
  Eigen::MatrixXd normalized_hidden1(const Eigen::MatrixXd& x) const;

  static Eigen::MatrixXd stack(std::span<const FeatureBundle* const> batch, std::size_t x_dim);

 private:
  struct Moments {
    Eigen::RowVectorXd mean1, var1, mean2, var2;
  };
  double run(const Eigen::MatrixXd& x, std::span<const double> labels,
             std::span<const double> weights, Mode mode, std::span<double> grad,
             Moments* moments, Eigen::VectorXd* probs) const;
  void absorb(const Moments& m, std::size_t batch);

  std::size_t x_dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<double> theta_;
  std::vector<double> running_;  // mean1, var1, mean2, var2
};

// ---------------------------------------------------------------------- GCN

// Symmetric-normalized adjacency with self loops of an undirected graph.
Eigen::MatrixXd normalized_adjacency(std::size_t nodes,
                                     std::span<const std::pair<std::size_t, std::size_t>> edges);

class GcnModel {
 public:
  static constexpr std::size_t kConv = 64;
  static constexpr std::size_t kDense1 = 32;
  static constexpr std::size_t kDense2 = 16;

  GcnModel() : GcnModel(1, 0) {}
  GcnModel(std::size_t embed_dim, std::uint64_t seed);

  std::size_t embed_dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t parameter_count() const { return theta_.size(); }
  std::span<double> parameters() { return theta_; }
  std::span<const double> parameters() const { return theta_; }
  void set_parameters(std::span<const double> values);

  // P(anomaly) for one graph. Throws ShapeError on an empty graph or a
  // feature width that differs from the embedding dimension.
  double forward(const EventGraph& graph) const;
  std::vector<double> predict(std::span<const FeatureBundle> data) const;

  // Mean-pooled graph representation after both convolutions.
  Eigen::VectorXd pooled(const EventGraph& graph) const;
  // Dense head (32 -> 16 -> 1, sigmoid) applied to a pooled representation.
  double head(const Eigen::VectorXd& pooled) const;
  // First convolution applied to raw node features with a given adjacency.
  Eigen::MatrixXd conv1(const Eigen::MatrixXd& adjacency, const Eigen::MatrixXd& h) const;
  Eigen::MatrixXd conv2(const Eigen::MatrixXd& adjacency, const Eigen::MatrixXd& h) const;

  double loss_and_gradient(std::span<const FeatureBundle* const> batch,
                           std::span<const double> labels, std::span<const double> weights,
                           Mode mode, std::span<double> grad, bool update_stats);
  double loss(std::span<const FeatureBundle* const> batch, std::span<const double> labels,
              std::span<const double> weights, Mode mode) const;

 private:
  double graph_pass(const EventGraph& g, double label, double scale, std::span<double> grad,
                    double* prob) const;

  std::size_t dim_ = 1;
  std::uint64_t seed_ = 0;
  std::vector<double> theta_;
};

// --------------------------------------------------------------- training

template <class M>
concept Classifier = requires(M m, const M cm, std::span<const FeatureBundle* const> batch,
                              std::span<const double> v, std::span<double> g,
                              std::span<const FeatureBundle> data) {
  { m.loss_and_gradient(batch, v, v, Mode::Train, g, true) } -> std::same_as<double>;
  { cm.loss(batch, v, v, Mode::Train) } -> std::same_as<double>;
  { cm.parameter_count() } -> std::same_as<std::size_t>;
  { m.parameters() } -> std::same_as<std::span<double>>;
  { cm.predict(data) } -> std::same_as<std::vector<double>>;
};

enum class Optimizer { GradientDescent, Adam };

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  Optimizer optimizer = Optimizer::Adam;
  std::uint64_t seed = 7;
  bool class_weighting = true;
  bool shuffle = true;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& doc);
};

struct TrainReport {
  std::vector<double> loss_history;  // mean loss per epoch, penalty included
  std::size_t steps = 0;
};

// Extra objective term: returns its value at `params` and adds its gradient
// into `grad`.
using Penalty = std::function<double(std::span<const double> params, std::span<double> grad)>;

// Balanced class weights N / (2 N_c); uniform when a class is missing.
std::array<double, 2> class_weights(std::span<const FeatureBundle> data, bool balanced);

namespace detail {

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace detail

// Minibatch training with BCE. No class-balance precondition; use train() for
// first-time training.
template <Classifier M>
TrainReport fit(M& model, std::span<const FeatureBundle> data, const TrainConfig& cfg,
                const Penalty& penalty = {}) {
  cfg.validate();
  if (data.empty()) throw InvalidArgument("training data is empty");
  for (const auto& b : data) {
    if (!b.label) throw InvalidArgument("training data must be labeled");
  }
  const auto cw = class_weights(data, cfg.class_weighting);
  const std::size_t n = data.size();
  const std::size_t p = model.parameter_count();

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  std::vector<double> grad(p), m1(p, 0.0), m2(p, 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  std::size_t t = 0;

  std::vector<const FeatureBundle*> batch;
  std::vector<double> labels, weights;
  TrainReport report;
  const std::size_t bs = std::min(cfg.batch_size, n);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n;) {
      std::size_t end = std::min(start + bs, n);
      if (n - end == 1) end = n;  // never leave a single-sample batch behind
      batch.clear();
      labels.clear();
      weights.clear();
      for (std::size_t i = start; i < end; ++i) {
        const FeatureBundle& b = data[order[i]];
        batch.push_back(&b);
        labels.push_back(static_cast<double>(*b.label));
        weights.push_back(cw[static_cast<std::size_t>(*b.label)]);
      }
      double loss = model.loss_and_gradient(batch, labels, weights, Mode::Train, grad, true);
      auto params = model.parameters();
      if (penalty) loss += penalty(params, grad);
      if (!std::isfinite(loss) || !detail::all_finite(grad)) {
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(t) + " (loss=" + std::to_string(loss) + ")");
      }
      ++t;
      if (cfg.optimizer == Optimizer::Adam) {
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
        for (std::size_t k = 0; k < p; ++k) {
          m1[k] = kBeta1 * m1[k] + (1.0 - kBeta1) * grad[k];
          m2[k] = kBeta2 * m2[k] + (1.0 - kBeta2) * grad[k] * grad[k];
          params[k] -= cfg.learning_rate * (m1[k] / c1) / (std::sqrt(m2[k] / c2) + kEps);
        }
      } else {
        for (std::size_t k = 0; k < p; ++k) params[k] -= cfg.learning_rate * grad[k];
      }
      epoch_loss += loss * static_cast<double>(end - start);
      start = end;
    }
    report.loss_history.push_back(epoch_loss / static_cast<double>(n));
  }
  if (!detail::all_finite(model.parameters())) {
    throw TrainingDiverged("training produced non-finite parameters");
  }
  report.steps = t;
  return report;
}

// First-time training: requires both classes in the data.
template <Classifier M>
TrainReport train(M& model, std::span<const FeatureBundle> data, const TrainConfig& cfg) {
  cfg.validate();
  bool seen[2] = {false, false};
  for (const auto& b : data) {
    if (b.label) seen[*b.label != 0] = true;
  }
  if (!seen[0] || !seen[1]) throw InvalidArgument("training data must contain both classes");
  return fit(model, data, cfg);
}

// Max relative error between the analytic gradient and central finite
// differences of the loss, over all parameters. Relative error is
// |a - n| / max(|a| + |n|, floor); a point with zero gradient everywhere
// reports 0. The floor sits above the central-difference rounding noise
// (about 1e-11 at h = 1e-5), which matters for parameters whose exact
// gradient is zero, such as the biases feeding batch norm.
template <Classifier M>
double gradient_check(M model, std::span<const FeatureBundle* const> batch, Mode mode,
                      double h = 1e-5, double floor = 1e-6) {
  std::vector<double> labels, weights;
  for (const auto* b : batch) {
    if (!b->label) throw InvalidArgument("gradient check needs labeled data");
    labels.push_back(static_cast<double>(*b->label));
    weights.push_back(1.0);
  }
  std::vector<double> grad(model.parameter_count());
  model.loss_and_gradient(batch, labels, weights, mode, grad, false);
  auto params = model.parameters();
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double orig = params[k];
    params[k] = orig + h;
    const double up = model.loss(batch, labels, weights, mode);
    params[k] = orig - h;
    const double down = model.loss(batch, labels, weights, mode);
    params[k] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max(std::abs(grad[k]) + std::abs(numeric), floor);
    worst = std::max(worst, std::abs(grad[k] - numeric) / denom);
  }
  return worst;
}

// Fraction of bundles whose thresholded probability (> 0.5 means anomaly)
// matches the label.
double accuracy(std::span<const double> probs, std::span<const FeatureBundle> data);

nlohmann::json to_json(const MlpModel& m);
MlpModel mlp_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const GcnModel& m);
GcnModel gcn_from_json(const nlohmann::json& doc);

}  // namespace cedlog::nn
