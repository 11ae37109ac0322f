#pragma once

// Elastic weight consolidation: diagonal Fisher estimation, the quadratic
// anchor penalty, and its adapter for nn::fit.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cedlog/error.hpp"
#include "cedlog/nn.hpp"

namespace cedlog::ewc {

struct FisherDiagonal {
  std::vector<double> values;
  std::size_t sample_count = 0;
};

struct EwcAnchor {
  std::vector<double> theta_star;
  FisherDiagonal fisher;
  double lambda = 10.0;
  std::string task_tag;

  void validate() const;
  nlohmann::json to_json() const;
  static EwcAnchor from_json(const nlohmann::json& doc);
};

// (lambda / 2) * sum F_i (theta_i - theta*_i)^2. When grad is non-empty the
// penalty gradient lambda * F_i * (theta_i - theta*_i) is added into it.
double ewc_penalty(std::span<const double> params, const EwcAnchor& anchor,
                   std::span<double> grad = {});
double ewc_loss(std::span<const double> params, double base_loss, const EwcAnchor& anchor);

nn::Penalty make_penalty(const EwcAnchor& anchor);

namespace detail {
// Picks n indices out of [0, count) without replacement, in increasing order.
std::vector<std::size_t> sample_indices(std::size_t count, std::size_t n, std::uint64_t seed);
}  // namespace detail

// Diagonal Fisher: mean over sampled points of the squared per-parameter
// gradient of log p(y | x), with y drawn from the model's own predictive
// distribution. The expectation over y is taken exactly:
//   F_i = mean_x [ p * g1_i^2 + (1 - p) * g0_i^2 ]
// where p is the predicted anomaly probability and g_y the gradient of
// -log p(y | x). Inference mode is used throughout.
template <nn::Classifier M>
FisherDiagonal estimate_fisher(const M& model, std::span<const nn::FeatureBundle> data,
                               std::size_t n_samples, std::uint64_t seed = 0) {
  if (data.empty()) throw InvalidArgument("Fisher estimation needs data");
  if (n_samples == 0 || n_samples > data.size()) {
    throw InvalidArgument("n_samples must lie in [1, |data|]");
  }
  const auto idx = detail::sample_indices(data.size(), n_samples, seed);
  M work = model;
  const std::size_t p = work.parameter_count();
  FisherDiagonal out;
  out.values.assign(p, 0.0);
  out.sample_count = idx.size();
  std::vector<double> g0(p), g1(p);
  const double one = 1.0, zero = 0.0;
  for (std::size_t i : idx) {
    const nn::FeatureBundle* ptr = &data[i];
    std::span<const nn::FeatureBundle* const> batch(&ptr, 1);
    const double prob = work.predict(std::span<const nn::FeatureBundle>(&data[i], 1))[0];
    work.loss_and_gradient(batch, std::span<const double>(&zero, 1),
                           std::span<const double>(&one, 1), nn::Mode::Infer, g0, false);
    work.loss_and_gradient(batch, std::span<const double>(&one, 1),
                           std::span<const double>(&one, 1), nn::Mode::Infer, g1, false);
    for (std::size_t k = 0; k < p; ++k) {
      out.values[k] += prob * g1[k] * g1[k] + (1.0 - prob) * g0[k] * g0[k];
    }
  }
  for (double& v : out.values) v /= static_cast<double>(idx.size());
  return out;
}

template <nn::Classifier M>
EwcAnchor make_anchor(const M& model, std::span<const nn::FeatureBundle> data, double lambda,
                      std::string task_tag, std::size_t n_samples = 512, std::uint64_t seed = 0) {
  EwcAnchor a;
  auto params = model.parameters();
  a.theta_star.assign(params.begin(), params.end());
  a.fisher = estimate_fisher(model, data, std::min(n_samples, data.size()), seed);
  a.lambda = lambda;
  a.task_tag = std::move(task_tag);
  a.validate();
  return a;
}

}  // namespace cedlog::ewc
