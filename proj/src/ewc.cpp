#include "cedlog/ewc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace cedlog::ewc {

void EwcAnchor::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be >= 0");
  if (fisher.values.size() != theta_star.size()) {
    throw ShapeError("Fisher diagonal and anchor parameters differ in size");
  }
  for (double t : theta_star) {
    if (!std::isfinite(t)) throw InvalidArgument("anchor parameters must be finite");
  }
  for (double f : fisher.values) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw InvalidArgument("Fisher entries must be >= 0");
  }
}

nlohmann::json EwcAnchor::to_json() const {
  return {{"theta_star", theta_star},
          {"fisher", fisher.values},
          {"fisher_samples", fisher.sample_count},
          {"lambda", lambda},
          {"task_tag", task_tag}};
}

EwcAnchor EwcAnchor::from_json(const nlohmann::json& doc) {
  EwcAnchor a;
  try {
    a.theta_star = doc.at("theta_star").get<std::vector<double>>();
    a.fisher.values = doc.at("fisher").get<std::vector<double>>();
    a.fisher.sample_count = doc.at("fisher_samples").get<std::size_t>();
    a.lambda = doc.at("lambda").get<double>();
    a.task_tag = doc.value("task_tag", "");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad EWC anchor: ") + e.what());
  }
  a.validate();
  return a;
}

double ewc_penalty(std::span<const double> params, const EwcAnchor& anchor,
                   std::span<double> grad) {
  const std::size_t n = anchor.theta_star.size();
  if (params.size() != n || anchor.fisher.values.size() != n) {
    throw ShapeError("parameter vector does not match the EWC anchor");
  }
  if (!grad.empty() && grad.size() != n) throw ShapeError("gradient does not match the anchor");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = params[i] - anchor.theta_star[i];
    const double fd = anchor.fisher.values[i] * d;
    sum += fd * d;
    if (!grad.empty()) grad[i] += anchor.lambda * fd;
  }
  return 0.5 * anchor.lambda * sum;
}

double ewc_loss(std::span<const double> params, double base_loss, const EwcAnchor& anchor) {
  return base_loss + ewc_penalty(params, anchor);
}

nn::Penalty make_penalty(const EwcAnchor& anchor) {
  return [&anchor](std::span<const double> params, std::span<double> grad) {
    return ewc_penalty(params, anchor, grad);
  };
}

namespace detail {

std::vector<std::size_t> sample_indices(std::size_t count, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> all(count);
  std::iota(all.begin(), all.end(), 0);
  if (n >= count) return all;
  std::vector<std::size_t> out;
  out.reserve(n);
  std::mt19937_64 rng(seed);
  std::sample(all.begin(), all.end(), std::back_inserter(out), n, rng);
  return out;
}

}  // namespace detail

}  // namespace cedlog::ewc
