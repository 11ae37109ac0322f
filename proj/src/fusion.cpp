#include "cedlog/fusion.hpp"

#include <cmath>
#include <cstdio>

#include "cedlog/error.hpp"

namespace cedlog::fusion {

FusionWeights relative_scores(const features::WeightDictionary& w) {
  if (w.weights.empty()) throw InvalidArgument("weight dictionary is empty");
  double rest = 0.0, param = 0.0;
  for (const auto& [col, v] : w.weights) {
    if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("weight of '" + col + "' is invalid");
    (col == features::kParameterList ? param : rest) += v;
  }
  const double total = rest + param;
  if (total <= 0.0) throw InvalidArgument("all fusion weights are zero");
  return {rest / total, param / total};
}

double fuse(double p1, double p2, const FusionWeights& w) {
  auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!in_unit(p1) || !in_unit(p2)) throw InvalidArgument("probabilities must lie in [0, 1]");
  return p1 * w.s0 + p2 * w.s1;
}

int decide(double f) { return f > 0.5 ? 0 : 1; }

FusedPrediction fuse_anomaly_probs(double mlp_anomaly, double gcn_anomaly,
                                   const FusionWeights& w) {
  FusedPrediction out;
  out.p1 = 1.0 - mlp_anomaly;
  out.p2 = 1.0 - gcn_anomaly;
  out.f = fuse(out.p1, out.p2, w);
  out.y_hat = decide(out.f);
  return out;
}

MetricReport compute_metrics(std::span<const int> predictions, std::span<const int> labels,
                             int positive_class) {
  if (predictions.size() != labels.size()) {
    throw InvalidArgument("predictions and labels differ in length");
  }
  if (predictions.empty()) throw InvalidArgument("no predictions to evaluate");
  if (positive_class != 0 && positive_class != 1) {
    throw InvalidArgument("positive class must be 0 or 1");
  }
  MetricReport r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) throw InvalidArgument("labels must be 0 or 1");
    const bool pp = p == positive_class, yp = y == positive_class;
    if (pp && yp) ++r.tp;
    else if (pp) ++r.fp;
    else if (yp) ++r.fn;
    else ++r.tn;
  }
  auto ratio = [](std::size_t a, std::size_t b, bool& undefined) {
    undefined = b == 0;
    return undefined ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  bool dummy = false;
  r.accuracy = ratio(r.tp + r.tn, r.total(), dummy);
  r.precision = ratio(r.tp, r.tp + r.fp, r.precision_undefined);
  r.recall = ratio(r.tp, r.tp + r.fn, r.recall_undefined);
  r.fpr = ratio(r.fp, r.fp + r.tn, r.fpr_undefined);
  const double pr = r.precision + r.recall;
  r.f1 = pr > 0.0 ? 2.0 * r.precision * r.recall / pr : 0.0;
  return r;
}

nlohmann::json MetricReport::to_json() const {
  return {{"tp", tp},
          {"fp", fp},
          {"tn", tn},
          {"fn", fn},
          {"accuracy", accuracy},
          {"precision", precision},
          {"recall", recall},
          {"f1", f1},
          {"fpr", fpr},
          {"precision_undefined", precision_undefined}};
}

std::string MetricReport::table_row() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "Acc %.4f | Prec %.4f%s | F1 %.4f | Recall %.4f | FPR %.4f",
                accuracy, precision, precision_undefined ? "*" : "", f1, recall, fpr);
  return buf;
}

}  // namespace cedlog::fusion
