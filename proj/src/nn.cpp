#include "cedlog/nn.hpp"

#include "cedlog/partition.hpp"

#include <thread>

namespace cedlog::nn {

using Eigen::Index;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using CMat = Eigen::Map<const Mat>;
using CVec = Eigen::Map<const Vec>;
using MMat = Eigen::Map<Mat>;
using MVec = Eigen::Map<Vec>;
using nlohmann::json;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double bce_with_logits(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

namespace {

Index idx(std::size_t v) { return static_cast<Index>(v); }

// Uniform(-bound, bound) with bound = sqrt(6 / fan_in); biases stay zero.
void init_uniform(std::span<double> out, std::size_t fan_in, std::mt19937_64& rng) {
  if (fan_in == 0) return;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : out) v = dist(rng);
}

struct MlpLayout {
  std::size_t w1, b1, g1, be1, w2, b2, g2, be2, w3, b3, total;

  explicit MlpLayout(std::size_t xd) {
    constexpr std::size_t h1 = MlpModel::kHidden1, h2 = MlpModel::kHidden2;
    w1 = 0;
    b1 = w1 + h1 * xd;
    g1 = b1 + h1;
    be1 = g1 + h1;
    w2 = be1 + h1;
    b2 = w2 + h2 * h1;
    g2 = b2 + h2;
    be2 = g2 + h2;
    w3 = be2 + h2;
    b3 = w3 + h2;
    total = b3 + 1;
  }
};

struct BnCache {
  RowVec mean, var, inv_std;
  Mat xhat;
};

Mat bn_forward(const Mat& z, const CVec& gamma, const CVec& beta, Mode mode, const double* rmean,
               const double* rvar, BnCache& c) {
  const Index h = z.cols();
  if (mode == Mode::Train) {
    c.mean = z.colwise().mean();
    c.var = (z.rowwise() - c.mean).array().square().colwise().mean();
  } else {
    c.mean = Eigen::Map<const RowVec>(rmean, h);
    c.var = Eigen::Map<const RowVec>(rvar, h);
  }
  c.inv_std = (c.var.array() + MlpModel::kBnEpsilon).rsqrt();
  c.xhat = ((z.rowwise() - c.mean).array().rowwise() * c.inv_std.array()).matrix();
  Mat y = (c.xhat.array().rowwise() * gamma.transpose().array()).matrix();
  y.rowwise() += beta.transpose();
  return y;
}

Mat bn_backward(const Mat& dy, const CVec& gamma, Mode mode, const BnCache& c, MVec dgamma,
                MVec dbeta) {
  dgamma = (dy.array() * c.xhat.array()).colwise().sum().transpose();
  dbeta = dy.colwise().sum().transpose();
  const Mat dxhat = (dy.array().rowwise() * gamma.transpose().array()).matrix();
  if (mode == Mode::Infer) return (dxhat.array().rowwise() * c.inv_std.array()).matrix();
  const double b = static_cast<double>(dy.rows());
  const RowVec sum_d = dxhat.colwise().sum();
  const RowVec sum_dx = (dxhat.array() * c.xhat.array()).colwise().sum();
  Eigen::ArrayXXd t = b * dxhat.array();
  t.rowwise() -= sum_d.array();
  t -= c.xhat.array().rowwise() * sum_dx.array();
  t.rowwise() *= (c.inv_std.array() / b);
  return t.matrix();
}

Mat relu(const Mat& m) { return m.cwiseMax(0.0); }

Mat relu_mask(const Mat& pre, const Mat& d) {
  return (pre.array() > 0.0).select(d, Mat::Zero(d.rows(), d.cols()));
}

double weighted_loss(const Vec& logits, std::span<const double> labels,
                     std::span<const double> weights, Vec& dlogits) {
  const Index n = logits.size();
  double wsum = 0.0;
  for (Index i = 0; i < n; ++i) wsum += weights[static_cast<std::size_t>(i)];
  if (!(wsum > 0.0)) throw InvalidArgument("sample weights must sum to a positive value");
  double loss = 0.0;
  dlogits.resize(n);
  for (Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    loss += weights[k] * bce_with_logits(logits[i], labels[k]);
    dlogits[i] = weights[k] * (sigmoid(logits[i]) - labels[k]) / wsum;
  }
  return loss / wsum;
}

void check_batch(std::size_t n, std::span<const double> labels, std::span<const double> weights) {
  if (n == 0) throw InvalidArgument("empty batch");
  if (labels.size() != n || weights.size() != n) {
    throw ShapeError("labels and weights must match the batch size");
  }
}

std::size_t worker_count(std::size_t items) {
  const std::size_t hw = std::max<unsigned>(1, std::thread::hardware_concurrency());
  return std::clamp<std::size_t>(hw, 1, std::max<std::size_t>(items, 1));
}

}  // namespace

// ---------------------------------------------------------------------- MLP

MlpModel::MlpModel(std::size_t x_dim, std::uint64_t seed) : x_dim_(x_dim), seed_(seed) {
  const MlpLayout L(x_dim);
  theta_.assign(L.total, 0.0);
  std::mt19937_64 rng(seed);
  std::span<double> th(theta_);
  init_uniform(th.subspan(L.w1, kHidden1 * x_dim), x_dim, rng);
  init_uniform(th.subspan(L.w2, kHidden2 * kHidden1), kHidden1, rng);
  init_uniform(th.subspan(L.w3, kHidden2), kHidden2, rng);
  std::fill(theta_.begin() + static_cast<std::ptrdiff_t>(L.g1),
            theta_.begin() + static_cast<std::ptrdiff_t>(L.be1), 1.0);
  std::fill(theta_.begin() + static_cast<std::ptrdiff_t>(L.g2),
            theta_.begin() + static_cast<std::ptrdiff_t>(L.be2), 1.0);
  running_.assign(2 * (kHidden1 + kHidden2), 0.0);
  std::fill(running_.begin() + kHidden1, running_.begin() + 2 * kHidden1, 1.0);
  std::fill(running_.begin() + 2 * kHidden1 + kHidden2, running_.end(), 1.0);
}

void MlpModel::set_parameters(std::span<const double> values) {
  if (values.size() != theta_.size()) throw ShapeError("MLP parameter count mismatch");
  std::copy(values.begin(), values.end(), theta_.begin());
}

void MlpModel::set_running_stats(std::span<const double> values) {
  if (values.size() != running_.size()) throw ShapeError("MLP running statistics size mismatch");
  for (std::size_t i = 0; i < kHidden1; ++i) {
    if (!(values[kHidden1 + i] > 0.0)) throw InvalidArgument("running variance must be > 0");
  }
  for (std::size_t i = 0; i < kHidden2; ++i) {
    if (!(values[2 * kHidden1 + kHidden2 + i] > 0.0)) {
      throw InvalidArgument("running variance must be > 0");
    }
  }
  std::copy(values.begin(), values.end(), running_.begin());
}

Mat MlpModel::stack(std::span<const FeatureBundle* const> batch, std::size_t x_dim) {
  Mat x(idx(batch.size()), idx(x_dim));
  for (std::size_t r = 0; r < batch.size(); ++r) {
    if (batch[r]->x.size() != x_dim) {
      throw ShapeError("feature vector has " + std::to_string(batch[r]->x.size()) +
                       " entries, model expects " + std::to_string(x_dim));
    }
    for (std::size_t c = 0; c < x_dim; ++c) x(idx(r), idx(c)) = batch[r]->x[c];
  }
  return x;
}

double MlpModel::run(const Mat& x, std::span<const double> labels, std::span<const double> weights,
                     Mode mode, std::span<double> grad, Moments* moments, Vec* probs) const {
  if (static_cast<std::size_t>(x.cols()) != x_dim_) {
    throw ShapeError("input has " + std::to_string(x.cols()) + " columns, model expects " +
                     std::to_string(x_dim_));
  }
  if (x.rows() == 0) throw InvalidArgument("empty batch");
  const MlpLayout L(x_dim_);
  const double* th = theta_.data();
  const Index h1 = idx(kHidden1), h2 = idx(kHidden2);
  CMat w1(th + L.w1, h1, idx(x_dim_));
  CVec b1(th + L.b1, h1), g1(th + L.g1, h1), be1(th + L.be1, h1);
  CMat w2(th + L.w2, h2, h1);
  CVec b2(th + L.b2, h2), g2(th + L.g2, h2), be2(th + L.be2, h2);
  CMat w3(th + L.w3, 1, h2);
  const double b3 = th[L.b3];

  const double* rm1 = running_.data();
  const double* rv1 = rm1 + kHidden1;
  const double* rm2 = rv1 + kHidden1;
  const double* rv2 = rm2 + kHidden2;

  BnCache c1, c2;
  Mat z1 = x * w1.transpose();
  z1.rowwise() += b1.transpose();
  const Mat y1 = bn_forward(z1, g1, be1, mode, rm1, rv1, c1);
  const Mat a1 = relu(y1);
  Mat z2 = a1 * w2.transpose();
  z2.rowwise() += b2.transpose();
  const Mat y2 = bn_forward(z2, g2, be2, mode, rm2, rv2, c2);
  const Mat a2 = relu(y2);
  Vec logits = a2 * w3.transpose();
  logits.array() += b3;

  if (probs) *probs = logits.unaryExpr([](double z) { return sigmoid(z); });
  if (moments && mode == Mode::Train) {
    moments->mean1 = c1.mean;
    moments->var1 = c1.var;
    moments->mean2 = c2.mean;
    moments->var2 = c2.var;
  }
  if (labels.empty()) return 0.0;

  Vec dlogits;
  const double loss = weighted_loss(logits, labels, weights, dlogits);
  if (grad.empty()) return loss;
  if (grad.size() != theta_.size()) throw ShapeError("gradient buffer size mismatch");
  std::fill(grad.begin(), grad.end(), 0.0);
  double* gd = grad.data();

  MMat(gd + L.w3, 1, h2) = dlogits.transpose() * a2;
  gd[L.b3] = dlogits.sum();
  const Mat da2 = dlogits * w3;
  const Mat dy2 = relu_mask(y2, da2);
  const Mat dz2 = bn_backward(dy2, g2, mode, c2, MVec(gd + L.g2, h2), MVec(gd + L.be2, h2));
  MMat(gd + L.w2, h2, h1) = dz2.transpose() * a1;
  MVec(gd + L.b2, h2) = dz2.colwise().sum().transpose();
  const Mat da1 = dz2 * w2;
  const Mat dy1 = relu_mask(y1, da1);
  const Mat dz1 = bn_backward(dy1, g1, mode, c1, MVec(gd + L.g1, h1), MVec(gd + L.be1, h1));
  if (x_dim_ > 0) MMat(gd + L.w1, h1, idx(x_dim_)) = dz1.transpose() * x;
  MVec(gd + L.b1, h1) = dz1.colwise().sum().transpose();
  return loss;
}

void MlpModel::absorb(const Moments& m, std::size_t batch) {
  // Running variance tracks the unbiased batch variance.
  const double corr = batch > 1 ? static_cast<double>(batch) / static_cast<double>(batch - 1) : 1.0;
  auto blend = [&](double* run, const RowVec& v, std::size_t n, double scale) {
    for (std::size_t i = 0; i < n; ++i) {
      run[i] = kBnMomentum * run[i] + (1.0 - kBnMomentum) * v[idx(i)] * scale;
    }
  };
  double* rm1 = running_.data();
  double* rv1 = rm1 + kHidden1;
  double* rm2 = rv1 + kHidden1;
  double* rv2 = rm2 + kHidden2;
  blend(rm1, m.mean1, kHidden1, 1.0);
  blend(rv1, m.var1, kHidden1, corr);
  blend(rm2, m.mean2, kHidden2, 1.0);
  blend(rv2, m.var2, kHidden2, corr);
  // Keep the variance strictly positive when a batch is degenerate.
  for (std::size_t i = 0; i < kHidden1; ++i) rv1[i] = std::max(rv1[i], 1e-12);
  for (std::size_t i = 0; i < kHidden2; ++i) rv2[i] = std::max(rv2[i], 1e-12);
}

Vec MlpModel::forward(const Mat& x, Mode mode) {
  Vec probs;
  Moments m;
  run(x, {}, {}, mode, {}, &m, &probs);
  if (mode == Mode::Train) absorb(m, static_cast<std::size_t>(x.rows()));
  return probs;
}

Vec MlpModel::predict(const Mat& x) const {
  Vec probs;
  run(x, {}, {}, Mode::Infer, {}, nullptr, &probs);
  return probs;
}

std::vector<double> MlpModel::predict(std::span<const FeatureBundle> data) const {
  if (data.empty()) return {};
  std::vector<const FeatureBundle*> ptrs;
  ptrs.reserve(data.size());
  for (const auto& b : data) ptrs.push_back(&b);
  const Vec p = predict(stack(ptrs, x_dim_));
  return {p.data(), p.data() + p.size()};
}

double MlpModel::loss_and_gradient(std::span<const FeatureBundle* const> batch,
                                   std::span<const double> labels, std::span<const double> weights,
                                   Mode mode, std::span<double> grad, bool update_stats) {
  check_batch(batch.size(), labels, weights);
  Moments m;
  const double loss = run(stack(batch, x_dim_), labels, weights, mode, grad, &m, nullptr);
  if (update_stats && mode == Mode::Train) absorb(m, batch.size());
  return loss;
}

double MlpModel::loss(std::span<const FeatureBundle* const> batch, std::span<const double> labels,
                      std::span<const double> weights, Mode mode) const {
  check_batch(batch.size(), labels, weights);
  return run(stack(batch, x_dim_), labels, weights, mode, {}, nullptr, nullptr);
}

Mat MlpModel::normalized_hidden1(const Mat& x) const {
  const MlpLayout L(x_dim_);
  const double* th = theta_.data();
  CMat w1(th + L.w1, idx(kHidden1), idx(x_dim_));
  CVec b1(th + L.b1, idx(kHidden1));
  Mat z1 = x * w1.transpose();
  z1.rowwise() += b1.transpose();
  BnCache c;
  const Vec ones = Vec::Ones(idx(kHidden1));
  const Vec zeros = Vec::Zero(idx(kHidden1));
  bn_forward(z1, CVec(ones.data(), ones.size()), CVec(zeros.data(), zeros.size()), Mode::Train,
             nullptr, nullptr, c);
  return c.xhat;
}

// ---------------------------------------------------------------------- GCN

namespace {

struct GcnLayout {
  std::size_t wc1, bc1, wc2, bc2, wd1, bd1, wd2, bd2, wo, bo, total;

  explicit GcnLayout(std::size_t d) {
    constexpr std::size_t c = GcnModel::kConv, h1 = GcnModel::kDense1, h2 = GcnModel::kDense2;
    wc1 = 0;
    bc1 = wc1 + d * c;
    wc2 = bc1 + c;
    bc2 = wc2 + c * c;
    wd1 = bc2 + c;
    bd1 = wd1 + h1 * c;
    wd2 = bd1 + h1;
    bd2 = wd2 + h2 * h1;
    wo = bd2 + h2;
    bo = wo + h2;
    total = bo + 1;
  }
};

}  // namespace

Mat normalized_adjacency(std::size_t nodes,
                         std::span<const std::pair<std::size_t, std::size_t>> edges) {
  Mat a = Mat::Identity(idx(nodes), idx(nodes));
  for (const auto& [u, v] : edges) {
    if (u >= nodes || v >= nodes) throw ShapeError("edge endpoint out of range");
    if (u == v) continue;
    a(idx(u), idx(v)) = 1.0;
    a(idx(v), idx(u)) = 1.0;
  }
  const Vec inv_sqrt = a.rowwise().sum().array().rsqrt();
  return inv_sqrt.asDiagonal() * a * inv_sqrt.asDiagonal();
}

GcnModel::GcnModel(std::size_t embed_dim, std::uint64_t seed) : dim_(embed_dim), seed_(seed) {
  if (embed_dim == 0) throw InvalidArgument("embedding dimension must be positive");
  const GcnLayout L(dim_);
  theta_.assign(L.total, 0.0);
  std::mt19937_64 rng(seed);
  std::span<double> th(theta_);
  init_uniform(th.subspan(L.wc1, dim_ * kConv), dim_, rng);
  init_uniform(th.subspan(L.wc2, kConv * kConv), kConv, rng);
  init_uniform(th.subspan(L.wd1, kDense1 * kConv), kConv, rng);
  init_uniform(th.subspan(L.wd2, kDense2 * kDense1), kDense1, rng);
  init_uniform(th.subspan(L.wo, kDense2), kDense2, rng);
}

void GcnModel::set_parameters(std::span<const double> values) {
  if (values.size() != theta_.size()) throw ShapeError("GCN parameter count mismatch");
  std::copy(values.begin(), values.end(), theta_.begin());
}

namespace {

void check_graph(const EventGraph& g, std::size_t dim) {
  if (g.nodes.empty() || g.node_features.rows() == 0) throw ShapeError("graph has no nodes");
  if (static_cast<std::size_t>(g.node_features.rows()) != g.nodes.size()) {
    throw ShapeError("node feature rows do not match node count");
  }
  if (static_cast<std::size_t>(g.node_features.cols()) != dim) {
    throw ShapeError("node features have width " + std::to_string(g.node_features.cols()) +
                     ", model expects " + std::to_string(dim));
  }
}

}  // namespace

Mat GcnModel::conv1(const Mat& adjacency, const Mat& h) const {
  const GcnLayout L(dim_);
  CMat w(theta_.data() + L.wc1, idx(dim_), idx(kConv));
  CVec b(theta_.data() + L.bc1, idx(kConv));
  Mat p = adjacency * h * w;
  p.rowwise() += b.transpose();
  return relu(p);
}

Mat GcnModel::conv2(const Mat& adjacency, const Mat& h) const {
  const GcnLayout L(dim_);
  CMat w(theta_.data() + L.wc2, idx(kConv), idx(kConv));
  CVec b(theta_.data() + L.bc2, idx(kConv));
  Mat p = adjacency * h * w;
  p.rowwise() += b.transpose();
  return relu(p);
}

Vec GcnModel::pooled(const EventGraph& g) const {
  check_graph(g, dim_);
  const Mat a = normalized_adjacency(g.nodes.size(), g.edges);
  return conv2(a, conv1(a, g.node_features)).colwise().mean().transpose();
}

double GcnModel::head(const Vec& pooled) const {
  const GcnLayout L(dim_);
  const double* th = theta_.data();
  CMat wd1(th + L.wd1, idx(kDense1), idx(kConv));
  CVec bd1(th + L.bd1, idx(kDense1));
  CMat wd2(th + L.wd2, idx(kDense2), idx(kDense1));
  CVec bd2(th + L.bd2, idx(kDense2));
  CVec wo(th + L.wo, idx(kDense2));
  const Vec a3 = (wd1 * pooled + bd1).cwiseMax(0.0);
  const Vec a4 = (wd2 * a3 + bd2).cwiseMax(0.0);
  return sigmoid(wo.dot(a4) + th[L.bo]);
}

double GcnModel::forward(const EventGraph& g) const { return head(pooled(g)); }

std::vector<double> GcnModel::predict(std::span<const FeatureBundle> data) const {
  return pipeline::map_partitions(
      data,
      [this](std::span<const FeatureBundle> part) {
        std::vector<double> out;
        out.reserve(part.size());
        for (const auto& b : part) out.push_back(forward(b.graph));
        return out;
      },
      worker_count(data.size()));
}

double GcnModel::graph_pass(const EventGraph& g, double label, double scale, std::span<double> grad,
                            double* prob) const {
  check_graph(g, dim_);
  const GcnLayout L(dim_);
  const double* th = theta_.data();
  const Index c = idx(kConv), h1 = idx(kDense1), h2 = idx(kDense2), d = idx(dim_);
  CMat wc1(th + L.wc1, d, c);
  CVec bc1(th + L.bc1, c);
  CMat wc2(th + L.wc2, c, c);
  CVec bc2(th + L.bc2, c);
  CMat wd1(th + L.wd1, h1, c);
  CVec bd1(th + L.bd1, h1);
  CMat wd2(th + L.wd2, h2, h1);
  CVec bd2(th + L.bd2, h2);
  CVec wo(th + L.wo, h2);

  const Index n = idx(g.nodes.size());
  const Mat a = normalized_adjacency(g.nodes.size(), g.edges);
  const Mat ah0 = a * g.node_features;
  Mat p1 = ah0 * wc1;
  p1.rowwise() += bc1.transpose();
  const Mat hid1 = relu(p1);
  const Mat ah1 = a * hid1;
  Mat p2 = ah1 * wc2;
  p2.rowwise() += bc2.transpose();
  const Mat hid2 = relu(p2);
  const Vec pooled = hid2.colwise().mean().transpose();
  const Vec p3 = wd1 * pooled + bd1;
  const Vec a3 = p3.cwiseMax(0.0);
  const Vec p4 = wd2 * a3 + bd2;
  const Vec a4 = p4.cwiseMax(0.0);
  const double logit = wo.dot(a4) + th[L.bo];
  if (prob) *prob = sigmoid(logit);
  const double loss = bce_with_logits(logit, label);
  if (grad.empty()) return loss;

  double* gd = grad.data();
  const double dz = scale * (sigmoid(logit) - label);
  MVec(gd + L.wo, h2) += dz * a4;
  gd[L.bo] += dz;
  const Vec dp4 = (p4.array() > 0.0).select(dz * wo, 0.0);
  MMat(gd + L.wd2, h2, h1) += dp4 * a3.transpose();
  MVec(gd + L.bd2, h2) += dp4;
  const Vec dp3 = (p3.array() > 0.0).select(wd2.transpose() * dp4, 0.0);
  MMat(gd + L.wd1, h1, c) += dp3 * pooled.transpose();
  MVec(gd + L.bd1, h1) += dp3;
  const Vec dpooled = wd1.transpose() * dp3;
  const Mat dhid2 = Mat::Ones(n, 1) * (dpooled.transpose() / static_cast<double>(n));
  const Mat dp2 = relu_mask(p2, dhid2);
  MMat(gd + L.wc2, c, c) += ah1.transpose() * dp2;
  MVec(gd + L.bc2, c) += dp2.colwise().sum().transpose();
  const Mat dhid1 = a.transpose() * dp2 * wc2.transpose();
  const Mat dp1 = relu_mask(p1, dhid1);
  MMat(gd + L.wc1, d, c) += ah0.transpose() * dp1;
  MVec(gd + L.bc1, c) += dp1.colwise().sum().transpose();
  return loss;
}

double GcnModel::loss_and_gradient(std::span<const FeatureBundle* const> batch,
                                   std::span<const double> labels, std::span<const double> weights,
                                   Mode, std::span<double> grad, bool) {
  check_batch(batch.size(), labels, weights);
  if (!grad.empty() && grad.size() != theta_.size()) throw ShapeError("gradient buffer size mismatch");
  std::fill(grad.begin(), grad.end(), 0.0);
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (!(wsum > 0.0)) throw InvalidArgument("sample weights must sum to a positive value");
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    loss += weights[i] * graph_pass(batch[i]->graph, labels[i], weights[i] / wsum, grad, nullptr);
  }
  return loss / wsum;
}

double GcnModel::loss(std::span<const FeatureBundle* const> batch, std::span<const double> labels,
                      std::span<const double> weights, Mode) const {
  check_batch(batch.size(), labels, weights);
  double wsum = 0.0, loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    wsum += weights[i];
    loss += weights[i] * graph_pass(batch[i]->graph, labels[i], 0.0, {}, nullptr);
  }
  return loss / wsum;
}

// ------------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning rate must be > 0");
  }
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
}

json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"optimizer", optimizer == Optimizer::Adam ? "adam" : "sgd"},
          {"seed", seed},
          {"class_weighting", class_weighting},
          {"shuffle", shuffle}};
}

TrainConfig TrainConfig::from_json(const json& doc) {
  TrainConfig c;
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  c.epochs = doc.value("epochs", c.epochs);
  c.batch_size = doc.value("batch_size", c.batch_size);
  const std::string opt = doc.value("optimizer", std::string("adam"));
  if (opt == "adam") {
    c.optimizer = Optimizer::Adam;
  } else if (opt == "sgd" || opt == "gd") {
    c.optimizer = Optimizer::GradientDescent;
  } else {
    throw InvalidArgument("unknown optimizer '" + opt + "'");
  }
  c.seed = doc.value("seed", c.seed);
  c.class_weighting = doc.value("class_weighting", c.class_weighting);
  c.shuffle = doc.value("shuffle", c.shuffle);
  c.validate();
  return c;
}

std::array<double, 2> class_weights(std::span<const FeatureBundle> data, bool balanced) {
  if (!balanced) return {1.0, 1.0};
  std::array<std::size_t, 2> counts{0, 0};
  for (const auto& b : data) {
    if (b.label) ++counts[*b.label != 0];
  }
  if (counts[0] == 0 || counts[1] == 0) return {1.0, 1.0};
  const double n = static_cast<double>(counts[0] + counts[1]);
  return {n / (2.0 * static_cast<double>(counts[0])), n / (2.0 * static_cast<double>(counts[1]))};
}

double accuracy(std::span<const double> probs, std::span<const FeatureBundle> data) {
  if (probs.size() != data.size() || data.empty()) throw ShapeError("accuracy needs matching inputs");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int pred = probs[i] > 0.5 ? 1 : 0;
    hits += data[i].label && *data[i].label == pred;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// --------------------------------------------------------------------- json

json to_json(const MlpModel& m) {
  return {{"x_dim", m.x_dim()},
          {"seed", m.seed()},
          {"theta", std::vector<double>(m.parameters().begin(), m.parameters().end())},
          {"running", m.running_stats()}};
}

MlpModel mlp_from_json(const json& doc) {
  MlpModel m(doc.at("x_dim").get<std::size_t>(), doc.at("seed").get<std::uint64_t>());
  m.set_parameters(doc.at("theta").get<std::vector<double>>());
  m.set_running_stats(doc.at("running").get<std::vector<double>>());
  return m;
}

json to_json(const GcnModel& m) {
  return {{"embed_dim", m.embed_dim()}, {"seed", m.seed()}, {"theta", std::vector<double>(m.parameters().begin(), m.parameters().end())}};
}

GcnModel gcn_from_json(const json& doc) {
  GcnModel m(doc.at("embed_dim").get<std::size_t>(), doc.at("seed").get<std::uint64_t>());
  m.set_parameters(doc.at("theta").get<std::vector<double>>());
  return m;
}

}  // namespace cedlog::nn
