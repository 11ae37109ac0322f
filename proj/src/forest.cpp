#include "cedlog/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "cedlog/error.hpp"
#include "cedlog/partition.hpp"

namespace cedlog::features {

double binary_entropy(std::size_t positives, std::size_t total) {
  if (total == 0 || positives == 0 || positives == total) return 0.0;
  const double p = static_cast<double>(positives) / static_cast<double>(total);
  return -(p * std::log2(p) + (1.0 - p) * std::log2(1.0 - p));
}

namespace {

struct Split {
  std::size_t feature = 0;
  std::int32_t threshold = 0;  // left: value <= threshold
  double gain = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const CodedTable& t, const ForestConfig& cfg, std::size_t mtry, std::uint64_t seed)
      : table_(t), cfg_(cfg), mtry_(mtry), rng_(seed), importance_(t.columns.size(), 0.0) {}

  std::vector<double> grow() {
    const std::size_t n = table_.rows();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> sample(n);
    for (auto& s : sample) s = pick(rng_);
    total_ = static_cast<double>(n);

    struct Frame {
      std::size_t begin, end, depth;
    };
    std::vector<Frame> stack{{0, n, 0}};
    samples_ = std::move(sample);
    while (!stack.empty()) {
      const Frame f = stack.back();
      stack.pop_back();
      const std::size_t count = f.end - f.begin;
      if (f.depth >= cfg_.max_depth || count < cfg_.min_samples_split) continue;
      std::size_t pos = 0;
      for (std::size_t i = f.begin; i < f.end; ++i) pos += table_.labels[samples_[i]] == 1;
      if (pos == 0 || pos == count) continue;

      const auto split = best_split(f.begin, f.end, pos);
      if (!split) continue;
      importance_[split->feature] += static_cast<double>(count) / total_ * split->gain;

      const auto& col = table_.columns[split->feature];
      auto mid = std::partition(samples_.begin() + f.begin, samples_.begin() + f.end,
                                [&](std::size_t r) { return col[r] <= split->threshold; });
      const auto m = static_cast<std::size_t>(mid - samples_.begin());
      stack.push_back({m, f.end, f.depth + 1});
      stack.push_back({f.begin, m, f.depth + 1});
    }
    return importance_;
  }

 private:
  std::optional<Split> best_split(std::size_t begin, std::size_t end, std::size_t positives) {
    const std::size_t count = end - begin;
    const double parent = binary_entropy(positives, count);
    std::vector<std::size_t> order(table_.columns.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);

    std::optional<Split> best;
    std::size_t evaluated = 0;
    std::vector<std::pair<std::int32_t, int>> vals(count);
    for (std::size_t f : order) {
      if (evaluated >= mtry_) break;
      const auto& col = table_.columns[f];
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t r = samples_[begin + i];
        vals[i] = {col[r], table_.labels[r]};
      }
      std::sort(vals.begin(), vals.end());
      if (vals.front().first == vals.back().first) continue;  // constant in node
      ++evaluated;

      std::size_t left_n = 0, left_pos = 0;
      for (std::size_t i = 0; i + 1 < count; ++i) {
        ++left_n;
        left_pos += vals[i].second == 1;
        if (vals[i].first == vals[i + 1].first) continue;
        const std::size_t right_n = count - left_n;
        const double h = (static_cast<double>(left_n) * binary_entropy(left_pos, left_n) +
                          static_cast<double>(right_n) *
                              binary_entropy(positives - left_pos, right_n)) /
                         static_cast<double>(count);
        const double gain = parent - h;
        if (gain > 1e-12 && (!best || gain > best->gain)) best = Split{f, vals[i].first, gain};
      }
    }
    return best;
  }

  const CodedTable& table_;
  const ForestConfig& cfg_;
  std::size_t mtry_;
  std::mt19937_64 rng_;
  std::vector<double> importance_;
  std::vector<std::size_t> samples_;
  double total_ = 1.0;
};

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

CodedTable canonical(const CodedTable& t) {
  const std::size_t n = t.rows();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    for (const auto& col : t.columns) {
      if (col[a] != col[b]) return col[a] < col[b];
    }
    return t.labels[a] < t.labels[b];
  });
  CodedTable out;
  out.columns.assign(t.columns.size(), std::vector<std::int32_t>(n));
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) out.columns[c][i] = t.columns[c][idx[i]];
    out.labels[i] = t.labels[idx[i]];
  }
  return out;
}

}  // namespace

std::vector<double> forest_importance(const CodedTable& input, const ForestConfig& config) {
  if (input.columns.empty()) throw InvalidArgument("importance needs at least one column");
  for (const auto& c : input.columns) {
    if (c.size() != input.rows()) throw ShapeError("column length differs from label count");
  }
  if (config.trees == 0) throw InvalidArgument("forest needs at least one tree");
  const std::size_t pos = static_cast<std::size_t>(
      std::count(input.labels.begin(), input.labels.end(), 1));
  if (pos == 0 || pos == input.rows()) {
    throw Error("importance undefined: training data has a single class");
  }

  const CodedTable table = canonical(input);
  const std::size_t nf = table.columns.size();
  const std::size_t mtry = config.features_per_split.value_or(std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(nf))))));

  std::size_t threads = config.threads ? config.threads : std::thread::hardware_concurrency();
  threads = std::clamp<std::size_t>(threads, 1, config.trees);

  auto per_thread = pipeline::run_partitions(
      config.trees, threads, [&](pipeline::PartitionRange r, std::size_t) {
        std::vector<std::vector<double>> out;
        for (std::size_t t = r.begin; t < r.end; ++t) {
          TreeBuilder builder(table, config, std::min(mtry, nf), mix(config.seed ^ mix(t)));
          out.push_back(builder.grow());
        }
        return out;
      });

  // Summed in tree order so the result does not depend on the thread count.
  std::vector<double> total(nf, 0.0);
  for (const auto& chunk : per_thread) {
    for (const auto& imp : chunk) {
      const double s = std::accumulate(imp.begin(), imp.end(), 0.0);
      if (s <= 0.0) continue;
      for (std::size_t f = 0; f < nf; ++f) total[f] += imp[f] / s;
    }
  }
  const double s = std::accumulate(total.begin(), total.end(), 0.0);
  if (s <= 0.0) throw Error("importance undefined: no column separates the classes");
  for (auto& v : total) v /= s;
  return total;
}

}  // namespace cedlog::features
