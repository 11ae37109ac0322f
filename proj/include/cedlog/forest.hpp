#pragma once

// Random forest used only for its impurity-based feature importances.
// Features are integer codes; splits are thresholds on the code order.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace cedlog::features {

struct ForestConfig {
  std::size_t trees = 100;
  std::size_t max_depth = 12;
  std::optional<std::size_t> features_per_split;  // default: round(sqrt(n_features))
  std::size_t min_samples_split = 2;
  std::uint64_t seed = 42;
  std::size_t threads = 0;  // 0: hardware concurrency
};

// Column-major table of integer-coded features with binary labels.
struct CodedTable {
  std::vector<std::vector<std::int32_t>> columns;
  std::vector<int> labels;

  std::size_t rows() const { return labels.size(); }
};

// Mean decrease in entropy impurity per column, each tree's vector normalized
// to sum 1, averaged over trees, normalized again. Rows are put into canonical
// order first, so the result does not depend on the input row order.
// Throws Error when fewer than two classes are present or no column carries
// any information.
std::vector<double> forest_importance(const CodedTable& table, const ForestConfig& config);

// Shannon entropy (bits) of a binary label distribution.
double binary_entropy(std::size_t positives, std::size_t total);

}  // namespace cedlog::features
