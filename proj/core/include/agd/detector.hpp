#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace agd {

/// Row-major feature matrix with one row per example.
struct FeatureMatrix {
  std::vector<std::vector<double>> rows;

  std::size_t size() const noexcept { return rows.size(); }
  std::size_t width() const noexcept { return rows.empty() ? 0 : rows.front().size(); }
};

struct ForestConfig {
  std::size_t tree_count = 30;
  std::size_t max_depth = 8;
  std::size_t min_samples_leaf = 2;
  std::size_t feature_subsample = 0;  ///< features tried per split; 0 = round(sqrt(d))
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

void validate(const ForestConfig& config);

/// Binary tree stored as flat arrays. Internal nodes send x[feature] <=
/// threshold to `left`; leaves have feature == -1 and hold P(adversarial).
struct DecisionTree {
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<double> leaf_adversarial;  ///< P(label 1); P(label 0) = 1 - value

  std::size_t node_count() const noexcept { return feature.size(); }
  bool is_leaf(std::size_t node) const { return feature[node] < 0; }
  double score(std::span<const double> x) const;
  std::size_t depth() const;
};

/// Random forest over binary labels {0 = benign, 1 = adversarial}.
class Forest {
 public:
  Forest(ForestConfig config, std::size_t feature_count, std::vector<DecisionTree> trees);

  const ForestConfig& config() const noexcept { return config_; }
  std::size_t feature_count() const noexcept { return feature_count_; }
  const std::vector<DecisionTree>& trees() const noexcept { return trees_; }

  /// Mean over trees of the leaf adversarial probability; in [0, 1].
  double score(std::span<const double> x) const;
  std::vector<double> score_all(const FeatureMatrix& x) const;

 private:
  ForestConfig config_;
  std::size_t feature_count_;
  std::vector<DecisionTree> trees_;
};

/// Grows one CART tree on the given rows (indices into x, repeats allowed).
/// Splits minimise weighted Gini impurity over axis-aligned thresholds at
/// midpoints of consecutive distinct values; ties keep the lowest feature,
/// then the lowest threshold. A node splits only if impurity strictly drops.
DecisionTree grow_tree(const FeatureMatrix& x, std::span<const int> labels,
                       std::span<const std::size_t> rows, const ForestConfig& config,
                       std::uint64_t seed);

/// Rows are first put into a canonical (lexicographic) order so the result
/// does not depend on the order of the training rows; bootstrap samples are
/// then drawn over canonical positions with per-tree seeds.
Forest fit(const FeatureMatrix& x, std::span<const int> labels, const ForestConfig& config);

enum class ThresholdCriterion { Youden, FprAt };

struct ThresholdResult {
  double threshold = 0.0;  ///< adversarial iff score > threshold
  double tpr = 0.0;
  double fpr = 0.0;
  bool degenerate = false;
  std::string warning;
};

/// Youden: maximises TPR - FPR over midpoints of the pooled sorted scores.
/// FprAt: smallest threshold whose benign false-positive rate is <= target.
ThresholdResult choose_threshold(std::span<const double> benign, std::span<const double> adversarial,
                                 ThresholdCriterion criterion, double target_fpr = 0.05);

inline constexpr int kForestFormatVersion = 1;

void save_forest(const Forest& forest, const std::filesystem::path& path);
Forest load_forest(const std::filesystem::path& path);

}  // namespace agd
