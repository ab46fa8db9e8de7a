#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "agd/agd_features.hpp"
#include "agd/attacks.hpp"
#include "agd/data.hpp"
#include "agd/detector.hpp"
#include "agd/metrics.hpp"
#include "agd/model.hpp"
#include "agd/serialization.hpp"

namespace agd {

/// Correctly classified, successfully attacked examples with their
/// adversarial counterparts.
struct PairedSet {
  std::vector<std::size_t> ids;
  std::vector<std::size_t> labels;
  std::vector<Tensor> benign;
  std::vector<Tensor> adversarial;
  std::vector<AttackResult> results;
  std::size_t considered = 0;  ///< examples in the input set
  std::size_t attacked = 0;    ///< correctly classified, hence attacked

  std::size_t size() const noexcept { return benign.size(); }
  double success_rate() const {
    return attacked ? static_cast<double>(size()) / static_cast<double>(attacked) : 0.0;
  }
};

/// attack(input, label, position) for the position-th example of a set.
using AttackFn = std::function<AttackResult(const Tensor&, std::size_t, std::size_t)>;

/// Keeps examples the model classifies correctly and the attack fools.
PairedSet filter_eligible(const TrainedModel& model, const LabeledSet& set, const AttackFn& attack,
                          std::size_t jobs = 1);

/// Attack closure for fgsm/pgd/boundary; example i uses seed
/// derive_seed(config.seed, i). `pool` seeds the boundary attack.
AttackFn make_attack(const TrainedModel& model, const AttackConfig& config,
                     std::vector<Tensor> pool = {});

/// A named grid of numbers. AUC tables hold values in [0, 1].
struct ReportTable {
  std::string name;
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> values;
  bool is_auc = true;

  double at(const std::string& row, const std::string& column) const;
  void set(const std::string& row, const std::string& column, double value);
  std::string to_csv() const;
};

struct ExperimentReport {
  std::string name;
  Json config;
  std::vector<ReportTable> tables;
  std::vector<std::pair<std::string, double>> metrics;
  double runtime_seconds = 0.0;  ///< not serialised; reports stay byte-stable

  const ReportTable& table(const std::string& table_name) const;
  double metric(const std::string& key) const;
  Json to_json() const;
};

struct ExperimentSettings {
  AgdConfig agd;
  ForestConfig forest;
  std::vector<AttackConfig> attacks;  ///< fgsm, pgd, boundary (first = transfer source)
  std::string baseline_layer = kLogitLayer;
  std::vector<double> rand1_sigmas{0.02, 0.05, 0.1};  ///< chosen on detector-train
  std::vector<std::size_t> k_values{1, 2, 3, 4, 5};
  std::vector<std::size_t> transform_counts{1, 2, 3};
  std::vector<double> mu_values{0.05, 0.1, 0.2};
  std::vector<double> step_values{0.0013, 0.005, 0.02};
  AttackConfig adaptive{AttackKind::AdaptivePgd, 0.1, 0.01, 100, 0, 2.0};
  std::size_t whitebox_examples = 200;
  std::size_t viz_transforms = 100;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
};

Json settings_to_json(const ExperimentSettings& settings);

/// Benign and adversarial feature vectors of one paired set.
struct FeatureSet {
  std::vector<AgdFeatureVector> benign;
  std::vector<AgdFeatureVector> adversarial;
};

/// Selects detector inputs from a full feature vector.
using FeatureSelector = std::function<std::vector<double>(const AgdFeatureVector&)>;

FeatureMatrix to_matrix(std::span<const AgdFeatureVector> benign,
                        std::span<const AgdFeatureVector> adversarial,
                        const FeatureSelector& select, std::vector<int>& labels);

/// Holds the model, splits and reference index for a desk-scale run, and
/// caches paired sets and features. Cache keys include the model fingerprint,
/// the attack config and the AGD config, so changing any of them recomputes.
class Experiment {
 public:
  Experiment(const TrainedModel& model, const DataSplits& splits, ExperimentSettings settings);

  const TrainedModel& model() const noexcept { return model_; }
  const ReferenceIndex& index() const noexcept { return index_; }
  const ExperimentSettings& settings() const noexcept { return settings_; }
  const AttackConfig& attack(const std::string& name) const;

  /// Paired set of a split ("detector-train" or "eval") under a named attack.
  const PairedSet& pairs(SplitTag split, const std::string& attack);
  /// Installs a paired set produced earlier (e.g. loaded from disk).
  void preload_pairs(SplitTag split, const std::string& attack, PairedSet set);

  /// Features of a paired set under an AGD config. The batch master seed is
  /// feature_seed(split, transform); the config's own perturbation seed is
  /// ignored.
  const FeatureSet& features(SplitTag split, const std::string& attack, const AgdConfig& agd,
                             std::size_t transform = 0);

  /// The default AGD config with K raised to cover every K in the sweeps.
  AgdConfig extraction_config() const;
  /// Batch master seed for a split and transformation index.
  std::uint64_t feature_seed(SplitTag split, std::size_t transform = 0) const;

  /// Trains on detector-train features of `train_attack`, returns eval AUC
  /// on `test_attack`.
  double detector_auc(const std::string& train_attack, const std::string& test_attack,
                      const AgdConfig& agd, const FeatureSelector& select);

  Forest train_detector(const std::string& attack, const AgdConfig& agd, const FeatureSelector& select);

  /// Rand-1 sigma with the best detector-train AUC for an attack.
  double select_rand1_sigma(const std::string& attack);
  std::vector<double> rand1_scores(std::span<const Tensor> images, double sigma, std::uint64_t seed) const;
  std::vector<double> median_scores(std::span<const Tensor> images) const;

  ExperimentReport run_detection();
  ExperimentReport sweep_k();
  ExperimentReport sweep_transform_count();
  ExperimentReport sweep_layers();
  ExperimentReport sweep_grid();
  ExperimentReport ablation_scores();
  ExperimentReport whitebox_eval();
  ExperimentReport consistency_viz(std::size_t n_transforms);
  /// Score distributions and one-sided Mann-Whitney tests for the score
  /// families on eval pairs of every gradient attack.
  ExperimentReport score_separation();

 private:
  std::string pair_key(SplitTag split, const std::string& attack) const;
  std::string feature_key(SplitTag split, const std::string& attack, const AgdConfig& agd,
                          std::size_t transform) const;
  const LabeledSet& split_set(SplitTag split) const;

  const TrainedModel& model_;
  const DataSplits& splits_;
  ExperimentSettings settings_;
  ReferenceIndex index_;
  std::map<std::string, PairedSet> pair_cache_;
  std::map<std::string, FeatureSet> feature_cache_;
};

/// Default selector: first `k` ranks, every extracted layer, all scores.
FeatureSelector select_k(std::size_t k, std::size_t layer_count, ScoreMask mask = {});

/// Per-transform table of (alpha_a, r, magnitude, angle) plus min-max
/// normalised alpha and r for one example.
ReportTable consistency_table(const TrainedModel& model, const Tensor& example,
                              const AgdConfig& agd,
                              const std::string& layer, std::size_t n_transforms,
                              std::uint64_t seed);

/// Every experiment, in a fixed order.
std::vector<ExperimentReport> run_all(Experiment& experiment);

}  // namespace agd
