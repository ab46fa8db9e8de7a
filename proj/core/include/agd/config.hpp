#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "agd/data.hpp"
#include "agd/experiments.hpp"
#include "agd/model.hpp"
#include "agd/serialization.hpp"

namespace agd {

struct DatasetSource {
  std::string kind = "synthetic";  ///< "synthetic" or "idx"
  SynthConfig synthetic;
  std::filesystem::path images;
  std::filesystem::path labels;
};

/// Everything a run needs. Unset component seeds are derived from `seed`.
struct RunConfig {
  DatasetSource dataset;
  SplitFractions fractions;
  ModelSpec model;
  TrainConfig train;
  ExperimentSettings experiment;
  std::vector<std::string> experiments{"detection", "separation", "k",      "transforms", "layers",
                                       "grid",      "ablation",   "whitebox", "consistency"};
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "out";
};

/// Built-in defaults; the bundled synthetic config spells out the same values.
RunConfig default_run_config();

/// Parses a config document. Unknown keys and type mismatches are config
/// errors naming the offending key path.
RunConfig parse_run_config(const Json& doc);
RunConfig load_run_config(const std::filesystem::path& path);
Json run_config_to_json(const RunConfig& config);

/// Sets the master seed and re-derives every component seed from it.
void apply_master_seed(RunConfig& config, std::uint64_t seed);

std::vector<std::string> experiment_names();

LabeledSet load_dataset(const DatasetSource& source);
/// Loads the dataset and splits it under the config's split seed.
DataSplits prepare_splits(const RunConfig& config);

/// Adversarial set on disk: meta.json plus benign.f64 / adversarial.f64 holding
/// raw little-endian doubles, one image after another.
void save_paired_set(const PairedSet& set, const AttackConfig& attack, SplitTag split,
                     const std::filesystem::path& dir);
PairedSet load_paired_set(const std::filesystem::path& dir);

}  // namespace agd
