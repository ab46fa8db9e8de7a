#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "agd/agd_features.hpp"
#include "agd/data.hpp"
#include "agd/model.hpp"

namespace fixture {

inline agd::SynthConfig tiny_synth() {
  agd::SynthConfig s;
  s.classes = 4;
  s.per_class = 40;
  s.height = 8;
  s.width = 8;
  s.seed = 11;
  return s;
}

struct Tiny {
  agd::LabeledSet data;
  agd::DataSplits splits;
  agd::TrainedModel model;
  agd::ReferenceIndex index;
};

inline agd::ModelSpec tiny_spec(agd::Architecture arch = agd::Architecture::ConvSmall) {
  agd::ModelSpec spec;
  spec.architecture = arch;
  spec.input_shape = {3, 8, 8};
  spec.class_count = 4;
  spec.hidden_width = 16;
  return spec;
}

inline const Tiny& tiny() {
  static const Tiny t = [] {
    agd::LabeledSet data = agd::synth_generate(tiny_synth());
    agd::DataSplits splits = agd::split(data, {}, 3);
    agd::TrainConfig cfg;
    cfg.epochs = 6;
    cfg.seed = 5;
    agd::TrainedModel model = agd::train(tiny_spec(), splits.model_train, cfg);
    agd::ReferenceIndex index = agd::ReferenceIndex::build(model, splits.reference);
    return Tiny{std::move(data), std::move(splits), std::move(model), std::move(index)};
  }();
  return t;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("agd-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixture
