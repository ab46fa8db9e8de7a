#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "agd/tensor.hpp"

namespace agd {

enum class SplitTag { All, ModelTrain, Reference, DetectorTrain, Eval };

std::string to_string(SplitTag tag);

/// Images with pixels in [0, 1], their labels, and the example ids they had
/// in the set they were drawn from.
struct LabeledSet {
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> ids;
  std::size_t class_count = 0;
  SplitTag split = SplitTag::All;

  std::size_t size() const noexcept { return images.size(); }
  bool empty() const noexcept { return images.empty(); }
  const Shape& image_shape() const { return images.front().shape(); }

  void push_back(Tensor image, std::size_t label, std::size_t id);
  /// Throws if pixels or labels fall out of range or lengths disagree.
  void validate() const;
};

struct SynthConfig {
  std::size_t classes = 10;
  std::size_t per_class = 300;
  double noise = 0.1;         ///< Gaussian sigma added to the template
  double contrast = 0.35;     ///< template amplitude around mid-grey
  std::size_t channels = 3;
  std::size_t height = 12;
  std::size_t width = 12;
  std::uint64_t seed = 7;
};

/// Deterministic class template: a mixture of two oriented sinusoids whose
/// frequencies, orientation and channel phases depend on the class.
Tensor synth_template(const SynthConfig& config, std::size_t cls);

/// Template + clipped Gaussian noise, interleaved by class. Throws a config
/// error when templates are not pairwise L2-separated by at least 10 sigma.
LabeledSet synth_generate(const SynthConfig& config);

/// Reads an IDX3 (images, magic 0x00000803) / IDX1 (labels, magic
/// 0x00000801) pair. Pixels are scaled by 1/255 into [1, rows, cols].
LabeledSet load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path);

struct SplitFractions {
  double model_train = 0.4;
  double reference = 0.2;
  double detector_train = 0.2;
  double eval = 0.2;
};

/// Fractions must be non-negative and sum to one.
void validate(const SplitFractions& fractions);

struct DataSplits {
  LabeledSet model_train;
  LabeledSet reference;
  LabeledSet detector_train;
  LabeledSet eval;
};

/// Seeded shuffle followed by contiguous partition. Fractions must be
/// non-negative and sum to 1.
DataSplits split(const LabeledSet& set, const SplitFractions& fractions, std::uint64_t seed);

/// "index,split,label" rows, one per example, ordered by id.
std::string splits_csv(const DataSplits& splits);

}  // namespace agd
