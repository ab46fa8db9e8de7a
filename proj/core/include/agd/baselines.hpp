#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "agd/agd_features.hpp"
#include "agd/detector.hpp"
#include "agd/model.hpp"
#include "agd/tensor.hpp"

namespace agd {

struct RocResult;

enum class BaselineTransform { Rand1, Median };

std::string to_string(BaselineTransform t);

/// l1 feature variation ||f^m(I^p) - f^m(I^q)||_1 under one transformation.
struct BaselineScore {
  double r = 0.0;
  BaselineTransform transform = BaselineTransform::Rand1;
};

/// Adds N(0, sigma^2) noise to every pixel and clips to [0, 1].
Tensor gaussian_noise(const Tensor& input, double sigma, std::uint64_t seed);

/// 2x2 median filter per channel. The window of output (y, x) covers rows
/// {y, y+1} and columns {x, x+1}, clamped at the bottom/right edges, and the
/// even-window median is the lower of the two middle values.
Tensor median_filter_2x2(const Tensor& image);

BaselineScore rand1_score(const TrainedModel& model, const Tensor& input, double sigma,
                          const std::string& layer, std::uint64_t seed);

BaselineScore median_score(const TrainedModel& model, const Tensor& input,
                           const std::string& layer);

/// Adaptive-attack term against Rand-1: value -r and its input gradient for a
/// fixed noise draw, so ascending it shrinks the feature variation.
ObjectiveValue rand1_objective(const TrainedModel& model, const Tensor& input, double sigma,
                               const std::string& layer, std::uint64_t seed);

/// Single-feature threshold rule over baseline scores.
struct BaselineDetector {
  ThresholdResult threshold;
  double auc = 0.5;
};

/// Youden threshold and ROC-AUC of "larger r means adversarial".
BaselineDetector baseline_detector(std::span<const double> benign, std::span<const double> adversarial);

}  // namespace agd
