#include "agd/baselines.hpp"

#include <algorithm>
#include <array>

#include "agd/common.hpp"
#include "agd/metrics.hpp"

namespace agd {

std::string to_string(BaselineTransform t) {
  return t == BaselineTransform::Rand1 ? "rand1" : "median";
}

Tensor gaussian_noise(const Tensor& input, double sigma, std::uint64_t seed) {
  require(sigma >= 0.0, ErrorKind::Config, "Rand-1 sigma must be >= 0");
  if (sigma == 0.0) return input;
  RandomEngine rng(derive_seed(seed, stream_id("rand1")));
  std::normal_distribution<double> normal(0.0, sigma);
  Tensor out = input;
  for (auto& v : out.values()) v = std::clamp(v + normal(rng), 0.0, 1.0);
  return out;
}

Tensor median_filter_2x2(const Tensor& image) {
  require(image.rank() == 3, ErrorKind::Config, "median filter expects a [C,H,W] image");
  const std::size_t channels = image.shape()[0];
  const std::size_t h = image.shape()[1];
  const std::size_t w = image.shape()[2];
  Tensor out(image.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t y1 = std::min(y + 1, h - 1);
        const std::size_t x1 = std::min(x + 1, w - 1);
        std::array<double, 4> win{image.at(c, y, x), image.at(c, y, x1), image.at(c, y1, x),
                                  image.at(c, y1, x1)};
        std::sort(win.begin(), win.end());
        out.at(c, y, x) = win[1];
      }
    }
  }
  return out;
}

namespace {

double feature_variation(const TrainedModel& model, const Tensor& original,
                         const Tensor& transformed, const std::string& layer) {
  return l1_norm(model.tap(transformed, layer) - model.tap(original, layer));
}

}  // namespace

BaselineScore rand1_score(const TrainedModel& model, const Tensor& input, double sigma,
                          const std::string& layer, std::uint64_t seed) {
  return {feature_variation(model, input, gaussian_noise(input, sigma, seed), layer),
          BaselineTransform::Rand1};
}

BaselineScore median_score(const TrainedModel& model, const Tensor& input,
                           const std::string& layer) {
  return {feature_variation(model, input, median_filter_2x2(input), layer),
          BaselineTransform::Median};
}

ObjectiveValue rand1_objective(const TrainedModel& model, const Tensor& input, double sigma,
                               const std::string& layer, std::uint64_t seed) {
  const Tensor noisy = gaussian_noise(input, sigma, seed);
  const Tensor diff = model.tap(noisy, layer) - model.tap(input, layer);
  Tensor s(diff.shape());
  for (std::size_t i = 0; i < diff.size(); ++i) s[i] = diff[i] > 0.0 ? 1.0 : (diff[i] < 0.0 ? -1.0 : 0.0);
  // d r / d x = J(x + eta)^T s - J(x)^T s, treating the noisy copy as x + eta.
  ObjectiveValue out;
  out.value = -l1_norm(diff);
  out.gradient = model.tap_vjp(input, layer, s) - model.tap_vjp(noisy, layer, s);
  return out;
}

BaselineDetector baseline_detector(std::span<const double> benign,
                                   std::span<const double> adversarial) {
  BaselineDetector d;
  d.threshold = choose_threshold(benign, adversarial, ThresholdCriterion::Youden);
  d.auc = roc_auc(adversarial, benign).auc;
  return d;
}

}  // namespace agd
