#include <doctest.h>

#include <algorithm>

#include "agd/baselines.hpp"
#include "agd/common.hpp"
#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

using namespace agd;

TEST_CASE("2x2 median filter") {
  std::mt19937_64 rng(6);
  Tensor x({2, 5, 4});
  std::uniform_real_distribution<double> u(0, 1);
  for (double& v : x.values()) v = u(rng);
  const Tensor m = median_filter_2x2(x);
  REQUIRE(m.shape() == x.shape());
  auto at = [&](const Tensor& t, std::size_t c, std::size_t y, std::size_t xx) {
    return t[(c * 5 + y) * 4 + xx];
  };
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t y = 0; y < 5; ++y) {
      for (std::size_t xx = 0; xx < 4; ++xx) {
        const std::size_t y1 = std::min<std::size_t>(y + 1, 4), x1 = std::min<std::size_t>(xx + 1, 3);
        std::vector<double> w{at(x, c, y, xx), at(x, c, y, x1), at(x, c, y1, xx), at(x, c, y1, x1)};
        std::sort(w.begin(), w.end());
        CHECK(at(m, c, y, xx) == w[1]);
      }
    }
  }
  // A single bright pixel disappears.
  Tensor spike({1, 4, 4});
  spike[5] = 1.0;
  const Tensor cleaned = median_filter_2x2(spike);
  for (double v : cleaned.values()) CHECK(v == 0.0);
}

TEST_CASE("noise and baseline scores") {
  const auto& t = fixture::tiny();
  const Tensor& x = t.splits.eval.images[0];
  CHECK(gaussian_noise(x, 0.0, 1) == x);
  const Tensor n = gaussian_noise(x, 0.2, 1);
  CHECK(n == gaussian_noise(x, 0.2, 1));
  CHECK(n != gaussian_noise(x, 0.2, 2));
  for (double v : n.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(rand1_score(t.model, x, 0.0, kLogitLayer, 1).r == 0.0);
  const double r = rand1_score(t.model, x, 0.1, kLogitLayer, 1).r;
  CHECK(r > 0.0);
  const Tensor diff = t.model.tap(gaussian_noise(x, 0.1, 1), kLogitLayer) - t.model.tap(x, kLogitLayer);
  double l1 = 0.0;
  for (double v : diff.values()) l1 += std::abs(v);
  CHECK(r == doctest::Approx(l1));
  CHECK(median_score(t.model, x, kLogitLayer).r >= 0.0);
  CHECK_THROWS_AS(rand1_score(t.model, x, -1.0, kLogitLayer, 1), Error);
}

TEST_CASE("rand1 objective gradient matches finite differences") {
  const auto& t = fixture::tiny();
  const Tensor x = t.splits.eval.images[2];
  const double sigma = 0.05;
  const std::uint64_t seed = 9;
  const ObjectiveValue obj = rand1_objective(t.model, x, sigma, kEmbeddingLayer, seed);
  CHECK(obj.value == doctest::Approx(-rand1_score(t.model, x, sigma, kEmbeddingLayer, seed).r));
  const Tensor noisy = gaussian_noise(x, sigma, seed);
  Tensor probe = x;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < x.size() && checked < 30; ++i) {
    // Clipped pixels do not follow the input, so the identity no longer holds there.
    if (noisy[i] <= 1e-4 || noisy[i] >= 1.0 - 1e-4 || x[i] <= 1e-4 || x[i] >= 1.0 - 1e-4) continue;
    const double fd = oracle::central_difference(probe, i, 1e-6, [&] {
      return rand1_objective(t.model, probe, sigma, kEmbeddingLayer, seed).value;
    });
    CHECK(std::abs(obj.gradient[i] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    ++checked;
  }
  CHECK(checked > 10);
}

TEST_CASE("baseline detector") {
  const std::vector<double> benign{0.1, 0.2, 0.3}, adv{0.25, 0.4, 0.5};
  const BaselineDetector d = baseline_detector(benign, adv);
  CHECK(d.auc == doctest::Approx(oracle::pairwise_auc(adv, benign)));
  CHECK(d.threshold.tpr - d.threshold.fpr == doctest::Approx(2.0 / 3.0));
}
