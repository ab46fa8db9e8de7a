#include <doctest.h>

#include <random>

#include "agd/common.hpp"
#include "agd/metrics.hpp"
#include "../support/oracles.hpp"

using namespace agd;

TEST_CASE("ROC-AUC equals the pairwise statistic, ties included") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> size(1, 40), grid(0, 6);
    std::vector<double> pos(size(rng)), neg(size(rng));
    // Coarse grid forces many ties.
    for (double& v : pos) v = grid(rng) * 0.25 + 0.5;
    for (double& v : neg) v = grid(rng) * 0.25;
    const RocResult roc = roc_auc(pos, neg);
    CHECK(std::abs(roc.auc - oracle::pairwise_auc(pos, neg)) <= 1e-12);
    CHECK(std::abs(trapezoid_area(roc) - roc.auc) <= 1e-12);
    CHECK(roc.tpr.front() == 0.0);
    CHECK(roc.fpr.front() == 0.0);
    CHECK(roc.tpr.back() == 1.0);
    CHECK(roc.fpr.back() == 1.0);
  }
  const std::vector<double> a{1, 2, 3}, b{1, 2, 3};
  CHECK(roc_auc(a, b).auc == 0.5);
  const std::vector<double> hi{5, 6}, lo{1, 2};
  CHECK(roc_auc(hi, lo).auc == 1.0);
  CHECK(roc_auc(lo, hi).auc == 0.0);
  CHECK_THROWS_AS(roc_auc({}, lo), Error);
  const std::vector<double> nan{std::nan("")};
  CHECK_THROWS_AS(roc_auc(nan, lo), Error);
}

TEST_CASE("Mann-Whitney agrees with reference values") {
  // Reference: asymptotic, tie-corrected, continuity-corrected one-sided test.
  const std::vector<double> x{1.2, 3.4, 2.2, 5.0, 4.1, 3.4, 2.9, 6.0};
  const std::vector<double> y{0.5, 2.2, 1.9, 3.4, 1.1, 0.7, 2.0};
  const auto r = mann_whitney_greater(x, y);
  CHECK(r.u == 48.5);
  CHECK(r.p_value == doctest::Approx(0.010037242772004561).epsilon(1e-10));
  const auto s = mann_whitney_greater(y, x);
  CHECK(s.u == 7.5);
  CHECK(s.p_value == doctest::Approx(0.9926807357712958).epsilon(1e-10));

  const std::vector<double> a{0.4, 0.2, 0.9, 0.4, -0.2, 0.7, 1.6, 1.2, -0.4, -1.0, -0.3, 0.3, -2.0, 0.1,
                              -0.9, -0.4, -0.2, -0.0, 0.7, 1.3, 0.2, 1.7, -0.4, 0.7, 1.2, 0.4, -0.4,
                              -0.6, -0.2, 0.5, -0.7, 0.1, 0.1, 0.8, 0.5, 0.7, -0.4, 0.2, 1.1, 1.8};
  const std::vector<double> b{-1.3, 1.5, 1.3, 0.8, 0.3, -0.3, 1.5, 2.0, 1.8, 1.3, 0.4, -1.2,
                              -0.0, 0.7, -1.3, 0.4, 0.4, 0.7, -1.2, -0.7, -0.4, -1.2, 1.7, -0.5,
                              0.3, -0.3, 1.6, 1.3, 0.6, -2.2, 0.1, 0.7, 1.0, -0.6, 1.8};
  const auto t = mann_whitney_greater(a, b);
  CHECK(t.u == 652.0);
  CHECK(t.p_value == doctest::Approx(0.696976784184461).epsilon(1e-10));
  CHECK_THROWS_AS(mann_whitney_greater({}, b), Error);
}

TEST_CASE("summary statistics") {
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 2, 3}) == 2.5);
  const std::vector<double> v{1, 2, 3, 4};
  CHECK(mean(v) == 2.5);
  CHECK(variance(v) == doctest::Approx(1.25));
}
