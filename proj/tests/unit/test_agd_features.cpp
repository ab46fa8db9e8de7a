#include <doctest.h>

#include <set>

#include "agd/agd_features.hpp"
#include "agd/common.hpp"
#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

using namespace agd;

namespace {

ReferenceIndex::Entry entry(std::vector<double> e, std::size_t id) {
  const std::size_t n = e.size();
  return {Tensor({n}, std::move(e)), id, Tensor({1, 1, 1})};
}

}  // namespace

TEST_CASE("perturb touches few pixels, stays bounded and is seeded") {
  const Tensor x = fixture::tiny().splits.eval.images.front();
  PerturbationSpec spec;
  spec.pixel_count = 3;
  spec.magnitude = 0.1;
  spec.seed = 21;
  const Tensor p = perturb(x, spec);
  CHECK(perturb(x, spec) == p);
  std::set<std::size_t> positions;
  const std::size_t plane = x.shape()[1] * x.shape()[2];
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(std::abs(p[i] - x[i]) <= spec.magnitude + 1e-12);
    CHECK(p[i] >= 0.0);
    CHECK(p[i] <= 1.0);
    if (p[i] != x[i]) positions.insert(i % plane);
  }
  CHECK(positions.size() <= spec.pixel_count);
  CHECK_FALSE(positions.empty());
  spec.seed = 22;
  CHECK(perturb(x, spec) != p);
  spec.magnitude = 0.0;
  CHECK(perturb(x, spec) == x);
  spec.magnitude = -1.0;
  CHECK_THROWS_AS(perturb(x, spec), Error);
}

TEST_CASE("nearest neighbour matches brute force and breaks ties by id") {
  std::mt19937_64 rng(5);
  std::vector<std::vector<ReferenceIndex::Entry>> buckets(2);
  for (std::size_t i = 0; i < 30; ++i) {
    const Tensor e = oracle::random_tensor({4}, rng);
    buckets[i % 2].push_back({e, 100 - i, Tensor({1, 1, 1})});
  }
  const ReferenceIndex index(kEmbeddingLayer, 2, buckets);
  CHECK(index.size() == 30);
  for (int q = 0; q < 20; ++q) {
    const Tensor query = oracle::random_tensor({4}, rng);
    for (std::size_t c = 0; c < 2; ++c) {
      const ReferenceIndex::Entry* best = nullptr;
      double best_d = 0.0;
      for (const auto& e : buckets[c]) {
        const double d = l2_distance(e.embedding, query);
        if (!best || d < best_d) {
          best = &e;
          best_d = d;
        }
      }
      CHECK(index.nearest(query, c).id == best->id);
    }
  }

  const ReferenceIndex tied(kEmbeddingLayer, 1, {{entry({1, 0}, 9), entry({-1, 0}, 4), entry({0, 1}, 7)}});
  CHECK(tied.nearest(entry({0, 0}, 0).embedding, 0).id == 4);
}

TEST_CASE("empty reference class") {
  const ReferenceIndex index(kEmbeddingLayer, 2, {{entry({0, 0}, 1), entry({3, 3}, 2)}, {}});
  const Tensor q = entry({2, 2}, 0).embedding;
  try {
    index.nearest(q, 1);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
  CHECK(index.nearest(q, 1, EmptyClassPolicy::GlobalNearest).id == 2);
}

TEST_CASE("a reference image compared with itself scores one everywhere") {
  const auto& t = fixture::tiny();
  AgdConfig cfg;
  cfg.k = 3;
  cfg.perturbation.magnitude = 0.0;
  std::size_t tested = 0;
  for (std::size_t i = 0; i < t.splits.reference.size() && tested < 3; ++i) {
    const Tensor& x = t.splits.reference.images[i];
    if (t.model.predict(x).label != t.splits.reference.labels[i]) continue;
    const AgdFeatureVector v = extract(t.model, x, t.index, cfg);
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (!v.degenerate[j]) CHECK(v.scores[j] == doctest::Approx(1.0).epsilon(1e-12));
    }
    ++tested;
  }
  CHECK(tested == 3);
}

TEST_CASE("feature layout matches a manual computation") {
  const auto& t = fixture::tiny();
  AgdConfig cfg;
  cfg.k = 2;
  cfg.perturbation.seed = 3;
  const Tensor& x = t.splits.eval.images[5];
  const AgdFeatureVector v = extract(t.model, x, t.index, cfg);
  REQUIRE(v.size() == 3 * 2 * cfg.layers.size());
  CHECK(v.classes == t.model.top_k_classes(x, 2));

  const Tensor prototype =
      retrieve_prototype(t.index, t.model.tap(x, kEmbeddingLayer), t.model.predict(x).label);
  const Tensor perturbed = perturb(x, cfg.perturbation);
  for (std::size_t m = 0; m < cfg.layers.size(); ++m) {
    for (std::size_t r = 0; r < 2; ++r) {
      const std::size_t c = v.classes[r];
      const Tensor dq = agd_delta(t.model, x, c, cfg.step, cfg.layers[m]);
      const Tensor dp = agd_delta(t.model, perturbed, c, cfg.step, cfg.layers[m]);
      const Tensor dn = agd_delta(t.model, prototype, c, cfg.step, cfg.layers[m]);
      CHECK(v.alpha(m, r) == doctest::Approx(cosine_similarity(dq, dp).value));
      CHECK(v.beta(m, r) == doctest::Approx(cosine_similarity(dq, dn).value));
      CHECK(v.gamma(m, r) == doctest::Approx(cosine_similarity(dp, dn).value));
    }
  }
  for (double s : v.scores) {
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("batch extraction is deterministic and independent of jobs") {
  const auto& t = fixture::tiny();
  AgdConfig cfg;
  cfg.k = 2;
  const std::span<const Tensor> q(t.splits.eval.images.data(), 6);
  const auto a = extract_batch(t.model, q, t.index, cfg, 17, 1);
  const auto b = extract_batch(t.model, q, t.index, cfg, 17, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].scores == b[i].scores);
    AgdConfig one = cfg;
    one.perturbation.seed = example_seed(17, i);
    CHECK(extract(t.model, q[i], t.index, one).scores == a[i].scores);
  }
  CHECK(example_seed(17, 0) != example_seed(17, 1));
}

TEST_CASE("score selection and CSV") {
  AgdFeatureVector v;
  v.k = 2;
  v.layer_count = 2;
  for (int i = 0; i < 12; ++i) v.scores.push_back(i);
  v.degenerate.assign(12, false);
  v.degenerate[4] = true;
  const std::vector<std::size_t> second{1};
  CHECK(select_scores(v, 1, second) == std::vector<double>{6, 7, 8});
  const std::vector<std::size_t> both{0, 1};
  CHECK(select_scores(v, 2, both, {true, false, true}) == std::vector<double>{0, 2, 3, 5, 6, 8, 9, 11});
  CHECK(ScoreMask{}.count() == 3);

  const std::vector<AgdFeatureVector> benign{v}, adv{v};
  const std::vector<std::size_t> ids{7};
  const std::string csv = features_csv(benign, adv, ids, ids);
  const std::string header = csv.substr(0, csv.find('\n'));
  CHECK(header.rfind("example_id,label_is_adversarial,score_0,", 0) == 0);
  CHECK(header.find("score_11,flags") != std::string::npos);
  CHECK(csv.find("\n7,0,") != std::string::npos);
  CHECK(csv.find("\n7,1,") != std::string::npos);
  CHECK(csv.find(",4\n") != std::string::npos);
}
