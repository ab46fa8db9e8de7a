#include <doctest.h>

#include <fstream>

#include "agd/common.hpp"
#include "agd/model.hpp"
#include "agd/serialization.hpp"
#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

using namespace agd;

TEST_CASE("layer names of the built-in architectures") {
  const Graph conv = build_graph(fixture::tiny_spec());
  for (const char* name : {"input", "conv1", "relu1", "conv2", "relu2", "flatten", "fc1", "embedding", "logits", "loss"}) {
    CHECK(conv.contains(name));
  }
  const Graph mlp = build_graph(fixture::tiny_spec(Architecture::Mlp2));
  for (const char* name : {"input", "flatten", "fc1", "embedding", "logits", "loss"}) CHECK(mlp.contains(name));
  CHECK_FALSE(mlp.contains("conv1"));
}

TEST_CASE("spec validation") {
  ModelSpec spec = fixture::tiny_spec();
  spec.class_count = 1;
  CHECK_THROWS_AS(validate(spec), Error);
  spec = fixture::tiny_spec();
  spec.tap_layers = {"no-such-layer"};
  CHECK_THROWS_AS(validate(spec), Error);
  CHECK_EQ(parse_architecture("mlp-2"), Architecture::Mlp2);
  CHECK_THROWS_AS(parse_architecture("resnet"), Error);
}

TEST_CASE("trained tiny model") {
  const auto& t = fixture::tiny();
  CHECK(accuracy(t.model, t.splits.eval) > 0.9);
  const Tensor& x = t.splits.eval.images.front();

  SUBCASE("logit tap equals the forward logits") {
    CHECK(t.model.tap(x, kLogitLayer) == t.model.logits(x).flattened());
  }
  SUBCASE("prediction is the argmax and probabilities sum to one") {
    const Prediction p = t.model.predict(x);
    double sum = 0.0;
    for (double v : p.probabilities) sum += v;
    CHECK(sum == doctest::Approx(1.0));
    CHECK(p.label == argmax(t.model.logits(x).values()));
    CHECK(t.model.top_k_classes(x, 1).front() == p.label);
  }
  SUBCASE("top-k is ordered by probability") {
    const auto k = t.model.top_k_classes(x, 4);
    const auto p = t.model.predict(x).probabilities;
    for (std::size_t i = 1; i < k.size(); ++i) CHECK(p[k[i - 1]] >= p[k[i]]);
  }
  SUBCASE("tap_vjp is the transpose of the tap Jacobian") {
    std::mt19937_64 rng(2);
    const Tensor u = oracle::random_tensor(t.model.tap(x, kEmbeddingLayer).shape(), rng);
    const Tensor g = t.model.tap_vjp(x, kEmbeddingLayer, u);
    Tensor probe = x;
    for (std::size_t i = 0; i < probe.size(); i += 17) {
      const double fd = oracle::central_difference(
          probe, i, 1e-6, [&] { return dot(u, t.model.tap(probe, kEmbeddingLayer)); });
      CHECK(g[i] == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("argmax and top-k tie-breaks") {
  const std::vector<double> v{1.0, 3.0, 3.0, 2.0};
  CHECK(argmax(v) == 1);
  CHECK(top_k_indices(v, 3) == std::vector<std::size_t>{1, 2, 3});
}

TEST_CASE("training is deterministic under a seed") {
  const auto& t = fixture::tiny();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 9;
  const TrainedModel a = train(fixture::tiny_spec(Architecture::Mlp2), t.splits.model_train, cfg);
  const TrainedModel b = train(fixture::tiny_spec(Architecture::Mlp2), t.splits.model_train, cfg);
  CHECK(a.fingerprint() == b.fingerprint());
  cfg.seed = 10;
  const TrainedModel c = train(fixture::tiny_spec(Architecture::Mlp2), t.splits.model_train, cfg);
  CHECK(a.fingerprint() != c.fingerprint());
}

TEST_CASE("training failures") {
  const auto& t = fixture::tiny();
  SUBCASE("accuracy floor") {
    LabeledSet shuffled = t.splits.model_train;
    for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled.labels[i] = (shuffled.labels[i] + i) % 4;
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.min_test_accuracy = 0.95;
    try {
      train(fixture::tiny_spec(Architecture::Mlp2), shuffled, cfg);
      FAIL("expected failure");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Numeric);
    }
  }
  SUBCASE("divergence") {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 1e300;
    CHECK_THROWS_AS(train(fixture::tiny_spec(Architecture::Mlp2), t.splits.model_train, cfg), Error);
  }
}

TEST_CASE("model files round-trip and reject bad input") {
  const auto& t = fixture::tiny();
  const auto dir = fixture::temp_dir("model");
  save_model(t.model, dir / "m.json");
  const TrainedModel loaded = load_model(dir / "m.json");
  CHECK(loaded.fingerprint() == t.model.fingerprint());
  for (const auto& x : t.splits.eval.images) CHECK(loaded.logits(x) == t.model.logits(x));

  Json doc = read_json_file(dir / "m.json");
  doc["format_version"] = 99;
  write_json_file(dir / "v.json", doc);
  CHECK_THROWS_AS(load_model(dir / "v.json"), Error);

  write_text_file(dir / "c.json", "{\"format_version\": 1, \"spec\":");
  try {
    load_model(dir / "c.json");
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Data);
  }
  CHECK_THROWS_AS(load_model(dir / "missing.json"), Error);
}
