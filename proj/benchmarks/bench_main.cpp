#include <benchmark/benchmark.h>

#include <numeric>
#include <random>

#include "agd/agd_features.hpp"
#include "agd/data.hpp"
#include "agd/detector.hpp"
#include "agd/metrics.hpp"
#include "agd/model.hpp"

using namespace agd;

namespace {

struct Setup {
  DataSplits splits;
  TrainedModel model;
  ReferenceIndex index;
};

// Desk-scale shapes (3x12x12, 10 classes); one short epoch is enough for timing.
const Setup& setup() {
  static const Setup s = [] {
    SynthConfig synth;
    synth.classes = 10;
    synth.per_class = 40;
    DataSplits splits = split(synth_generate(synth), {}, 1);
    ModelSpec spec;
    spec.input_shape = {synth.channels, synth.height, synth.width};
    spec.class_count = synth.classes;
    TrainConfig train_cfg;
    train_cfg.epochs = 1;
    TrainedModel model = train(spec, splits.model_train, train_cfg);
    ReferenceIndex index = ReferenceIndex::build(model, splits.reference);
    return Setup{std::move(splits), std::move(model), std::move(index)};
  }();
  return s;
}

void BM_Forward(benchmark::State& state) {
  const auto& s = setup();
  const Tensor& x = s.splits.eval.images.front();
  for (auto _ : state) benchmark::DoNotOptimize(s.model.logits(x));
}
BENCHMARK(BM_Forward);

void BM_InputGradient(benchmark::State& state) {
  const auto& s = setup();
  const Tensor& x = s.splits.eval.images.front();
  for (auto _ : state) benchmark::DoNotOptimize(s.model.loss_gradient(x, 0));
}
BENCHMARK(BM_InputGradient);

void BM_ExtractFeatures(benchmark::State& state) {
  const auto& s = setup();
  AgdConfig cfg;
  cfg.k = static_cast<std::size_t>(state.range(0));
  const Tensor& x = s.splits.eval.images.front();
  for (auto _ : state) benchmark::DoNotOptimize(extract(s.model, x, s.index, cfg));
}
BENCHMARK(BM_ExtractFeatures)->Arg(1)->Arg(4);

void BM_ForestFit(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureMatrix x;
  std::vector<int> y;
  for (int i = 0; i < state.range(0); ++i) {
    std::vector<double> row(24);
    for (double& v : row) v = n(rng);
    y.push_back(row[0] + 0.5 * n(rng) > 0 ? 1 : 0);
    x.rows.push_back(std::move(row));
  }
  ForestConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(fit(x, y, cfg));
}
BENCHMARK(BM_ForestFit)->Arg(500)->Unit(benchmark::kMillisecond);

void BM_RocAuc(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> pos(static_cast<std::size_t>(state.range(0))), neg(pos.size());
  for (double& v : pos) v = u(rng);
  for (double& v : neg) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(roc_auc(pos, neg));
}
BENCHMARK(BM_RocAuc)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
