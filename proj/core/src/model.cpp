#include "agd/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "agd/common.hpp"
#include "agd/data.hpp"
#include "agd/serialization.hpp"

namespace agd {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::Mlp2: return "mlp-2";
    case Architecture::ConvSmall: return "conv-small";
  }
  return "?";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "mlp-2") return Architecture::Mlp2;
  if (name == "conv-small") return Architecture::ConvSmall;
  fail(ErrorKind::Config, "unknown architecture '" + name + "' (expected mlp-2 or conv-small)");
}

Graph build_graph(const ModelSpec& spec) {
  require(spec.class_count >= 2, ErrorKind::Config, "model needs at least 2 classes");
  require(spec.hidden_width >= 1, ErrorKind::Config, "hidden width must be positive");
  Graph g(spec.input_shape);
  NodeId x = 0;
  if (spec.architecture == Architecture::ConvSmall) {
    require(spec.input_shape.size() == 3, ErrorKind::Config,
            "conv-small expects a [C,H,W] input shape");
    const std::size_t channels = spec.input_shape[0];
    const auto w1 = g.add_param({8, channels, 3, 3});
    const auto b1 = g.add_param({8});
    x = g.conv2d(x, w1, b1, 1, Padding::Same, "conv1");
    x = g.relu(x, "relu1");
    const auto w2 = g.add_param({16, 8, 3, 3});
    const auto b2 = g.add_param({16});
    x = g.conv2d(x, w2, b2, 2, Padding::Same, "conv2");
    x = g.relu(x, "relu2");
  }
  x = g.flatten(x, "flatten");
  const std::size_t flat = g.node(x).out_shape[0];
  const auto w3 = g.add_param({spec.hidden_width, flat});
  const auto b3 = g.add_param({spec.hidden_width});
  x = g.affine(x, w3, b3, "fc1");
  x = g.relu(x, kEmbeddingLayer);
  const auto w4 = g.add_param({spec.class_count, spec.hidden_width});
  const auto b4 = g.add_param({spec.class_count});
  x = g.affine(x, w4, b4, kLogitLayer);
  g.softmax_xent(x);
  return g;
}

void validate(const ModelSpec& spec) {
  const Graph g = build_graph(spec);
  require(!spec.tap_layers.empty(), ErrorKind::Config, "tap layer list is empty");
  for (const auto& layer : spec.tap_layers) {
    require(g.contains(layer) && g.find(layer) != g.node_count() - 1, ErrorKind::Config,
            "tap layer '" + layer + "' is not a layer of " + to_string(spec.architecture));
  }
}

ParamSet init_params(const Graph& graph, std::uint64_t seed) {
  RandomEngine rng(derive_seed(seed, stream_id("init")));
  std::normal_distribution<double> normal(0.0, 1.0);
  ParamSet params;
  for (const auto& shape : graph.param_shapes()) {
    Tensor t(shape);
    if (shape.size() >= 2) {
      const std::size_t fan_in = element_count(shape) / shape[0];
      const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (auto& v : t.values()) v = scale * normal(rng);
    }
    params.push_back(std::move(t));
  }
  return params;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
  require(k >= 1 && k <= values.size(), ErrorKind::Config,
          "K must lie in [1, " + std::to_string(values.size()) + "], got " + std::to_string(k));
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  order.resize(k);
  return order;
}

TrainedModel::TrainedModel(ModelSpec spec, ParamSet params, TrainMeta meta)
    : spec_(std::move(spec)),
      graph_(build_graph(spec_)),
      params_(std::move(params)),
      meta_(meta) {
  validate(spec_);
  graph_.validate(params_);
}

Tensor TrainedModel::logits(const Tensor& input) const {
  return forward(graph_, input, params_).output();
}

Prediction TrainedModel::predict(const Tensor& input) const {
  const Tensor z = logits(input);
  Prediction p;
  p.probabilities = softmax(z.values());
  // Ranking on logits keeps ties that softmax rounding could break.
  p.label = argmax(z.values());
  return p;
}

std::vector<std::size_t> TrainedModel::top_k_classes(const Tensor& input, std::size_t k) const {
  const Tensor z = logits(input);
  return top_k_indices(z.values(), k);
}

Tensor TrainedModel::tap(const Tensor& input, const std::string& layer) const {
  const NodeId id = graph_.find(layer);
  require(id != graph_.node_count() - 1 || !graph_.has_loss(), ErrorKind::Config,
          "cannot tap the loss node");
  return forward(graph_, input, params_)[id].flattened();
}

double TrainedModel::loss(const Tensor& input, std::size_t target_class) const {
  return forward(graph_, input, params_, target_class).output()[0];
}

Tensor TrainedModel::loss_gradient(const Tensor& input, std::size_t target_class) const {
  return grad_input(graph_, input, params_, target_class);
}

Tensor TrainedModel::tap_vjp(const Tensor& input, const std::string& layer,
                             const Tensor& upstream) const {
  const NodeId id = graph_.find(layer);
  const auto trace = forward(graph_, input, params_);
  require(id < trace.values.size(), ErrorKind::Config, "cannot differentiate the loss node");
  const Seed seed{id, upstream.reshaped(trace[id].shape())};
  return backward(graph_, trace, params_, std::span(&seed, 1), false).input;
}

std::uint64_t TrainedModel::fingerprint() const {
  std::uint64_t h = stream_id(to_string(spec_.architecture));
  auto mix = [&h](std::uint64_t v) { h = mix_seed(h ^ v); };
  for (auto e : spec_.input_shape) mix(e);
  mix(spec_.class_count);
  mix(spec_.hidden_width);
  for (const auto& layer : spec_.tap_layers) mix(stream_id(layer));
  for (const auto& p : params_) {
    for (double v : p.values()) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

double accuracy(const TrainedModel& model, const LabeledSet& set) {
  if (set.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (model.predict(set.images[i]).label == set.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

TrainedModel train(const ModelSpec& spec, const LabeledSet& dataset, const TrainConfig& config) {
  require(!dataset.empty(), ErrorKind::Data, "cannot train on an empty dataset");
  validate(spec);
  dataset.validate();
  require(dataset.class_count <= spec.class_count, ErrorKind::Data,
          "dataset has more classes than the model");
  require(dataset.image_shape() == spec.input_shape, ErrorKind::Data,
          "dataset image shape " + shape_string(dataset.image_shape()) +
              " does not match model input " + shape_string(spec.input_shape));
  require(config.batch_size >= 1, ErrorKind::Config, "batch size must be positive");
  require(config.holdout_fraction >= 0.0 && config.holdout_fraction < 1.0, ErrorKind::Config,
          "holdout fraction must lie in [0, 1)");

  const Graph graph = build_graph(spec);
  ParamSet params = init_params(graph, config.seed);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  RandomEngine rng(derive_seed(config.seed, stream_id("train")));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t holdout = static_cast<std::size_t>(
      std::floor(config.holdout_fraction * static_cast<double>(dataset.size())));
  std::vector<std::size_t> test_idx(order.begin(), order.begin() + holdout);
  std::vector<std::size_t> train_idx(order.begin() + holdout, order.end());
  require(!train_idx.empty(), ErrorKind::Data, "holdout leaves no training examples");

  ParamSet velocity;
  for (const auto& p : params) velocity.emplace_back(p.shape());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    for (std::size_t start = 0; start < train_idx.size(); start += config.batch_size) {
      const std::size_t stop = std::min(train_idx.size(), start + config.batch_size);
      ParamSet grad;
      for (const auto& p : params) grad.emplace_back(p.shape());
      double batch_loss = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t ex = train_idx[i];
        const auto trace = forward(graph, dataset.images[ex], params, dataset.labels[ex]);
        batch_loss += trace.output()[0];
        const auto g = backward(graph, trace, params, {}, true);
        for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += g.params[p];
      }
      if (!std::isfinite(batch_loss)) {
        fail(ErrorKind::Numeric, "training diverged: non-finite loss in epoch " +
                                     std::to_string(epoch + 1));
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto v = velocity[p].values();
        auto w = params[p].values();
        auto g = grad[p].values();
        for (std::size_t k = 0; k < v.size(); ++k) {
          v[k] = config.momentum * v[k] - config.learning_rate * scale * g[k];
          w[k] += v[k];
        }
      }
    }
  }

  for (const auto& p : params) {
    require(p.all_finite(), ErrorKind::Numeric, "training produced non-finite parameters");
  }

  TrainMeta meta;
  meta.epochs = config.epochs;
  meta.seed = config.seed;
  TrainedModel model(spec, std::move(params), meta);

  auto subset_accuracy = [&](const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    std::size_t correct = 0;
    for (auto i : idx) {
      if (model.predict(dataset.images[i]).label == dataset.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
  };
  meta.train_accuracy = subset_accuracy(train_idx);
  meta.test_accuracy = test_idx.empty() ? meta.train_accuracy : subset_accuracy(test_idx);
  if (meta.test_accuracy < config.min_test_accuracy) {
    fail(ErrorKind::Numeric, "held-out accuracy " + std::to_string(meta.test_accuracy) +
                                 " is below the configured floor " +
                                 std::to_string(config.min_test_accuracy));
  }
  return TrainedModel(spec, model.params(), meta);
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  Json doc;
  doc["format_version"] = kModelFormatVersion;
  const auto& spec = model.spec();
  doc["spec"] = {{"architecture", to_string(spec.architecture)},
                 {"input_shape", spec.input_shape},
                 {"class_count", spec.class_count},
                 {"tap_layers", spec.tap_layers},
                 {"hidden_width", spec.hidden_width}};
  const auto& meta = model.meta();
  doc["train_meta"] = {{"epochs", meta.epochs},
                       {"seed", meta.seed},
                       {"train_accuracy", meta.train_accuracy},
                       {"test_accuracy", meta.test_accuracy}};
  Json params = Json::array();
  for (const auto& p : model.params()) params.push_back(tensor_to_json(p));
  doc["params"] = std::move(params);
  write_json_file(path, doc);
}

TrainedModel load_model(const std::filesystem::path& path) {
  const Json doc = read_json_file(path);
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      fail(ErrorKind::Data, path.string() + ": model format_version " + std::to_string(version) +
                                " is not supported (expected " +
                                std::to_string(kModelFormatVersion) + ")");
    }
    const Json& s = doc.at("spec");
    ModelSpec spec;
    spec.architecture = parse_architecture(s.at("architecture").get<std::string>());
    spec.input_shape = s.at("input_shape").get<Shape>();
    spec.class_count = s.at("class_count").get<std::size_t>();
    spec.tap_layers = s.at("tap_layers").get<std::vector<std::string>>();
    spec.hidden_width = s.at("hidden_width").get<std::size_t>();
    const Json& m = doc.at("train_meta");
    TrainMeta meta{m.at("epochs").get<std::size_t>(), m.at("seed").get<std::uint64_t>(),
                   m.at("train_accuracy").get<double>(), m.at("test_accuracy").get<double>()};
    ParamSet params;
    for (const auto& p : doc.at("params")) params.push_back(tensor_from_json(p));
    return TrainedModel(std::move(spec), std::move(params), meta);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, path.string() + ": malformed model file: " + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Data) throw;
    fail(ErrorKind::Data, path.string() + ": invalid model file: " + e.what());
  }
}

}  // namespace agd
