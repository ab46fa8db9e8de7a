#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "agd/graph.hpp"
#include "agd/tensor.hpp"

namespace agd {

struct LabeledSet;

enum class Architecture {
  Mlp2,       ///< flatten -> fc -> relu ("embedding") -> fc ("logits")
  ConvSmall,  ///< 2 conv + 2 fc; see build_graph
};

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

inline constexpr const char* kEmbeddingLayer = "embedding";
inline constexpr const char* kLogitLayer = "logits";

struct ModelSpec {
  Architecture architecture = Architecture::ConvSmall;
  Shape input_shape{3, 12, 12};
  std::size_t class_count = 10;
  std::vector<std::string> tap_layers{kEmbeddingLayer, kLogitLayer};
  std::size_t hidden_width = 32;  ///< width of the embedding layer
};

/// Builds the (untrained) graph of a spec, ending in a softmax_xent node.
///
/// conv-small layer names: input, conv1, relu1, conv2, relu2, flatten, fc1,
/// embedding, logits, loss. conv1 is 3x3 same/stride 1 with 8 channels,
/// conv2 is 3x3 same/stride 2 with 16 channels.
///
/// mlp-2 layer names: input, flatten, fc1, embedding, logits, loss.
Graph build_graph(const ModelSpec& spec);

/// Throws if the spec is inconsistent (C < 2, unknown tap layer, ...).
void validate(const ModelSpec& spec);

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  double holdout_fraction = 0.1;   ///< carved out of the training set
  double min_test_accuracy = 0.0;  ///< training fails below this floor
};

struct TrainMeta {
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct Prediction {
  std::size_t label = 0;
  std::vector<double> probabilities;
};

/// A classifier: spec, graph and parameters. Immutable after training.
class TrainedModel {
 public:
  TrainedModel(ModelSpec spec, ParamSet params, TrainMeta meta = {});

  const ModelSpec& spec() const noexcept { return spec_; }
  const Graph& graph() const noexcept { return graph_; }
  const ParamSet& params() const noexcept { return params_; }
  const TrainMeta& meta() const noexcept { return meta_; }
  std::size_t class_count() const noexcept { return spec_.class_count; }

  Tensor logits(const Tensor& input) const;
  Prediction predict(const Tensor& input) const;

  /// Top-K classes by descending probability, ties by ascending id.
  std::vector<std::size_t> top_k_classes(const Tensor& input, std::size_t k) const;

  /// Flattened activation of a named layer.
  Tensor tap(const Tensor& input, const std::string& layer) const;

  /// Cross-entropy of `input` against class c, and its input gradient.
  double loss(const Tensor& input, std::size_t target_class) const;
  Tensor loss_gradient(const Tensor& input, std::size_t target_class) const;

  /// J^T upstream, where J is the Jacobian of the flattened layer output
  /// with respect to the input.
  Tensor tap_vjp(const Tensor& input, const std::string& layer, const Tensor& upstream) const;

  /// Stable 64-bit digest of spec and parameters, used as a cache key.
  std::uint64_t fingerprint() const;

 private:
  ModelSpec spec_;
  Graph graph_;
  ParamSet params_;
  TrainMeta meta_;
};

/// He-normal weights, zero biases.
ParamSet init_params(const Graph& graph, std::uint64_t seed);

/// Argmax with lowest-index tie-break.
std::size_t argmax(std::span<const double> values);

/// Descending-order ranking with ascending-index tie-break, truncated to k.
std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k);

/// Minibatch SGD with momentum on softmax cross-entropy. Throws a numeric
/// error on a non-finite loss and a data error when the held-out accuracy
/// falls below the configured floor.
TrainedModel train(const ModelSpec& spec, const LabeledSet& dataset, const TrainConfig& config);

double accuracy(const TrainedModel& model, const LabeledSet& set);

inline constexpr int kModelFormatVersion = 1;

void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

}  // namespace agd
