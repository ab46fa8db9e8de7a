#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agd/tensor.hpp"

namespace agd {

using NodeId = std::size_t;
using ParamId = std::size_t;

/// Parameters are stored positionally; nodes refer to them by ParamId. Two
/// nodes may share one ParamId, in which case their gradients accumulate.
using ParamSet = std::vector<Tensor>;

enum class OpKind { Input, Affine, Conv2d, Relu, Flatten, Add, SoftmaxXent };

enum class Padding { Valid, Same };

struct Node {
  OpKind op = OpKind::Input;
  std::string name;
  std::vector<NodeId> inputs;
  std::vector<ParamId> params;  ///< Affine/Conv2d: {weight, bias}
  std::size_t stride = 1;       ///< Conv2d only
  Padding padding = Padding::Valid;
  Shape out_shape;
};

/// Static feed-forward computation graph. Nodes may only consume earlier
/// nodes, so insertion order is a topological order. Shapes are inferred
/// and validated as nodes are added.
///
/// A graph may end in a SoftmaxXent node. That node is evaluated only when a
/// target class is supplied; otherwise the trace stops at its input (the
/// logits).
class Graph {
 public:
  explicit Graph(Shape input_shape, std::string input_name = "input");

  ParamId add_param(Shape shape);

  /// y = W x + b for rank-1 x; W: [out, in], b: [out].
  NodeId affine(NodeId x, ParamId weight, ParamId bias, std::string name);
  /// 2-D convolution of a [C, H, W] input; weight [O, C, k, k], bias [O].
  NodeId conv2d(NodeId x, ParamId weight, ParamId bias, std::size_t stride,
                Padding padding, std::string name);
  NodeId relu(NodeId x, std::string name);
  NodeId flatten(NodeId x, std::string name);
  NodeId add(NodeId a, NodeId b, std::string name);
  /// Scalar -log softmax(logits)[target]. Must be the final node.
  NodeId softmax_xent(NodeId logits, std::string name = "loss");

  const Node& node(NodeId id) const { return nodes_.at(id); }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Shape& input_shape() const noexcept { return nodes_.front().out_shape; }
  const std::vector<Shape>& param_shapes() const noexcept { return param_shapes_; }

  /// Node id by name; throws if absent.
  NodeId find(std::string_view name) const;
  bool contains(std::string_view name) const;

  bool has_loss() const noexcept;
  /// Last node before the loss (or the last node if there is no loss).
  NodeId logits() const noexcept;

  /// Checks a parameter set against the declared shapes.
  void validate(const ParamSet& params) const;

 private:
  NodeId push(Node node);
  const Shape& shape_of(NodeId id, std::string_view consumer) const;

  std::vector<Node> nodes_;
  std::vector<Shape> param_shapes_;
};

/// Activations of every evaluated node, indexed by NodeId.
struct ActivationTrace {
  std::vector<Tensor> values;
  std::optional<std::size_t> target;

  const Tensor& operator[](NodeId id) const { return values.at(id); }
  const Tensor& output() const { return values.back(); }
};

/// Evaluates the graph. With a target class and a loss node the last value
/// is the scalar loss; otherwise the last value is the logits.
ActivationTrace forward(const Graph& graph, const Tensor& input, const ParamSet& params,
                        std::optional<std::size_t> target = std::nullopt);

/// Upstream gradient injected at a node during backpropagation.
struct Seed {
  NodeId node;
  Tensor grad;
};

struct Gradients {
  Tensor input;
  ParamSet params;  ///< empty when parameter gradients were not requested
};

/// Reverse-mode pass over an existing trace. The loss node (if evaluated) is
/// seeded with 1; additional seeds inject vector-Jacobian products at
/// arbitrary nodes.
Gradients backward(const Graph& graph, const ActivationTrace& trace, const ParamSet& params,
                   std::span<const Seed> seeds, bool want_param_grads);

/// d loss / d input for the given target class.
Tensor grad_input(const Graph& graph, const Tensor& input, const ParamSet& params,
                  std::size_t target_class);

/// d loss / d params for the given target class.
ParamSet grad_params(const Graph& graph, const Tensor& input, const ParamSet& params,
                     std::size_t target_class);

/// Softmax of a logit vector, numerically stabilised.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace agd
