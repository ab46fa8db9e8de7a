#include "agd/graph.hpp"

#include <algorithm>
#include <cmath>

#include "agd/common.hpp"

namespace agd {

namespace {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Input: return "input";
    case OpKind::Affine: return "affine";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::Flatten: return "flatten";
    case OpKind::Add: return "add";
    case OpKind::SoftmaxXent: return "softmax_xent";
  }
  return "?";
}

Node make_node(OpKind op, std::string name, std::vector<NodeId> inputs) {
  Node node;
  node.op = op;
  node.name = std::move(name);
  node.inputs = std::move(inputs);
  return node;
}

[[noreturn]] void node_error(const Node& node, const std::string& what) {
  fail(ErrorKind::Config,
       "node '" + node.name + "' (" + op_name(node.op) + "): " + what);
}

std::size_t conv_pad(const Node& node, std::size_t kernel) {
  return node.padding == Padding::Same ? kernel / 2 : 0;
}

// Geometry of one convolution, resolved from its input and weight shapes.
struct ConvDims {
  std::size_t in_c, in_h, in_w, out_c, out_h, out_w, kh, kw, stride, pad_y, pad_x;
};

ConvDims conv_dims(const Node& node, const Shape& in, const Shape& weight) {
  ConvDims d{};
  d.in_c = in[0];
  d.in_h = in[1];
  d.in_w = in[2];
  d.out_c = weight[0];
  d.kh = weight[2];
  d.kw = weight[3];
  d.stride = node.stride;
  d.pad_y = conv_pad(node, d.kh);
  d.pad_x = conv_pad(node, d.kw);
  d.out_h = (d.in_h + 2 * d.pad_y - d.kh) / d.stride + 1;
  d.out_w = (d.in_w + 2 * d.pad_x - d.kw) / d.stride + 1;
  return d;
}

void conv_forward(const ConvDims& d, const Tensor& x, const Tensor& w, const Tensor& b,
                  Tensor& y) {
  for (std::size_t o = 0; o < d.out_c; ++o) {
    for (std::size_t oy = 0; oy < d.out_h; ++oy) {
      for (std::size_t ox = 0; ox < d.out_w; ++ox) {
        double acc = b[o];
        for (std::size_t c = 0; c < d.in_c; ++c) {
          for (std::size_t ky = 0; ky < d.kh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.stride + ky) -
                                      static_cast<std::ptrdiff_t>(d.pad_y);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.in_h)) continue;
            const double* wrow = w.values().data() + ((o * d.in_c + c) * d.kh + ky) * d.kw;
            const double* xrow = x.values().data() + (c * d.in_h + static_cast<std::size_t>(iy)) * d.in_w;
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                                        static_cast<std::ptrdiff_t>(d.pad_x);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.in_w)) continue;
              acc += wrow[kx] * xrow[ix];
            }
          }
        }
        y[(o * d.out_h + oy) * d.out_w + ox] = acc;
      }
    }
  }
}

void conv_backward(const ConvDims& d, const Tensor& x, const Tensor& w, const Tensor& dy,
                   Tensor& dx, Tensor* dw, Tensor* db) {
  for (std::size_t o = 0; o < d.out_c; ++o) {
    for (std::size_t oy = 0; oy < d.out_h; ++oy) {
      for (std::size_t ox = 0; ox < d.out_w; ++ox) {
        const double g = dy[(o * d.out_h + oy) * d.out_w + ox];
        if (g == 0.0) continue;
        if (db) (*db)[o] += g;
        for (std::size_t c = 0; c < d.in_c; ++c) {
          for (std::size_t ky = 0; ky < d.kh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * d.stride + ky) -
                                      static_cast<std::ptrdiff_t>(d.pad_y);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.in_h)) continue;
            const std::size_t wbase = ((o * d.in_c + c) * d.kh + ky) * d.kw;
            const std::size_t xbase = (c * d.in_h + static_cast<std::size_t>(iy)) * d.in_w;
            for (std::size_t kx = 0; kx < d.kw; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * d.stride + kx) -
                                        static_cast<std::ptrdiff_t>(d.pad_x);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.in_w)) continue;
              const std::size_t xi = xbase + static_cast<std::size_t>(ix);
              dx[xi] += w[wbase + kx] * g;
              if (dw) (*dw)[wbase + kx] += x[xi] * g;
            }
          }
        }
      }
    }
  }
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double peak = *std::max_element(p.begin(), p.end());
  double total = 0.0;
  for (auto& v : p) {
    v = std::exp(v - peak);
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

Graph::Graph(Shape input_shape, std::string input_name) {
  Node input;
  input.op = OpKind::Input;
  input.name = std::move(input_name);
  input.out_shape = std::move(input_shape);
  require(!input.out_shape.empty() && element_count(input.out_shape) > 0,
          ErrorKind::Config, "graph input shape must be non-empty");
  nodes_.push_back(std::move(input));
}

ParamId Graph::add_param(Shape shape) {
  require(!shape.empty() && element_count(shape) > 0, ErrorKind::Config,
          "parameter shape must be non-empty");
  param_shapes_.push_back(std::move(shape));
  return param_shapes_.size() - 1;
}

const Shape& Graph::shape_of(NodeId id, std::string_view consumer) const {
  if (id >= nodes_.size()) {
    fail(ErrorKind::Config, "node '" + std::string(consumer) + "' consumes unknown node " +
                                std::to_string(id));
  }
  return nodes_[id].out_shape;
}

NodeId Graph::push(Node node) {
  if (has_loss()) node_error(node, "cannot add nodes after the loss node");
  if (contains(node.name)) node_error(node, "duplicate node name");
  for (auto p : node.params) {
    if (p >= param_shapes_.size()) node_error(node, "unknown parameter id");
  }
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

NodeId Graph::affine(NodeId x, ParamId weight, ParamId bias, std::string name) {
  Node node = make_node(OpKind::Affine, std::move(name), {x});
  node.params = {weight, bias};
  const Shape& in = shape_of(x, node.name);
  if (weight >= param_shapes_.size() || bias >= param_shapes_.size())
    node_error(node, "unknown parameter id");
  const Shape& w = param_shapes_[weight];
  const Shape& b = param_shapes_[bias];
  if (in.size() != 1) node_error(node, "expects a rank-1 input, got " + shape_string(in));
  if (w.size() != 2 || w[1] != in[0])
    node_error(node, "weight " + shape_string(w) + " incompatible with input " +
                         shape_string(in));
  if (b != Shape{w[0]}) node_error(node, "bias " + shape_string(b) + " must be [" +
                                             std::to_string(w[0]) + "]");
  node.out_shape = {w[0]};
  return push(std::move(node));
}

NodeId Graph::conv2d(NodeId x, ParamId weight, ParamId bias, std::size_t stride,
                     Padding padding, std::string name) {
  Node node = make_node(OpKind::Conv2d, std::move(name), {x});
  node.params = {weight, bias};
  node.stride = stride;
  node.padding = padding;
  const Shape& in = shape_of(x, node.name);
  if (weight >= param_shapes_.size() || bias >= param_shapes_.size())
    node_error(node, "unknown parameter id");
  const Shape& w = param_shapes_[weight];
  const Shape& b = param_shapes_[bias];
  if (stride == 0) node_error(node, "stride must be positive");
  if (in.size() != 3) node_error(node, "expects a [C,H,W] input, got " + shape_string(in));
  if (w.size() != 4 || w[1] != in[0])
    node_error(node, "weight " + shape_string(w) + " incompatible with input " +
                         shape_string(in));
  if (b != Shape{w[0]}) node_error(node, "bias must be [" + std::to_string(w[0]) + "]");
  const std::size_t pad_y = conv_pad(node, w[2]);
  const std::size_t pad_x = conv_pad(node, w[3]);
  if (in[1] + 2 * pad_y < w[2] || in[2] + 2 * pad_x < w[3])
    node_error(node, "kernel larger than padded input");
  const auto dims = conv_dims(node, in, w);
  node.out_shape = {dims.out_c, dims.out_h, dims.out_w};
  return push(std::move(node));
}

NodeId Graph::relu(NodeId x, std::string name) {
  Node node = make_node(OpKind::Relu, std::move(name), {x});
  node.out_shape = shape_of(x, node.name);
  return push(std::move(node));
}

NodeId Graph::flatten(NodeId x, std::string name) {
  Node node = make_node(OpKind::Flatten, std::move(name), {x});
  node.out_shape = {element_count(shape_of(x, node.name))};
  return push(std::move(node));
}

NodeId Graph::add(NodeId a, NodeId b, std::string name) {
  Node node = make_node(OpKind::Add, std::move(name), {a, b});
  const Shape& sa = shape_of(a, node.name);
  const Shape& sb = shape_of(b, node.name);
  if (sa != sb) node_error(node, "operand shapes differ: " + shape_string(sa) + " vs " +
                                     shape_string(sb));
  node.out_shape = sa;
  return push(std::move(node));
}

NodeId Graph::softmax_xent(NodeId logits, std::string name) {
  Node node = make_node(OpKind::SoftmaxXent, std::move(name), {logits});
  const Shape& in = shape_of(logits, node.name);
  if (in.size() != 1 || in[0] < 2)
    node_error(node, "expects rank-1 logits with at least 2 classes, got " + shape_string(in));
  if (logits != nodes_.size() - 1) node_error(node, "must consume the last node");
  node.out_shape = {1};
  return push(std::move(node));
}

NodeId Graph::find(std::string_view name) const {
  for (NodeId i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].name == name) return i;
  }
  fail(ErrorKind::Config, "unknown layer '" + std::string(name) + "'");
}

bool Graph::contains(std::string_view name) const {
  return std::any_of(nodes_.begin(), nodes_.end(),
                     [&](const Node& n) { return n.name == name; });
}

bool Graph::has_loss() const noexcept {
  return nodes_.back().op == OpKind::SoftmaxXent;
}

NodeId Graph::logits() const noexcept {
  return has_loss() ? nodes_.size() - 2 : nodes_.size() - 1;
}

void Graph::validate(const ParamSet& params) const {
  if (params.size() != param_shapes_.size()) {
    fail(ErrorKind::Config, "parameter set has " + std::to_string(params.size()) +
                                " tensors, graph declares " +
                                std::to_string(param_shapes_.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != param_shapes_[i]) {
      fail(ErrorKind::Config, "parameter " + std::to_string(i) + " has shape " +
                                  shape_string(params[i].shape()) + ", expected " +
                                  shape_string(param_shapes_[i]));
    }
  }
}

ActivationTrace forward(const Graph& graph, const Tensor& input, const ParamSet& params,
                        std::optional<std::size_t> target) {
  if (input.shape() != graph.input_shape()) {
    fail(ErrorKind::Config, "node '" + graph.node(0).name + "' (input): expected shape " +
                                shape_string(graph.input_shape()) + ", got " +
                                shape_string(input.shape()));
  }
  graph.validate(params);

  ActivationTrace trace;
  trace.target = target;
  trace.values.reserve(graph.node_count());
  trace.values.push_back(input);

  for (NodeId id = 1; id < graph.node_count(); ++id) {
    const Node& node = graph.node(id);
    if (node.op == OpKind::SoftmaxXent && !target) break;
    const Tensor& x = trace.values[node.inputs[0]];
    Tensor y(node.out_shape);
    switch (node.op) {
      case OpKind::Input:
        break;
      case OpKind::Affine: {
        const Tensor& w = params[node.params[0]];
        const Tensor& b = params[node.params[1]];
        const std::size_t rows = w.shape()[0];
        const std::size_t cols = w.shape()[1];
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = b[r];
          const double* wr = w.values().data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
          y[r] = acc;
        }
        break;
      }
      case OpKind::Conv2d: {
        const Tensor& w = params[node.params[0]];
        conv_forward(conv_dims(node, x.shape(), w.shape()), x, w, params[node.params[1]], y);
        break;
      }
      case OpKind::Relu:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
        break;
      case OpKind::Flatten:
        y = x.flattened();
        break;
      case OpKind::Add:
        y = x + trace.values[node.inputs[1]];
        break;
      case OpKind::SoftmaxXent: {
        if (*target >= x.size()) {
          node_error(node, "target class " + std::to_string(*target) + " out of range [0, " +
                               std::to_string(x.size()) + ")");
        }
        const double peak = *std::max_element(x.values().begin(), x.values().end());
        double total = 0.0;
        for (double v : x.values()) total += std::exp(v - peak);
        y[0] = std::log(total) + peak - x[*target];
        break;
      }
    }
    trace.values.push_back(std::move(y));
  }

  if (target && !graph.has_loss()) {
    fail(ErrorKind::Config, "target class supplied but graph has no softmax_xent node");
  }
  return trace;
}

Gradients backward(const Graph& graph, const ActivationTrace& trace, const ParamSet& params,
                   std::span<const Seed> seeds, bool want_param_grads) {
  const std::size_t evaluated = trace.values.size();
  std::vector<Tensor> adj;
  adj.reserve(evaluated);
  for (std::size_t i = 0; i < evaluated; ++i) adj.emplace_back(trace.values[i].shape());

  Gradients out;
  if (want_param_grads) {
    for (const auto& shape : graph.param_shapes()) out.params.emplace_back(shape);
  }

  if (graph.has_loss() && evaluated == graph.node_count()) adj.back()[0] = 1.0;
  for (const auto& seed : seeds) {
    if (seed.node >= evaluated) {
      fail(ErrorKind::Config, "gradient seed at node " + std::to_string(seed.node) +
                                  " which was not evaluated");
    }
    if (seed.grad.size() != adj[seed.node].size()) {
      fail(ErrorKind::Config, "gradient seed for node '" + graph.node(seed.node).name +
                                  "' has " + std::to_string(seed.grad.size()) +
                                  " elements, expected " +
                                  std::to_string(adj[seed.node].size()));
    }
    auto dst = adj[seed.node].values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += seed.grad[i];
  }

  for (NodeId id = evaluated; id-- > 1;) {
    const Node& node = graph.node(id);
    const Tensor& dy = adj[id];
    Tensor& dx = adj[node.inputs[0]];
    const Tensor& x = trace.values[node.inputs[0]];
    switch (node.op) {
      case OpKind::Input:
        break;
      case OpKind::Affine: {
        const Tensor& w = params[node.params[0]];
        const std::size_t rows = w.shape()[0];
        const std::size_t cols = w.shape()[1];
        Tensor* dw = want_param_grads ? &out.params[node.params[0]] : nullptr;
        Tensor* db = want_param_grads ? &out.params[node.params[1]] : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const double g = dy[r];
          if (g == 0.0) continue;
          const double* wr = w.values().data() + r * cols;
          for (std::size_t c = 0; c < cols; ++c) dx[c] += wr[c] * g;
          if (dw) {
            double* dwr = dw->values().data() + r * cols;
            for (std::size_t c = 0; c < cols; ++c) dwr[c] += x[c] * g;
          }
          if (db) (*db)[r] += g;
        }
        break;
      }
      case OpKind::Conv2d: {
        const Tensor& w = params[node.params[0]];
        conv_backward(conv_dims(node, x.shape(), w.shape()), x, w, dy, dx,
                      want_param_grads ? &out.params[node.params[0]] : nullptr,
                      want_param_grads ? &out.params[node.params[1]] : nullptr);
        break;
      }
      case OpKind::Relu:
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (x[i] > 0.0) dx[i] += dy[i];
        }
        break;
      case OpKind::Flatten:
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i];
        break;
      case OpKind::Add: {
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i];
        Tensor& db = adj[node.inputs[1]];
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i];
        break;
      }
      case OpKind::SoftmaxXent: {
        const auto p = softmax(x.values());
        const double g = dy[0];
        for (std::size_t i = 0; i < p.size(); ++i) {
          dx[i] += g * (p[i] - (i == *trace.target ? 1.0 : 0.0));
        }
        break;
      }
    }
  }

  out.input = std::move(adj[0]);
  return out;
}

namespace {

ActivationTrace loss_trace(const Graph& graph, const Tensor& input, const ParamSet& params,
                           std::size_t target_class) {
  if (!graph.has_loss()) {
    fail(ErrorKind::Config, "gradient requested but graph does not end in softmax_xent");
  }
  const std::size_t classes = graph.node(graph.logits()).out_shape[0];
  if (target_class >= classes) {
    fail(ErrorKind::Config, "target class " + std::to_string(target_class) +
                                " out of range [0, " + std::to_string(classes) + ")");
  }
  return forward(graph, input, params, target_class);
}

}  // namespace

Tensor grad_input(const Graph& graph, const Tensor& input, const ParamSet& params,
                  std::size_t target_class) {
  const auto trace = loss_trace(graph, input, params, target_class);
  return backward(graph, trace, params, {}, false).input;
}

ParamSet grad_params(const Graph& graph, const Tensor& input, const ParamSet& params,
                     std::size_t target_class) {
  const auto trace = loss_trace(graph, input, params, target_class);
  return backward(graph, trace, params, {}, true).params;
}

}  // namespace agd
