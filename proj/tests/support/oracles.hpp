#pragma once

// Independent reference implementations used by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "agd/detector.hpp"
#include "agd/graph.hpp"

namespace oracle {

using agd::Graph;
using agd::ParamSet;
using agd::Tensor;

/// P(s+ > s-) + 0.5 P(s+ = s-) over all pairs.
inline double pairwise_auc(std::span<const double> pos, std::span<const double> neg) {
  double wins = 0.0;
  for (double p : pos) {
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

struct RandomNet {
  Graph graph;
  ParamSet params;
  Tensor input;
  std::size_t target = 0;
};

inline Tensor random_tensor(agd::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.values()) v = n(rng);
  return t;
}

/// Small random graph exercising every op: optional conv stack (valid/same,
/// stride 1/2), relu, flatten, a residual add, a shared affine weight, and a
/// softmax cross-entropy head.
inline RandomNet random_net(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<std::size_t> small(2, 4);
  const std::size_t c = small(rng) - 1, h = small(rng) + 2, w = small(rng) + 2;
  const bool conv = coin(rng);
  Graph g(conv ? agd::Shape{c, h, w} : agd::Shape{c * h * w});
  std::vector<agd::Shape> shapes;
  auto param = [&](agd::Shape s) {
    shapes.push_back(s);
    return g.add_param(std::move(s));
  };

  agd::NodeId x = 0;
  if (conv) {
    const std::size_t o1 = small(rng);
    x = g.conv2d(x, param({o1, c, 3, 3}), param({o1}), 1, agd::Padding::Same, "conv1");
    x = g.relu(x, "relu1");
    const std::size_t o2 = small(rng);
    const std::size_t stride = coin(rng) ? 2 : 1;
    const auto pad = coin(rng) ? agd::Padding::Same : agd::Padding::Valid;
    const std::size_t k = pad == agd::Padding::Valid ? 2 : 3;
    x = g.conv2d(x, param({o2, o1, k, k}), param({o2}), stride, pad, "conv2");
    x = g.relu(x, "relu2");
    x = g.flatten(x, "flatten");
  }
  const std::size_t in = g.node(x).out_shape[0];
  const std::size_t hidden = small(rng) + 1;
  x = g.affine(x, param({hidden, in}), param({hidden}), "fc1");
  x = g.relu(x, "relu3");
  // Shared square weight used twice, plus a residual connection.
  const agd::ParamId shared_w = param({hidden, hidden});
  const agd::ParamId shared_b = param({hidden});
  const agd::NodeId a = g.affine(x, shared_w, shared_b, "shared1");
  const agd::NodeId r = g.relu(a, "relu4");
  const agd::NodeId b = g.affine(r, shared_w, shared_b, "shared2");
  x = g.add(x, b, "residual");
  const std::size_t classes = small(rng);
  x = g.affine(x, param({classes, hidden}), param({classes}), "logits");
  g.softmax_xent(x);

  RandomNet net{std::move(g), {}, {}, 0};
  for (const auto& s : shapes) {
    const double fan_in = s.size() > 1 ? static_cast<double>(agd::element_count(s) / s[0]) : 1.0;
    net.params.push_back(random_tensor(s, rng, 1.0 / std::sqrt(fan_in)));
  }
  net.input = random_tensor(net.graph.input_shape(), rng);
  net.target = std::uniform_int_distribution<std::size_t>(0, classes - 1)(rng);
  return net;
}

/// Smallest |pre-activation| feeding any relu; finite differences are only
/// meaningful when this exceeds the probe step.
inline double relu_margin(const RandomNet& net) {
  const auto trace = agd::forward(net.graph, net.input, net.params, net.target);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t id = 0; id < net.graph.node_count(); ++id) {
    const auto& node = net.graph.node(id);
    if (node.op != agd::OpKind::Relu) continue;
    for (double v : trace[node.inputs[0]].values()) margin = std::min(margin, std::abs(v));
  }
  return margin;
}

inline double loss(const RandomNet& net, const Tensor& input, const ParamSet& params) {
  return agd::forward(net.graph, input, params, net.target).output()[0];
}

/// Central difference of f at the i-th coordinate of `t`.
template <typename F>
double central_difference(Tensor& t, std::size_t i, double h, F&& f) {
  const double orig = t[i];
  t[i] = orig + h;
  const double up = f();
  t[i] = orig - h;
  const double down = f();
  t[i] = orig;
  return (up - down) / (2.0 * h);
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

inline double gini(double pos, double n) {
  if (n <= 0) return 0.0;
  const double p = pos / n;
  return 1.0 - p * p - (1.0 - p) * (1.0 - p);
}

/// Depth-limited tree found by trying every feature and every midpoint at
/// each node and keeping the lexicographically first (feature, threshold)
/// within 1e-12 of the minimum weighted Gini impurity.
struct BruteNode {
  int feature = -1;
  double threshold = 0.0;
  double value = 0.0;
  std::vector<BruteNode> children;  ///< empty for leaves, else {left, right}

  double score(std::span<const double> x) const {
    if (feature < 0) return value;
    return children[x[static_cast<std::size_t>(feature)] <= threshold ? 0 : 1].score(x);
  }
};

inline BruteNode brute_tree(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                            const std::vector<std::size_t>& rows, std::size_t depth,
                            std::size_t max_depth, std::size_t min_leaf) {
  BruteNode node;
  double pos = 0.0;
  for (auto r : rows) pos += y[r];
  const double n = static_cast<double>(rows.size());
  node.value = pos / n;
  const double parent = gini(pos, n);
  if (depth >= max_depth || parent <= 0.0 || rows.size() < 2 * min_leaf) return node;

  struct Candidate {
    std::size_t feature;
    double threshold;
    double impurity;
  };
  std::vector<Candidate> all;
  for (std::size_t f = 0; f < x.front().size(); ++f) {
    std::vector<double> values;
    for (auto r : rows) values.push_back(x[r][f]);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
      const double t = 0.5 * (values[i] + values[i + 1]);
      double nl = 0, pl = 0, nr = 0, pr = 0;
      for (auto r : rows) {
        if (x[r][f] <= t) {
          ++nl;
          pl += y[r];
        } else {
          ++nr;
          pr += y[r];
        }
      }
      if (nl < static_cast<double>(min_leaf) || nr < static_cast<double>(min_leaf)) continue;
      all.push_back({f, t, (nl * gini(pl, nl) + nr * gini(pr, nr)) / n});
    }
  }
  if (all.empty()) return node;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : all) best = std::min(best, c.impurity);
  if (!(best < parent - 1e-12)) return node;
  const Candidate* chosen = nullptr;
  for (const auto& c : all) {
    if (c.impurity <= best + 1e-12) {
      chosen = &c;
      break;
    }
  }
  node.feature = static_cast<int>(chosen->feature);
  node.threshold = chosen->threshold;
  std::vector<std::size_t> left, right;
  for (auto r : rows) (x[r][chosen->feature] <= chosen->threshold ? left : right).push_back(r);
  node.children.push_back(brute_tree(x, y, left, depth + 1, max_depth, min_leaf));
  node.children.push_back(brute_tree(x, y, right, depth + 1, max_depth, min_leaf));
  return node;
}

/// Compares structure node by node (preorder).
inline bool same_tree(const agd::DecisionTree& t, std::size_t id, const BruteNode& b) {
  if (t.is_leaf(id) != (b.feature < 0)) return false;
  if (b.feature < 0) return std::abs(t.leaf_adversarial[id] - b.value) < 1e-12;
  return t.feature[id] == b.feature && t.threshold[id] == b.threshold &&
         same_tree(t, static_cast<std::size_t>(t.left[id]), b.children[0]) &&
         same_tree(t, static_cast<std::size_t>(t.right[id]), b.children[1]);
}

}  // namespace oracle
