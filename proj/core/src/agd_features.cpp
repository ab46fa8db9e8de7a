#include "agd/agd_features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "agd/common.hpp"
#include "agd/data.hpp"
#include "agd/serialization.hpp"

namespace agd {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

std::vector<NodeId> layer_ids(const TrainedModel& model, std::span<const std::string> layers) {
  std::vector<NodeId> ids;
  for (const auto& name : layers) {
    const NodeId id = model.graph().find(name);
    require(id < model.graph().logits() + 1, ErrorKind::Config,
            "layer '" + name + "' cannot be tapped");
    ids.push_back(id);
  }
  return ids;
}

std::vector<Tensor> taps(const ActivationTrace& trace, std::span<const NodeId> ids) {
  std::vector<Tensor> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(trace[id].flattened());
  return out;
}

std::vector<Tensor> taps(const TrainedModel& model, const Tensor& image,
                         std::span<const NodeId> ids) {
  return taps(forward(model.graph(), image, model.params()), ids);
}

// Sum over layers of J_m(image)^T upstream_m.
Tensor layer_vjp(const TrainedModel& model, const Tensor& image, std::span<const NodeId> ids,
                 std::span<const Tensor> upstream) {
  const auto trace = forward(model.graph(), image, model.params());
  std::vector<Seed> seeds;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    seeds.push_back({ids[i], upstream[i].reshaped(trace[ids[i]].shape())});
  }
  return backward(model.graph(), trace, model.params(), seeds, false).input;
}

}  // namespace

void validate(const PerturbationSpec& spec) {
  require(spec.pixel_count >= 1, ErrorKind::Config, "perturbation pixel_count must be >= 1");
  require(spec.magnitude >= 0.0 && spec.magnitude <= 1.0, ErrorKind::Config,
          "perturbation magnitude must lie in [0, 1]");
}

Tensor perturb(const Tensor& input, const PerturbationSpec& spec) {
  validate(spec);
  const bool image = input.rank() == 3;
  const std::size_t channels = image ? input.shape()[0] : 1;
  const std::size_t positions = input.size() / channels;
  const std::size_t chosen = std::min(spec.pixel_count, positions);

  RandomEngine rng(derive_seed(spec.seed, stream_id("perturb")));
  std::vector<std::size_t> pool(positions);
  std::iota(pool.begin(), pool.end(), 0);
  std::uniform_real_distribution<double> noise(-spec.magnitude, spec.magnitude);

  Tensor out = input;
  for (std::size_t i = 0; i < chosen; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, positions - 1);
    std::swap(pool[i], pool[pick(rng)]);
    const std::size_t pos = pool[i];
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t flat = c * positions + pos;
      out[flat] = std::clamp(out[flat] + noise(rng), 0.0, 1.0);
    }
  }
  return out;
}

ReferenceIndex::ReferenceIndex(std::string embedding_layer, std::size_t class_count,
                               std::vector<std::vector<Entry>> buckets)
    : layer_(std::move(embedding_layer)), buckets_(std::move(buckets)) {
  require(buckets_.size() == class_count, ErrorKind::Config,
          "reference index bucket count does not match class count");
}

ReferenceIndex ReferenceIndex::build(const TrainedModel& model, const LabeledSet& reference,
                                     const std::string& embedding_layer) {
  require(!reference.empty(), ErrorKind::Data, "reference database is empty");
  const NodeId layer = model.graph().find(embedding_layer);
  std::vector<std::vector<Entry>> buckets(model.class_count());
  for (std::size_t i = 0; i < reference.size(); ++i) {
    require(reference.labels[i] < model.class_count(), ErrorKind::Data,
            "reference label out of range");
    const auto trace = forward(model.graph(), reference.images[i], model.params());
    buckets[reference.labels[i]].push_back(
        {trace[layer].flattened(), reference.ids[i], reference.images[i]});
  }
  for (auto& bucket : buckets) {
    std::stable_sort(bucket.begin(), bucket.end(),
                     [](const Entry& a, const Entry& b) { return a.id < b.id; });
  }
  return ReferenceIndex(embedding_layer, model.class_count(), std::move(buckets));
}

std::size_t ReferenceIndex::size() const noexcept {
  std::size_t n = 0;
  for (const auto& b : buckets_) n += b.size();
  return n;
}

const ReferenceIndex::Entry& ReferenceIndex::nearest(const Tensor& query_embedding,
                                                     std::size_t cls,
                                                     EmptyClassPolicy policy) const {
  require(cls < buckets_.size(), ErrorKind::Config,
          "class " + std::to_string(cls) + " out of range for reference index");
  auto best_in = [&](const std::vector<Entry>& entries, const Entry* best, double& best_d) {
    for (const auto& e : entries) {
      double d = 0.0;
      for (std::size_t i = 0; i < e.embedding.size(); ++i) {
        const double diff = e.embedding[i] - query_embedding[i];
        d += diff * diff;
      }
      if (!best || d < best_d || (d == best_d && e.id < best->id)) {
        best = &e;
        best_d = d;
      }
    }
    return best;
  };

  const auto& bucket = buckets_[cls];
  double best_d = std::numeric_limits<double>::infinity();
  if (!bucket.empty()) {
    require(bucket.front().embedding.size() == query_embedding.size(), ErrorKind::Config,
            "query embedding dimension does not match the reference index");
    return *best_in(bucket, nullptr, best_d);
  }
  if (policy == EmptyClassPolicy::Error) {
    fail(ErrorKind::Data,
         "no reference prototype for predicted class " + std::to_string(cls));
  }
  const Entry* best = nullptr;
  for (const auto& b : buckets_) best = best_in(b, best, best_d);
  require(best != nullptr, ErrorKind::Data, "reference index is empty");
  return *best;
}

Tensor retrieve_prototype(const ReferenceIndex& index, const Tensor& query_embedding,
                          std::size_t predicted_class, EmptyClassPolicy policy) {
  return index.nearest(query_embedding, predicted_class, policy).image;
}

Tensor fgsm_step(const TrainedModel& model, const Tensor& image, std::size_t cls, double step) {
  if (step == 0.0) return image;
  const Tensor g = model.loss_gradient(image, cls);
  Tensor out = image;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(out[i] + step * sign(g[i]), 0.0, 1.0);
  }
  return out;
}

std::vector<Tensor> agd_deltas(const TrainedModel& model, const Tensor& image, std::size_t cls,
                               double step, std::span<const std::string> layers) {
  const auto ids = layer_ids(model, layers);
  const auto before = taps(model, image, ids);
  const auto after = taps(model, fgsm_step(model, image, cls, step), ids);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.push_back(after[i] - before[i]);
  return out;
}

Tensor agd_delta(const TrainedModel& model, const Tensor& image, std::size_t cls, double step,
                 const std::string& layer) {
  const std::string layers[] = {layer};
  return std::move(agd_deltas(model, image, cls, step, layers).front());
}

void validate(const AgdConfig& config, const TrainedModel& model) {
  require(config.k >= 1 && config.k <= model.class_count(), ErrorKind::Config,
          "K must lie in [1, " + std::to_string(model.class_count()) + "]");
  require(config.step >= 0.0, ErrorKind::Config, "AGD step size must be >= 0");
  require(!config.layers.empty(), ErrorKind::Config, "AGD needs at least one tap layer");
  layer_ids(model, config.layers);
  validate(config.perturbation);
}

AgdFeatureVector extract(const TrainedModel& model, const Tensor& query, const ReferenceIndex& index,
                         const AgdConfig& config) {
  validate(config, model);
  const auto ids = layer_ids(model, config.layers);
  const NodeId embedding = model.graph().find(index.embedding_layer());

  const auto query_trace = forward(model.graph(), query, model.params());
  const Tensor& logits = query_trace.output();
  const std::size_t predicted = argmax(logits.values());
  auto classes = top_k_indices(logits.values(), config.k);

  const Tensor& prototype =
      index.nearest(query_trace[embedding].flattened(), predicted, config.empty_class).image;
  const Tensor perturbed = perturb(query, config.perturbation);

  const std::array<const Tensor*, 3> images{&query, &perturbed, &prototype};
  std::array<std::vector<Tensor>, 3> base{taps(query_trace, ids), taps(model, perturbed, ids),
                                          taps(model, prototype, ids)};

  AgdFeatureVector v;
  v.k = config.k;
  v.layer_count = ids.size();
  v.classes = classes;
  v.scores.assign(3 * v.k * v.layer_count, 0.0);
  v.degenerate.assign(v.scores.size(), false);

  for (std::size_t rank = 0; rank < classes.size(); ++rank) {
    std::array<std::vector<Tensor>, 3> delta;
    for (std::size_t j = 0; j < 3; ++j) {
      const auto moved = taps(model, fgsm_step(model, *images[j], classes[rank], config.step), ids);
      for (std::size_t m = 0; m < ids.size(); ++m) delta[j].push_back(moved[m] - base[j][m]);
    }
    for (std::size_t m = 0; m < ids.size(); ++m) {
      const std::array<Similarity, 3> sims{cosine_similarity(delta[0][m], delta[1][m]),
                                           cosine_similarity(delta[0][m], delta[2][m]),
                                           cosine_similarity(delta[1][m], delta[2][m])};
      for (std::size_t which = 0; which < 3; ++which) {
        v.scores[v.offset(m, rank, which)] = sims[which].value;
        v.degenerate[v.offset(m, rank, which)] = sims[which].degenerate;
      }
    }
  }
  return v;
}

std::uint64_t example_seed(std::uint64_t master, std::size_t position) {
  return derive_seed(master, stream_id("agd-example"), position);
}

std::vector<AgdFeatureVector> extract_batch(const TrainedModel& model, std::span<const Tensor> queries,
                                            const ReferenceIndex& index, const AgdConfig& config,
                                            std::uint64_t master_seed, std::size_t jobs) {
  std::vector<AgdFeatureVector> out(queries.size());
  if (queries.empty()) return out;
  validate(config, model);
  parallel_for(queries.size(), jobs, [&](std::size_t i) {
    AgdConfig local = config;
    local.perturbation.seed = example_seed(master_seed, i);
    out[i] = extract(model, queries[i], index, local);
  });
  return out;
}

std::string ScoreMask::name() const {
  std::string s;
  if (alpha) s += "alpha";
  if (beta) s += s.empty() ? "beta" : "+beta";
  if (gamma) s += s.empty() ? "gamma" : "+gamma";
  return s.empty() ? "none" : s;
}

std::vector<double> select_scores(const AgdFeatureVector& v, std::size_t k,
                                  std::span<const std::size_t> layers, ScoreMask mask) {
  require(mask.count() > 0, ErrorKind::Config, "score subset must not be empty");
  require(k >= 1 && k <= v.k, ErrorKind::Config,
          "requested K=" + std::to_string(k) + " exceeds extracted K=" + std::to_string(v.k));
  const bool keep[3] = {mask.alpha, mask.beta, mask.gamma};
  std::vector<double> out;
  out.reserve(layers.size() * k * mask.count());
  for (auto m : layers) {
    require(m < v.layer_count, ErrorKind::Config, "layer position out of range");
    for (std::size_t rank = 0; rank < k; ++rank) {
      for (std::size_t which = 0; which < 3; ++which) {
        if (keep[which]) out.push_back(v.scores[v.offset(m, rank, which)]);
      }
    }
  }
  return out;
}

std::string features_csv(std::span<const AgdFeatureVector> benign,
                         std::span<const AgdFeatureVector> adversarial,
                         std::span<const std::size_t> benign_ids,
                         std::span<const std::size_t> adversarial_ids) {
  require(benign.size() == benign_ids.size() && adversarial.size() == adversarial_ids.size(),
          ErrorKind::Config, "feature and id lists differ in length");
  std::size_t width = 0;
  if (!benign.empty()) width = benign.front().size();
  else if (!adversarial.empty()) width = adversarial.front().size();

  std::ostringstream out;
  out << "example_id,label_is_adversarial";
  for (std::size_t i = 0; i < width; ++i) out << ",score_" << i;
  out << ",flags\n";
  auto rows = [&](std::span<const AgdFeatureVector> set, std::span<const std::size_t> ids,
                  int label) {
    for (std::size_t r = 0; r < set.size(); ++r) {
      require(set[r].size() == width, ErrorKind::Config, "feature vectors differ in length");
      out << ids[r] << ',' << label;
      for (double s : set[r].scores) out << ',' << format_double(s);
      out << ',';
      bool first = true;
      for (std::size_t i = 0; i < set[r].degenerate.size(); ++i) {
        if (!set[r].degenerate[i]) continue;
        if (!first) out << ';';
        out << i;
        first = false;
      }
      out << '\n';
    }
  };
  rows(benign, benign_ids, 0);
  rows(adversarial, adversarial_ids, 1);
  return out.str();
}

namespace {

// Gradient with respect to `image` of sum_m <upstream_m, f^m(fgsm(image)) - f^m(image)>.
Tensor delta_vjp(const TrainedModel& model, const Tensor& image, std::size_t cls, double step,
                 std::span<const NodeId> ids, std::span<const Tensor> upstream,
                 bool straight_through) {
  const Tensor g = model.loss_gradient(image, cls);
  Tensor moved = image;
  for (std::size_t i = 0; i < moved.size(); ++i) {
    moved[i] = std::clamp(moved[i] + step * sign(g[i]), 0.0, 1.0);
  }
  const Tensor after = layer_vjp(model, moved, ids, upstream);
  Tensor grad = after - layer_vjp(model, image, ids, upstream);
  if (straight_through && step > 0.0) {
    // d sign(g)/dI ~ d g/dI = Hessian of the loss; H * after by central
    // differences of the input gradient along `after`.
    double scale = 0.0;
    for (double v : after.values()) scale = std::max(scale, std::abs(v));
    if (scale > 0.0) {
      const double h = 1e-4 / scale;
      Tensor plus = image;
      Tensor minus = image;
      for (std::size_t i = 0; i < image.size(); ++i) {
        plus[i] += h * after[i];
        minus[i] -= h * after[i];
      }
      const Tensor hv = (1.0 / (2.0 * h)) *
                        (model.loss_gradient(plus, cls) - model.loss_gradient(minus, cls));
      grad += step * hv;
    }
  }
  return grad;
}

}  // namespace

ObjectiveValue agd_score_objective(const TrainedModel& model, const Tensor& query,
                                   const ReferenceIndex& index, const AgdConfig& config,
                                   bool straight_through) {
  validate(config, model);
  const auto ids = layer_ids(model, config.layers);
  const NodeId embedding = model.graph().find(index.embedding_layer());

  const auto query_trace = forward(model.graph(), query, model.params());
  const Tensor& logits = query_trace.output();
  const std::size_t predicted = argmax(logits.values());
  const auto classes = top_k_indices(logits.values(), config.k);
  const Tensor& prototype =
      index.nearest(query_trace[embedding].flattened(), predicted, config.empty_class).image;
  const Tensor perturbed = perturb(query, config.perturbation);

  ObjectiveValue result;
  result.gradient = Tensor(query.shape());
  for (auto cls : classes) {
    const auto dq = agd_deltas(model, query, cls, config.step, config.layers);
    const auto dp = agd_deltas(model, perturbed, cls, config.step, config.layers);
    const auto dn = agd_deltas(model, prototype, cls, config.step, config.layers);
    std::vector<Tensor> up_q, up_p;
    for (std::size_t m = 0; m < ids.size(); ++m) {
      result.value += cosine_similarity(dq[m], dp[m]).value +
                      cosine_similarity(dq[m], dn[m]).value +
                      cosine_similarity(dp[m], dn[m]).value;
      up_q.push_back(cosine_similarity_grad(dq[m], dp[m]) + cosine_similarity_grad(dq[m], dn[m]));
      up_p.push_back(cosine_similarity_grad(dp[m], dq[m]) + cosine_similarity_grad(dp[m], dn[m]));
    }
    // The transformed copy moves one-for-one with the query (clipping aside).
    result.gradient += delta_vjp(model, query, cls, config.step, ids, up_q, straight_through);
    result.gradient += delta_vjp(model, perturbed, cls, config.step, ids, up_p, straight_through);
  }
  return result;
}

}  // namespace agd
