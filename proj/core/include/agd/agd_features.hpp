#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "agd/model.hpp"
#include "agd/tensor.hpp"

namespace agd {

struct LabeledSet;

/// Random transformation applied to a query: uniform noise in
/// [-magnitude, magnitude] on up to `pixel_count` distinct pixel positions
/// (all channels of each chosen position), then clipped to [0, 1].
struct PerturbationSpec {
  std::size_t pixel_count = 3;
  double magnitude = 0.1;
  std::uint64_t seed = 0;
};

void validate(const PerturbationSpec& spec);

Tensor perturb(const Tensor& input, const PerturbationSpec& spec);

/// What retrieval does when the predicted class has no reference examples.
enum class EmptyClassPolicy { Error, GlobalNearest };

/// Reference database bucketed by ground-truth label. Each entry keeps the
/// embedding-layer activation of its image.
class ReferenceIndex {
 public:
  struct Entry {
    Tensor embedding;
    std::size_t id = 0;
    Tensor image;
  };

  ReferenceIndex(std::string embedding_layer, std::size_t class_count,
                 std::vector<std::vector<Entry>> buckets);

  static ReferenceIndex build(const TrainedModel& model, const LabeledSet& reference,
                              const std::string& embedding_layer = kEmbeddingLayer);

  const std::string& embedding_layer() const noexcept { return layer_; }
  std::size_t class_count() const noexcept { return buckets_.size(); }
  const std::vector<Entry>& bucket(std::size_t cls) const { return buckets_.at(cls); }
  std::size_t size() const noexcept;

  /// Nearest stored entry of class `cls` by Euclidean embedding distance;
  /// ties go to the lowest example id.
  const Entry& nearest(const Tensor& query_embedding, std::size_t cls,
                       EmptyClassPolicy policy = EmptyClassPolicy::Error) const;

 private:
  std::string layer_;
  std::vector<std::vector<Entry>> buckets_;
};

/// Image of the nearest reference example of the predicted class.
Tensor retrieve_prototype(const ReferenceIndex& index, const Tensor& query_embedding,
                          std::size_t predicted_class,
                          EmptyClassPolicy policy = EmptyClassPolicy::Error);

/// One signed-gradient step on the cross-entropy of class `cls`, clipped to
/// [0, 1]: I + step * sign(grad_I loss(I, cls)).
Tensor fgsm_step(const TrainedModel& model, const Tensor& image, std::size_t cls, double step);

/// Change of a tapped layer caused by fgsm_step: f^m(I_t) - f^m(I).
Tensor agd_delta(const TrainedModel& model, const Tensor& image, std::size_t cls, double step,
                 const std::string& layer);

/// agd_delta for several layers sharing a single FGSM step.
std::vector<Tensor> agd_deltas(const TrainedModel& model, const Tensor& image, std::size_t cls,
                               double step, std::span<const std::string> layers);

struct AgdConfig {
  std::size_t k = 4;
  double step = 0.0013;
  std::vector<std::string> layers{kEmbeddingLayer, kLogitLayer};
  PerturbationSpec perturbation;
  EmptyClassPolicy empty_class = EmptyClassPolicy::Error;
};

void validate(const AgdConfig& config, const TrainedModel& model);

/// Score layout: for each tap layer (in config order), for each of the top-K
/// classes (descending probability), the triple (alpha, beta, gamma).
struct AgdFeatureVector {
  std::vector<double> scores;
  std::vector<bool> degenerate;
  std::vector<std::size_t> classes;
  std::size_t k = 0;
  std::size_t layer_count = 0;

  std::size_t size() const noexcept { return scores.size(); }
  /// Position of a score in `scores`. `which` is 0 = alpha, 1 = beta, 2 = gamma.
  std::size_t offset(std::size_t layer, std::size_t rank, std::size_t which) const {
    return (layer * k + rank) * 3 + which;
  }
  double alpha(std::size_t layer, std::size_t rank) const { return scores[offset(layer, rank, 0)]; }
  double beta(std::size_t layer, std::size_t rank) const { return scores[offset(layer, rank, 1)]; }
  double gamma(std::size_t layer, std::size_t rank) const { return scores[offset(layer, rank, 2)]; }
};

/// Detection features for one query: predicted class, top-K classes,
/// transformed copy, class prototype, then the pairwise cosine similarities
/// of their AGDs for every class and tap layer.
AgdFeatureVector extract(const TrainedModel& model, const Tensor& query, const ReferenceIndex& index,
                         const AgdConfig& config);

/// Seed given to example `position` of a batch run under `master`.
std::uint64_t example_seed(std::uint64_t master, std::size_t position);

/// extract over a batch; example i uses perturbation seed example_seed(master, i).
std::vector<AgdFeatureVector> extract_batch(const TrainedModel& model, std::span<const Tensor> queries,
                                            const ReferenceIndex& index, const AgdConfig& config,
                                            std::uint64_t master_seed, std::size_t jobs = 1);

/// Which of the three similarity scores to keep.
struct ScoreMask {
  bool alpha = true;
  bool beta = true;
  bool gamma = true;

  std::size_t count() const noexcept { return alpha + beta + gamma; }
  std::string name() const;
};

/// Subset of a feature vector: first `k` ranks, the given layer positions and
/// the masked scores, preserving the canonical order.
std::vector<double> select_scores(const AgdFeatureVector& v, std::size_t k,
                                  std::span<const std::size_t> layers, ScoreMask mask = {});

/// CSV with header example_id,label_is_adversarial,score_0,...,flags. The
/// flags column lists the indices of degenerate scores joined by ';'.
std::string features_csv(std::span<const AgdFeatureVector> benign,
                         std::span<const AgdFeatureVector> adversarial,
                         std::span<const std::size_t> benign_ids,
                         std::span<const std::size_t> adversarial_ids);

/// Sum of every similarity score and its gradient with respect to the query,
/// used by the adaptive white-box attack. Retrieval and the top-K set are
/// held fixed at their current values; the sign inside each FGSM step is
/// treated as identity for differentiation (straight-through), which brings
/// in a Hessian-vector product of the loss computed by central differences.
struct ObjectiveValue {
  double value = 0.0;
  Tensor gradient;
};

ObjectiveValue agd_score_objective(const TrainedModel& model, const Tensor& query,
                                   const ReferenceIndex& index, const AgdConfig& config,
                                   bool straight_through = true);

}  // namespace agd
