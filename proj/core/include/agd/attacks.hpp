#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "agd/agd_features.hpp"
#include "agd/model.hpp"
#include "agd/tensor.hpp"

namespace agd {

enum class AttackKind { Fgsm, Pgd, Boundary, AdaptivePgd };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);

/// l-infinity threat model parameters. Pixel units, pixels in [0, 1].
struct AttackConfig {
  AttackKind kind = AttackKind::Pgd;
  double epsilon = 0.1;     ///< l-inf radius (FGSM uses it as the step)
  double step_size = 0.01;  ///< per-iteration step for PGD variants
  std::size_t steps = 20;   ///< iterations (boundary: walk budget)
  std::uint64_t seed = 0;
  double lambda = 2.0;      ///< adaptive only: weight of the classification loss

  // Boundary attack walk.
  std::size_t init_trials = 200;
  double orthogonal_step = 0.1;   ///< relative to the current distance
  double contraction_step = 0.05; ///< relative to the current distance
};

void validate(const AttackConfig& config);

struct AttackResult {
  Tensor adversarial;
  bool success = false;  ///< prediction differs from the supplied label
  std::size_t iterations = 0;
  std::size_t queries = 0;
  double linf_distance = 0.0;
  double l2_distance = 0.0;
};

/// I + step * sign(grad_I loss(I, label)), clipped to [0, 1].
Tensor fgsm(const TrainedModel& model, const Tensor& input, std::size_t label, double step);

/// Single FGSM step of size config.epsilon.
AttackResult fgsm_attack(const TrainedModel& model, const Tensor& input, std::size_t label,
                         const AttackConfig& config);

/// `steps` signed-gradient ascent steps on the loss of `label`, each
/// projected onto the epsilon l-inf ball around `input` and clipped.
AttackResult pgd(const TrainedModel& model, const Tensor& input, std::size_t label,
                 const AttackConfig& config);

/// Decision-based random walk. Starts from the closest misclassified
/// candidate among `starting_pool` and uniform-noise images, then alternates
/// an orthogonal step on the sphere around the original with a contraction
/// toward it, accepting only moves that stay misclassified. Distances are
/// L2; accepted moves never increase them.
AttackResult boundary_attack(const TrainedModel& model, const Tensor& input, std::size_t label,
                             const AttackConfig& config,
                             std::span<const Tensor> starting_pool = {});

/// Extra differentiable term maximised alongside the classification loss.
using AuxObjective = std::function<ObjectiveValue(const Tensor& x, std::size_t iteration)>;

/// PGD on lambda * loss(x, label) + aux(x).
AttackResult adaptive_pgd(const TrainedModel& model, const Tensor& input, std::size_t label,
                          const AuxObjective& aux, const AttackConfig& config);

/// White-box attack on the AGD detector: maximises every similarity score
/// together with the classification loss. A fresh random transformation is
/// drawn at each iteration.
AttackResult adaptive_pgd_agd(const TrainedModel& model, const Tensor& input, std::size_t label,
                              const ReferenceIndex& index, const AgdConfig& agd,
                              const AttackConfig& config);

/// Dispatch on config.kind for fgsm/pgd/boundary.
AttackResult run_attack(const TrainedModel& model, const Tensor& input, std::size_t label,
                        const AttackConfig& config, std::span<const Tensor> starting_pool = {});

}  // namespace agd
