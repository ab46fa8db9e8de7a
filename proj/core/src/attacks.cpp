#include "agd/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "agd/common.hpp"

namespace agd {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

AttackResult finish(const TrainedModel& model, const Tensor& input, std::size_t label,
                    Tensor adversarial, std::size_t iterations, std::size_t queries) {
  AttackResult r;
  r.success = model.predict(adversarial).label != label;
  r.linf_distance = linf_distance(adversarial, input);
  r.l2_distance = l2_distance(adversarial, input);
  r.adversarial = std::move(adversarial);
  r.iterations = iterations;
  r.queries = queries + 1;
  return r;
}

void project(Tensor& x, const Tensor& origin, double epsilon) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = std::clamp(x[i], origin[i] - epsilon, origin[i] + epsilon);
    x[i] = std::clamp(x[i], 0.0, 1.0);
  }
}

}  // namespace

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::Pgd: return "pgd";
    case AttackKind::Boundary: return "boundary";
    case AttackKind::AdaptivePgd: return "adaptive-pgd";
  }
  return "?";
}

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "fgsm") return AttackKind::Fgsm;
  if (name == "pgd") return AttackKind::Pgd;
  if (name == "boundary") return AttackKind::Boundary;
  if (name == "adaptive-pgd") return AttackKind::AdaptivePgd;
  fail(ErrorKind::Config, "unknown attack '" + name + "'");
}

void validate(const AttackConfig& config) {
  require(config.epsilon > 0.0, ErrorKind::Config, "attack epsilon must be > 0");
  require(config.steps >= 1 || config.kind == AttackKind::Boundary, ErrorKind::Config,
          "attack steps must be >= 1");
  if (config.kind == AttackKind::Pgd || config.kind == AttackKind::AdaptivePgd) {
    require(config.step_size > 0.0, ErrorKind::Config, "attack step size must be > 0");
  }
  if (config.kind == AttackKind::AdaptivePgd) {
    require(config.lambda >= 0.0, ErrorKind::Config, "adaptive lambda must be >= 0");
  }
  if (config.kind == AttackKind::Boundary) {
    require(config.orthogonal_step > 0.0 && config.contraction_step > 0.0 &&
                config.contraction_step < 1.0,
            ErrorKind::Config, "boundary step sizes must be positive, contraction < 1");
  }
}

Tensor fgsm(const TrainedModel& model, const Tensor& input, std::size_t label, double step) {
  return fgsm_step(model, input, label, step);
}

AttackResult fgsm_attack(const TrainedModel& model, const Tensor& input, std::size_t label,
                         const AttackConfig& config) {
  validate(config);
  return finish(model, input, label, fgsm(model, input, label, config.epsilon), 1, 1);
}

AttackResult pgd(const TrainedModel& model, const Tensor& input, std::size_t label,
                 const AttackConfig& config) {
  validate(config);
  Tensor x = input;
  for (std::size_t t = 0; t < config.steps; ++t) {
    const Tensor g = model.loss_gradient(x, label);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += config.step_size * sign(g[i]);
    project(x, input, config.epsilon);
  }
  return finish(model, input, label, std::move(x), config.steps, config.steps);
}

AttackResult boundary_attack(const TrainedModel& model, const Tensor& input, std::size_t label,
                             const AttackConfig& config, std::span<const Tensor> starting_pool) {
  validate(config);
  RandomEngine rng(derive_seed(config.seed, stream_id("boundary")));
  std::size_t queries = 0;
  auto adversarial = [&](const Tensor& x) {
    ++queries;
    return model.predict(x).label != label;
  };

  // Starting point: closest misclassified candidate.
  Tensor current;
  double current_d = std::numeric_limits<double>::infinity();
  for (const auto& candidate : starting_pool) {
    if (candidate.shape() != input.shape()) continue;
    const double d = l2_distance(candidate, input);
    if (d < current_d && adversarial(candidate)) {
      current = candidate;
      current_d = d;
    }
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t trial = 0; trial < config.init_trials && current.empty(); ++trial) {
    Tensor candidate(input.shape());
    for (auto& v : candidate.values()) v = unit(rng);
    if (adversarial(candidate)) {
      current = std::move(candidate);
      current_d = l2_distance(current, input);
    }
  }
  if (current.empty()) {
    AttackResult r;
    r.adversarial = input;
    r.queries = queries;
    return r;
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  std::size_t iterations = 0;
  double ortho = config.orthogonal_step;
  double contract = config.contraction_step;
  for (; iterations < config.steps; ++iterations) {
    if (current_d < 1e-9) break;
    // Orthogonal step: random direction with the radial component removed,
    // rescaled back onto the sphere of radius current_d around the input.
    Tensor direction(input.shape());
    for (auto& v : direction.values()) v = normal(rng);
    const Tensor radial = (1.0 / current_d) * (current - input);
    direction = direction - dot(direction, radial) * radial;
    const double dn = l2_norm(direction);
    if (dn == 0.0) continue;
    Tensor candidate = current + (ortho * current_d / dn) * direction;
    const Tensor offset = candidate - input;
    candidate = clipped(input + (current_d / l2_norm(offset)) * offset);
    // Contraction toward the input.
    candidate = candidate + contract * (input - candidate);
    candidate = clipped(std::move(candidate));
    const double d = l2_distance(candidate, input);
    if (d <= current_d && adversarial(candidate)) {
      current = std::move(candidate);
      current_d = d;
      ortho = std::min(ortho * 1.1, 0.5);
      contract = std::min(contract * 1.1, 0.5);
    } else {
      ortho = std::max(ortho * 0.95, 1e-3);
      contract = std::max(contract * 0.95, 1e-3);
    }
  }
  return finish(model, input, label, std::move(current), iterations, queries);
}

AttackResult adaptive_pgd(const TrainedModel& model, const Tensor& input, std::size_t label,
                          const AuxObjective& aux, const AttackConfig& config) {
  validate(config);
  Tensor x = input;
  for (std::size_t t = 0; t < config.steps; ++t) {
    Tensor g = config.lambda * model.loss_gradient(x, label);
    if (aux) g += aux(x, t).gradient;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += config.step_size * sign(g[i]);
    project(x, input, config.epsilon);
  }
  return finish(model, input, label, std::move(x), config.steps, config.steps);
}

AttackResult adaptive_pgd_agd(const TrainedModel& model, const Tensor& input, std::size_t label,
                              const ReferenceIndex& index, const AgdConfig& agd,
                              const AttackConfig& config) {
  validate(agd, model);
  auto aux = [&](const Tensor& x, std::size_t iteration) {
    AgdConfig local = agd;
    local.perturbation.seed = derive_seed(config.seed, stream_id("adaptive-agd"), iteration);
    return agd_score_objective(model, x, index, local);
  };
  return adaptive_pgd(model, input, label, aux, config);
}

AttackResult run_attack(const TrainedModel& model, const Tensor& input, std::size_t label,
                        const AttackConfig& config, std::span<const Tensor> starting_pool) {
  switch (config.kind) {
    case AttackKind::Fgsm: return fgsm_attack(model, input, label, config);
    case AttackKind::Pgd: return pgd(model, input, label, config);
    case AttackKind::Boundary: return boundary_attack(model, input, label, config, starting_pool);
    case AttackKind::AdaptivePgd:
      fail(ErrorKind::Config, "adaptive-pgd needs a detector objective; use adaptive_pgd_agd");
  }
  fail(ErrorKind::Config, "unknown attack kind");
}

}  // namespace agd
