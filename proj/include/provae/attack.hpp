#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "provae/data.hpp"
#include "provae/vae.hpp"

namespace provae {

struct AttackConfig {
  double eps_attack = 0.1;
  std::size_t steps = 40;
  /// Defaults to 2.5 * eps_attack / steps.
  std::optional<double> step_size;
  /// Noise draws averaged into each ELBO estimate.
  std::size_t n_noise = 4;
  /// Extra PGD runs started from uniformly random points of the ball.
  std::size_t restarts = 0;
  std::uint64_t seed = 0;

  double effective_step_size() const;
  /// Throws ContractError on negative radius, zero steps or zero noise draws.
  void validate() const;
};

/// Stack of `n` noise tensors, each [rows, J].
std::vector<Tensor> draw_noise_set(std::uint64_t seed, std::size_t n, std::size_t rows,
                                   std::size_t latent_dim);

/// Per-row ELBO averaged over `noise_set` (value and input gradient).
struct ObjectiveEval {
  std::vector<double> values;
  Tensor grad;  // d(values[r]) / d(x[r]), batched like x
};
ObjectiveEval elbo_objective(const VaeModel& model, const Tensor& x,
                             const std::vector<Tensor>& noise_set, bool with_grad = true);

struct PgdResult {
  Tensor delta;                          // [B, C, H, W]
  std::vector<double> objective_clean;   // at delta = 0
  std::vector<double> objective_attacked;
};

/// Signed-gradient descent on the ELBO of x + delta, projected onto
/// ||delta||_inf <= eps and x + delta in [0, 1]. Noise draws are held fixed
/// across iterations and the lowest-objective iterate is returned per row.
/// `warm_start` (clipped into the ball) replaces the zero starting point.
PgdResult pgd_ood_attack(const VaeModel& model, const Tensor& x, const AttackConfig& cfg,
                         const std::vector<Tensor>& noise_set,
                         const std::optional<Tensor>& warm_start = std::nullopt);

/// Draws cfg.n_noise noise tensors from cfg.seed and attacks.
PgdResult pgd_ood_attack(const VaeModel& model, const Tensor& x, const AttackConfig& cfg);

/// Max |delta| of each row.
std::vector<double> linf_norms(const Tensor& delta);
/// ||delta_r||_inf <= eps + slack and x + delta in [0 - slack, 1 + slack].
bool feasible(const Tensor& x, const Tensor& delta, double eps, double slack = 1e-9);

struct SampleAttack {
  double elbo_clean = 0;
  double elbo_attacked = 0;
  double delta_linf = 0;
};

struct SweepPoint {
  double eps_attack = 0;
  double mean_elbo = 0;
  double std_elbo = 0;
  std::size_t n = 0;
  std::vector<SampleAttack> samples;
};

struct AttackReport {
  std::vector<SweepPoint> points;
  /// Adversarial perturbation of the final radius, [N, C, H, W].
  Tensor final_delta;
  bool all_feasible = true;
};

/// PGD at each ascending radius, warm-started from the previous radius. The
/// reported ELBOs use fresh noise draws shared by every radius; a sample keeps
/// its previous perturbation whenever that scores lower, so each sample's
/// curve and the mean curve are non-increasing.
AttackReport attack_sweep(const VaeModel& model, const Dataset& dataset,
                          const std::vector<double>& eps_list, const AttackConfig& cfg,
                          std::size_t batch_size = 128);

struct CertificateComparison {
  double elbo_attacked = 0;  // PGD objective at the returned delta
  double elbo_lower = 0;     // certified bound, same noise draws
  double spread = 0;         // std of the per-draw certified bound
};

/// Attacks `x` [C, H, W] and certifies it with the same cfg.n_noise draws.
CertificateComparison compare_with_certificate(const VaeModel& model, const Tensor& x,
                                               double eps, const AttackConfig& cfg);

}  // namespace provae
