#include "provae/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "provae/robust.hpp"

namespace provae {

namespace {

constexpr std::uint64_t kAttackStream = 0x61747461636bULL;
constexpr std::uint64_t kEvalStream = 0x6576616cULL;
constexpr std::uint64_t kRestartStream = 0x72657374ULL;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(index)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t{words[0]} << 32) | words[1];
}

// Projects `adv` onto the box [x - eps, x + eps] intersected with [0, 1].
void project(const Tensor& x, double eps, Tensor& adv) {
  for (std::size_t i = 0; i < x.numel(); ++i)
    adv[i] = std::clamp(std::clamp(adv[i], x[i] - eps, x[i] + eps), 0.0, 1.0);
}

Tensor difference(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  return out;
}

void copy_row(const Tensor& src, Tensor& dst, std::size_t row) {
  const std::size_t w = src.shape().row_size();
  std::copy_n(src.data() + row * w, w, dst.data() + row * w);
}

struct PgdRun {
  Tensor best_adv;
  std::vector<double> best_value;
};

void run_pgd(const VaeModel& model, const Tensor& x, const AttackConfig& cfg,
             const std::vector<Tensor>& noise_set, Tensor adv, PgdRun& best) {
  const double eps = cfg.eps_attack;
  const double alpha = cfg.effective_step_size();
  const std::size_t rows = x.shape()[0];
  const std::size_t width = x.shape().row_size();
  project(x, eps, adv);
  for (std::size_t it = 0; it <= cfg.steps; ++it) {
    const bool last = it == cfg.steps;
    const ObjectiveEval eval = elbo_objective(model, adv, noise_set, !last);
    for (std::size_t r = 0; r < rows; ++r)
      if (eval.values[r] < best.best_value[r]) {
        best.best_value[r] = eval.values[r];
        copy_row(adv, best.best_adv, r);
      }
    if (last) break;
    for (std::size_t i = 0; i < rows * width; ++i) {
      const double g = eval.grad[i];
      adv[i] -= alpha * static_cast<double>((g > 0) - (g < 0));
    }
    project(x, eps, adv);
  }
}

double mean_std(const std::vector<double>& v, double& sd) {
  double s = 0;
  for (double x : v) s += x;
  const double m = s / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return m;
}

}  // namespace

double AttackConfig::effective_step_size() const {
  return step_size ? *step_size : 2.5 * eps_attack / static_cast<double>(steps);
}

void AttackConfig::validate() const {
  if (!(eps_attack >= 0)) throw ContractError("eps_attack must be nonnegative");
  if (steps == 0) throw ContractError("PGD needs at least one step");
  if (n_noise == 0) throw ContractError("attack needs at least one noise draw");
  if (!(effective_step_size() >= 0)) throw ContractError("PGD step size must be nonnegative");
}

std::vector<Tensor> draw_noise_set(std::uint64_t seed, std::size_t n, std::size_t rows,
                                   std::size_t latent_dim) {
  Rng rng(seed);
  std::vector<Tensor> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(draw_normal(rng, rows, latent_dim));
  return out;
}

ObjectiveEval elbo_objective(const VaeModel& model, const Tensor& x,
                             const std::vector<Tensor>& noise_set, bool with_grad) {
  if (noise_set.empty()) throw ContractError("elbo_objective: no noise draws");
  Tape tape;
  ModelGraph graph(model, tape);
  Var xv = with_grad ? tape.leaf(x) : tape.constant(x);
  const Encoded enc = graph.encode(xv);
  Var kl = gaussian_kl(enc.mu, enc.logsigma);
  std::optional<Var> recon;
  for (const Tensor& noise : noise_set) {
    Var g = graph.decode(reparameterize(enc.mu, enc.logsigma, tape.constant(noise)));
    Var r = sum_rows(square(sub(xv, g)));
    recon = recon ? add(*recon, r) : r;
  }
  const double n = static_cast<double>(noise_set.size());
  const double w = 1.0 / (2.0 * model.sigma0 * model.sigma0);
  Var objective = sub(scale(*recon, -w / n), kl);
  ObjectiveEval out;
  const auto v = objective.value().values();
  out.values.assign(v.begin(), v.end());
  if (with_grad) {
    tape.backward(sum(objective));
    out.grad = xv.grad();
  } else {
    out.grad = Tensor(x.shape(), 0.0);
  }
  return out;
}

PgdResult pgd_ood_attack(const VaeModel& model, const Tensor& x, const AttackConfig& cfg,
                         const std::vector<Tensor>& noise_set,
                         const std::optional<Tensor>& warm_start) {
  cfg.validate();
  for (double v : x.values())
    if (v < 0 || v > 1) throw ContractError("pgd_ood_attack: input outside [0, 1]");
  PgdResult result;
  result.objective_clean = elbo_objective(model, x, noise_set, false).values;
  PgdRun best{x, result.objective_clean};

  if (cfg.eps_attack > 0) {
    Tensor start = x;
    if (warm_start) {
      if (warm_start->shape() != x.shape())
        throw DimensionError("pgd_ood_attack: warm start " + warm_start->shape().str() +
                             " vs input " + x.shape().str());
      for (std::size_t i = 0; i < x.numel(); ++i) start[i] += (*warm_start)[i];
    }
    run_pgd(model, x, cfg, noise_set, start, best);
    for (std::size_t k = 0; k < cfg.restarts; ++k) {
      Rng rng(mix_seed(cfg.seed, kRestartStream, k));
      std::uniform_real_distribution<double> u(-cfg.eps_attack, cfg.eps_attack);
      Tensor random_start = x;
      for (auto& v : random_start.values()) v += u(rng);
      run_pgd(model, x, cfg, noise_set, random_start, best);
    }
  }
  result.delta = difference(best.best_adv, x);
  result.objective_attacked = std::move(best.best_value);
  return result;
}

PgdResult pgd_ood_attack(const VaeModel& model, const Tensor& x, const AttackConfig& cfg) {
  const auto noise =
      draw_noise_set(mix_seed(cfg.seed, kAttackStream, 0), cfg.n_noise, x.shape()[0],
                     model.latent_dim());
  return pgd_ood_attack(model, x, cfg, noise);
}

std::vector<double> linf_norms(const Tensor& delta) {
  const std::size_t rows = delta.shape()[0];
  const std::size_t width = delta.shape().row_size();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < width; ++j)
      out[r] = std::max(out[r], std::abs(delta[r * width + j]));
  return out;
}

bool feasible(const Tensor& x, const Tensor& delta, double eps, double slack) {
  if (x.shape() != delta.shape()) return false;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (std::abs(delta[i]) > eps + slack) return false;
    const double p = x[i] + delta[i];
    if (p < -slack || p > 1.0 + slack) return false;
  }
  return true;
}

AttackReport attack_sweep(const VaeModel& model, const Dataset& dataset,
                          const std::vector<double>& eps_list, const AttackConfig& cfg,
                          std::size_t batch_size) {
  if (dataset.empty()) throw ContractError("attack_sweep: dataset is empty");
  if (eps_list.empty()) throw ContractError("attack_sweep: radius list is empty");
  if (!std::is_sorted(eps_list.begin(), eps_list.end()) || eps_list.front() < 0)
    throw ContractError("attack_sweep: radii must be nonnegative and ascending");

  AttackReport report;
  report.points.resize(eps_list.size());
  for (std::size_t e = 0; e < eps_list.size(); ++e) report.points[e].eps_attack = eps_list[e];
  std::vector<Tensor> final_rows;

  std::size_t chunk = 0;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size, ++chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(dataset.size(), start + batch_size); ++i)
      idx.push_back(i);
    const Tensor x = gather(dataset, idx);
    const std::size_t rows = idx.size();
    const auto attack_noise = draw_noise_set(mix_seed(cfg.seed, kAttackStream, chunk),
                                             cfg.n_noise, rows, model.latent_dim());
    const auto eval_noise = draw_noise_set(mix_seed(cfg.seed, kEvalStream, chunk), cfg.n_noise,
                                           rows, model.latent_dim());
    const std::vector<double> clean = elbo_objective(model, x, eval_noise, false).values;

    Tensor prev_delta(x.shape(), 0.0);
    std::vector<double> prev_eval = clean;
    for (std::size_t e = 0; e < eps_list.size(); ++e) {
      AttackConfig step_cfg = cfg;
      step_cfg.eps_attack = eps_list[e];
      const PgdResult res = pgd_ood_attack(model, x, step_cfg, attack_noise, prev_delta);
      Tensor adv = x;
      for (std::size_t i = 0; i < x.numel(); ++i) adv[i] += res.delta[i];
      const std::vector<double> evaluated = elbo_objective(model, adv, eval_noise, false).values;
      for (std::size_t r = 0; r < rows; ++r) {
        if (evaluated[r] < prev_eval[r]) {
          prev_eval[r] = evaluated[r];
          copy_row(res.delta, prev_delta, r);
        }
      }
      if (!feasible(x, prev_delta, eps_list[e])) report.all_feasible = false;
      const auto norms = linf_norms(prev_delta);
      for (std::size_t r = 0; r < rows; ++r)
        report.points[e].samples.push_back({clean[r], prev_eval[r], norms[r]});
    }
    for (std::size_t r = 0; r < rows; ++r) final_rows.push_back(unstack_row(prev_delta, r));
  }

  for (auto& p : report.points) {
    std::vector<double> values;
    for (const auto& s : p.samples) values.push_back(s.elbo_attacked);
    p.mean_elbo = mean_std(values, p.std_elbo);
    p.n = values.size();
  }
  report.final_delta = stack(final_rows);
  return report;
}

CertificateComparison compare_with_certificate(const VaeModel& model, const Tensor& x,
                                               double eps, const AttackConfig& cfg) {
  const std::vector<Tensor> one{x};
  const Tensor batch = stack(one);
  const auto noise =
      draw_noise_set(mix_seed(cfg.seed, kAttackStream, 0), cfg.n_noise, 1, model.latent_dim());
  AttackConfig c = cfg;
  c.eps_attack = eps;
  const PgdResult attack = pgd_ood_attack(model, batch, c, noise);

  std::vector<double> bounds;
  for (const Tensor& n : noise)
    bounds.push_back(elbo_lower_bound_values(model, batch, eps, n).front().elbo_lower);
  CertificateComparison out;
  out.elbo_attacked = attack.objective_attacked.front();
  out.elbo_lower = mean_std(bounds, out.spread);
  return out;
}

}  // namespace provae
