#include "provae/robust.hpp"

#include <algorithm>
#include <cmath>

namespace provae {

namespace {

Tensor positive_part(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) out[i] = t[i] > 0 ? t[i] : 0.0;
  return out;
}

Tensor negative_part(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) out[i] = t[i] < 0 ? t[i] : 0.0;
  return out;
}

// s - log s with s = exp(log_var), convex in s with its minimum at s = 1.
Var variance_term(Var log_var) { return sub(exp(log_var), log_var); }

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t{words[0]} << 32) | words[1];
}

double mean_of(const Tensor& t) {
  double s = 0;
  for (double v : t.values()) s += v;
  return s / static_cast<double>(t.numel());
}

}  // namespace

std::pair<Tensor, Tensor> input_box(const Tensor& x, double eps) {
  if (!(eps >= 0)) throw ContractError("perturbation radius must be nonnegative, got " +
                                       std::to_string(eps));
  Tensor lo(x.shape()), hi(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    lo[i] = std::clamp(x[i] - eps, 0.0, 1.0);
    hi[i] = std::clamp(x[i] + eps, 0.0, 1.0);
  }
  return {std::move(lo), std::move(hi)};
}

IntervalTensor input_bounds(Tape& tape, const Tensor& x, double eps) {
  auto [lo, hi] = input_box(x, eps);
  return {tape.constant(std::move(lo)), tape.constant(std::move(hi))};
}

EncoderBounds encoder_bounds(const ModelGraph& graph, const IntervalTensor& x) {
  const VaeModel& m = graph.model();
  std::size_t cursor = 0;
  const IntervalTensor h = forward(m.trunk, graph.trunk_params(), cursor, x);
  const auto mu = graph.mu_params();
  const auto ls = graph.logsigma_params();
  EncoderBounds eb;
  eb.mu = bound_affine(mu[0], mu[1], h);
  eb.logsigma = bound_affine(ls[0], ls[1], h);
  eb.sigma = bound_monotonic(UnaryKind::exp, eb.logsigma);
  return eb;
}

RowBounds kl_bounds(const EncoderBounds& eb) {
  const IntervalTensor log_var{scale(eb.logsigma.lower, 2.0), scale(eb.logsigma.upper, 2.0)};
  const IntervalTensor mu_sq = bound_square(eb.mu);

  Var var_hi = maximum(variance_term(log_var.lower), variance_term(log_var.upper));
  Var hi = scale(sum_rows(add_scalar(add(var_hi, mu_sq.upper), -1.0)), 0.5);

  // log_var = 0 is sigma^2 = 1, the minimiser of s - log s.
  Var var_lo = variance_term(closest_to_zero(log_var));
  Var lo = scale(sum_rows(add_scalar(add(var_lo, mu_sq.lower), -1.0)), 0.5);
  return {lo, hi};
}

IntervalTensor latent_bounds(const EncoderBounds& eb, Var noise) {
  if (noise.shape() != eb.mu.shape())
    throw DimensionError("latent_bounds: noise " + noise.shape().str() + " vs latent " +
                         eb.mu.shape().str());
  Tape& tape = noise.tape();
  Var pos = tape.constant(positive_part(noise.value()));
  Var neg = tape.constant(negative_part(noise.value()));
  Var lower = add(add(eb.mu.lower, mul(eb.sigma.upper, neg)), mul(eb.sigma.lower, pos));
  Var upper = add(add(eb.mu.upper, mul(eb.sigma.lower, neg)), mul(eb.sigma.upper, pos));
  return {lower, upper};
}

IntervalTensor decoder_bounds(const ModelGraph& graph, const IntervalTensor& z) {
  std::size_t cursor = 0;
  return forward(graph.model().decoder, graph.decoder_params(), cursor, z);
}

RowBounds recon_sq_bounds(const IntervalTensor& input, const IntervalTensor& decoded) {
  if (input.shape() != decoded.shape())
    throw DimensionError("recon_sq_bounds: input " + input.shape().str() + " vs decoded " +
                         decoded.shape().str());
  const IntervalTensor residual{sub(input.lower, decoded.upper), sub(input.upper, decoded.lower)};
  auto [lo, hi] = bound_sum_squares_rows(residual);
  return {lo, hi};
}

BoundedElboTerms elbo_lower_bound(const ModelGraph& graph, const Tensor& x, double eps,
                                  const Tensor& noise) {
  Tape& tape = graph.tape();
  BoundedElboTerms out;
  out.input = input_bounds(tape, x, eps);
  out.encoder = encoder_bounds(graph, out.input);
  out.kl = kl_bounds(out.encoder);
  out.z = latent_bounds(out.encoder, tape.constant(noise));
  out.decoded = decoder_bounds(graph, out.z);
  out.recon_sq = recon_sq_bounds(out.input, out.decoded);
  const double sigma0 = graph.model().sigma0;
  out.elbo_lower = sub(scale(out.recon_sq.hi, -1.0 / (2.0 * sigma0 * sigma0)), out.kl.hi);
  return out;
}

std::vector<BoundedElbo> elbo_lower_bound_values(const VaeModel& model, const Tensor& x,
                                                 double eps, const Tensor& noise) {
  Tape tape;
  ModelGraph graph(model, tape);
  const BoundedElboTerms b = elbo_lower_bound(graph, x, eps, noise);
  const std::size_t rows = x.shape()[0];
  std::vector<BoundedElbo> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto& e = out[r];
    e.elbo_lower = b.elbo_lower.value()[r];
    e.kl = {b.kl.lo.value()[r], b.kl.hi.value()[r]};
    e.recon_sq = {b.recon_sq.lo.value()[r], b.recon_sq.hi.value()[r]};
    e.z_lower = unstack_row(b.z.lower.value(), r);
    e.z_upper = unstack_row(b.z.upper.value(), r);
    e.noise = unstack_row(noise, r);
  }
  return out;
}

Certificate certify(const VaeModel& model, const Tensor& x, double eps, double alpha,
                    std::size_t n_noise, std::uint64_t seed) {
  if (n_noise == 0) throw ContractError("certify: n_noise must be at least 1");
  Rng rng(seed);
  const Tensor noise = draw_normal(rng, n_noise, model.latent_dim());
  const std::vector<Tensor> copies(n_noise, x);
  const auto bounds = elbo_lower_bound_values(model, stack(copies), eps, noise);
  Certificate c;
  for (const auto& b : bounds) c.per_draw.push_back(b.elbo_lower);
  double s = 0;
  for (double v : c.per_draw) s += v;
  c.bound = s / static_cast<double>(n_noise);
  if (n_noise > 1) {
    double ss = 0;
    for (double v : c.per_draw) ss += (v - c.bound) * (v - c.bound);
    c.spread = std::sqrt(ss / static_cast<double>(n_noise - 1));
  }
  c.certified = c.bound >= alpha;
  return c;
}

// ---------------------------------------------------------------------------

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "momentum") return OptimizerKind::momentum;
  if (name == "adam") return OptimizerKind::adam;
  throw ContractError("unknown optimizer '" + name + "' (expected sgd, momentum or adam)");
}

const char* to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::momentum: return "momentum";
    case OptimizerKind::adam: return "adam";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(eps_train >= 0)) throw ContractError("eps_train must be nonnegative");
  if (!(learning_rate > 0)) throw ContractError("learning rate must be positive");
  if (batch_size == 0) throw ContractError("batch size must be at least 1");
}

double TrainConfig::eps_at(std::size_t epoch) const {
  return eps_schedule ? eps_schedule(epoch) : eps_train;
}

std::function<double(std::size_t)> linear_eps_ramp(double eps_train, std::size_t warmup_epochs) {
  return [=](std::size_t epoch) {
    if (warmup_epochs == 0 || epoch + 1 >= warmup_epochs) return eps_train;
    return eps_train * static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs);
  };
}

Trainer::Trainer(VaeModel& model, TrainConfig config)
    : model_(&model), config_(std::move(config)) {
  config_.validate();
}

StepResult Trainer::step(const Tensor& batch, const Tensor& noise, double eps) {
  Tape tape;
  ModelGraph graph(*model_, tape, /*trainable=*/true);
  const BoundedElboTerms bound = elbo_lower_bound(graph, batch, eps, noise);
  Var objective = mean(bound.elbo_lower);
  StepResult result;
  result.mean_lower_bound = objective.value().item();
  if (!std::isfinite(result.mean_lower_bound))
    throw TrainingError("non-finite certified bound (" + std::to_string(result.mean_lower_bound) +
                        ") at epoch " + std::to_string(epoch_) + ", step " +
                        std::to_string(steps_) + "; lower the learning rate or eps");
  if (eps == 0) {
    result.mean_elbo = result.mean_lower_bound;
  } else {
    const auto elbos = elbo_values(*model_, batch, noise);
    double s = 0;
    for (double v : elbos) s += v;
    result.mean_elbo = s / static_cast<double>(elbos.size());
  }
  tape.backward(objective);
  std::vector<Tensor> grads;
  grads.reserve(graph.parameters().size());
  for (const Var& p : graph.parameters()) grads.push_back(p.grad());
  apply_update(grads);
  ++steps_;
  return result;
}

void Trainer::apply_update(const std::vector<Tensor>& grads) {
  auto params = named_parameters(*model_);
  const double lr = config_.learning_rate;
  if (config_.optimizer != OptimizerKind::sgd && first_moment_.empty()) {
    for (const auto& p : params) {
      first_moment_.emplace_back(p.tensor->shape());
      second_moment_.emplace_back(p.tensor->shape());
    }
  }
  const double t = static_cast<double>(steps_ + 1);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& theta = *params[k].tensor;
    const Tensor& g = grads[k];
    switch (config_.optimizer) {
      case OptimizerKind::sgd:
        for (std::size_t i = 0; i < theta.numel(); ++i) theta[i] += lr * g[i];
        break;
      case OptimizerKind::momentum: {
        Tensor& v = first_moment_[k];
        for (std::size_t i = 0; i < theta.numel(); ++i) {
          v[i] = config_.momentum * v[i] + g[i];
          theta[i] += lr * v[i];
        }
        break;
      }
      case OptimizerKind::adam: {
        Tensor& m = first_moment_[k];
        Tensor& v = second_moment_[k];
        const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
        const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
        for (std::size_t i = 0; i < theta.numel(); ++i) {
          m[i] = b1 * m[i] + (1 - b1) * g[i];
          v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
          theta[i] += lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_epsilon);
        }
        break;
      }
    }
  }
}

EpochMetrics Trainer::train_epoch(const Dataset& dataset) {
  if (dataset.empty()) throw TrainingError("train_epoch: dataset is empty");
  const double eps = config_.eps_at(epoch_);
  const auto order =
      batch_indices(dataset.size(), config_.batch_size, derive_seed(config_.seed, 1, epoch_));
  Rng noise_rng(derive_seed(config_.seed, 2, epoch_));
  EpochMetrics metrics;
  metrics.epoch = epoch_;
  metrics.eps = eps;
  double lb_sum = 0, elbo_sum = 0;
  for (const auto& idx : order) {
    const Tensor batch = gather(dataset, idx);
    const Tensor noise = draw_normal(noise_rng, idx.size(), model_->latent_dim());
    const StepResult r = step(batch, noise, eps);
    lb_sum += r.mean_lower_bound * static_cast<double>(idx.size());
    elbo_sum += r.mean_elbo * static_cast<double>(idx.size());
    metrics.samples += idx.size();
  }
  metrics.mean_lower_bound = lb_sum / static_cast<double>(metrics.samples);
  metrics.mean_elbo = elbo_sum / static_cast<double>(metrics.samples);
  ++epoch_;
  return metrics;
}

EvalMetrics evaluate(const VaeModel& model, const Dataset& dataset, double eps,
                     std::uint64_t seed, std::size_t batch_size) {
  if (dataset.empty()) throw ContractError("evaluate: dataset is empty");
  Rng rng(seed);
  double lb_sum = 0, elbo_sum = 0;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(dataset.size(), start + batch_size); ++i)
      idx.push_back(i);
    const Tensor x = gather(dataset, idx);
    const Tensor noise = draw_normal(rng, idx.size(), model.latent_dim());
    Tape tape;
    ModelGraph graph(model, tape);
    const BoundedElboTerms b = elbo_lower_bound(graph, x, eps, noise);
    const ElboTerms e = graph.elbo(tape.constant(x), tape.constant(noise));
    lb_sum += mean_of(b.elbo_lower.value()) * static_cast<double>(idx.size());
    elbo_sum += mean_of(e.elbo.value()) * static_cast<double>(idx.size());
  }
  const double n = static_cast<double>(dataset.size());
  return {lb_sum / n, elbo_sum / n};
}

}  // namespace provae
