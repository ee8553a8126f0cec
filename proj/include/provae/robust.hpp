#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "provae/data.hpp"
#include "provae/interval.hpp"
#include "provae/vae.hpp"

namespace provae {

/// Bounds on the encoder outputs over an input box. Batched: [B, J].
struct EncoderBounds {
  IntervalTensor mu;
  IntervalTensor logsigma;
  IntervalTensor sigma;  // exp of the logsigma bounds, strictly positive
};

/// Per-row bounds, each [B].
struct RowBounds {
  Var lo;
  Var hi;
};

/// Certified ELBO lower bound of a batch and the pieces it was assembled from.
struct BoundedElboTerms {
  Var elbo_lower;  // -recon.hi / (2 sigma0^2) - kl.hi, [B]
  RowBounds kl;
  RowBounds recon_sq;
  IntervalTensor input;
  EncoderBounds encoder;
  IntervalTensor z;
  IntervalTensor decoded;
};

/// Plain values of one sample's certified bound.
struct BoundedElbo {
  double elbo_lower = 0;
  std::pair<double, double> kl;        // (lo, hi)
  std::pair<double, double> recon_sq;  // (lo, hi)
  Tensor z_lower;
  Tensor z_upper;
  Tensor noise;
};

/// The l-infinity box [x - eps, x + eps] clamped to the valid pixel range [0, 1].
std::pair<Tensor, Tensor> input_box(const Tensor& x, double eps);
IntervalTensor input_bounds(Tape& tape, const Tensor& x, double eps);

EncoderBounds encoder_bounds(const ModelGraph& graph, const IntervalTensor& x);

/// hi is the sound KL upper bound (endpoint maxima of the convex terms);
/// lo evaluates each term at the point of its interval nearest the minimiser.
RowBounds kl_bounds(const EncoderBounds& eb);

/// Bounds of mu + sigma * noise for a fixed noise vector.
IntervalTensor latent_bounds(const EncoderBounds& eb, Var noise);

IntervalTensor decoder_bounds(const ModelGraph& graph, const IntervalTensor& z);

/// Bounds of ||x' - g||^2 over x' in `input` and g in `decoded`, via the
/// residual interval [x_lo - g_hi, x_hi - g_lo].
RowBounds recon_sq_bounds(const IntervalTensor& input, const IntervalTensor& decoded);

/// Full certified chain for a batch `x` [B, C, H, W] and noise [B, J].
BoundedElboTerms elbo_lower_bound(const ModelGraph& graph, const Tensor& x, double eps,
                                  const Tensor& noise);

/// Value-only form on a private tape, one entry per row.
std::vector<BoundedElbo> elbo_lower_bound_values(const VaeModel& model, const Tensor& x,
                                                 double eps, const Tensor& noise);

struct Certificate {
  bool certified = false;
  double bound = 0;   // mean certified lower bound over the noise draws
  double spread = 0;  // sample standard deviation across draws
  std::vector<double> per_draw;
};

/// Certificate for a single sample [C, H, W]: bound >= alpha.
Certificate certify(const VaeModel& model, const Tensor& x, double eps, double alpha,
                    std::size_t n_noise, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training

enum class OptimizerKind { sgd, momentum, adam };

OptimizerKind parse_optimizer(const std::string& name);
const char* to_string(OptimizerKind kind);

struct TrainConfig {
  double eps_train = 0.0;
  std::size_t epochs = 1;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Radius used at a given epoch; empty means constant eps_train.
  std::function<double(std::size_t epoch)> eps_schedule;

  /// Throws ContractError on eps < 0, lr <= 0 or zero batch size.
  void validate() const;
  double eps_at(std::size_t epoch) const;
};

/// Linear ramp from 0 to eps_train over `warmup_epochs`, then constant.
std::function<double(std::size_t)> linear_eps_ramp(double eps_train, std::size_t warmup_epochs);

class TrainingError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double eps = 0;
  double mean_lower_bound = 0;  // mean certified bound over the epoch, before each update
  double mean_elbo = 0;         // mean ELBO with the same noise
  std::size_t samples = 0;
};

struct StepResult {
  double mean_lower_bound = 0;
  double mean_elbo = 0;
};

/// Gradient ascent on the mean certified ELBO lower bound. With eps = 0 this
/// is ordinary VAE training.
class Trainer {
public:
  Trainer(VaeModel& model, TrainConfig config);

  /// One update on `batch` with explicit noise [B, J].
  StepResult step(const Tensor& batch, const Tensor& noise, double eps);
  EpochMetrics train_epoch(const Dataset& dataset);

  std::size_t epochs_done() const { return epoch_; }
  const TrainConfig& config() const { return config_; }

private:
  void apply_update(const std::vector<Tensor>& grads);

  VaeModel* model_;
  TrainConfig config_;
  std::size_t epoch_ = 0;
  std::size_t steps_ = 0;
  std::vector<Tensor> first_moment_;
  std::vector<Tensor> second_moment_;
};

struct EvalMetrics {
  double mean_lower_bound = 0;
  double mean_elbo = 0;
};

/// Mean certified bound and mean ELBO over a dataset with shared, seeded noise.
EvalMetrics evaluate(const VaeModel& model, const Dataset& dataset, double eps,
                     std::uint64_t seed, std::size_t batch_size = 128);

}  // namespace provae
