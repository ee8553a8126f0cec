#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "provae/network.hpp"

namespace provae {

/// Structural description of a VAE; enough to rebuild the layer stack.
struct Architecture {
  std::string preset = "dense";  // "dense" or "conv"
  Shape data_shape{1, 8, 8};     // per-sample [C, H, W]
  std::size_t latent_dim = 50;
  std::size_t hidden = 256;      // dense preset width
  std::size_t filters1 = 32;     // conv preset
  std::size_t filters2 = 64;

  bool operator==(const Architecture&) const = default;
};

inline const double kDefaultSigma0 = 1.0 / std::sqrt(2.0);

/// Encoder trunk shared by the mean and log-sigma heads, plus a decoder whose
/// final activation is a sigmoid for the presets.
struct VaeModel {
  Architecture arch;
  double sigma0 = kDefaultSigma0;
  std::vector<Layer> trunk;
  Dense mu_head;
  Dense logsigma_head;
  std::vector<Layer> decoder;

  std::size_t latent_dim() const { return arch.latent_dim; }
  const Shape& data_shape() const { return arch.data_shape; }
};

struct NamedParameter {
  std::string name;
  Tensor* tensor;
};

/// Stable order: trunk, mu head, logsigma head, decoder.
std::vector<NamedParameter> named_parameters(VaeModel& model);
std::vector<const Tensor*> parameters(const VaeModel& model);
std::size_t parameter_count(const VaeModel& model);

/// Builds and randomly initializes a preset model.
VaeModel build_vae(const Architecture& arch, double sigma0, std::uint64_t seed);

/// Checks sigma0 > 0, head widths equal J, both heads fed by the trunk output
/// and decoder output shape equal to the data shape. Throws ContractError.
void validate(const VaeModel& model);

struct Encoded {
  Var mu;        // [B, J]
  Var logsigma;  // [B, J]
};

/// Per-row terms for a batch; each field has shape [B].
struct ElboTerms {
  Var recon_sq;
  Var kl;
  Var elbo;
};

/// A model's parameters recorded on a tape, with the forward passes built on
/// top of them. Batched: inputs are [B, C, H, W], latents [B, J].
class ModelGraph {
public:
  /// With `trainable`, parameters are leaves whose gradients can be read back
  /// after Tape::backward.
  ModelGraph(const VaeModel& model, Tape& tape, bool trainable = false);

  const VaeModel& model() const { return *model_; }
  Tape& tape() const { return *tape_; }
  std::span<const Var> parameters() const { return params_; }

  std::span<const Var> trunk_params() const;
  std::span<const Var> mu_params() const;
  std::span<const Var> logsigma_params() const;
  std::span<const Var> decoder_params() const;

  Encoded encode(Var x) const;
  Var decode(Var z) const;
  ElboTerms elbo(Var x, Var noise) const;

private:
  const VaeModel* model_;
  Tape* tape_;
  std::vector<Var> params_;
  std::size_t trunk_count_ = 0;
  std::size_t decoder_begin_ = 0;
};

/// z = mu + exp(logsigma) * noise.
Var reparameterize(Var mu, Var logsigma, Var noise);

/// 0.5 * sum_j (mu^2 + sigma^2 - log sigma^2 - 1) per row.
Var gaussian_kl(Var mu, Var logsigma);

/// Stacks equally shaped samples into a [B, ...] batch.
Tensor stack(std::span<const Tensor> samples);
/// Row `i` of a batch, with the leading dimension dropped.
Tensor unstack_row(const Tensor& batch, std::size_t i);

/// Standard normal tensor of shape [rows, cols].
Tensor draw_normal(Rng& rng, std::size_t rows, std::size_t cols);

/// Decodes `n` latents drawn from N(0, I) with `seed`.
std::vector<Tensor> sample(const VaeModel& model, std::size_t n, std::uint64_t seed);

/// Point-evaluation helpers on a private tape.
struct EncodedValues {
  Tensor mu;
  Tensor logsigma;
};
EncodedValues encode_values(const VaeModel& model, const Tensor& x_batch);
Tensor decode_values(const VaeModel& model, const Tensor& z_batch);
/// Per-row ELBO of a batch with the given noise.
std::vector<double> elbo_values(const VaeModel& model, const Tensor& x_batch,
                                const Tensor& noise);

}  // namespace provae
