#include "provae/vae.hpp"

#include <algorithm>

namespace provae {

namespace {

void append_named(std::vector<NamedParameter>& out, const std::string& prefix,
                  std::vector<Layer>& layers) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto params = layer_parameters(layers[i]);
    if (params.empty()) continue;
    out.push_back({prefix + "." + std::to_string(i) + ".weight", params[0]});
    out.push_back({prefix + "." + std::to_string(i) + ".bias", params[1]});
  }
}

std::size_t count_params(const std::vector<Layer>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += layer_parameters(l).size();
  return n;
}

Shape batched(std::size_t batch, const Shape& sample) {
  std::vector<std::size_t> dims{batch};
  dims.insert(dims.end(), sample.dims().begin(), sample.dims().end());
  return Shape(std::move(dims));
}

}  // namespace

std::vector<NamedParameter> named_parameters(VaeModel& model) {
  std::vector<NamedParameter> out;
  append_named(out, "trunk", model.trunk);
  out.push_back({"mu.weight", &model.mu_head.weight});
  out.push_back({"mu.bias", &model.mu_head.bias});
  out.push_back({"logsigma.weight", &model.logsigma_head.weight});
  out.push_back({"logsigma.bias", &model.logsigma_head.bias});
  append_named(out, "decoder", model.decoder);
  return out;
}

std::vector<const Tensor*> parameters(const VaeModel& model) {
  std::vector<const Tensor*> out;
  for (auto& p : named_parameters(const_cast<VaeModel&>(model))) out.push_back(p.tensor);
  return out;
}

std::size_t parameter_count(const VaeModel& model) {
  std::size_t n = 0;
  for (const Tensor* p : parameters(model)) n += p->numel();
  return n;
}

VaeModel build_vae(const Architecture& arch, double sigma0, std::uint64_t seed) {
  if (arch.data_shape.rank() != 3)
    throw ContractError("data shape must be [C, H, W], got " + arch.data_shape.str());
  if (arch.latent_dim == 0) throw ContractError("latent dimension must be positive");
  Rng rng(seed);
  VaeModel m;
  m.arch = arch;
  m.sigma0 = sigma0;
  const std::size_t channels = arch.data_shape[0];
  const std::size_t height = arch.data_shape[1];
  const std::size_t width = arch.data_shape[2];
  const std::size_t pixels = arch.data_shape.numel();
  const std::size_t J = arch.latent_dim;

  if (arch.preset == "dense") {
    if (arch.hidden == 0) throw ContractError("dense preset needs a positive hidden width");
    m.trunk = {Flatten{}, make_dense(pixels, arch.hidden, rng), Activation{UnaryKind::relu}};
    m.mu_head = make_dense(arch.hidden, J, rng);
    m.logsigma_head = make_dense(arch.hidden, J, rng);
    m.decoder = {make_dense(J, arch.hidden, rng), Activation{UnaryKind::relu},
                 make_dense(arch.hidden, pixels, rng), Activation{UnaryKind::sigmoid},
                 Unflatten{arch.data_shape}};
  } else if (arch.preset == "conv") {
    if (height % 4 != 0 || width % 4 != 0)
      throw ContractError("conv preset needs height and width divisible by 4, got " +
                          arch.data_shape.str());
    const std::size_t f1 = arch.filters1, f2 = arch.filters2;
    const std::size_t units = f2 * (height / 4) * (width / 4);
    m.trunk = {make_conv(channels, f1, 4, 2, 1, rng), Activation{UnaryKind::relu},
               make_conv(f1, f2, 4, 2, 1, rng), Activation{UnaryKind::relu}, Flatten{}};
    m.mu_head = make_dense(units, J, rng);
    m.logsigma_head = make_dense(units, J, rng);
    m.decoder = {make_dense(J, units, rng),
                 Activation{UnaryKind::relu},
                 Unflatten{Shape{f2, height / 4, width / 4}},
                 Upsample2x{},
                 make_conv(f2, f1, 3, 1, 1, rng),
                 Activation{UnaryKind::relu},
                 Upsample2x{},
                 make_conv(f1, channels, 3, 1, 1, rng),
                 Activation{UnaryKind::sigmoid}};
  } else {
    throw ContractError("unknown architecture preset '" + arch.preset + "'");
  }
  validate(m);
  return m;
}

void validate(const VaeModel& model) {
  if (!(model.sigma0 > 0)) throw ContractError("sigma0 must be positive");
  const std::size_t J = model.latent_dim();
  const Shape trunk_out = infer_sample_shape(model.trunk, model.data_shape());
  if (trunk_out.rank() != 1)
    throw ContractError("encoder trunk must end flat, got " + trunk_out.str());
  for (const Dense* head : {&model.mu_head, &model.logsigma_head}) {
    if (head->weight.shape() != Shape{J, trunk_out[0]} || head->bias.shape() != Shape{J})
      throw ContractError("encoder head " + head->weight.shape().str() +
                          " does not map trunk output " + trunk_out.str() + " to latent dim " +
                          std::to_string(J));
  }
  const Shape out = infer_sample_shape(model.decoder, Shape{J});
  if (out != model.data_shape())
    throw ContractError("decoder output " + out.str() + " does not match data shape " +
                        model.data_shape().str());
}

// ---------------------------------------------------------------------------

ModelGraph::ModelGraph(const VaeModel& model, Tape& tape, bool trainable)
    : model_(&model), tape_(&tape) {
  for (const Tensor* p : provae::parameters(model))
    params_.push_back(trainable ? tape.leaf(*p) : tape.constant(*p));
  trunk_count_ = count_params(model.trunk);
  decoder_begin_ = trunk_count_ + 4;
}

std::span<const Var> ModelGraph::trunk_params() const {
  return std::span<const Var>(params_).subspan(0, trunk_count_);
}
std::span<const Var> ModelGraph::mu_params() const {
  return std::span<const Var>(params_).subspan(trunk_count_, 2);
}
std::span<const Var> ModelGraph::logsigma_params() const {
  return std::span<const Var>(params_).subspan(trunk_count_ + 2, 2);
}
std::span<const Var> ModelGraph::decoder_params() const {
  return std::span<const Var>(params_).subspan(decoder_begin_);
}

Encoded ModelGraph::encode(Var x) const {
  const Shape expected = batched(x.shape()[0], model_->data_shape());
  if (x.shape() != expected)
    throw DimensionError("encode: input " + x.shape().str() + " does not match data shape " +
                         expected.str());
  std::size_t cursor = 0;
  Var h = forward(model_->trunk, trunk_params(), cursor, x);
  const auto mu = mu_params();
  const auto ls = logsigma_params();
  return {affine(mu[0], mu[1], h), affine(ls[0], ls[1], h)};
}

Var ModelGraph::decode(Var z) const {
  if (z.shape().rank() != 2 || z.shape()[1] != model_->latent_dim())
    throw DimensionError("decode: latent " + z.shape().str() + " does not have width " +
                         std::to_string(model_->latent_dim()));
  std::size_t cursor = 0;
  return forward(model_->decoder, decoder_params(), cursor, z);
}

ElboTerms ModelGraph::elbo(Var x, Var noise) const {
  const Encoded enc = encode(x);
  if (noise.shape() != enc.mu.shape())
    throw DimensionError("elbo: noise " + noise.shape().str() + " vs latent " +
                         enc.mu.shape().str());
  Var z = reparameterize(enc.mu, enc.logsigma, noise);
  Var g = decode(z);
  Var recon = sum_rows(square(sub(x, g)));
  Var kl = gaussian_kl(enc.mu, enc.logsigma);
  const double w = 1.0 / (2.0 * model_->sigma0 * model_->sigma0);
  Var elbo = sub(scale(recon, -w), kl);
  return {recon, kl, elbo};
}

Var reparameterize(Var mu, Var logsigma, Var noise) {
  return add(mu, mul(exp(logsigma), noise));
}

Var gaussian_kl(Var mu, Var logsigma) {
  Var log_var = scale(logsigma, 2.0);
  Var inner = add_scalar(sub(add(square(mu), exp(log_var)), log_var), -1.0);
  return scale(sum_rows(inner), 0.5);
}

// ---------------------------------------------------------------------------

Tensor stack(std::span<const Tensor> samples) {
  if (samples.empty()) throw ContractError("stack: no samples");
  const Shape& s = samples.front().shape();
  std::vector<double> values;
  values.reserve(samples.size() * s.numel());
  for (const auto& t : samples) {
    if (t.shape() != s)
      throw DimensionError("stack: shape " + t.shape().str() + " differs from " + s.str());
    values.insert(values.end(), t.values().begin(), t.values().end());
  }
  return Tensor(batched(samples.size(), s), std::move(values));
}

Tensor unstack_row(const Tensor& batch, std::size_t i) {
  const auto& dims = batch.shape().dims();
  if (dims.size() < 2) throw DimensionError("unstack_row: need a batch, got " + batch.shape().str());
  if (i >= dims[0]) throw ContractError("unstack_row: row out of range");
  const std::size_t width = batch.shape().row_size();
  std::vector<double> values(batch.values().begin() + static_cast<std::ptrdiff_t>(i * width),
                             batch.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
  return Tensor(Shape(std::vector<std::size_t>(dims.begin() + 1, dims.end())), std::move(values));
}

Tensor draw_normal(Rng& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(Shape{rows, cols});
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

std::vector<Tensor> sample(const VaeModel& model, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ContractError("sample: n must be at least 1");
  Rng rng(seed);
  const Tensor z = draw_normal(rng, n, model.latent_dim());
  const Tensor images = decode_values(model, z);
  std::vector<Tensor> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(unstack_row(images, i));
  return out;
}

EncodedValues encode_values(const VaeModel& model, const Tensor& x_batch) {
  Tape tape;
  ModelGraph graph(model, tape);
  const Encoded e = graph.encode(tape.constant(x_batch));
  return {e.mu.value(), e.logsigma.value()};
}

Tensor decode_values(const VaeModel& model, const Tensor& z_batch) {
  Tape tape;
  ModelGraph graph(model, tape);
  return graph.decode(tape.constant(z_batch)).value();
}

std::vector<double> elbo_values(const VaeModel& model, const Tensor& x_batch,
                                const Tensor& noise) {
  Tape tape;
  ModelGraph graph(model, tape);
  const ElboTerms terms = graph.elbo(tape.constant(x_batch), tape.constant(noise));
  const auto v = terms.elbo.value().values();
  return {v.begin(), v.end()};
}

}  // namespace provae
