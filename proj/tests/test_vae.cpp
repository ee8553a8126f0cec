#include <doctest.h>

#include <cmath>

#include "provae/vae.hpp"
#include "test_support.hpp"

using namespace provae;
using provae::testing::random_images;
using provae::testing::random_tensor;

namespace {

VaeModel small_model(std::uint64_t seed, std::size_t latent = 3) {
  Architecture arch;
  arch.data_shape = Shape{1, 4, 4};
  arch.hidden = 8;
  arch.latent_dim = latent;
  return build_vae(arch, kDefaultSigma0, seed);
}

void zero_all(VaeModel& m) {
  for (auto& p : named_parameters(m))
    for (auto& v : p.tensor->values()) v = 0.0;
}

}  // namespace

TEST_CASE("presets validate and have stable parameter names") {
  VaeModel dense = small_model(1);
  CHECK_NOTHROW(validate(dense));
  const auto names = named_parameters(dense);
  REQUIRE(names.size() == 10);
  CHECK(names.front().name == "trunk.1.weight");
  CHECK(names[2].name == "mu.weight");
  CHECK(names[5].name == "logsigma.bias");

  Architecture conv;
  conv.preset = "conv";
  conv.data_shape = Shape{1, 8, 8};
  conv.latent_dim = 4;
  conv.filters1 = 2;
  conv.filters2 = 3;
  conv.hidden = 5;
  VaeModel c = build_vae(conv, 1.0, 2);
  CHECK_NOTHROW(validate(c));
  Rng rng(3);
  const Tensor out = decode_values(c, draw_normal(rng, 2, 4));
  CHECK(out.shape() == Shape{2, 1, 8, 8});

  Architecture bad = conv;
  bad.data_shape = Shape{1, 6, 6};
  CHECK_THROWS(build_vae(bad, 1.0, 0));
  VaeModel neg = small_model(1);
  neg.sigma0 = 0;
  CHECK_THROWS_AS(validate(neg), ContractError);
}

TEST_CASE("encode examples") {
  VaeModel m = small_model(4);
  zero_all(m);
  m.mu_head.bias = Tensor::vector({0.25, -1, 2});
  Rng rng(5);
  const Tensor x = random_images(rng, 2, m.data_shape());
  const EncodedValues e = encode_values(m, x);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 3; ++j) CHECK(e.mu[r * 3 + j] == m.mu_head.bias[j]);

  VaeModel r = small_model(6);
  const EncodedValues a = encode_values(r, x), b = encode_values(r, x);
  CHECK(a.mu == b.mu);
  CHECK(a.logsigma == b.logsigma);
  for (double v : a.logsigma.values()) CHECK(std::exp(v) > 0);

  CHECK_THROWS_AS(encode_values(r, Tensor(Shape{2, 1, 5, 5})), DimensionError);
}

TEST_CASE("reparameterize examples") {
  Tape t;
  Var mu = t.constant(Tensor::matrix(1, 2, {0.3, -0.7}));
  Var ls = t.constant(Tensor::matrix(1, 2, {0.1, 0.2}));
  const Tensor z = reparameterize(mu, ls, t.constant(Tensor(Shape{1, 2}))).value();
  CHECK(z == mu.value());
  CHECK(reparameterize(t.constant(Tensor::matrix(1, 1, {0})), t.constant(Tensor::matrix(1, 1, {0})),
                       t.constant(Tensor::matrix(1, 1, {1.5})))
            .value()[0] == 1.5);

  Rng rng(7);
  const Tensor noise = random_tensor(Shape{2, 3}, rng);
  const auto f = [noise](Tape& tape, const std::vector<Var>& in) {
    return reduce_sum_squares(reparameterize(in[0], in[1], tape.constant(noise)));
  };
  const std::vector<Tensor> in{random_tensor(Shape{2, 3}, rng), random_tensor(Shape{2, 3}, rng)};
  CHECK(testing::max_gradient_error(f, in) < 1e-6);
}

TEST_CASE("decode examples") {
  VaeModel m = small_model(8);
  Rng rng(9);
  const Tensor z = draw_normal(rng, 16, 3);
  const Tensor g = decode_values(m, z);
  CHECK(g.shape() == Shape{16, 1, 4, 4});
  for (double v : g.values()) CHECK((v >= 0 && v <= 1));
  CHECK(decode_values(m, z) == g);

  zero_all(m);
  auto& last = std::get<Dense>(m.decoder[2]);
  for (std::size_t i = 0; i < last.bias.numel(); ++i) last.bias[i] = 0.1 * static_cast<double>(i);
  const Tensor c = decode_values(m, z);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t i = 0; i < 16; ++i)
      CHECK(c[r * 16 + i] == doctest::Approx(1 / (1 + std::exp(-0.1 * i))).epsilon(1e-14));

  CHECK_THROWS_AS(decode_values(m, Tensor(Shape{1, 4})), DimensionError);
}

TEST_CASE("elbo examples") {
  VaeModel m = small_model(10, 1);
  Rng rng(11);
  const Tensor x = random_images(rng, 1, m.data_shape());
  const Tensor noise = draw_normal(rng, 1, 1);

  SUBCASE("zero heads give zero KL") {
    m.mu_head.weight = Tensor(m.mu_head.weight.shape());
    m.mu_head.bias = Tensor(m.mu_head.bias.shape());
    m.logsigma_head.weight = Tensor(m.logsigma_head.weight.shape());
    m.logsigma_head.bias = Tensor(m.logsigma_head.bias.shape());
    Tape t;
    ModelGraph g(m, t);
    CHECK(g.elbo(t.constant(x), t.constant(noise)).kl.value()[0] == 0.0);
  }

  SUBCASE("closed-form KL of N(0.5, 1)") {
    Tape t;
    Var kl = gaussian_kl(t.constant(Tensor::matrix(1, 1, {0.5})),
                         t.constant(Tensor::matrix(1, 1, {0.0})));
    CHECK(kl.value()[0] == doctest::Approx(0.125).epsilon(1e-15));
  }

  SUBCASE("perfect reconstruction leaves only the KL") {
    // Decoder forced to output sigmoid(0) = 0.5 everywhere.
    auto& last = std::get<Dense>(m.decoder[2]);
    last.weight = Tensor(last.weight.shape());
    last.bias = Tensor(last.bias.shape());
    const Tensor half(x.shape(), 0.5);
    Tape t;
    ModelGraph g(m, t);
    const ElboTerms e = g.elbo(t.constant(half), t.constant(noise));
    CHECK(e.recon_sq.value()[0] == 0.0);
    CHECK(e.elbo.value()[0] == -e.kl.value()[0]);
  }

  SUBCASE("elbo assembles the documented terms") {
    Tape t;
    ModelGraph g(m, t);
    const ElboTerms e = g.elbo(t.constant(x), t.constant(noise));
    const double want = -e.recon_sq.value()[0] / (2 * m.sigma0 * m.sigma0) - e.kl.value()[0];
    CHECK(e.elbo.value()[0] == doctest::Approx(want).epsilon(1e-15));
  }
}

TEST_CASE("KL is nonnegative") {
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    Tape t;
    Var kl = gaussian_kl(t.constant(random_tensor(Shape{4, 5}, rng, -3, 3)),
                         t.constant(random_tensor(Shape{4, 5}, rng, -3, 3)));
    for (double v : kl.value().values()) REQUIRE(v >= 0);
  }
}

TEST_CASE("elbo is deterministic and its parameter gradients are correct") {
  VaeModel m = small_model(13);
  Rng rng(14);
  const Tensor x = random_images(rng, 3, m.data_shape());
  const Tensor noise = draw_normal(rng, 3, 3);
  CHECK(elbo_values(m, x, noise) == elbo_values(m, x, noise));

  const auto f = [&](const ModelGraph& g) {
    Tape& t = g.tape();
    return sum(g.elbo(t.constant(x), t.constant(noise)).elbo);
  };
  CHECK(testing::max_parameter_gradient_error(m, f, 0, 1, 1e-5, 1e-3) < 1e-4);

  Architecture conv;
  conv.preset = "conv";
  conv.data_shape = Shape{1, 8, 8};
  conv.latent_dim = 2;
  conv.filters1 = 2;
  conv.filters2 = 2;
  conv.hidden = 3;
  const VaeModel c = build_vae(conv, 0.8, 15);
  const Tensor xc = random_images(rng, 2, c.data_shape());
  const Tensor nc = draw_normal(rng, 2, 2);
  const auto fc = [&](const ModelGraph& g) {
    Tape& t = g.tape();
    return sum(g.elbo(t.constant(xc), t.constant(nc)).elbo);
  };
  CHECK(testing::max_parameter_gradient_error(c, fc, 200, 2, 1e-5, 1e-3) < 1e-4);
}

TEST_CASE("sample examples") {
  VaeModel m = small_model(16);
  const auto a = sample(m, 5, 42), b = sample(m, 5, 42), c = sample(m, 5, 43);
  REQUIRE(a.size() == 5);
  CHECK(a == b);
  CHECK(a != c);
  for (const auto& img : a) {
    CHECK(img.shape() == m.data_shape());
    for (double v : img.values()) CHECK((v >= 0 && v <= 1));
  }
  CHECK_THROWS_AS(sample(m, 0, 1), ContractError);
}

TEST_CASE("averaging k noise draws shrinks the estimator variance like 1/k") {
  VaeModel m = small_model(17);
  Rng rng(18);
  const Tensor x = random_images(rng, 1, m.data_shape());
  auto variance_of_mean = [&](std::size_t k) {
    const std::size_t reps = 2000;
    std::vector<double> means;
    for (std::size_t r = 0; r < reps; ++r) {
      double s = 0;
      for (std::size_t i = 0; i < k; ++i) s += elbo_values(m, x, draw_normal(rng, 1, 3))[0];
      means.push_back(s / static_cast<double>(k));
    }
    double mu = 0;
    for (double v : means) mu += v;
    mu /= static_cast<double>(reps);
    double var = 0;
    for (double v : means) var += (v - mu) * (v - mu);
    return var / static_cast<double>(reps - 1);
  };
  const double v1 = variance_of_mean(1), v4 = variance_of_mean(4);
  CHECK(v4 / v1 == doctest::Approx(0.25).epsilon(0.3));
}
