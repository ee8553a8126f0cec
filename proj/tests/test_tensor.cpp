#include <doctest.h>

#include <cmath>

#include "provae/tape.hpp"
#include "test_support.hpp"

using namespace provae;
using provae::testing::max_gradient_error;
using provae::testing::random_tensor;

namespace {

// Direct 6-loop cross-correlation over a single image.
Tensor naive_conv(const Tensor& k, const Tensor& b, const Tensor& x, std::size_t stride,
                  std::size_t pad) {
  const std::size_t O = k.shape()[0], C = k.shape()[1], kh = k.shape()[2], kw = k.shape()[3];
  const std::size_t H = x.shape()[1], W = x.shape()[2];
  const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  Tensor out(Shape{O, Ho, Wo});
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        double s = b[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v) {
              const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
              const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
              if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W))
                continue;
              s += k[((o * C + c) * kh + u) * kw + v] * x[(c * H + r) * W + q];
            }
        out[(o * Ho + i) * Wo + j] = s;
      }
  return out;
}

}  // namespace

TEST_CASE("shape rejects zero extents and reports sizes") {
  CHECK_THROWS_AS(Shape({2, 0}), DimensionError);
  CHECK(Shape({2, 3, 4}).numel() == 24);
  CHECK(Shape({2, 3, 4}).row_size() == 12);
  CHECK_THROWS_AS(Tensor(Shape{2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST_CASE("affine examples") {
  Tape t;
  Var W = t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var b = t.constant(Tensor::vector({0, 0}));
  Var v = t.constant(Tensor::vector({3, -1}));
  CHECK(affine(W, b, v).value() == Tensor::vector({3, -1}));

  Var W2 = t.constant(Tensor::matrix(1, 2, {2, -1}));
  Var b2 = t.constant(Tensor::vector({1}));
  Var v2 = t.constant(Tensor::vector({1, 1}));
  CHECK(affine(W2, b2, v2).value() == Tensor::vector({2}));
}

TEST_CASE("affine batches rows independently") {
  Tape t;
  Var W = t.constant(Tensor::matrix(1, 2, {2, -1}));
  Var b = t.constant(Tensor::vector({1}));
  Var v = t.constant(Tensor::matrix(2, 2, {1, 1, 0, 3}));
  const Tensor out = affine(W, b, v).value();
  CHECK(out.shape() == Shape{2, 1});
  CHECK(out[0] == 2.0);
  CHECK(out[1] == -2.0);
}

TEST_CASE("affine shape mismatch names both shapes") {
  Tape t;
  Var W = t.constant(Tensor(Shape{2, 3}));
  Var v = t.constant(Tensor(Shape{4}));
  try {
    matvec(W, v);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4]") != std::string::npos);
  }
}

TEST_CASE("affine gradient matches finite differences") {
  Rng rng(1);
  const auto f = [](Tape&, const std::vector<Var>& in) { return sum(affine(in[0], in[1], in[2])); };
  const std::vector<Tensor> inputs{random_tensor(Shape{3, 4}, rng), random_tensor(Shape{3}, rng),
                                   random_tensor(Shape{4}, rng)};
  CHECK(max_gradient_error(f, inputs) < 1e-6);
}

TEST_CASE("conv2d examples") {
  Tape t;
  Rng rng(2);
  const Tensor x = random_tensor(Shape{1, 4, 5}, rng);
  Var id = conv2d(t.constant(Tensor(Shape{1, 1, 1, 1}, 1.0)), t.constant(Tensor(Shape{1})),
                  t.constant(x), 1, 0);
  CHECK(id.value() == x);

  Var nine = conv2d(t.constant(Tensor(Shape{1, 1, 3, 3}, 1.0)), std::nullopt,
                    t.constant(Tensor(Shape{1, 3, 3}, 1.0)), 1, 0);
  CHECK(nine.shape() == Shape{1, 1, 1});
  CHECK(nine.value()[0] == 9.0);
}

TEST_CASE("conv2d agrees with the naive oracle") {
  Rng rng(3);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {1, 1}, {2, 1}, {2, 0}}) {
    const Tensor k = random_tensor(Shape{3, 2, 3, 3}, rng);
    const Tensor b = random_tensor(Shape{3}, rng);
    const Tensor x = random_tensor(Shape{2, 6, 7}, rng);
    Tape t;
    const Tensor got = conv2d(t.constant(k), t.constant(b), t.constant(x), stride, pad).value();
    const Tensor want = naive_conv(k, b, x, stride, pad);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
  }
}

TEST_CASE("conv2d output extent and errors") {
  CHECK(conv_output_extent(28, 4, 2, 1) == 14);
  CHECK(conv_output_extent(5, 3, 1, 0) == 3);
  Tape t;
  CHECK_THROWS_AS(conv2d(t.constant(Tensor(Shape{1, 1, 5, 5})), std::nullopt,
                         t.constant(Tensor(Shape{1, 3, 3})), 1, 0),
                  DimensionError);
  CHECK_THROWS_AS(conv2d(t.constant(Tensor(Shape{1, 2, 1, 1})), std::nullopt,
                         t.constant(Tensor(Shape{1, 3, 3})), 1, 0),
                  DimensionError);
}

TEST_CASE("conv2d gradient matches finite differences") {
  Rng rng(4);
  const auto f = [](Tape&, const std::vector<Var>& in) {
    return reduce_sum_squares(conv2d(in[0], in[1], in[2], 2, 1));
  };
  const std::vector<Tensor> inputs{random_tensor(Shape{2, 2, 3, 3}, rng),
                                   random_tensor(Shape{2}, rng),
                                   random_tensor(Shape{2, 2, 5, 5}, rng)};
  CHECK(max_gradient_error(f, inputs) < 1e-4);
}

TEST_CASE("unary examples") {
  Tape t;
  CHECK(relu(t.constant(Tensor::vector({-1, 0, 2}))).value() == Tensor::vector({0, 0, 2}));
  CHECK(sigmoid(t.constant(Tensor::vector({0}))).value()[0] == 0.5);
  CHECK(negate(t.constant(Tensor::vector({2}))).value()[0] == -2.0);
  CHECK(min_zero(t.constant(Tensor::vector({-3, 4}))).value() == Tensor::vector({-3, 0}));
}

TEST_CASE("log of a nonpositive element names the index") {
  Tape t;
  try {
    log(t.constant(Tensor::vector({1.0, 2.0, 0.0})));
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("relu derivative at zero is zero") {
  Tape t;
  Var v = t.leaf(Tensor::vector({0.0, 1.0}));
  t.backward(sum(relu(v)));
  CHECK(v.grad() == Tensor::vector({0.0, 1.0}));
}

TEST_CASE("every differentiable op matches finite differences on [-2, 2]") {
  Rng rng(5);
  const Shape s{3, 4};
  const std::vector<std::pair<const char*, testing::ScalarFn>> cases{
      {"sigmoid", [](Tape&, const std::vector<Var>& in) { return sum(sigmoid(in[0])); }},
      {"exp", [](Tape&, const std::vector<Var>& in) { return sum(exp(in[0])); }},
      {"square", [](Tape&, const std::vector<Var>& in) { return sum(square(in[0])); }},
      {"negate", [](Tape&, const std::vector<Var>& in) { return sum(mul(negate(in[0]), in[1])); }},
      {"relu", [](Tape&, const std::vector<Var>& in) { return sum(mul(relu(in[0]), in[1])); }},
      {"abs", [](Tape&, const std::vector<Var>& in) { return sum(mul(abs(in[0]), in[1])); }},
      {"min_zero", [](Tape&, const std::vector<Var>& in) { return sum(mul(min_zero(in[0]), in[1])); }},
      {"mul", [](Tape&, const std::vector<Var>& in) { return sum(mul(in[0], in[1])); }},
      {"sub", [](Tape&, const std::vector<Var>& in) { return reduce_sum_squares(sub(in[0], in[1])); }},
      {"maximum", [](Tape&, const std::vector<Var>& in) { return sum(square(maximum(in[0], in[1]))); }},
      {"minimum", [](Tape&, const std::vector<Var>& in) { return sum(square(minimum(in[0], in[1]))); }},
      {"scale", [](Tape&, const std::vector<Var>& in) { return sum(square(add_scalar(scale(in[0], -1.5), 0.25))); }},
      {"sum_rows", [](Tape&, const std::vector<Var>& in) { return reduce_sum_squares(sum_rows(in[0])); }},
      {"mean", [](Tape&, const std::vector<Var>& in) { return square(mean(mul(in[0], in[1]))); }},
      {"reshape", [](Tape&, const std::vector<Var>& in) { return sum(mul(reshape(in[0], Shape{12}), reshape(in[1], Shape{12}))); }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    const std::vector<Tensor> inputs{random_tensor(s, rng), random_tensor(s, rng)};
    CHECK(max_gradient_error(f, inputs) < 1e-4);
  }

  const std::vector<Tensor> pos{random_tensor(s, rng, 0.5, 2.0)};
  CHECK(max_gradient_error([](Tape&, const std::vector<Var>& in) { return sum(log(in[0])); }, pos) <
        1e-4);

  const std::vector<Tensor> img{random_tensor(Shape{2, 1, 2, 3}, rng),
                                random_tensor(Shape{2, 1, 4, 6}, rng)};
  CHECK(max_gradient_error(
            [](Tape&, const std::vector<Var>& in) { return sum(mul(upsample2x(in[0]), in[1])); },
            img) < 1e-4);
}

TEST_CASE("sigmoid gradient within 1e-6") {
  Rng rng(6);
  const std::vector<Tensor> in{random_tensor(Shape{10}, rng)};
  CHECK(max_gradient_error([](Tape&, const std::vector<Var>& v) { return sum(sigmoid(v[0])); },
                           in) < 1e-6);
}

TEST_CASE("reduce_sum_squares") {
  Tape t;
  CHECK(reduce_sum_squares(t.constant(Tensor::vector({0, 0, 0}))).value().item() == 0.0);
  CHECK(reduce_sum_squares(t.constant(Tensor::vector({3, 4}))).value().item() == 25.0);
  Var v = t.leaf(Tensor::vector({1.5, -2}));
  t.backward(reduce_sum_squares(v));
  CHECK(v.grad() == Tensor::vector({3.0, -4.0}));

  Rng rng(7);
  const std::vector<Tensor> in{random_tensor(Shape{7}, rng)};
  CHECK(max_gradient_error(
            [](Tape&, const std::vector<Var>& v) { return reduce_sum_squares(v[0]); }, in) < 1e-6);
}

TEST_CASE("backward examples") {
  Tape t;
  Var v = t.leaf(Tensor::vector({1, 2, 3}));
  t.backward(sum(v));
  CHECK(v.grad() == Tensor::vector({1, 1, 1}));

  Rng rng(8);
  const Tensor W = random_tensor(Shape{3, 4}, rng);
  const Tensor x = random_tensor(Shape{4}, rng);
  Tape t2;
  Var Wv = t2.constant(W);
  Var xv = t2.leaf(x);
  t2.backward(reduce_sum_squares(matvec(Wv, xv)));
  // 2 W^T W x by hand.
  for (std::size_t j = 0; j < 4; ++j) {
    double want = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      double wx = 0;
      for (std::size_t k = 0; k < 4; ++k) wx += W[i * 4 + k] * x[k];
      want += 2 * W[i * 4 + j] * wx;
    }
    CHECK(std::abs(xv.grad()[j] - want) < 1e-12);
  }
}

TEST_CASE("disconnected leaf gets zero gradient") {
  Tape t;
  Var a = t.leaf(Tensor::vector({1, 2}));
  Var b = t.leaf(Tensor::vector({5, 6}));
  t.backward(sum(square(a)));
  CHECK(b.grad() == Tensor::vector({0, 0}));
}

TEST_CASE("backward rejects a non-scalar root") {
  Tape t;
  Var a = t.leaf(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(t.backward(square(a)), ContractError);
}

TEST_CASE("repeated backward passes give identical gradients") {
  Rng rng(9);
  Tape t;
  Var W = t.leaf(random_tensor(Shape{3, 3}, rng));
  Var x = t.leaf(random_tensor(Shape{3}, rng));
  Var root = reduce_sum_squares(sigmoid(matvec(W, x)));
  t.backward(root);
  const Tensor g1 = W.grad(), gx1 = x.grad();
  t.backward(root);
  CHECK(W.grad() == g1);
  CHECK(x.grad() == gx1);
}

TEST_CASE("forward evaluation is deterministic") {
  Rng rng(10);
  const Tensor k = random_tensor(Shape{4, 2, 3, 3}, rng);
  const Tensor x = random_tensor(Shape{3, 2, 8, 8}, rng);
  Tape a, b;
  CHECK(conv2d(a.constant(k), std::nullopt, a.constant(x), 1, 1).value() ==
        conv2d(b.constant(k), std::nullopt, b.constant(x), 1, 1).value());
}

TEST_CASE("maximum tie sends the gradient to the first argument") {
  Tape t;
  Var a = t.leaf(Tensor::vector({1.0}));
  Var b = t.leaf(Tensor::vector({1.0}));
  t.backward(sum(maximum(a, b)));
  CHECK(a.grad()[0] == 1.0);
  CHECK(b.grad()[0] == 0.0);
}
