#include "provae/network.hpp"

#include <cmath>
#include <type_traits>

namespace provae {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Shape with_batch(std::size_t batch, const Shape& sample) {
  std::vector<std::size_t> dims{batch};
  dims.insert(dims.end(), sample.dims().begin(), sample.dims().end());
  return Shape(std::move(dims));
}

template <class T>
T apply_layer(const Layer& layer, std::span<const Var> params, std::size_t& cursor, const T& x) {
  constexpr bool point = std::is_same_v<T, Var>;
  auto next = [&]() -> Var {
    if (cursor >= params.size()) throw ContractError("forward: parameter list exhausted");
    return params[cursor++];
  };
  const std::size_t batch = x.shape()[0];
  return std::visit(
      overloaded{
          [&](const Dense&) -> T {
            Var W = next(), b = next();
            if constexpr (point)
              return affine(W, b, x);
            else
              return bound_affine(W, b, x);
          },
          [&](const Conv& c) -> T {
            Var K = next(), b = next();
            if constexpr (point)
              return conv2d(K, b, x, c.stride, c.padding);
            else
              return bound_conv2d(K, b, x, c.stride, c.padding);
          },
          [&](const Activation& a) -> T {
            if constexpr (point)
              return unary(a.kind, x);
            else
              return bound_monotonic(a.kind, x);
          },
          [&](const Flatten&) -> T {
            const Shape flat{batch, x.shape().row_size()};
            if constexpr (point)
              return reshape(x, flat);
            else
              return bound_reshape(x, flat);
          },
          [&](const Unflatten& u) -> T {
            if constexpr (point)
              return reshape(x, with_batch(batch, u.sample_shape));
            else
              return bound_reshape(x, with_batch(batch, u.sample_shape));
          },
          [&](const Upsample2x&) -> T {
            if constexpr (point)
              return upsample2x(x);
            else
              return bound_upsample2x(x);
          },
      },
      layer);
}

template <class T>
T run(std::span<const Layer> layers, std::span<const Var> params, std::size_t& cursor, T x,
      std::vector<T>* trace) {
  for (const auto& layer : layers) {
    x = apply_layer(layer, params, cursor, x);
    if (trace) trace->push_back(x);
  }
  return x;
}

}  // namespace

Dense make_dense(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Dense d;
  d.weight = uniform_tensor(Shape{out, in}, bound, rng);
  d.bias = uniform_tensor(Shape{out}, bound, rng);
  return d;
}

Conv make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t padding, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  Conv c;
  c.kernels = uniform_tensor(Shape{out_channels, in_channels, kernel, kernel}, bound, rng);
  c.bias = uniform_tensor(Shape{out_channels}, bound, rng);
  c.stride = stride;
  c.padding = padding;
  return c;
}

std::vector<Tensor*> layer_parameters(Layer& layer) {
  return std::visit(overloaded{
                        [](Dense& d) { return std::vector<Tensor*>{&d.weight, &d.bias}; },
                        [](Conv& c) { return std::vector<Tensor*>{&c.kernels, &c.bias}; },
                        [](auto&) { return std::vector<Tensor*>{}; },
                    },
                    layer);
}

std::vector<const Tensor*> layer_parameters(const Layer& layer) {
  auto ptrs = layer_parameters(const_cast<Layer&>(layer));
  return {ptrs.begin(), ptrs.end()};
}

const char* layer_kind(const Layer& layer) {
  return std::visit(overloaded{
                        [](const Dense&) { return "dense"; },
                        [](const Conv&) { return "conv"; },
                        [](const Activation& a) { return to_string(a.kind); },
                        [](const Flatten&) { return "flatten"; },
                        [](const Unflatten&) { return "unflatten"; },
                        [](const Upsample2x&) { return "upsample2x"; },
                    },
                    layer);
}

Shape infer_sample_shape(std::span<const Layer> layers, const Shape& input) {
  Tape tape;
  std::vector<Var> params;
  for (const auto& layer : layers)
    for (const Tensor* p : layer_parameters(layer)) params.push_back(tape.constant(*p));
  std::size_t cursor = 0;
  Var out = forward(layers, params, cursor, tape.constant(Tensor(with_batch(1, input))));
  std::vector<std::size_t> dims(out.shape().dims().begin() + 1, out.shape().dims().end());
  return Shape(std::move(dims));
}

Var forward(std::span<const Layer> layers, std::span<const Var> params, std::size_t& cursor,
            Var x) {
  return run<Var>(layers, params, cursor, x, nullptr);
}

IntervalTensor forward(std::span<const Layer> layers, std::span<const Var> params,
                       std::size_t& cursor, const IntervalTensor& x) {
  return run<IntervalTensor>(layers, params, cursor, x, nullptr);
}

Var forward_traced(std::span<const Layer> layers, std::span<const Var> params,
                   std::size_t& cursor, Var x, std::vector<Var>& trace) {
  return run<Var>(layers, params, cursor, x, &trace);
}

IntervalTensor forward_traced(std::span<const Layer> layers, std::span<const Var> params,
                              std::size_t& cursor, const IntervalTensor& x,
                              std::vector<IntervalTensor>& trace) {
  return run<IntervalTensor>(layers, params, cursor, x, &trace);
}

}  // namespace provae
