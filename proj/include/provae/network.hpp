#pragma once

#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "provae/interval.hpp"
#include "provae/tape.hpp"

namespace provae {

using Rng = std::mt19937_64;

struct Dense {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
};

struct Conv {
  Tensor kernels;  // [O, C, k, k]
  Tensor bias;     // [O]
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Monotone elementwise activation (relu or sigmoid).
struct Activation {
  UnaryKind kind;
};

/// [B, ...] -> [B, prod(...)].
struct Flatten {};

/// [B, n] -> [B, sample_shape...].
struct Unflatten {
  Shape sample_shape;
};

struct Upsample2x {};

using Layer = std::variant<Dense, Conv, Activation, Flatten, Unflatten, Upsample2x>;

Dense make_dense(std::size_t in, std::size_t out, Rng& rng);
Conv make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t padding, Rng& rng);

/// Parameter tensors owned by a layer, in a fixed order (weight, bias).
std::vector<Tensor*> layer_parameters(Layer& layer);
std::vector<const Tensor*> layer_parameters(const Layer& layer);
const char* layer_kind(const Layer& layer);

/// Per-sample output shape of `layers` applied to per-sample `input` shape.
Shape infer_sample_shape(std::span<const Layer> layers, const Shape& input);

/// Walks `layers` consuming parameter nodes from `params` starting at `cursor`
/// (advanced past what the layers used).
Var forward(std::span<const Layer> layers, std::span<const Var> params, std::size_t& cursor,
            Var x);
IntervalTensor forward(std::span<const Layer> layers, std::span<const Var> params,
                       std::size_t& cursor, const IntervalTensor& x);

/// As above, additionally appending every layer output to `trace`.
Var forward_traced(std::span<const Layer> layers, std::span<const Var> params,
                   std::size_t& cursor, Var x, std::vector<Var>& trace);
IntervalTensor forward_traced(std::span<const Layer> layers, std::span<const Var> params,
                              std::size_t& cursor, const IntervalTensor& x,
                              std::vector<IntervalTensor>& trace);

}  // namespace provae
