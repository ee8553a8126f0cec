#pragma once

#include <optional>
#include <utility>

#include "provae/tape.hpp"

namespace provae {

/// Elementwise [lower, upper] box carried as two tape nodes, so that any
/// scalar function of the bounds is differentiable w.r.t. the parameters
/// used to propagate it.
struct IntervalTensor {
  Var lower;
  Var upper;

  const Shape& shape() const { return lower.shape(); }
};

/// Both bounds recorded as constants. Throws DimensionError on shape mismatch
/// and DomainError if lower > upper anywhere.
IntervalTensor make_interval(Tape& tape, Tensor lower, Tensor upper);
/// Degenerate interval [v, v] that shares the single node `v`.
IntervalTensor point_interval(Var v);

/// Bounds of W v + b for v in `iv`, via the split W = W+ + W-.
IntervalTensor bound_affine(Var W, std::optional<Var> b, const IntervalTensor& iv);
/// Same decomposition applied through a cross-correlation.
IntervalTensor bound_conv2d(Var kernels, std::optional<Var> bias, const IntervalTensor& iv,
                            std::size_t stride, std::size_t padding);

/// Elementwise monotone map. relu, sigmoid, exp and log are non-decreasing;
/// negate is non-increasing. Other kinds are rejected.
IntervalTensor bound_monotonic(UnaryKind kind, const IntervalTensor& iv);

/// Sound bounds of v^2 elementwise: the lower bound is 0 wherever the
/// interval straddles zero.
IntervalTensor bound_square(const IntervalTensor& iv);

/// (lo, hi) of ||v||^2 as scalar nodes.
std::pair<Var, Var> bound_sum_squares(const IntervalTensor& iv);
/// Per-row (lo, hi) of ||v_r||^2 for a batch [B, ...], each of shape [B].
std::pair<Var, Var> bound_sum_squares_rows(const IntervalTensor& iv);

IntervalTensor bound_reshape(const IntervalTensor& iv, Shape shape);
IntervalTensor bound_upsample2x(const IntervalTensor& iv);

/// Point of [lower, upper] closest to zero, elementwise.
Var closest_to_zero(const IntervalTensor& iv);

inline constexpr double kContainsSlack = 1e-9;

/// lower - slack <= t <= upper + slack elementwise.
bool contains(const IntervalTensor& iv, const Tensor& t, double slack = kContainsSlack);
bool contains(const Tensor& lower, const Tensor& upper, const Tensor& t,
              double slack = kContainsSlack);

/// True iff `inner` lies inside `outer` (slack as in contains).
bool nested(const IntervalTensor& inner, const IntervalTensor& outer,
            double slack = kContainsSlack);

/// lower <= upper everywhere.
bool ordered(const IntervalTensor& iv);

}  // namespace provae
