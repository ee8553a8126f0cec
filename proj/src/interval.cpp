#include "provae/interval.hpp"

#include <string>

namespace provae {

namespace {

// Center/radius form of the W+ / W- split:
//   W+ u + W- l = W c + |W| r,  W+ l + W- u = W c - |W| r
// with c = (u + l) / 2 and r = (u - l) / 2. Two products instead of four,
// and the output is ordered by construction since |W| r >= 0.
std::pair<Var, Var> center_radius(const IntervalTensor& iv) {
  Var center = scale(add(iv.upper, iv.lower), 0.5);
  Var radius = scale(sub(iv.upper, iv.lower), 0.5);
  return {center, radius};
}

}  // namespace

IntervalTensor make_interval(Tape& tape, Tensor lower, Tensor upper) {
  if (lower.shape() != upper.shape())
    throw DimensionError("interval bounds have shapes " + lower.shape().str() + " and " +
                         upper.shape().str());
  for (std::size_t i = 0; i < lower.numel(); ++i)
    if (lower[i] > upper[i])
      throw DomainError("interval lower bound exceeds upper bound at element " +
                        std::to_string(i));
  return {tape.constant(std::move(lower)), tape.constant(std::move(upper))};
}

IntervalTensor point_interval(Var v) { return {v, v}; }

IntervalTensor bound_affine(Var W, std::optional<Var> b, const IntervalTensor& iv) {
  auto [center, radius] = center_radius(iv);
  Var mid = affine(W, b, center);
  Var spread = matvec(abs(W), radius);
  return {sub(mid, spread), add(mid, spread)};
}

IntervalTensor bound_conv2d(Var kernels, std::optional<Var> bias, const IntervalTensor& iv,
                            std::size_t stride, std::size_t padding) {
  auto [center, radius] = center_radius(iv);
  Var mid = conv2d(kernels, bias, center, stride, padding);
  Var spread = conv2d(abs(kernels), std::nullopt, radius, stride, padding);
  return {sub(mid, spread), add(mid, spread)};
}

IntervalTensor bound_monotonic(UnaryKind kind, const IntervalTensor& iv) {
  switch (kind) {
    case UnaryKind::relu:
    case UnaryKind::sigmoid:
    case UnaryKind::exp:
    case UnaryKind::log:
      return {unary(kind, iv.lower), unary(kind, iv.upper)};
    case UnaryKind::negate:
      return {negate(iv.upper), negate(iv.lower)};
    default:
      throw ContractError(std::string("bound_monotonic: ") + to_string(kind) +
                          " is not monotonic; use bound_square for squares");
  }
}

Var closest_to_zero(const IntervalTensor& iv) {
  // max(l, 0) + min(u, 0): l if l > 0, u if u < 0, otherwise 0.
  return add(relu(iv.lower), min_zero(iv.upper));
}

IntervalTensor bound_square(const IntervalTensor& iv) {
  Var hi = maximum(square(iv.lower), square(iv.upper));
  Var lo = square(closest_to_zero(iv));
  return {lo, hi};
}

std::pair<Var, Var> bound_sum_squares(const IntervalTensor& iv) {
  const IntervalTensor sq = bound_square(iv);
  return {sum(sq.lower), sum(sq.upper)};
}

std::pair<Var, Var> bound_sum_squares_rows(const IntervalTensor& iv) {
  const IntervalTensor sq = bound_square(iv);
  return {sum_rows(sq.lower), sum_rows(sq.upper)};
}

IntervalTensor bound_reshape(const IntervalTensor& iv, Shape shape) {
  return {reshape(iv.lower, shape), reshape(iv.upper, shape)};
}

IntervalTensor bound_upsample2x(const IntervalTensor& iv) {
  return {upsample2x(iv.lower), upsample2x(iv.upper)};
}

bool contains(const Tensor& lower, const Tensor& upper, const Tensor& t, double slack) {
  if (lower.shape() != t.shape() || upper.shape() != t.shape())
    throw DimensionError("contains: interval " + lower.shape().str() + " vs point " +
                         t.shape().str());
  for (std::size_t i = 0; i < t.numel(); ++i)
    if (!(t[i] >= lower[i] - slack && t[i] <= upper[i] + slack)) return false;
  return true;
}

bool contains(const IntervalTensor& iv, const Tensor& t, double slack) {
  return contains(iv.lower.value(), iv.upper.value(), t, slack);
}

bool nested(const IntervalTensor& inner, const IntervalTensor& outer, double slack) {
  return contains(outer, inner.lower.value(), slack) &&
         contains(outer, inner.upper.value(), slack);
}

bool ordered(const IntervalTensor& iv) {
  const Tensor& l = iv.lower.value();
  const Tensor& u = iv.upper.value();
  for (std::size_t i = 0; i < l.numel(); ++i)
    if (!(l[i] <= u[i])) return false;
  return true;
}

}  // namespace provae
