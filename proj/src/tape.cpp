#include "provae/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

namespace provae {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
}

void require_same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Elementwise op with local derivative d(out)/d(in) computed from (in, out).
template <typename F, typename D>
Var map_unary(Var v, F f, D df) {
  const Tensor& in = v.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = f(in[i]);
  const auto vid = v.id();
  return v.tape().record(std::move(out), {vid}, [vid, df](Tape& t, std::size_t self) {
    auto& gin = t.grad_buffer(vid);
    const auto& gout = t.grad_buffer(self);
    const Tensor& x = t.value(vid);
    const Tensor& y = t.value(self);
    for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += gout[i] * df(x[i], y[i]);
  });
}

struct ConvGeometry {
  std::size_t batch, channels, height, width;
  std::size_t out_channels, kh, kw;
  std::size_t stride, padding;
  std::size_t oh, ow;
  bool batched;

  std::size_t patch() const { return channels * kh * kw; }
  std::size_t out_pixels() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Shape& ks, const Shape& xs, std::size_t stride,
                           std::size_t padding) {
  if (ks.rank() != 4)
    throw DimensionError("conv2d: kernels must be [O, C, kh, kw], got " + ks.str());
  if (xs.rank() != 3 && xs.rank() != 4)
    throw DimensionError("conv2d: input must be [C, H, W] or [B, C, H, W], got " + xs.str());
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.batched = xs.rank() == 4;
  const std::size_t off = g.batched ? 1 : 0;
  g.batch = g.batched ? xs[0] : 1;
  g.channels = xs[off];
  g.height = xs[off + 1];
  g.width = xs[off + 2];
  g.out_channels = ks[0];
  g.kh = ks[2];
  g.kw = ks[3];
  g.stride = stride;
  g.padding = padding;
  if (ks[1] != g.channels)
    throw DimensionError("conv2d: kernel channels " + ks.str() + " do not match input " +
                         xs.str());
  if (g.kh > g.height + 2 * padding || g.kw > g.width + 2 * padding)
    throw DimensionError("conv2d: kernel " + ks.str() + " larger than padded input " +
                         xs.str());
  g.oh = conv_output_extent(g.height, g.kh, stride, padding);
  g.ow = conv_output_extent(g.width, g.kw, stride, padding);
  return g;
}

// cols is [patch, out_pixels] for a single image.
void im2col(const ConvGeometry& g, const double* img, double* cols) {
  const auto np = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * np;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                ix < static_cast<std::ptrdiff_t>(g.width);
            row[oy * g.ow + ox] =
                inside ? img[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                             static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* img) {
  const auto np = g.out_pixels();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * np;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                          static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                            static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            img[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                static_cast<std::size_t>(ix)] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Tensor Var::grad() const {
  const auto& g = tape_->grad_buffer(id_);
  if (g.empty()) return Tensor(shape(), 0.0);
  return Tensor(shape(), g);
}

Var Tape::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, Backward backward) {
  const bool needs =
      std::any_of(inputs.begin(), inputs.end(), [&](auto id) { return nodes_[id].requires_grad; });
  nodes_.push_back(Node{std::move(value), std::move(inputs), needs ? std::move(backward) : Backward{},
                        needs, {}});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw ContractError("backward: root belongs to another tape");
  if (root.value().numel() != 1)
    throw ContractError("backward: root must be scalar, got shape " + root.shape().str());
  for (auto& n : nodes_) {
    if (n.requires_grad)
      n.grad.assign(n.value.numel(), 0.0);
    else
      n.grad.clear();
  }
  if (!nodes_[root.id()].requires_grad) return;
  nodes_[root.id()].grad[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.backward) n.backward(*this, i);
  }
}

const char* to_string(UnaryKind kind) {
  switch (kind) {
    case UnaryKind::relu: return "relu";
    case UnaryKind::sigmoid: return "sigmoid";
    case UnaryKind::exp: return "exp";
    case UnaryKind::log: return "log";
    case UnaryKind::square: return "square";
    case UnaryKind::negate: return "negate";
    case UnaryKind::abs: return "abs";
    case UnaryKind::min_zero: return "min_zero";
  }
  return "?";
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------
// Linear operators

Var affine(Var W, std::optional<Var> b, Var v) {
  require_same_tape(W, v);
  const Shape& ws = W.shape();
  const Shape& vs = v.shape();
  if (ws.rank() != 2) throw DimensionError("affine: weight must be a matrix, got " + ws.str());
  const std::size_t m = ws[0], n = ws[1];
  const bool batched = vs.rank() == 2;
  if (!(vs.rank() == 1 || batched) || vs.dims().back() != n)
    throw DimensionError("affine: weight " + ws.str() + " does not conform with input " +
                         vs.str());
  if (b) {
    require_same_tape(W, *b);
    if (b->shape() != Shape{m})
      throw DimensionError("affine: bias " + b->shape().str() + " does not conform with weight " +
                           ws.str());
  }
  const std::size_t rows = batched ? vs[0] : 1;
  Tensor out(batched ? Shape{rows, m} : Shape{m});
  MatMap O(out.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(m));
  ConstMatMap Wm(W.value().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  ConstMatMap V(v.value().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
  O.noalias() = V * Wm.transpose();
  if (b) {
    ConstVecMap bv(b->value().data(), static_cast<Eigen::Index>(m));
    O.rowwise() += bv.transpose();
  }

  std::vector<std::size_t> inputs{W.id(), v.id()};
  if (b) inputs.push_back(b->id());
  const auto wid = W.id(), vid = v.id();
  const std::optional<std::size_t> bid = b ? std::optional(b->id()) : std::nullopt;
  const auto er = static_cast<Eigen::Index>(rows), em = static_cast<Eigen::Index>(m),
             en = static_cast<Eigen::Index>(n);
  return W.tape().record(std::move(out), std::move(inputs),
                         [=](Tape& t, std::size_t self) {
                           ConstMatMap G(t.grad_buffer(self).data(), er, em);
                           if (t.requires_grad(wid)) {
                             MatMap GW(t.grad_buffer(wid).data(), em, en);
                             ConstMatMap Vv(t.value(vid).data(), er, en);
                             GW.noalias() += G.transpose() * Vv;
                           }
                           if (t.requires_grad(vid)) {
                             MatMap GV(t.grad_buffer(vid).data(), er, en);
                             ConstMatMap Wv(t.value(wid).data(), em, en);
                             GV.noalias() += G * Wv;
                           }
                           if (bid && t.requires_grad(*bid)) {
                             VecMap GB(t.grad_buffer(*bid).data(), em);
                             GB += G.colwise().sum().transpose();
                           }
                         });
}

Var conv2d(Var kernels, std::optional<Var> bias, Var x, std::size_t stride, std::size_t padding) {
  require_same_tape(kernels, x);
  const ConvGeometry g = conv_geometry(kernels.shape(), x.shape(), stride, padding);
  if (bias) {
    require_same_tape(kernels, *bias);
    if (bias->shape() != Shape{g.out_channels})
      throw DimensionError("conv2d: bias " + bias->shape().str() +
                           " does not match kernels " + kernels.shape().str());
  }
  Tensor out(g.batched ? Shape{g.batch, g.out_channels, g.oh, g.ow}
                       : Shape{g.out_channels, g.oh, g.ow});
  const auto P = static_cast<Eigen::Index>(g.patch());
  const auto NP = static_cast<Eigen::Index>(g.out_pixels());
  const auto O = static_cast<Eigen::Index>(g.out_channels);
  const std::size_t in_size = g.channels * g.height * g.width;
  const std::size_t out_size = g.out_channels * g.out_pixels();
  ConstMatMap K(kernels.value().data(), O, P);
  RowMat cols(P, NP);
  for (std::size_t s = 0; s < g.batch; ++s) {
    im2col(g, x.value().data() + s * in_size, cols.data());
    MatMap Y(out.data() + s * out_size, O, NP);
    Y.noalias() = K * cols;
    if (bias) {
      ConstVecMap bv(bias->value().data(), O);
      Y.colwise() += bv;
    }
  }

  std::vector<std::size_t> inputs{kernels.id(), x.id()};
  if (bias) inputs.push_back(bias->id());
  const auto kid = kernels.id(), xid = x.id();
  const std::optional<std::size_t> bid = bias ? std::optional(bias->id()) : std::nullopt;
  return kernels.tape().record(
      std::move(out), std::move(inputs), [=](Tape& t, std::size_t self) {
        const double* gout = t.grad_buffer(self).data();
        const bool need_k = t.requires_grad(kid), need_x = t.requires_grad(xid);
        const bool need_b = bid && t.requires_grad(*bid);
        ConstMatMap Kv(t.value(kid).data(), O, P);
        RowMat c(P, NP);
        RowMat dcols(P, NP);
        for (std::size_t s = 0; s < g.batch; ++s) {
          ConstMatMap G(gout + s * out_size, O, NP);
          if (need_k) {
            im2col(g, t.value(xid).data() + s * in_size, c.data());
            MatMap GK(t.grad_buffer(kid).data(), O, P);
            GK.noalias() += G * c.transpose();
          }
          if (need_x) {
            dcols.noalias() = Kv.transpose() * G;
            col2im_add(g, dcols.data(), t.grad_buffer(xid).data() + s * in_size);
          }
          if (need_b) {
            VecMap GB(t.grad_buffer(*bid).data(), O);
            GB += G.rowwise().sum();
          }
        }
      });
}

Var upsample2x(Var x) {
  const Shape& xs = x.shape();
  if (xs.rank() != 4) throw DimensionError("upsample2x: expected [B, C, H, W], got " + xs.str());
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  Tensor out(Shape{xs[0], xs[1], 2 * h, 2 * w});
  const double* in = x.value().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(p * 2 * h + y) * 2 * w + xx] = in[(p * h + y / 2) * w + xx / 2];
  const auto xid = x.id();
  return x.tape().record(std::move(out), {xid}, [=](Tape& t, std::size_t self) {
    auto& gin = t.grad_buffer(xid);
    const auto& gout = t.grad_buffer(self);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx)
          gin[(p * h + y / 2) * w + xx / 2] += gout[(p * 2 * h + y) * 2 * w + xx];
  });
}

Var reshape(Var v, Shape shape) {
  Tensor out = v.value().reshaped(std::move(shape));
  const auto vid = v.id();
  return v.tape().record(std::move(out), {vid}, [vid](Tape& t, std::size_t self) {
    auto& gin = t.grad_buffer(vid);
    const auto& gout = t.grad_buffer(self);
    for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += gout[i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Var unary(UnaryKind kind, Var v) {
  switch (kind) {
    case UnaryKind::relu:
      return map_unary(
          v, [](double x) { return x > 0 ? x : 0.0; },
          [](double x, double) { return x > 0 ? 1.0 : 0.0; });
    case UnaryKind::sigmoid:
      return map_unary(v, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
    case UnaryKind::exp:
      return map_unary(
          v, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
    case UnaryKind::log: {
      const Tensor& in = v.value();
      for (std::size_t i = 0; i < in.numel(); ++i)
        if (!(in[i] > 0))
          throw DomainError("log: element " + std::to_string(i) + " is nonpositive (" +
                            std::to_string(in[i]) + ")");
      return map_unary(
          v, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
    }
    case UnaryKind::square:
      return map_unary(
          v, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
    case UnaryKind::negate:
      return map_unary(
          v, [](double x) { return -x; }, [](double, double) { return -1.0; });
    case UnaryKind::abs:
      return map_unary(
          v, [](double x) { return std::abs(x); },
          [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
    case UnaryKind::min_zero:
      return map_unary(
          v, [](double x) { return x < 0 ? x : 0.0; },
          [](double x, double) { return x < 0 ? 1.0 : 0.0; });
  }
  throw ContractError("unary: unknown kind");
}

namespace {

/// Elementwise binary op with partials (da, db) computed from (a, b).
template <typename F, typename DA, typename DB>
Var map_binary(const char* name, Var a, Var b, F f, DA da, DB db) {
  require_same_tape(a, b);
  require_same_shape(name, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = f(av[i], bv[i]);
  const auto aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {aid, bid}, [=](Tape& t, std::size_t self) {
    const auto& gout = t.grad_buffer(self);
    const Tensor& x = t.value(aid);
    const Tensor& y = t.value(bid);
    if (t.requires_grad(aid)) {
      auto& ga = t.grad_buffer(aid);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i] * da(x[i], y[i]);
    }
    if (t.requires_grad(bid)) {
      auto& gb = t.grad_buffer(bid);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i] * db(x[i], y[i]);
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return map_binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return map_binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return map_binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var maximum(Var a, Var b) {
  return map_binary(
      "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Var minimum(Var a, Var b) {
  return map_binary(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Var scale(Var v, double c) {
  return map_unary(
      v, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var v, double c) {
  return map_unary(
      v, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var v) {
  const Tensor& in = v.value();
  double s = 0.0;
  for (double x : in.values()) s += x;
  const auto vid = v.id();
  return v.tape().record(Tensor::scalar(s), {vid}, [vid](Tape& t, std::size_t self) {
    const double g = t.grad_buffer(self)[0];
    for (auto& gi : t.grad_buffer(vid)) gi += g;
  });
}

Var sum_rows(Var v) {
  const Tensor& in = v.value();
  const std::size_t rows = in.shape()[0];
  const std::size_t width = in.shape().row_size();
  Tensor out(Shape{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < width; ++j) s += in[r * width + j];
    out[r] = s;
  }
  const auto vid = v.id();
  return v.tape().record(std::move(out), {vid}, [=](Tape& t, std::size_t self) {
    const auto& gout = t.grad_buffer(self);
    auto& gin = t.grad_buffer(vid);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < width; ++j) gin[r * width + j] += gout[r];
  });
}

Var mean(Var v) { return scale(sum(v), 1.0 / static_cast<double>(v.value().numel())); }

Var reduce_sum_squares(Var v) {
  const Tensor& in = v.value();
  double s = 0.0;
  for (double x : in.values()) s += x * x;
  const auto vid = v.id();
  return v.tape().record(Tensor::scalar(s), {vid}, [vid](Tape& t, std::size_t self) {
    const double g = t.grad_buffer(self)[0];
    const Tensor& x = t.value(vid);
    auto& gin = t.grad_buffer(vid);
    for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += 2.0 * x[i] * g;
  });
}

}  // namespace provae
