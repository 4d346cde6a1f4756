#pragma once

#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <vector>

#include "pansharp/autograd.hpp"

namespace pansharp {

// ---------------------------------------------------------------------------
// Elementwise with broadcasting: each axis of `b` is either 1 or equal to a's,
// or vice versa.

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  Shape out;
  for (int ax = 0; ax < 4; ++ax) {
    if (a[ax] == b[ax] || b[ax] == 1)
      out[ax] = a[ax];
    else if (a[ax] == 1)
      out[ax] = b[ax];
    else
      throw GeometryError("cannot broadcast " + a.str() + " with " + b.str());
  }
  return out;
}

// Flat index into `s` of the element that broadcasts to output (n, c, y, x).
inline Eigen::Index broadcast_offset(const Shape& s, int n, int c, int y, int x) {
  const int nn = s.n == 1 ? 0 : n, cc = s.c == 1 ? 0 : c, yy = s.h == 1 ? 0 : y, xx = s.w == 1 ? 0 : x;
  return ((static_cast<Eigen::Index>(nn) * s.c + cc) * s.h + yy) * s.w + xx;
}

// Visits every output element with the flat indices of both operands.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  Eigen::Index o = 0;
  for (int n = 0; n < out.n; ++n)
    for (int c = 0; c < out.c; ++c)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x, ++o) f(o, broadcast_offset(a, n, c, y, x), broadcast_offset(b, n, c, y, x));
}

template <typename Scalar>
void accumulate(Node<Scalar>& p, const Tensor<Scalar>& g) {
  if (!p.requires_grad) return;
  p.grad_buffer().data() += g.data();
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa == sb) {
    Tensor<Scalar> out(sa, a.value().data() + b.value().data());
    return make_op(std::move(out), {a, b}, [](Node<Scalar>& self) {
      detail::accumulate(self.parent(0), self.grad);
      detail::accumulate(self.parent(1), self.grad);
    });
  }
  const Shape so = detail::broadcast_shape(sa, sb);
  Tensor<Scalar> out(so);
  const auto& av = a.value().data();
  const auto& bv = b.value().data();
  detail::for_each_broadcast(so, sa, sb, [&](Eigen::Index o, Eigen::Index i, Eigen::Index j) {
    out.data()[o] = av[i] + bv[j];
  });
  return make_op(std::move(out), {a, b}, [sa, sb, so](Node<Scalar>& self) {
    auto& pa = self.parent(0);
    auto& pb = self.parent(1);
    const auto& g = self.grad.data();
    if (pa.requires_grad) pa.grad_buffer();
    if (pb.requires_grad) pb.grad_buffer();
    detail::for_each_broadcast(so, sa, sb, [&](Eigen::Index o, Eigen::Index i, Eigen::Index j) {
      if (pa.requires_grad) pa.grad.data()[i] += g[o];
      if (pb.requires_grad) pb.grad.data()[j] += g[o];
    });
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa == sb) {
    Tensor<Scalar> out(sa, (a.value().data().array() * b.value().data().array()).matrix());
    return make_op(std::move(out), {a, b}, [](Node<Scalar>& self) {
      auto& pa = self.parent(0);
      auto& pb = self.parent(1);
      if (pa.requires_grad) pa.grad_buffer().data().array() += self.grad.data().array() * pb.value.data().array();
      if (pb.requires_grad) pb.grad_buffer().data().array() += self.grad.data().array() * pa.value.data().array();
    });
  }
  const Shape so = detail::broadcast_shape(sa, sb);
  Tensor<Scalar> out(so);
  const auto& av = a.value().data();
  const auto& bv = b.value().data();
  detail::for_each_broadcast(so, sa, sb, [&](Eigen::Index o, Eigen::Index i, Eigen::Index j) {
    out.data()[o] = av[i] * bv[j];
  });
  return make_op(std::move(out), {a, b}, [sa, sb, so](Node<Scalar>& self) {
    auto& pa = self.parent(0);
    auto& pb = self.parent(1);
    const auto& g = self.grad.data();
    const auto& av = pa.value.data();
    const auto& bv = pb.value.data();
    if (pa.requires_grad) pa.grad_buffer();
    if (pb.requires_grad) pb.grad_buffer();
    detail::for_each_broadcast(so, sa, sb, [&](Eigen::Index o, Eigen::Index i, Eigen::Index j) {
      if (pa.requires_grad) pa.grad.data()[i] += g[o] * bv[j];
      if (pb.requires_grad) pb.grad.data()[j] += g[o] * av[i];
    });
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape(), a.value().data() * s);
  return make_op(std::move(out), {a}, [s](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (p.requires_grad) p.grad_buffer().data() += self.grad.data() * s;
  });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape(), (a.value().data().array() + s).matrix());
  return make_op(std::move(out), {a}, [](Node<Scalar>& self) { detail::accumulate(self.parent(0), self.grad); });
}

template <typename Scalar>
Var<Scalar> neg(const Var<Scalar>& a) {
  return scale(a, Scalar(-1));
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape() == b.shape()) {
    Tensor<Scalar> out(a.shape(), a.value().data() - b.value().data());
    return make_op(std::move(out), {a, b}, [](Node<Scalar>& self) {
      detail::accumulate(self.parent(0), self.grad);
      auto& pb = self.parent(1);
      if (pb.requires_grad) pb.grad_buffer().data() -= self.grad.data();
    });
  }
  return add(a, neg(b));
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }

/// Generic pointwise map given f and f'.
template <typename Scalar, typename F, typename DF>
Var<Scalar> pointwise(const Var<Scalar>& a, F f, DF df) {
  Tensor<Scalar> out(a.shape(), a.value().data().unaryExpr(f));
  return make_op(std::move(out), {a}, [df](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (!p.requires_grad) return;
    p.grad_buffer().data().array() += self.grad.data().array() * p.value.data().unaryExpr(df).array();
  });
}

template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& a, Scalar slope = Scalar(0.2)) {
  return pointwise(
      a, [slope](Scalar v) { return v > 0 ? v : slope * v; }, [slope](Scalar v) { return v > 0 ? Scalar(1) : slope; });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  return leaky_relu(a, Scalar(0));
}

/// Numerically stable log(1 + e^x).
template <typename Scalar>
Scalar softplus_value(Scalar x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename Scalar>
Var<Scalar> softplus(const Var<Scalar>& a) {
  return pointwise(
      a, [](Scalar v) { return softplus_value(v); }, [](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
}

/// tanh approximation of GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return pointwise(
      a,
      [](Scalar v) {
        const double x = v;
        return static_cast<Scalar>(0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x))));
      },
      [](Scalar v) {
        const double x = v;
        const double t = std::tanh(k * (x + 0.044715 * x * x * x));
        return static_cast<Scalar>(0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3 * 0.044715 * x * x));
      });
}

// ---------------------------------------------------------------------------
// Reductions and losses.

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  return make_op(Tensor<Scalar>::scalar(a.value().data().sum()), {a}, [](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (p.requires_grad) p.grad_buffer().data().array() += self.grad.item();
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

/// Mean of |a| over all elements.
template <typename Scalar>
Var<Scalar> mean_abs(const Var<Scalar>& a) {
  const auto n = static_cast<Scalar>(a.value().size());
  return make_op(Tensor<Scalar>::scalar(a.value().data().cwiseAbs().sum() / n), {a}, [n](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (!p.requires_grad) return;
    const Scalar g = self.grad.item() / n;
    p.grad_buffer().data().array() += g * p.value.data().array().sign();
  });
}

/// sum(weight * |a|) / sum(weight); weight broadcasts against a.
template <typename Scalar>
Var<Scalar> weighted_mean_abs(const Var<Scalar>& a, const Tensor<Scalar>& weight) {
  const Shape sa = a.shape(), sw = weight.shape();
  const Shape so = detail::broadcast_shape(sa, sw);
  if (!(so == sa)) throw GeometryError("weight " + sw.str() + " must broadcast onto " + sa.str());
  double num = 0, den = 0;
  const auto& av = a.value().data();
  const auto& wv = weight.data();
  detail::for_each_broadcast(sa, sa, sw, [&](Eigen::Index o, Eigen::Index, Eigen::Index j) {
    num += static_cast<double>(wv[j]) * std::abs(static_cast<double>(av[o]));
    den += static_cast<double>(wv[j]);
  });
  if (!(den > 0)) throw ArgumentError("weighted loss has zero total weight");
  return make_op(Tensor<Scalar>::scalar(static_cast<Scalar>(num / den)), {a}, [weight, sa, sw, den](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (!p.requires_grad) return;
    const Scalar g = static_cast<Scalar>(self.grad.item() / den);
    auto& pg = p.grad_buffer().data();
    const auto& av = p.value.data();
    const auto& wv = weight.data();
    detail::for_each_broadcast(sa, sa, sw, [&](Eigen::Index o, Eigen::Index, Eigen::Index j) {
      const Scalar s = av[o] > 0 ? Scalar(1) : (av[o] < 0 ? Scalar(-1) : Scalar(0));
      pg[o] += g * wv[j] * s;
    });
  });
}

// ---------------------------------------------------------------------------
// Layout ops.

/// out.flat[i] = a.flat[index[i]]; backward scatters.
template <typename Scalar>
Var<Scalar> gather(const Var<Scalar>& a, std::shared_ptr<const std::vector<Eigen::Index>> index, Shape out_shape) {
  if (static_cast<Eigen::Index>(index->size()) != out_shape.size())
    throw GeometryError("gather index does not match output shape " + out_shape.str());
  Tensor<Scalar> out(out_shape);
  const auto& av = a.value().data();
  for (Eigen::Index i = 0; i < out_shape.size(); ++i) out.data()[i] = av[(*index)[static_cast<std::size_t>(i)]];
  return make_op(std::move(out), {a}, [index](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (!p.requires_grad) return;
    auto& pg = p.grad_buffer().data();
    for (Eigen::Index i = 0; i < self.grad.size(); ++i) pg[(*index)[static_cast<std::size_t>(i)]] += self.grad.data()[i];
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape s) {
  if (s.size() != a.value().size()) throw GeometryError("reshape " + a.shape().str() + " -> " + s.str());
  return make_op(Tensor<Scalar>(s, a.value().data()), {a}, [](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (p.requires_grad) p.grad_buffer().data() += self.grad.data();
  });
}

namespace detail {
// View a tensor as outer x axis_len x inner.
inline void split_axis(const Shape& s, int axis, Eigen::Index& outer, Eigen::Index& inner) {
  outer = 1;
  inner = 1;
  for (int ax = 0; ax < axis; ++ax) outer *= s[ax];
  for (int ax = axis + 1; ax < 4; ++ax) inner *= s[ax];
}
}  // namespace detail

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, int axis) {
  if (parts.empty()) throw ArgumentError("concat of nothing");
  Shape so = parts.front().shape();
  so[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    s[axis] = so[axis];
    if (!(s == so)) throw GeometryError("concat operands disagree off-axis: " + p.shape().str());
    so[axis] += p.shape()[axis];
  }
  Eigen::Index outer, inner;
  detail::split_axis(so, axis, outer, inner);
  Tensor<Scalar> out(so);
  std::vector<Eigen::Index> widths;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    const Eigen::Index w = static_cast<Eigen::Index>(p.shape()[axis]) * inner;
    for (Eigen::Index o = 0; o < outer; ++o)
      out.data().segment(o * so[axis] * inner + off, w) = p.value().data().segment(o * w, w);
    widths.push_back(w);
    off += w;
  }
  return make_op(std::move(out), parts, [widths, outer, total = so[axis] * inner](Node<Scalar>& self) {
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& p = self.parent(k);
      const Eigen::Index w = widths[k];
      if (p.requires_grad) {
        auto& pg = p.grad_buffer().data();
        for (Eigen::Index o = 0; o < outer; ++o) pg.segment(o * w, w) += self.grad.data().segment(o * total + off, w);
      }
      off += w;
    }
  });
}

template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& a, int axis, int start, int len) {
  const Shape sa = a.shape();
  if (start < 0 || len <= 0 || start + len > sa[axis])
    throw GeometryError("slice [" + std::to_string(start) + "," + std::to_string(start + len) + ") out of " + sa.str());
  Shape so = sa;
  so[axis] = len;
  Eigen::Index outer, inner;
  detail::split_axis(sa, axis, outer, inner);
  const Eigen::Index w = static_cast<Eigen::Index>(len) * inner, full = static_cast<Eigen::Index>(sa[axis]) * inner,
                     off = static_cast<Eigen::Index>(start) * inner;
  Tensor<Scalar> out(so);
  for (Eigen::Index o = 0; o < outer; ++o) out.data().segment(o * w, w) = a.value().data().segment(o * full + off, w);
  return make_op(std::move(out), {a}, [outer, w, full, off](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (!p.requires_grad) return;
    auto& pg = p.grad_buffer().data();
    for (Eigen::Index o = 0; o < outer; ++o) pg.segment(o * full + off, w) += self.grad.data().segment(o * w, w);
  });
}

// ---------------------------------------------------------------------------
// Convolution. Weights are (Cout, Cin, kh, kw); transposed conv weights are
// (Cin, Cout, kh, kw). Zero padding.

struct ConvGeometry {
  int cin, h, w, kh, kw, stride, pad, ho, wo;

  static ConvGeometry make(int cin, int h, int w, int kh, int kw, int stride, int pad) {
    ConvGeometry g{cin, h, w, kh, kw, stride, pad, 0, 0};
    if (stride < 1) throw ArgumentError("conv stride must be >= 1");
    g.ho = (h + 2 * pad - kh) / stride + 1;
    g.wo = (w + 2 * pad - kw) / stride + 1;
    if (g.ho <= 0 || g.wo <= 0) throw GeometryError("conv kernel larger than padded input");
    return g;
  }
  Eigen::Index rows() const { return static_cast<Eigen::Index>(cin) * kh * kw; }
  Eigen::Index cols() const { return static_cast<Eigen::Index>(ho) * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

namespace detail {

template <typename Scalar>
void im2col(const Scalar* src, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
  cols.resize(g.rows(), g.cols());
  for (int c = 0; c < g.cin; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        Scalar* row = cols.data() + ((static_cast<Eigen::Index>(c) * g.kh + i) * g.kw + j) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int y = oy * g.stride - g.pad + i;
          Scalar* dst = row + static_cast<Eigen::Index>(oy) * g.wo;
          if (y < 0 || y >= g.h) {
            std::fill(dst, dst + g.wo, Scalar(0));
            continue;
          }
          const Scalar* line = src + (static_cast<Eigen::Index>(c) * g.h + y) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int x = ox * g.stride - g.pad + j;
            dst[ox] = (x >= 0 && x < g.w) ? line[x] : Scalar(0);
          }
        }
      }
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* dst) {
  for (int c = 0; c < g.cin; ++c)
    for (int i = 0; i < g.kh; ++i)
      for (int j = 0; j < g.kw; ++j) {
        const Scalar* row = cols.data() + ((static_cast<Eigen::Index>(c) * g.kh + i) * g.kw + j) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int y = oy * g.stride - g.pad + i;
          if (y < 0 || y >= g.h) continue;
          Scalar* line = dst + (static_cast<Eigen::Index>(c) * g.h + y) * g.w;
          const Scalar* s = row + static_cast<Eigen::Index>(oy) * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int x = ox * g.stride - g.pad + j;
            if (x >= 0 && x < g.w) line[x] += s[ox];
          }
        }
      }
}

template <typename Scalar>
Eigen::Map<const RowMatrix<Scalar>> weight_matrix(const Tensor<Scalar>& w) {
  return {w.ptr(), w.n(), static_cast<Eigen::Index>(w.c()) * w.h() * w.w()};
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>* bias, int stride, int pad) {
  const Shape sx = x.shape(), sw = weight.shape();
  if (sw.c != sx.c)
    throw GeometryError("conv expects " + std::to_string(sw.c) + " input channels, got " + std::to_string(sx.c));
  const auto g = ConvGeometry::make(sx.c, sx.h, sx.w, sw.h, sw.w, stride, pad);
  const int cout = sw.n;
  Tensor<Scalar> out(Shape{sx.n, cout, g.ho, g.wo});
  const auto wm = detail::weight_matrix(weight.value());
  RowMatrix<Scalar> cols;
  for (int n = 0; n < sx.n; ++n) {
    auto dst = out.sample(n);
    if (g.pointwise()) {
      dst.noalias() = wm * x.value().sample(n);
    } else {
      detail::im2col(x.value().ptr() + x.value().offset(n, 0, 0, 0), g, cols);
      dst.noalias() = wm * cols;
    }
    if (bias) dst.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(bias->value().ptr(), cout);
  }
  std::vector<Var<Scalar>> parents{x, weight};
  if (bias) parents.push_back(*bias);
  return make_op(std::move(out), parents, [g, cout](Node<Scalar>& self) {
    auto& px = self.parent(0);
    auto& pw = self.parent(1);
    const auto wm = detail::weight_matrix(pw.value);
    RowMatrix<Scalar> cols, dcols;
    for (int n = 0; n < self.grad.n(); ++n) {
      const auto gout = self.grad.sample(n);
      if (g.pointwise()) {
        if (pw.requires_grad) {
          Eigen::Map<RowMatrix<Scalar>> gw(pw.grad_buffer().ptr(), cout, g.rows());
          gw.noalias() += gout * px.value.sample(n).transpose();
        }
        if (px.requires_grad) px.grad_buffer().sample(n).noalias() += wm.transpose() * gout;
      } else {
        if (pw.requires_grad) {
          detail::im2col(px.value.ptr() + px.value.offset(n, 0, 0, 0), g, cols);
          Eigen::Map<RowMatrix<Scalar>> gw(pw.grad_buffer().ptr(), cout, g.rows());
          gw.noalias() += gout * cols.transpose();
        }
        if (px.requires_grad) {
          dcols.noalias() = wm.transpose() * gout;
          detail::col2im(dcols, g, px.grad_buffer().ptr() + px.value.offset(n, 0, 0, 0));
        }
      }
      if (self.parents.size() > 2 && self.parent(2).requires_grad)
        self.parent(2).grad_buffer().data() += gout.rowwise().sum();
    }
  });
}

/// Adjoint-geometry deconvolution: output (H-1)*stride - 2*pad + k.
template <typename Scalar>
Var<Scalar> conv_transpose2d(const Var<Scalar>& x, const Var<Scalar>& weight, int stride, int pad) {
  const Shape sx = x.shape(), sw = weight.shape();
  if (sw.n != sx.c)
    throw GeometryError("transposed conv expects " + std::to_string(sw.n) + " input channels, got " +
                        std::to_string(sx.c));
  const int cout = sw.c;
  const int ho = (sx.h - 1) * stride - 2 * pad + sw.h, wo = (sx.w - 1) * stride - 2 * pad + sw.w;
  const auto g = ConvGeometry::make(cout, ho, wo, sw.h, sw.w, stride, pad);
  if (g.ho != sx.h || g.wo != sx.w) throw GeometryError("transposed conv geometry mismatch");
  const auto wm = detail::weight_matrix(weight.value());  // Cin x (Cout*kh*kw)
  Tensor<Scalar> out(Shape{sx.n, cout, ho, wo});
  RowMatrix<Scalar> cols;
  for (int n = 0; n < sx.n; ++n) {
    cols.noalias() = wm.transpose() * x.value().sample(n);
    detail::col2im(cols, g, out.ptr() + out.offset(n, 0, 0, 0));
  }
  return make_op(std::move(out), {x, weight}, [g](Node<Scalar>& self) {
    auto& px = self.parent(0);
    auto& pw = self.parent(1);
    const auto wm = detail::weight_matrix(pw.value);
    RowMatrix<Scalar> cols;
    for (int n = 0; n < self.grad.n(); ++n) {
      detail::im2col(self.grad.ptr() + self.grad.offset(n, 0, 0, 0), g, cols);
      if (px.requires_grad) px.grad_buffer().sample(n).noalias() += wm * cols;
      if (pw.requires_grad) {
        Eigen::Map<RowMatrix<Scalar>> gw(pw.grad_buffer().ptr(), wm.rows(), wm.cols());
        gw.noalias() += px.value.sample(n) * cols.transpose();
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Fixed linear operator given as a forward map and its adjoint.

template <typename Scalar>
using TensorMap = std::function<Tensor<Scalar>(const Tensor<Scalar>&)>;

template <typename Scalar>
Var<Scalar> apply_linear(const Var<Scalar>& x, const TensorMap<Scalar>& forward, TensorMap<Scalar> adjoint) {
  return make_op(forward(x.value()), {x}, [adjoint = std::move(adjoint)](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (p.requires_grad) p.grad_buffer().data() += adjoint(self.grad).data();
  });
}

// ---------------------------------------------------------------------------
// 2-D discrete Fourier transform over (h, w) of every (n, c) plane.
// Complex tensors are stored as (N, 2C, H, W): real parts then imaginary.

namespace detail {

template <typename Scalar>
using ComplexMatrix = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
const ComplexMatrix<Scalar>& dft_matrix(int n) {
  thread_local std::map<int, ComplexMatrix<Scalar>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  ComplexMatrix<Scalar> f(n, n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * j) % n) / n;
      f(k, j) = std::complex<Scalar>(static_cast<Scalar>(std::cos(angle)), static_cast<Scalar>(std::sin(angle)));
    }
  return cache.emplace(n, std::move(f)).first->second;
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> dft2(const Var<Scalar>& x) {
  const Shape s = x.shape();
  const auto& fh = detail::dft_matrix<Scalar>(s.h);
  const auto& fw = detail::dft_matrix<Scalar>(s.w);
  Tensor<Scalar> out(Shape{s.n, 2 * s.c, s.h, s.w});
  detail::ComplexMatrix<Scalar> y;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      y.noalias() = fh * (x.value().plane(n, c).template cast<std::complex<Scalar>>() * fw);
      out.plane(n, c) = y.real();
      out.plane(n, s.c + c) = y.imag();
    }
  return make_op(std::move(out), {x}, [s](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (!p.requires_grad) return;
    const auto& fh = detail::dft_matrix<Scalar>(s.h);
    const auto& fw = detail::dft_matrix<Scalar>(s.w);
    detail::ComplexMatrix<Scalar> g(s.h, s.w);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        g.real() = self.grad.plane(n, c);
        g.imag() = self.grad.plane(n, s.c + c);
        p.grad_buffer().plane(n, c) += (fh.conjugate() * g * fw.conjugate()).real();
      }
  });
}

/// Real part of the inverse transform of an (N, 2C, H, W) complex tensor.
template <typename Scalar>
Var<Scalar> idft2_real(const Var<Scalar>& z) {
  const Shape s = z.shape();
  if (s.c % 2 != 0) throw GeometryError("complex tensor needs an even channel count");
  const int c_half = s.c / 2;
  const auto& fh = detail::dft_matrix<Scalar>(s.h);
  const auto& fw = detail::dft_matrix<Scalar>(s.w);
  const Scalar norm = Scalar(1) / static_cast<Scalar>(s.plane());
  Tensor<Scalar> out(Shape{s.n, c_half, s.h, s.w});
  detail::ComplexMatrix<Scalar> y(s.h, s.w);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < c_half; ++c) {
      y.real() = z.value().plane(n, c);
      y.imag() = z.value().plane(n, c_half + c);
      out.plane(n, c) = (fh.conjugate() * y * fw.conjugate()).real() * norm;
    }
  return make_op(std::move(out), {z}, [s, c_half, norm](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (!p.requires_grad) return;
    const auto& fh = detail::dft_matrix<Scalar>(s.h);
    const auto& fw = detail::dft_matrix<Scalar>(s.w);
    detail::ComplexMatrix<Scalar> m;
    auto& pg = p.grad_buffer();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < c_half; ++c) {
        m.noalias() = fh.conjugate() * (self.grad.plane(n, c).template cast<std::complex<Scalar>>() * fw.conjugate());
        pg.plane(n, c) += m.real() * norm;
        pg.plane(n, c_half + c) -= m.imag() * norm;
      }
  });
}

namespace detail {
template <typename Scalar>
constexpr Scalar polar_eps() {
  return static_cast<Scalar>(1e-8);
}
}  // namespace detail

/// (re, im) -> (amplitude, phase), both halves of an (N, 2C, H, W) tensor.
template <typename Scalar>
Var<Scalar> complex_to_polar(const Var<Scalar>& z) {
  const Shape s = z.shape();
  const Eigen::Index half = s.size() / 2 / s.n;
  Tensor<Scalar> out(s);
  const auto& zv = z.value().data();
  for (int n = 0; n < s.n; ++n) {
    const Eigen::Index base = n * 2 * half;
    for (Eigen::Index i = 0; i < half; ++i) {
      const Scalar re = zv[base + i], im = zv[base + half + i];
      out.data()[base + i] = std::sqrt(re * re + im * im + detail::polar_eps<Scalar>());
      out.data()[base + half + i] = std::atan2(im, re);
    }
  }
  return make_op(std::move(out), {z}, [half](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (!p.requires_grad) return;
    const auto& zv = p.value.data();
    const auto& ov = self.value.data();
    const auto& g = self.grad.data();
    auto& pg = p.grad_buffer().data();
    for (int n = 0; n < self.value.n(); ++n) {
      const Eigen::Index base = n * 2 * half;
      for (Eigen::Index i = 0; i < half; ++i) {
        const Scalar re = zv[base + i], im = zv[base + half + i];
        const Scalar amp = ov[base + i];
        const Scalar r2 = re * re + im * im + detail::polar_eps<Scalar>();
        const Scalar ga = g[base + i], gp = g[base + half + i];
        pg[base + i] += ga * re / amp - gp * im / r2;
        pg[base + half + i] += ga * im / amp + gp * re / r2;
      }
    }
  });
}

/// (amplitude, phase) -> (re, im).
template <typename Scalar>
Var<Scalar> polar_to_complex(const Var<Scalar>& ap) {
  const Shape s = ap.shape();
  const Eigen::Index half = s.size() / 2 / s.n;
  Tensor<Scalar> out(s);
  const auto& v = ap.value().data();
  for (int n = 0; n < s.n; ++n) {
    const Eigen::Index base = n * 2 * half;
    for (Eigen::Index i = 0; i < half; ++i) {
      const Scalar a = v[base + i], ph = v[base + half + i];
      out.data()[base + i] = a * std::cos(ph);
      out.data()[base + half + i] = a * std::sin(ph);
    }
  }
  return make_op(std::move(out), {ap}, [half](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (!p.requires_grad) return;
    const auto& v = p.value.data();
    const auto& g = self.grad.data();
    auto& pg = p.grad_buffer().data();
    for (int n = 0; n < self.value.n(); ++n) {
      const Eigen::Index base = n * 2 * half;
      for (Eigen::Index i = 0; i < half; ++i) {
        const Scalar a = v[base + i], ph = v[base + half + i];
        const Scalar c = std::cos(ph), sn = std::sin(ph);
        const Scalar gr = g[base + i], gi = g[base + half + i];
        pg[base + i] += gr * c + gi * sn;
        pg[base + half + i] += a * (gi * c - gr * sn);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Token ops on (N, 1, T, D) tensors.

/// Batched a @ b (or a @ b^T). Either side may have n == 1 and broadcast.
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_b = false) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.c != 1 || sb.c != 1) throw GeometryError("matmul expects (N,1,rows,cols) operands");
  const int batch = std::max(sa.n, sb.n);
  if ((sa.n != batch && sa.n != 1) || (sb.n != batch && sb.n != 1))
    throw GeometryError("matmul batch mismatch " + sa.str() + " vs " + sb.str());
  const int inner_b = transpose_b ? sb.w : sb.h;
  const int cols = transpose_b ? sb.h : sb.w;
  if (sa.w != inner_b) throw GeometryError("matmul inner dims " + sa.str() + " vs " + sb.str());
  Tensor<Scalar> out(Shape{batch, 1, sa.h, cols});
  for (int n = 0; n < batch; ++n) {
    const auto am = a.value().matrix(sa.n == 1 ? 0 : n);
    const auto bm = b.value().matrix(sb.n == 1 ? 0 : n);
    if (transpose_b)
      out.matrix(n).noalias() = am * bm.transpose();
    else
      out.matrix(n).noalias() = am * bm;
  }
  return make_op(std::move(out), {a, b}, [transpose_b](Node<Scalar>& self) {
    auto& pa = self.parent(0);
    auto& pb = self.parent(1);
    for (int n = 0; n < self.grad.n(); ++n) {
      const int na = pa.value.n() == 1 ? 0 : n, nb = pb.value.n() == 1 ? 0 : n;
      const auto g = self.grad.matrix(n);
      const auto am = pa.value.matrix(na);
      const auto bm = pb.value.matrix(nb);
      if (pa.requires_grad) {
        if (transpose_b)
          pa.grad_buffer().matrix(na).noalias() += g * bm;
        else
          pa.grad_buffer().matrix(na).noalias() += g * bm.transpose();
      }
      if (pb.requires_grad) {
        if (transpose_b)
          pb.grad_buffer().matrix(nb).noalias() += g.transpose() * am;
        else
          pb.grad_buffer().matrix(nb).noalias() += am.transpose() * g;
      }
    }
  });
}

/// Softmax over the last axis.
template <typename Scalar>
Var<Scalar> softmax_last(const Var<Scalar>& a) {
  const Shape s = a.shape();
  const Eigen::Index rows = s.size() / s.w;
  Tensor<Scalar> out(s);
  Eigen::Map<const RowMatrix<Scalar>> x(a.value().ptr(), rows, s.w);
  Eigen::Map<RowMatrix<Scalar>> y(out.ptr(), rows, s.w);
  for (Eigen::Index r = 0; r < rows; ++r) {
    y.row(r) = (x.row(r).array() - x.row(r).maxCoeff()).exp();
    y.row(r) /= y.row(r).sum();
  }
  return make_op(std::move(out), {a}, [rows](Node<Scalar>& self) {
    auto& p = self.parent(0);
    if (!p.requires_grad) return;
    const int w = self.value.w();
    Eigen::Map<const RowMatrix<Scalar>> y(self.value.ptr(), rows, w);
    Eigen::Map<const RowMatrix<Scalar>> g(self.grad.ptr(), rows, w);
    Eigen::Map<RowMatrix<Scalar>> pg(p.grad_buffer().ptr(), rows, w);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const Scalar dot = g.row(r).dot(y.row(r));
      pg.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

/// LayerNorm over the last axis with affine (1,1,1,D) gain and shift.
template <typename Scalar>
Var<Scalar> layer_norm_last(const Var<Scalar>& a, const Var<Scalar>& gain, const Var<Scalar>& shift,
                            Scalar eps = Scalar(1e-5)) {
  const Shape s = a.shape();
  const int d = s.w;
  if (gain.value().size() != d || shift.value().size() != d) throw GeometryError("layer norm affine size mismatch");
  const Eigen::Index rows = s.size() / d;
  Tensor<Scalar> out(s);
  auto xhat = std::make_shared<RowMatrix<Scalar>>(rows, d);
  auto inv_std = std::make_shared<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(rows);
  Eigen::Map<const RowMatrix<Scalar>> x(a.value().ptr(), rows, d);
  Eigen::Map<RowMatrix<Scalar>> y(out.ptr(), rows, d);
  Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> gv(gain.value().ptr(), d), bv(shift.value().ptr(), d);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Scalar mu = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mu).square().mean();
    (*inv_std)[r] = Scalar(1) / std::sqrt(var + eps);
    xhat->row(r) = (x.row(r).array() - mu) * (*inv_std)[r];
    y.row(r) = xhat->row(r).cwiseProduct(gv) + bv;
  }
  return make_op(std::move(out), {a, gain, shift}, [rows, d, xhat, inv_std](Node<Scalar>& self) {
    auto& px = self.parent(0);
    auto& pg = self.parent(1);
    auto& pb = self.parent(2);
    Eigen::Map<const RowMatrix<Scalar>> g(self.grad.ptr(), rows, d);
    Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> gv(pg.value.ptr(), d);
    if (pg.requires_grad)
      Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(pg.grad_buffer().ptr(), d) +=
          g.cwiseProduct(*xhat).colwise().sum();
    if (pb.requires_grad)
      Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(pb.grad_buffer().ptr(), d) += g.colwise().sum();
    if (px.requires_grad) {
      Eigen::Map<RowMatrix<Scalar>> gx(px.grad_buffer().ptr(), rows, d);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> gh = g.row(r).cwiseProduct(gv);
        const Scalar m1 = gh.mean();
        const Scalar m2 = gh.cwiseProduct(xhat->row(r)).mean();
        gx.row(r).array() += (*inv_std)[r] * (gh.array() - m1 - xhat->row(r).array() * m2);
      }
    }
  });
}

}  // namespace pansharp
