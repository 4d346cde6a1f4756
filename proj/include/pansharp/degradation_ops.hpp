#pragma once

#include "pansharp/filters.hpp"
#include "pansharp/layers.hpp"

namespace pansharp {

namespace detail {

inline void require_divisible(const Shape& s, int ratio, const char* what) {
  if (s.h % ratio != 0 || s.w % ratio != 0)
    throw GeometryError(std::string(what) + ": spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                        " not divisible by " + std::to_string(ratio));
}

// Per-channel (diagonal) kernel written into a (C, C, k, k) weight.
template <typename Scalar>
void set_diagonal_kernel(Tensor<Scalar>& w, const std::type_identity_t<RowMatrix<Scalar>>& k) {
  w.set_zero();
  const int channels = std::min(w.n(), w.c());
  for (int c = 0; c < channels; ++c) w.plane(c, c) = k;
}

template <typename Scalar>
RowMatrix<Scalar> binomial3() {
  RowMatrix<Scalar> k(3, 3);
  k << 1, 2, 1, 2, 4, 2, 1, 2, 1;
  return k / Scalar(16);
}

template <typename Scalar>
RowMatrix<Scalar> delta3() {
  RowMatrix<Scalar> k = RowMatrix<Scalar>::Zero(3, 3);
  k(1, 1) = 1;
  return k;
}

}  // namespace detail

/// Learned D*K: a 3x3 shape-preserving conv then an s x s conv at stride s.
/// No biases, so the operator is linear.
template <typename Scalar>
struct LearnedDownOp {
  Conv2d<Scalar> blur;
  Conv2d<Scalar> reduce;
  int ratio = 4;

  LearnedDownOp() = default;
  LearnedDownOp(int channels, int ratio_, Rng& rng)
      : blur(channels, channels, 3, rng, false, 1, 1), reduce(channels, channels, ratio_, rng, false, ratio_, 0),
        ratio(ratio_) {
    // Start near a physical degradation: binomial blur, block average.
    detail::set_diagonal_kernel(blur.weight.mutable_value(), detail::binomial3<Scalar>());
    set_block_average();
  }

  void set_block_average() {
    detail::set_diagonal_kernel(reduce.weight.mutable_value(),
                                RowMatrix<Scalar>::Constant(ratio, ratio, Scalar(1) / Scalar(ratio * ratio)));
  }

  /// Identity blur followed by block averaging: exactly average pooling.
  void set_average_pool() {
    detail::set_diagonal_kernel(blur.weight.mutable_value(), detail::delta3<Scalar>());
    set_block_average();
  }

  Var<Scalar> operator()(const Var<Scalar>& h) const {
    detail::require_divisible(h.shape(), ratio, "down_apply");
    return reduce(blur(h));
  }

  ParamList<Scalar> parameters() const {
    ParamList<Scalar> out;
    append(out, "blur.", blur.parameters());
    append(out, "reduce.", reduce.parameters());
    return out;
  }
};

/// Learned (D*K)^T: an s x s transposed conv at stride s, then a 3x3 conv.
template <typename Scalar>
struct LearnedUpOp {
  ConvTranspose2d<Scalar> expand;
  Conv2d<Scalar> blur;
  int ratio = 4;
  Var<Scalar> bias;  // optional additive bias on the output, off by default

  LearnedUpOp() = default;
  LearnedUpOp(int channels, int ratio_, Rng& rng, bool with_bias = false)
      : expand(channels, channels, ratio_, ratio_, rng), blur(channels, channels, 3, rng, false, 1, 1), ratio(ratio_) {
    // Replicate each low-res sample over its block, then binomial blur.
    detail::set_diagonal_kernel(expand.weight.mutable_value(), RowMatrix<Scalar>::Ones(ratio, ratio));
    detail::set_diagonal_kernel(blur.weight.mutable_value(), detail::binomial3<Scalar>());
    if (with_bias) bias = Var<Scalar>::parameter(Tensor<Scalar>(Shape{1, channels, 1, 1}));
  }

  Var<Scalar> operator()(const Var<Scalar>& r) const {
    auto out = blur(expand(r));
    return bias.defined() ? add(out, bias) : out;
  }

  ParamList<Scalar> parameters() const {
    ParamList<Scalar> out;
    append(out, "expand.", expand.parameters());
    append(out, "blur.", blur.parameters());
    if (bias.defined()) out.push_back({"bias", bias});
    return out;
  }
};

/// Fixed Gaussian blur (reflect-101 borders) + top-left stride decimation,
/// i.e. the simulator's degradation, together with its exact adjoint.
template <typename Scalar>
class FixedDegradeOracle {
 public:
  FixedDegradeOracle(int ratio, double sigma, int kernel_size)
      : ratio_(ratio), kernel_(gaussian_kernel<Scalar>(kernel_size, sigma)) {}

  static FixedDegradeOracle for_ratio(int ratio) { return FixedDegradeOracle(ratio, ratio / 2.0, 2 * ratio + 1); }

  int ratio() const { return ratio_; }
  const RowMatrix<Scalar>& kernel() const { return kernel_; }

  Tensor<Scalar> apply(const Tensor<Scalar>& x) const {
    detail::require_divisible(x.shape(), ratio_, "oracle_apply");
    const Shape s = x.shape();
    Tensor<Scalar> out(Shape{s.n, s.c, s.h / ratio_, s.w / ratio_});
    const int k = static_cast<int>(kernel_.rows()), o = k / 2;
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const auto src = x.plane(n, c);
        auto dst = out.plane(n, c);
        for (int y = 0; y < out.h(); ++y)
          for (int xx = 0; xx < out.w(); ++xx) {
            Scalar acc = 0;
            for (int i = 0; i < k; ++i) {
              const int sy = reflect_index(y * ratio_ + i - o, s.h);
              for (int j = 0; j < k; ++j) acc += kernel_(i, j) * src(sy, reflect_index(xx * ratio_ + j - o, s.w));
            }
            dst(y, xx) = acc;
          }
      }
    return out;
  }

  Tensor<Scalar> adjoint(const Tensor<Scalar>& g) const {
    const Shape s = g.shape();
    Tensor<Scalar> out(Shape{s.n, s.c, s.h * ratio_, s.w * ratio_});
    const int k = static_cast<int>(kernel_.rows()), o = k / 2;
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const auto src = g.plane(n, c);
        auto dst = out.plane(n, c);
        for (int y = 0; y < s.h; ++y)
          for (int xx = 0; xx < s.w; ++xx) {
            const Scalar v = src(y, xx);
            for (int i = 0; i < k; ++i) {
              const int sy = reflect_index(y * ratio_ + i - o, out.h());
              for (int j = 0; j < k; ++j) dst(sy, reflect_index(xx * ratio_ + j - o, out.w())) += kernel_(i, j) * v;
            }
          }
      }
    return out;
  }

  /// The operator as a graph node whose backward pass is the adjoint.
  Var<Scalar> down(const Var<Scalar>& x) const {
    return apply_linear<Scalar>(
        x, [this](const Tensor<Scalar>& t) { return apply(t); }, [*this](const Tensor<Scalar>& t) { return adjoint(t); });
  }
  Var<Scalar> up(const Var<Scalar>& y) const {
    return apply_linear<Scalar>(
        y, [this](const Tensor<Scalar>& t) { return adjoint(t); }, [*this](const Tensor<Scalar>& t) { return apply(t); });
  }

 private:
  int ratio_;
  RowMatrix<Scalar> kernel_;
};

}  // namespace pansharp
