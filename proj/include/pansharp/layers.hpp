#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "pansharp/ops.hpp"

namespace pansharp {

/// A named trainable tensor plus its learning-rate multiplier.
template <typename Scalar>
struct NamedParam {
  std::string name;
  Var<Scalar> var;
  double lr_mult = 1.0;
};

template <typename Scalar>
using ParamList = std::vector<NamedParam<Scalar>>;

template <typename Scalar>
void append(ParamList<Scalar>& out, const std::string& prefix, const ParamList<Scalar>& in, double lr_mult = 1.0) {
  for (const auto& p : in) out.push_back({prefix + p.name, p.var, p.lr_mult * lr_mult});
}

template <typename Scalar>
void set_trainable(const ParamList<Scalar>& params, bool on) {
  for (const auto& p : params) p.var.node()->requires_grad = on;
}

template <typename Scalar>
void zero_grad(const ParamList<Scalar>& params) {
  for (auto p : params) p.var.zero_grad();
}

using Rng = std::mt19937_64;

template <typename Scalar>
Tensor<Scalar> uniform_tensor(Shape s, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor<Scalar> t(s);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(u(rng));
  return t;
}

template <typename Scalar>
Tensor<Scalar> normal_tensor(Shape s, double stddev, Rng& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  Tensor<Scalar> t(s);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(d(rng));
  return t;
}

template <typename Scalar>
struct Conv2d {
  Var<Scalar> weight;
  Var<Scalar> bias;  // undefined when disabled
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  /// He-uniform init for leaky-ReLU stacks, zero bias.
  Conv2d(int cin, int cout, int k, Rng& rng, bool with_bias = true, int stride_ = 1, int pad_ = -1)
      : stride(stride_), pad(pad_ < 0 ? k / 2 : pad_) {
    const double fan_in = static_cast<double>(cin) * k * k;
    weight = Var<Scalar>::parameter(uniform_tensor<Scalar>(Shape{cout, cin, k, k}, std::sqrt(6.0 / fan_in), rng));
    if (with_bias) bias = Var<Scalar>::parameter(Tensor<Scalar>(Shape{1, cout, 1, 1}));
  }

  int in_channels() const { return weight.shape().c; }
  int out_channels() const { return weight.shape().n; }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    return conv2d(x, weight, bias.defined() ? &bias : nullptr, stride, pad);
  }

  void zero_init() {
    weight.mutable_value().set_zero();
    if (bias.defined()) bias.mutable_value().set_zero();
  }

  ParamList<Scalar> parameters() const {
    ParamList<Scalar> out{{"weight", weight}};
    if (bias.defined()) out.push_back({"bias", bias});
    return out;
  }
};

template <typename Scalar>
struct ConvTranspose2d {
  Var<Scalar> weight;  // (Cin, Cout, k, k)
  int stride = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(int cin, int cout, int k, int stride_, Rng& rng) : stride(stride_) {
    const double fan_in = static_cast<double>(cin) * k * k / (stride_ * stride_);
    weight = Var<Scalar>::parameter(uniform_tensor<Scalar>(Shape{cin, cout, k, k}, std::sqrt(3.0 / fan_in), rng));
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const { return conv_transpose2d(x, weight, stride, 0); }

  ParamList<Scalar> parameters() const { return {{"weight", weight}}; }
};

/// x (N,1,T,Din) -> (N,1,T,Dout).
template <typename Scalar>
struct Linear {
  Var<Scalar> weight;  // (1,1,Din,Dout)
  Var<Scalar> bias;    // (1,1,1,Dout)

  Linear() = default;
  Linear(int din, int dout, Rng& rng) {
    weight = Var<Scalar>::parameter(uniform_tensor<Scalar>(Shape{1, 1, din, dout}, std::sqrt(1.0 / din), rng));
    bias = Var<Scalar>::parameter(Tensor<Scalar>(Shape{1, 1, 1, dout}));
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const { return add(matmul(x, weight), bias); }

  ParamList<Scalar> parameters() const { return {{"weight", weight}, {"bias", bias}}; }
};

template <typename Scalar>
struct LayerNorm {
  Var<Scalar> gain, shift;

  LayerNorm() = default;
  explicit LayerNorm(int d)
      : gain(Var<Scalar>::parameter(Tensor<Scalar>(Shape{1, 1, 1, d}, Scalar(1)))),
        shift(Var<Scalar>::parameter(Tensor<Scalar>(Shape{1, 1, 1, d}))) {}

  Var<Scalar> operator()(const Var<Scalar>& x) const { return layer_norm_last(x, gain, shift); }

  ParamList<Scalar> parameters() const { return {{"gain", gain}, {"shift", shift}}; }
};

}  // namespace pansharp
