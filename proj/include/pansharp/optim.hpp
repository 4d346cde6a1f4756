#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pansharp/layers.hpp"

namespace pansharp {

/// Base rate halved (by `factor`) once the 1-based epoch passes each milestone.
struct StepSchedule {
  double base_lr = 5e-4;
  std::vector<int> milestones{200};
  double factor = 0.5;

  double lr_at_epoch(int epoch) const {
    double lr = base_lr;
    for (int m : milestones)
      if (epoch > m) lr *= factor;
    return lr;
  }
};

template <typename Scalar>
struct AdamSlot {
  Tensor<Scalar> m, v;
};

/// Adam with per-parameter learning-rate multipliers. Parameters that
/// received no gradient in a step are left untouched.
template <typename Scalar>
class Adam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit Adam(ParamList<Scalar> params) : params_(std::move(params)) {
    for (const auto& p : params_) slots_.push_back({Tensor<Scalar>(p.var.shape()), Tensor<Scalar>(p.var.shape())});
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.var.requires_grad() || !p.var.has_grad()) continue;
      auto& s = slots_[i];
      const auto& g = p.var.grad().data().array();
      s.m.data().array() = Scalar(beta1) * s.m.data().array() + Scalar(1 - beta1) * g;
      s.v.data().array() = Scalar(beta2) * s.v.data().array() + Scalar(1 - beta2) * g.square();
      const Scalar step = static_cast<Scalar>(lr * p.lr_mult / c1);
      const Scalar bias2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
      p.var.mutable_value().data().array() -=
          step * s.m.data().array() / (s.v.data().array().sqrt() * bias2 + Scalar(eps));
    }
  }

  void zero_grad() { pansharp::zero_grad(params_); }

  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  const ParamList<Scalar>& params() const { return params_; }
  std::vector<AdamSlot<Scalar>>& slots() { return slots_; }
  const std::vector<AdamSlot<Scalar>>& slots() const { return slots_; }

 private:
  ParamList<Scalar> params_;
  std::vector<AdamSlot<Scalar>> slots_;
  long t_ = 0;
};

}  // namespace pansharp
