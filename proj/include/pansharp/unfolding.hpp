#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "pansharp/degradation_ops.hpp"
#include "pansharp/mae.hpp"
#include "pansharp/optim.hpp"
#include "pansharp/resample.hpp"
#include "pansharp/wald.hpp"

namespace pansharp {

struct UnfoldingConfig {
  int channels = 4;
  int ratio = 4;
  int stages = 4;
  int features = 32;
  int encoder_blocks = 4;
  bool share_stage_weights = false;
  double delta_init = 0.1;
  double eta_init = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (channels < 2) throw ArgumentError("unfolding model needs at least 2 bands");
    if (ratio < 2) throw ArgumentError("ratio must be >= 2");
    if (stages < 0 || stages > 6) throw ArgumentError("stage count must lie in 0..6");
    if (features < 1 || encoder_blocks < 1) throw ArgumentError("feature width and encoder depth must be positive");
    if (!(delta_init > 0) || !(eta_init > 0)) throw ArgumentError("step size and penalty must start positive");
  }
};

/// softplus^{-1}(v): the raw value whose softplus is v.
inline double inverse_softplus(double v) { return v > 30 ? v : std::log(std::expm1(v)); }

/// Step size delta2 and penalty eta of one stage, kept positive by softplus.
template <typename Scalar>
struct StageParams {
  Var<Scalar> raw_delta, raw_eta;  // (1,1,1,1)

  StageParams() = default;
  StageParams(double delta, double eta)
      : raw_delta(Var<Scalar>::parameter(Tensor<Scalar>(Shape{}, static_cast<Scalar>(inverse_softplus(delta))))),
        raw_eta(Var<Scalar>::parameter(Tensor<Scalar>(Shape{}, static_cast<Scalar>(inverse_softplus(eta))))) {}

  Var<Scalar> delta() const { return softplus(raw_delta); }
  Var<Scalar> eta() const { return softplus(raw_eta); }
  Scalar delta_value() const { return softplus_value(raw_delta.item()); }
  Scalar eta_value() const { return softplus_value(raw_eta.item()); }

  ParamList<Scalar> parameters() const { return {{"raw_delta", raw_delta}, {"raw_eta", raw_eta}}; }
};

/// Spatial-frequency transformation: a spatial conv branch and a Fourier
/// branch (log-amplitude and phase processed by 1x1 convs, residually),
/// merged by a 1x1 conv and modulated per pixel by PAN features.
/// The Fourier update and the modulation heads start at zero, so the block
/// begins as spatial branch + exact Fourier round trip.
template <typename Scalar>
struct SFTBlock {
  Conv2d<Scalar> spatial1, spatial2;
  Conv2d<Scalar> freq1, freq2;
  Conv2d<Scalar> fuse;
  Conv2d<Scalar> cond, gamma, beta;

  SFTBlock() = default;
  SFTBlock(int f, Rng& rng)
      : spatial1(f, f, 3, rng), spatial2(f, f, 3, rng), freq1(2 * f, 2 * f, 1, rng), freq2(2 * f, 2 * f, 1, rng),
        fuse(2 * f, f, 1, rng), cond(f, f, 3, rng), gamma(f, f, 3, rng), beta(f, f, 3, rng) {
    freq2.zero_init();
    gamma.zero_init();
    beta.zero_init();
  }

  Var<Scalar> spatial_branch(const Var<Scalar>& x) const { return spatial2(leaky_relu(spatial1(x))); }

  Var<Scalar> frequency_branch(const Var<Scalar>& x) const {
    const int f = x.shape().c;
    const auto ap = complex_to_polar(dft2(x));
    const auto log_amp = pointwise(
        slice(ap, 1, 0, f), [](Scalar a) { return std::log1p(a); }, [](Scalar a) { return Scalar(1) / (Scalar(1) + a); });
    const auto feats = concat<Scalar>({log_amp, slice(ap, 1, f, f)}, 1);
    const auto updated = add(feats, freq2(leaky_relu(freq1(feats))));
    const auto amp = pointwise(
        slice(updated, 1, 0, f), [](Scalar a) { return std::expm1(a); }, [](Scalar a) { return std::exp(a); });
    return idft2_real(polar_to_complex(concat<Scalar>({amp, slice(updated, 1, f, f)}, 1)));
  }

  Var<Scalar> operator()(const Var<Scalar>& x, const Var<Scalar>& pan_features) const {
    const Shape s = x.shape(), p = pan_features.shape();
    if (s.n != p.n || s.h != p.h || s.w != p.w || s.c != p.c)
      throw GeometryError("SFT inputs differ: " + s.str() + " vs " + p.str());
    const auto y = fuse(concat<Scalar>({spatial_branch(x), frequency_branch(x)}, 1));
    const auto c = leaky_relu(cond(pan_features));
    return add(add(y, mul(y, gamma(c))), beta(c));
  }

  ParamList<Scalar> parameters() const {
    ParamList<Scalar> out;
    append(out, "spatial1.", spatial1.parameters());
    append(out, "spatial2.", spatial2.parameters());
    append(out, "freq1.", freq1.parameters());
    append(out, "freq2.", freq2.parameters());
    append(out, "fuse.", fuse.parameters());
    append(out, "cond.", cond.parameters());
    append(out, "gamma.", gamma.parameters());
    append(out, "beta.", beta.parameters());
    return out;
  }
};

/// Proximal network of one stage: SFT, a one-level encoder-decoder with a
/// skip connection, and a zero-initialized output conv back to C bands.
template <typename Scalar>
struct StageNet {
  SFTBlock<Scalar> sft;
  Conv2d<Scalar> down, mid, out1, out2;
  ConvTranspose2d<Scalar> up;

  StageNet() = default;
  StageNet(int f, int channels, Rng& rng)
      : sft(f, rng), down(f, f, 3, rng, true, 2, 1), mid(f, f, 3, rng), out1(f, f, 3, rng), out2(f, channels, 3, rng),
        up(f, f, 2, 2, rng) {
    out2.zero_init();
  }

  Var<Scalar> operator()(const Var<Scalar>& features, const Var<Scalar>& pan_features) const {
    auto h = sft(features, pan_features);
    if (h.shape().h % 2 == 0 && h.shape().w % 2 == 0) {
      const auto low = leaky_relu(mid(leaky_relu(down(h))));
      h = add(h, leaky_relu(up(low)));
    }
    return out2(leaky_relu(out1(h)));
  }

  ParamList<Scalar> parameters() const {
    ParamList<Scalar> out;
    append(out, "sft.", sft.parameters());
    append(out, "down.", down.parameters());
    append(out, "mid.", mid.parameters());
    append(out, "up.", up.parameters());
    append(out, "out1.", out1.parameters());
    append(out, "out2.", out2.parameters());
    return out;
  }
};

/// H_{k+1} = H - delta * [up(down(H) - L) + eta * (H - U)].
template <typename Scalar, typename Down, typename Up>
Var<Scalar> hnet_update(const Var<Scalar>& h, const Var<Scalar>& u, const Var<Scalar>& l, const Down& down_op,
                        const Up& up_op, const Var<Scalar>& delta, const Var<Scalar>& eta) {
  if (!(h.shape() == u.shape())) throw GeometryError("H " + h.shape().str() + " and U " + u.shape().str() + " differ");
  const auto residual = down_op(h);
  if (!(residual.shape() == l.shape()))
    throw GeometryError("down(H) " + residual.shape().str() + " does not match L " + l.shape().str());
  const auto grad = add(up_op(sub(residual, l)), mul(eta, sub(h, u)));
  return sub(h, mul(delta, grad));
}

template <typename Scalar>
struct FusionBatch {
  Tensor<Scalar> lrms, pan, gt;
};

template <typename Scalar>
FusionBatch<Scalar> make_batch(const std::vector<SamplePair>& pairs, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ArgumentError("empty batch");
  std::vector<MSImage> l, g;
  std::vector<PanImage> p;
  for (auto i : indices) {
    l.push_back(pairs.at(i).lrms);
    p.push_back(pairs.at(i).pan);
    g.push_back(pairs.at(i).gt);
  }
  return {stack_images<Scalar>(l), stack_images<Scalar>(p), stack_images<Scalar>(g)};
}

/// K-stage unfolded fusion network.
template <typename Scalar>
struct UnfoldingModel {
  UnfoldingConfig config;
  ConvEncoder<Scalar> encoder;  // E_CMAE, shared across stages
  Conv2d<Scalar> pan1, pan2;
  std::vector<StageNet<Scalar>> stage_nets;  // one, or one per stage
  LearnedDownOp<Scalar> down_op;
  LearnedUpOp<Scalar> up_op;
  std::vector<StageParams<Scalar>> stage_params;
  double encoder_lr_mult = 1.0;

  UnfoldingModel() = default;
  explicit UnfoldingModel(const UnfoldingConfig& cfg) : config(cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    encoder = ConvEncoder<Scalar>(cfg.channels, cfg.features, cfg.encoder_blocks, rng);
    pan1 = Conv2d<Scalar>(1, cfg.features, 3, rng);
    pan2 = Conv2d<Scalar>(cfg.features, cfg.features, 3, rng);
    const int nets = cfg.share_stage_weights ? std::min(cfg.stages, 1) : cfg.stages;
    for (int k = 0; k < nets; ++k) stage_nets.emplace_back(cfg.features, cfg.channels, rng);
    down_op = LearnedDownOp<Scalar>(cfg.channels, cfg.ratio, rng);
    up_op = LearnedUpOp<Scalar>(cfg.channels, cfg.ratio, rng);
    for (int k = 0; k < cfg.stages; ++k) stage_params.emplace_back(cfg.delta_init, cfg.eta_init);
  }

  const StageNet<Scalar>& net(int k) const { return stage_nets[config.share_stage_weights ? 0 : k]; }

  Var<Scalar> pan_shallow_features(const Var<Scalar>& pan) const {
    if (pan.shape().c != 1) throw GeometryError("PAN must have one band, got " + pan.shape().str());
    return pan2(leaky_relu(pan1(pan)));
  }

  /// U_k = net(E(H_k), F_p) + H_k.
  Var<Scalar> unet_prox(const Var<Scalar>& h, const Var<Scalar>& pan_features, int k) const {
    return add(net(k)(cmae_encode(encoder, h), pan_features), h);
  }

  Var<Scalar> hnet(const Var<Scalar>& h, const Var<Scalar>& u, const Var<Scalar>& l, int k) const {
    const auto& sp = stage_params[static_cast<std::size_t>(k)];
    return hnet_update<Scalar>(
        h, u, l, [this](const Var<Scalar>& x) { return down_op(x); }, [this](const Var<Scalar>& x) { return up_op(x); },
        sp.delta(), sp.eta());
  }

  Tensor<Scalar> initial_estimate(const Tensor<Scalar>& lrms) const {
    Tensor<Scalar> out(Shape{lrms.n(), lrms.c(), lrms.h() * config.ratio, lrms.w() * config.ratio});
    for (int n = 0; n < lrms.n(); ++n) {
      const auto up = bicubic_upsample(to_image(lrms, n), config.ratio);
      out.data().segment(out.offset(n, 0, 0, 0), up.size()) = up.data();
    }
    return out;
  }

  void check_geometry(const Tensor<Scalar>& lrms, const Tensor<Scalar>& pan) const {
    if (lrms.c() != config.channels)
      throw GeometryError("model expects " + std::to_string(config.channels) + " bands, got " + lrms.shape().str());
    if (pan.c() != 1 || pan.n() != lrms.n() || pan.h() != lrms.h() * config.ratio || pan.w() != lrms.w() * config.ratio)
      throw GeometryError("PAN " + pan.shape().str() + " is not " + std::to_string(config.ratio) + "x LRMS " +
                          lrms.shape().str());
  }

  /// Stage iteration from the bicubic estimate; unclipped (training form).
  Var<Scalar> forward(const Tensor<Scalar>& lrms, const Tensor<Scalar>& pan) const {
    check_geometry(lrms, pan);
    auto h = Var<Scalar>::constant(initial_estimate(lrms));
    if (config.stages == 0) return h;
    const auto l = Var<Scalar>::constant(lrms);
    const auto fp = pan_shallow_features(Var<Scalar>::constant(pan));
    for (int k = 0; k < config.stages; ++k) h = hnet(h, unet_prox(h, fp, k), l, k);
    return h;
  }

  /// Evaluation form: forward output clipped to [0, 1].
  Tensor<Scalar> predict(const Tensor<Scalar>& lrms, const Tensor<Scalar>& pan) const {
    auto out = forward(lrms, pan).value();
    out.data() = out.data().cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
    return out;
  }

  MSImage fuse(const MSImage& lrms, const PanImage& pan) const {
    const auto out = predict(to_tensor(lrms).template cast<Scalar>(), to_tensor(pan).template cast<Scalar>());
    return MSImage(to_image(out.template cast<float>()));
  }

  ParamList<Scalar> parameters() const {
    ParamList<Scalar> out;
    append(out, "encoder.", encoder.parameters(), encoder_lr_mult);
    append(out, "pan1.", pan1.parameters());
    append(out, "pan2.", pan2.parameters());
    for (std::size_t k = 0; k < stage_nets.size(); ++k)
      append(out, "stage" + std::to_string(k) + ".", stage_nets[k].parameters());
    append(out, "down.", down_op.parameters());
    append(out, "up.", up_op.parameters());
    for (std::size_t k = 0; k < stage_params.size(); ++k)
      append(out, "hnet" + std::to_string(k) + ".", stage_params[k].parameters());
    return out;
  }
};

template <typename Scalar>
struct LossTerms {
  Var<Scalar> total, image, consistency;
};

/// L = L_img + lambda * L_ss. Without an E_mae (or lambda == 0) L_ss is omitted.
template <typename Scalar>
LossTerms<Scalar> composite_loss(const Var<Scalar>& pred, const Tensor<Scalar>& gt,
                                 const std::type_identity_t<TokenMAE<Scalar>>* emae,
                                 double lambda) {
  if (!(pred.shape() == gt.shape())) throw GeometryError("prediction " + pred.shape().str() + " vs gt " + gt.shape().str());
  LossTerms<Scalar> t;
  const auto target = Var<Scalar>::constant(gt);
  t.image = mean_abs(sub(pred, target));
  if (emae != nullptr && lambda != 0) {
    t.consistency = ss_consistency_loss(*emae, pred, target);
    t.total = add(t.image, scale(t.consistency, static_cast<Scalar>(lambda)));
  } else {
    t.consistency = Var<Scalar>::constant(Tensor<Scalar>::scalar(0));
    t.total = t.image;
  }
  return t;
}

template <typename Scalar>
LossTerms<Scalar> total_loss(const UnfoldingModel<Scalar>& model, const FusionBatch<Scalar>& batch,
                             const std::type_identity_t<TokenMAE<Scalar>>* emae, double lambda = 1.0) {
  if (batch.lrms.empty() || batch.lrms.n() == 0) throw ArgumentError("empty batch");
  return composite_loss(model.forward(batch.lrms, batch.pan), batch.gt, emae, lambda);
}

struct StepReport {
  double total = 0, image = 0, consistency = 0;
};

/// One Adam step on the composite loss. Non-finite losses or gradients abort
/// with a DivergenceError carrying the loss terms and per-parameter norms.
template <typename Scalar>
StepReport train_step(const UnfoldingModel<Scalar>& model, Adam<Scalar>& opt, const FusionBatch<Scalar>& batch,
                      const std::type_identity_t<TokenMAE<Scalar>>* emae, double lambda, double lr) {
  opt.zero_grad();
  const auto terms = total_loss(model, batch, emae, lambda);
  StepReport r{terms.total.item(), terms.image.item(), terms.consistency.item()};
  auto diagnostics = [&](const std::string& reason) {
    std::ostringstream os;
    os << "{\"reason\":\"" << reason << "\",\"step\":" << opt.steps() << ",\"lr\":" << lr << ",\"loss\":{\"total\":"
       << (std::isfinite(r.total) ? std::to_string(r.total) : "null")
       << ",\"image\":" << (std::isfinite(r.image) ? std::to_string(r.image) : "null")
       << ",\"consistency\":" << (std::isfinite(r.consistency) ? std::to_string(r.consistency) : "null")
       << "},\"params\":{";
    bool first = true;
    for (const auto& p : opt.params()) {
      os << (first ? "" : ",") << "\"" << p.name << "\":{\"norm\":";
      const double n = static_cast<double>(p.var.value().data().norm());
      os << (std::isfinite(n) ? std::to_string(n) : "null");
      if (p.var.has_grad()) {
        const double g = static_cast<double>(p.var.grad().data().norm());
        os << ",\"grad_norm\":" << (std::isfinite(g) ? std::to_string(g) : "null");
      }
      os << "}";
      first = false;
    }
    os << "}}";
    return os.str();
  };
  if (!std::isfinite(r.total)) throw DivergenceError("training loss is not finite", diagnostics("loss"));
  backward(terms.total);
  for (const auto& p : opt.params())
    if (p.var.has_grad() && !p.var.grad().data().allFinite())
      throw DivergenceError("gradient of " + p.name + " is not finite", diagnostics("gradient"));
  opt.step(lr);
  return r;
}

}  // namespace pansharp
