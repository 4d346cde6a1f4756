#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pansharp/image.hpp"
#include "pansharp/layers.hpp"
#include "pansharp/optim.hpp"

namespace pansharp {

// ---------------------------------------------------------------------------
// Masks

/// Random cell mask over a ceil(H/p) x ceil(W/p) grid.
struct SpatialMaskSpec {
  int height = 0, width = 0, patch = 1;
  double ratio = 0;
  std::uint64_t seed = 0;
  int grid_h = 0, grid_w = 0;
  std::vector<std::uint8_t> masked;  // per cell, row-major

  int cells() const { return grid_h * grid_w; }
  int masked_count() const;
  bool cell_masked(int gy, int gx) const { return masked[static_cast<std::size_t>(gy * grid_w + gx)] != 0; }
  bool pixel_masked(int y, int x) const { return cell_masked(y / patch, x / patch); }
  std::vector<int> visible_cells() const;
  std::vector<int> masked_cells() const;
};

/// Exactly round(ratio * cells) cells masked, chosen by a seeded shuffle.
SpatialMaskSpec make_spatial_mask(int h, int w, int patch, double ratio, std::uint64_t seed);

/// Masked tokens over the (grid cell, band group) lattice.
struct SpatialSpectralMaskSpec {
  int grid_h = 0, grid_w = 0, groups = 0;
  int patch = 1, band_group = 1;
  double ratio = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> masked;  // per token, token = (gy * grid_w + gx) * groups + g

  int tokens() const { return grid_h * grid_w * groups; }
  int masked_count() const;
  std::vector<int> visible_tokens() const;
  std::vector<int> masked_tokens() const;
};

SpatialSpectralMaskSpec make_spatial_spectral_mask(int h, int w, int bands, int patch, int band_group, double ratio,
                                                   std::uint64_t seed);

std::string to_json(const SpatialMaskSpec& m);
std::string to_json(const SpatialSpectralMaskSpec& m);
SpatialMaskSpec spatial_mask_from_json(const std::string& text);
SpatialSpectralMaskSpec spatial_spectral_mask_from_json(const std::string& text);

/// Per-image mask seed for pretraining step `step`, batch slot `index`.
std::uint64_t mask_seed(std::uint64_t base, long step, int index);

/// (1, 1, H, W) tensor with 1 on masked pixels.
template <typename Scalar>
Tensor<Scalar> mask_plane(const SpatialMaskSpec& m) {
  Tensor<Scalar> t(Shape{1, 1, m.height, m.width});
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) t(0, 0, y, x) = m.pixel_masked(y, x) ? Scalar(1) : Scalar(0);
  return t;
}

/// Visible pixels copied, masked pixels replaced by the per-band token.
template <typename Scalar>
Image<Scalar> apply_spatial_mask(const Image<Scalar>& img, const SpatialMaskSpec& m,
                                 const std::type_identity_t<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& token) {
  if (img.height() != m.height || img.width() != m.width)
    throw GeometryError("mask " + std::to_string(m.height) + "x" + std::to_string(m.width) + " does not match image " +
                        img.shape_string());
  if (token.size() != img.bands()) throw GeometryError("mask token has wrong band count");
  Image<Scalar> out = img;
  for (int b = 0; b < img.bands(); ++b)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        if (m.pixel_masked(y, x)) out(y, x, b) = token[b];
  return out;
}

/// Graph version over a batch: x * (1 - m) + m * token, one mask per sample.
template <typename Scalar>
Var<Scalar> apply_spatial_mask(const Var<Scalar>& x, const std::vector<SpatialMaskSpec>& masks,
                               const Var<Scalar>& token) {
  const Shape s = x.shape();
  if (static_cast<int>(masks.size()) != s.n) throw GeometryError("one mask per sample required");
  Tensor<Scalar> m(Shape{s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    if (masks[n].height != s.h || masks[n].width != s.w) throw GeometryError("mask does not match batch geometry");
    m.plane(n, 0) = mask_plane<Scalar>(masks[n]).plane(0, 0);
  }
  Tensor<Scalar> keep(m.shape());
  keep.data().array() = Scalar(1) - m.data().array();
  return add(mul(x, Var<Scalar>::constant(std::move(keep))), mul(Var<Scalar>::constant(std::move(m)), token));
}

// ---------------------------------------------------------------------------
// Convolutional MAE (whole-image masking)

struct ConvMAEConfig {
  int channels = 4;
  int features = 32;
  int encoder_blocks = 4;
  int decoder_blocks = 2;
  int patch = 8;
  double mask_ratio = 0.75;
  std::uint64_t seed = 0;
};

/// Stride-1 3x3 conv + leaky ReLU blocks, C -> F -> ... -> F.
template <typename Scalar>
struct ConvEncoder {
  std::vector<Conv2d<Scalar>> blocks;

  ConvEncoder() = default;
  ConvEncoder(int channels, int features, int depth, Rng& rng) {
    for (int i = 0; i < depth; ++i) blocks.emplace_back(i == 0 ? channels : features, features, 3, rng);
  }

  int in_channels() const { return blocks.front().in_channels(); }
  int out_channels() const { return blocks.back().out_channels(); }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    if (x.shape().c != in_channels())
      throw GeometryError("encoder expects " + std::to_string(in_channels()) + " channels, got " + x.shape().str());
    Var<Scalar> h = x;
    for (const auto& b : blocks) h = leaky_relu(b(h));
    return h;
  }

  ParamList<Scalar> parameters() const {
    ParamList<Scalar> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) append(out, "conv" + std::to_string(i) + ".", blocks[i].parameters());
    return out;
  }
};

template <typename Scalar>
struct ConvMAE {
  ConvMAEConfig config;
  ConvEncoder<Scalar> encoder;
  std::vector<Conv2d<Scalar>> decoder;
  Var<Scalar> mask_token;  // (1, C, 1, 1)

  ConvMAE() = default;
  explicit ConvMAE(const ConvMAEConfig& cfg) : config(cfg) {
    if (cfg.channels < 1 || cfg.features < 1 || cfg.encoder_blocks < 1 || cfg.decoder_blocks < 1)
      throw ArgumentError("conv MAE needs positive widths and depths");
    Rng rng(cfg.seed);
    encoder = ConvEncoder<Scalar>(cfg.channels, cfg.features, cfg.encoder_blocks, rng);
    for (int i = 0; i < cfg.decoder_blocks; ++i)
      decoder.emplace_back(cfg.features, i + 1 == cfg.decoder_blocks ? cfg.channels : cfg.features, 3, rng);
    mask_token = Var<Scalar>::parameter(Tensor<Scalar>(Shape{1, cfg.channels, 1, 1}, Scalar(0.5)));
  }

  Var<Scalar> decode(const Var<Scalar>& features) const {
    Var<Scalar> h = features;
    for (std::size_t i = 0; i < decoder.size(); ++i) {
      h = decoder[i](h);
      if (i + 1 < decoder.size()) h = leaky_relu(h);
    }
    return h;
  }

  Var<Scalar> reconstruct(const Var<Scalar>& x, const std::vector<SpatialMaskSpec>& masks) const {
    return decode(encoder(apply_spatial_mask(x, masks, mask_token)));
  }

  ParamList<Scalar> parameters() const {
    ParamList<Scalar> out;
    append(out, "encoder.", encoder.parameters());
    for (std::size_t i = 0; i < decoder.size(); ++i)
      append(out, "decoder.conv" + std::to_string(i) + ".", decoder[i].parameters());
    out.push_back({"mask_token", mask_token});
    return out;
  }
};

/// E_CMAE feature map of H: (N, C, H, W) -> (N, F, H, W).
template <typename Scalar>
Var<Scalar> cmae_encode(const ConvEncoder<Scalar>& encoder, const Var<Scalar>& h) {
  return encoder(h);
}

/// Mean absolute error over masked pixels only.
template <typename Scalar>
Var<Scalar> masked_l1(const Var<Scalar>& recon, const Var<Scalar>& target, const std::vector<SpatialMaskSpec>& masks) {
  const Shape s = target.shape();
  Tensor<Scalar> w(Shape{s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n) w.plane(n, 0) = mask_plane<Scalar>(masks[n]).plane(0, 0);
  return weighted_mean_abs(sub(recon, target), w);
}

template <typename Scalar>
std::vector<SpatialMaskSpec> sample_spatial_masks(const ConvMAEConfig& cfg, const Shape& s, long step) {
  std::vector<SpatialMaskSpec> masks;
  for (int n = 0; n < s.n; ++n)
    masks.push_back(make_spatial_mask(s.h, s.w, cfg.patch, cfg.mask_ratio, mask_seed(cfg.seed, step, n)));
  return masks;
}

/// One optimizer step of masked reconstruction; returns the loss before the update.
template <typename Scalar>
Scalar conv_mae_pretrain_step(ConvMAE<Scalar>& model, Adam<Scalar>& opt, const Tensor<Scalar>& batch, double lr) {
  if (batch.empty() || batch.n() == 0) throw ArgumentError("empty pretraining batch");
  if (!(model.config.mask_ratio > 0)) throw ArgumentError("mask ratio 0 leaves nothing to reconstruct");
  const auto masks = sample_spatial_masks<Scalar>(model.config, batch.shape(), opt.steps());
  if (std::all_of(masks.begin(), masks.end(), [](const auto& m) { return m.masked_count() == 0; }))
    throw ArgumentError("mask ratio too small: no cell is masked");
  const auto x = Var<Scalar>::constant(batch);
  opt.zero_grad();
  auto loss = masked_l1(model.reconstruct(x, masks), x, masks);
  backward(loss);
  opt.step(lr);
  return loss.item();
}

// ---------------------------------------------------------------------------
// Token MAE (joint spatial-spectral masking)

struct TokenMAEConfig {
  int channels = 4;
  int patch = 16;
  int band_group = 2;
  int dim = 128;
  int encoder_layers = 4;
  int decoder_layers = 2;
  int heads = 4;
  int mlp_ratio = 2;
  int max_grid = 32;  // position-table extent per spatial axis
  double mask_ratio = 0.75;
  std::uint64_t seed = 0;

  int groups() const { return channels / band_group; }
  int token_size() const { return patch * patch * band_group; }
  void validate() const;
  void validate_image(int h, int w, int c) const;
};

template <typename Scalar>
struct TransformerBlock {
  LayerNorm<Scalar> norm1, norm2;
  Linear<Scalar> qkv, proj, fc1, fc2;
  int heads = 1;

  TransformerBlock() = default;
  TransformerBlock(int dim, int heads_, int mlp_ratio, Rng& rng)
      : norm1(dim), norm2(dim), qkv(dim, 3 * dim, rng), proj(dim, dim, rng), fc1(dim, mlp_ratio * dim, rng),
        fc2(mlp_ratio * dim, dim, rng), heads(heads_) {}

  Var<Scalar> attention(const Var<Scalar>& x) const {
    const int dim = x.shape().w, dh = dim / heads;
    const auto packed = qkv(x);
    const Scalar scale_factor = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    std::vector<Var<Scalar>> outs;
    for (int h = 0; h < heads; ++h) {
      const auto q = slice(packed, 3, h * dh, dh);
      const auto k = slice(packed, 3, dim + h * dh, dh);
      const auto v = slice(packed, 3, 2 * dim + h * dh, dh);
      outs.push_back(matmul(softmax_last(scale(matmul(q, k, true), scale_factor)), v));
    }
    return proj(heads == 1 ? outs.front() : concat(outs, 3));
  }

  Var<Scalar> operator()(const Var<Scalar>& x) const {
    const auto y = add(x, attention(norm1(x)));
    return add(y, fc2(gelu(fc1(norm2(y)))));
  }

  ParamList<Scalar> parameters() const {
    ParamList<Scalar> out;
    append(out, "norm1.", norm1.parameters());
    append(out, "qkv.", qkv.parameters());
    append(out, "proj.", proj.parameters());
    append(out, "norm2.", norm2.parameters());
    append(out, "fc1.", fc1.parameters());
    append(out, "fc2.", fc2.parameters());
    return out;
  }
};

/// Flat gather indices turning an (N, C, H, W) image batch into
/// (N, 1, T, p*p*g) tokens; token order matches SpatialSpectralMaskSpec.
std::shared_ptr<const std::vector<Eigen::Index>> patchify_index(const Shape& s, int patch, int band_group);

/// Gather indices selecting `keep[n]` tokens of each sample from (N, 1, T, D).
std::shared_ptr<const std::vector<Eigen::Index>> token_select_index(int tokens, int dim,
                                                                    const std::vector<std::vector<int>>& keep);

template <typename Scalar>
struct TokenMAE {
  TokenMAEConfig config;
  Linear<Scalar> embed;
  Var<Scalar> pos_row, pos_col, pos_band;  // (1, 1, extent, D)
  std::vector<TransformerBlock<Scalar>> encoder, decoder;
  LayerNorm<Scalar> encoder_norm, decoder_norm;
  Linear<Scalar> decoder_embed, head;
  Var<Scalar> mask_token;  // (1, 1, 1, D)

  TokenMAE() = default;
  explicit TokenMAE(const TokenMAEConfig& cfg) : config(cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    embed = Linear<Scalar>(cfg.token_size(), cfg.dim, rng);
    pos_row = Var<Scalar>::parameter(normal_tensor<Scalar>(Shape{1, 1, cfg.max_grid, cfg.dim}, 0.02, rng));
    pos_col = Var<Scalar>::parameter(normal_tensor<Scalar>(Shape{1, 1, cfg.max_grid, cfg.dim}, 0.02, rng));
    pos_band = Var<Scalar>::parameter(normal_tensor<Scalar>(Shape{1, 1, cfg.groups(), cfg.dim}, 0.02, rng));
    for (int i = 0; i < cfg.encoder_layers; ++i) encoder.emplace_back(cfg.dim, cfg.heads, cfg.mlp_ratio, rng);
    encoder_norm = LayerNorm<Scalar>(cfg.dim);
    decoder_embed = Linear<Scalar>(cfg.dim, cfg.dim, rng);
    for (int i = 0; i < cfg.decoder_layers; ++i) decoder.emplace_back(cfg.dim, cfg.heads, cfg.mlp_ratio, rng);
    decoder_norm = LayerNorm<Scalar>(cfg.dim);
    head = Linear<Scalar>(cfg.dim, cfg.token_size(), rng);
    mask_token = Var<Scalar>::parameter(normal_tensor<Scalar>(Shape{1, 1, 1, cfg.dim}, 0.02, rng));
  }

  int token_count(int h, int w) const { return (h / config.patch) * (w / config.patch) * config.groups(); }

  Var<Scalar> tokens(const Var<Scalar>& x) const {
    const Shape s = x.shape();
    config.validate_image(s.h, s.w, s.c);
    return gather(x, patchify_index(s, config.patch, config.band_group),
                  Shape{s.n, 1, token_count(s.h, s.w), config.token_size()});
  }

  /// (1, 1, T, D) sum of row, column and band-group embeddings.
  Var<Scalar> positions(int h, int w) const {
    const int gh = h / config.patch, gw = w / config.patch, g = config.groups(), dim = config.dim;
    auto row = std::make_shared<std::vector<Eigen::Index>>(), col = std::make_shared<std::vector<Eigen::Index>>(),
         band = std::make_shared<std::vector<Eigen::Index>>();
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx)
        for (int gb = 0; gb < g; ++gb)
          for (int d = 0; d < dim; ++d) {
            row->push_back(static_cast<Eigen::Index>(gy) * dim + d);
            col->push_back(static_cast<Eigen::Index>(gx) * dim + d);
            band->push_back(static_cast<Eigen::Index>(gb) * dim + d);
          }
    const Shape s{1, 1, gh * gw * g, dim};
    return add(add(gather<Scalar>(pos_row, row, s), gather<Scalar>(pos_col, col, s)), gather<Scalar>(pos_band, band, s));
  }

  Var<Scalar> run_encoder(Var<Scalar> h) const {
    for (const auto& b : encoder) h = b(h);
    return encoder_norm(h);
  }

  /// E_mae over all tokens: (N, C, H, W) -> (N, 1, T, D).
  Var<Scalar> encode(const Var<Scalar>& x) const {
    return run_encoder(add(embed(tokens(x)), positions(x.shape().h, x.shape().w)));
  }

  /// Predicted token pixels (N, 1, T, p*p*g) from the visible subset.
  Var<Scalar> reconstruct(const Var<Scalar>& x, const std::vector<SpatialSpectralMaskSpec>& masks) const {
    const Shape s = x.shape();
    const int t = token_count(s.h, s.w), dim = config.dim;
    std::vector<std::vector<int>> visible, order;
    for (const auto& m : masks) {
      visible.push_back(m.visible_tokens());
      auto o = m.visible_tokens();
      const auto hidden = m.masked_tokens();
      o.insert(o.end(), hidden.begin(), hidden.end());
      order.push_back(std::move(o));
    }
    const int v = static_cast<int>(visible.front().size());
    for (const auto& vis : visible)
      if (static_cast<int>(vis.size()) != v) throw GeometryError("batch masks differ in visible count");
    if (v == 0 || v == t) throw ArgumentError("token mask must leave both visible and masked tokens");

    const auto pos = positions(s.h, s.w);
    const auto emb = add(embed(tokens(x)), pos);
    const auto latent = run_encoder(gather(emb, token_select_index(t, dim, visible), Shape{s.n, 1, v, dim}));

    // Append mask tokens, then restore the original token order.
    const auto fill = add(Var<Scalar>::constant(Tensor<Scalar>(Shape{s.n, 1, t - v, dim})), mask_token);
    const auto seq = concat<Scalar>({decoder_embed(latent), fill}, 2);
    std::vector<std::vector<int>> inverse(order.size(), std::vector<int>(static_cast<std::size_t>(t)));
    for (std::size_t n = 0; n < order.size(); ++n)
      for (int slot = 0; slot < t; ++slot) inverse[n][static_cast<std::size_t>(order[n][slot])] = slot;
    auto h = add(gather(seq, token_select_index(t, dim, inverse), Shape{s.n, 1, t, dim}), pos);
    for (const auto& b : decoder) h = b(h);
    return head(decoder_norm(h));
  }

  ParamList<Scalar> parameters() const {
    ParamList<Scalar> out;
    append(out, "embed.", embed.parameters());
    out.push_back({"pos_row", pos_row});
    out.push_back({"pos_col", pos_col});
    out.push_back({"pos_band", pos_band});
    for (std::size_t i = 0; i < encoder.size(); ++i)
      append(out, "encoder.block" + std::to_string(i) + ".", encoder[i].parameters());
    append(out, "encoder.norm.", encoder_norm.parameters());
    append(out, "decoder.embed.", decoder_embed.parameters());
    for (std::size_t i = 0; i < decoder.size(); ++i)
      append(out, "decoder.block" + std::to_string(i) + ".", decoder[i].parameters());
    append(out, "decoder.norm.", decoder_norm.parameters());
    append(out, "head.", head.parameters());
    out.push_back({"mask_token", mask_token});
    return out;
  }
};

/// L1 over masked tokens only.
template <typename Scalar>
Var<Scalar> masked_token_l1(const Var<Scalar>& pred, const Var<Scalar>& target,
                            const std::vector<SpatialSpectralMaskSpec>& masks) {
  const Shape s = target.shape();
  Tensor<Scalar> w(Shape{s.n, 1, s.h, 1});
  for (int n = 0; n < s.n; ++n)
    for (int t = 0; t < s.h; ++t) w(n, 0, t, 0) = masks[n].masked[static_cast<std::size_t>(t)] ? Scalar(1) : Scalar(0);
  return weighted_mean_abs(sub(pred, target), w);
}

template <typename Scalar>
std::vector<SpatialSpectralMaskSpec> sample_token_masks(const TokenMAEConfig& cfg, const Shape& s, long step) {
  std::vector<SpatialSpectralMaskSpec> masks;
  for (int n = 0; n < s.n; ++n)
    masks.push_back(make_spatial_spectral_mask(s.h, s.w, s.c, cfg.patch, cfg.band_group, cfg.mask_ratio,
                                               mask_seed(cfg.seed, step, n)));
  return masks;
}

template <typename Scalar>
Scalar token_mae_pretrain_step(TokenMAE<Scalar>& model, Adam<Scalar>& opt, const Tensor<Scalar>& batch, double lr) {
  if (batch.empty() || batch.n() == 0) throw ArgumentError("empty pretraining batch");
  const auto masks = sample_token_masks<Scalar>(model.config, batch.shape(), opt.steps());
  const auto x = Var<Scalar>::constant(batch);
  opt.zero_grad();
  auto loss = masked_token_l1(model.reconstruct(x, masks), model.tokens(x), masks);
  backward(loss);
  opt.step(lr);
  return loss.item();
}

/// Mean absolute difference of frozen E_mae features of pred and gt.
/// Gradients flow to whichever argument requires them; E_mae is never updated.
template <typename Scalar>
Var<Scalar> ss_consistency_loss(const TokenMAE<Scalar>& emae, const Var<Scalar>& pred, const Var<Scalar>& gt) {
  if (!(pred.shape() == gt.shape()))
    throw GeometryError("consistency loss shapes differ: " + pred.shape().str() + " vs " + gt.shape().str());
  return mean_abs(sub(emae.encode(pred), emae.encode(gt)));
}

}  // namespace pansharp
