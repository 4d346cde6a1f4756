#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pansharp/image.hpp"

namespace pansharp {

/// Blur + stride decimation + optional AWGN applied to a full-resolution
/// scene. Defaults follow the usual Wald-protocol practice: Gaussian with
/// sigma = r/2, support 2r+1, normalized, no injected noise.
struct DegradationConfig {
  int ratio = 4;
  double blur_sigma = 2.0;
  int kernel_size = 9;
  double noise_std = 0.0;
  std::uint64_t seed = 0;

  static DegradationConfig for_ratio(int ratio) {
    DegradationConfig cfg;
    cfg.ratio = ratio;
    cfg.blur_sigma = ratio / 2.0;
    cfg.kernel_size = 2 * ratio + 1;
    return cfg;
  }

  void validate() const;
};

/// One supervised training triple.
struct SamplePair {
  MSImage lrms;
  PanImage pan;
  MSImage gt;
  int ratio = 4;

  void validate() const;
};

/// Blurs with the configured Gaussian and keeps every ratio-th sample.
Image<float> blur_decimate(const Image<float>& img, const DegradationConfig& cfg);

/// lrms = decimate(blur(ms)) + noise, clipped; pan = decimate(blur(pan)); gt = ms.
SamplePair degrade(const MSImage& scene_ms, const PanImage& scene_pan, const DegradationConfig& cfg);

/// Tiles every pair with PAN-resolution windows of side pan_patch.
std::vector<SamplePair> crop_patch_dataset(const std::vector<SamplePair>& pairs, int pan_patch, int stride);

/// Fixed positive band weights mixing MS bands into the synthetic PAN.
Eigen::VectorXd toy_pan_weights(int bands);

/// Deterministic synthetic scene: piecewise-smooth land-cover patches with
/// per-material spectra plus fine texture, and a PAN made of a positive
/// band-weighted sum of the MS bands plus its own high-frequency texture.
std::pair<MSImage, PanImage> synth_toy_scene(std::uint64_t seed, int size, int bands);

/// Acquires a sensor pair from a latent scene: the MS sensor sees the
/// latent MS through `blur_decimate`, the PAN sensor keeps full resolution.
std::pair<MSImage, PanImage> simulate_sensor_pair(const MSImage& latent_ms, const PanImage& latent_pan,
                                                  const DegradationConfig& cfg);

struct ToyDatasetSpec {
  std::uint64_t seed = 1;
  int scenes = 16;
  int latent_size = 256;
  int bands = 4;
  int ratio = 4;
  int pan_patch = 32;
  int stride = 32;
};

/// synth -> sensor pair -> degrade -> crop, one RNG stream per scene index.
std::vector<SamplePair> make_toy_pairs(const ToyDatasetSpec& spec);

/// `root/pairs/<id>/{lrms,pan,gt}.{bin,json}` plus `root/manifest.json`.
void write_dataset(const std::filesystem::path& root, const std::vector<SamplePair>& pairs,
                   const std::string& config_hash);

struct Dataset {
  std::vector<std::string> ids;
  std::vector<SamplePair> pairs;
  int ratio = 0;
  std::string config_hash;
};

Dataset read_dataset(const std::filesystem::path& root);

std::string pair_id(std::size_t index);

}  // namespace pansharp
