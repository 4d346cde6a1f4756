#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pansharp/mae.hpp"
#include "pansharp/optim.hpp"
#include "pansharp/unfolding.hpp"

namespace pansharp {

/// Every hyperparameter of a run. Parsed from a flat `key = value` file in
/// which `profile` selects the defaults and every other key overrides one
/// field; unknown or repeated keys are errors.
struct RunConfig {
  std::string profile = "paper";
  std::filesystem::path train_data, test_data;

  int ratio = 4;
  int bands = 4;
  int stages = 4;
  int features = 32;
  int encoder_blocks = 4;
  bool share_stage_weights = false;

  int cmae_decoder_blocks = 2;
  int cmae_patch = 8;
  double cmae_mask_ratio = 0.75;
  int cmae_steps = 2000;
  double cmae_lr = 1e-3;

  int tmae_patch = 16;
  int tmae_band_group = 2;
  int tmae_dim = 128;
  int tmae_encoder_layers = 4;
  int tmae_decoder_layers = 2;
  int tmae_heads = 4;
  double tmae_mask_ratio = 0.75;
  int tmae_steps = 2000;
  double tmae_lr = 1e-3;

  std::string optimizer = "adam";
  double lr = 5e-4;
  int batch = 4;
  int epochs = 1000;
  int max_steps = 0;  // 0: run all epochs
  int decay_epoch = 200;
  double decay_factor = 0.5;
  double lambda = 1.0;
  double encoder_lr_mult = 0.1;
  std::uint64_t seed = 1;

  bool disable_mae_prior = false;
  bool disable_mae_loss = false;

  static RunConfig preset(const std::string& profile);
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  /// Sets one key from its textual value.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  /// Sorted `key=value` lines for every key.
  std::string canonical() const;
  /// SHA-256 over the canonical text without the data paths.
  std::string hash() const;

  static const std::vector<std::string>& keys();

  UnfoldingConfig unfolding() const;
  ConvMAEConfig conv_mae() const;
  TokenMAEConfig token_mae() const;
  StepSchedule schedule() const;
};

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace pansharp
