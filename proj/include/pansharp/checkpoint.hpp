#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pansharp/optim.hpp"
#include "pansharp/tensor.hpp"

namespace pansharp {

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct OptimizerState {
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<Tensor<float>> m, v;  // aligned with Checkpoint::tensors
};

/// Weights plus run metadata.
///
/// On disk: the 8-byte magic `PSHCKPT1`, a little-endian u64 header length,
/// a JSON header, then raw little-endian float32 payloads in header order
/// (tensors, then Adam first moments, then second moments).
struct Checkpoint {
  std::string kind;  // conv_mae, token_mae or unfolding
  std::string config_hash;
  std::string config;  // canonical config text
  int epoch = 0;
  long step = 0;
  std::map<std::string, std::string> provenance;
  std::vector<NamedTensor> tensors;
  std::optional<OptimizerState> optimizer;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  const Tensor<float>& tensor(const std::string& name) const;
};

/// Snapshot of a parameter list and, optionally, its Adam state.
Checkpoint capture(const ParamList<float>& params, const Adam<float>* opt);

/// Copies tensors into `params` by name. With `prefix`, only checkpoint
/// entries under that prefix are used, with the prefix stripped. Every
/// parameter must be found with a matching shape.
void restore(const Checkpoint& ckpt, const ParamList<float>& params, const std::string& prefix = "");

void restore_optimizer(const Checkpoint& ckpt, Adam<float>& opt);

}  // namespace pansharp
