#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pansharp/baselines.hpp"
#include "pansharp/checkpoint.hpp"
#include "pansharp/config.hpp"
#include "pansharp/metrics.hpp"
#include "pansharp/wald.hpp"

namespace pansharp {

namespace fs = std::filesystem;

/// Exclusive claim on a run directory, held through `<dir>/lock`.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

struct PretrainResult {
  fs::path checkpoint;
  std::string checkpoint_sha256;
  int steps = 0;
  double initial_smoothed = 0, final_smoothed = 0;
};

/// Conv MAE on the training GT images; writes `<run_dir>/spatial.ckpt`.
PretrainResult cmd_pretrain_spatial(const RunConfig& cfg, const fs::path& run_dir);
/// Token MAE on the training GT images; writes `<run_dir>/spectral.ckpt`.
PretrainResult cmd_pretrain_spectral(const RunConfig& cfg, const fs::path& run_dir);

struct TrainOptions {
  std::optional<fs::path> spatial_checkpoint;
  std::optional<fs::path> spectral_checkpoint;
  bool allow_mixed_hash = false;
};

struct TrainResult {
  fs::path checkpoint;
  std::string checkpoint_sha256;
  int steps = 0;
  double initial_smoothed = 0, final_smoothed = 0;
};

/// Trains the unfolding model; writes `<run_dir>/unfolding.ckpt`.
TrainResult cmd_train(const RunConfig& cfg, const fs::path& run_dir, const TrainOptions& opts);

UnfoldingModel<float> load_unfolding(const Checkpoint& ckpt);

/// Fusion by name: bicubic, ihs, brovey, gs, sfim, gfpca or unfolding.
class Fuser {
 public:
  Fuser(const std::string& method, const std::optional<fs::path>& checkpoint, int ratio);

  MSImage operator()(const MSImage& lrms, const PanImage& pan, FusionWarnings* warnings = nullptr) const;
  const std::string& method() const { return method_; }
  const std::string& config_hash() const { return config_hash_; }
  int ratio() const { return ratio_; }
  /// Provenance fields shared by every output of this fuser.
  std::map<std::string, std::string> provenance() const;

 private:
  std::string method_;
  int ratio_;
  std::string config_hash_;
  std::string checkpoint_sha256_;
  std::optional<UnfoldingModel<float>> model_;
};

/// Fuses one pair into `out` (raster plus `<stem>.provenance.json`).
void cmd_fuse(const Fuser& fuser, const fs::path& lrms, const fs::path& pan, const fs::path& out);
/// Fuses every pair of a dataset into `<out_dir>/<id>`.
std::vector<fs::path> cmd_fuse_dataset(const Fuser& fuser, const fs::path& dataset, const fs::path& out_dir);

enum class EvalMode { reduced, full };
EvalMode parse_eval_mode(const std::string& s);

struct EvaluateResult {
  std::vector<MetricReport> rows;
  MetricReport aggregate;
  std::string config_hash;
  fs::path json_path, csv_path;
};

/// Scores fused rasters against a dataset; writes `<out>.json` and `<out>.csv`.
EvaluateResult cmd_evaluate(const fs::path& fused_dir, const fs::path& reference, EvalMode mode, const fs::path& out,
                            bool allow_mixed_hash = false);

struct AblationRow {
  int stages = 0;
  MetricReport metrics;
  std::string checkpoint_sha256;
};

/// One model per K with the base budget, scored on `test_data`; writes
/// `<run_dir>/ablation.csv`. Pretrains the encoders once when not supplied.
std::vector<AblationRow> cmd_ablate_stages(const RunConfig& cfg, const fs::path& run_dir, const std::vector<int>& ks,
                                           TrainOptions opts = {});

/// Writes a synthetic dataset and returns its pair count.
std::size_t cmd_make_toy_data(const fs::path& out, const ToyDatasetSpec& spec);

}  // namespace pansharp
