#include "pansharp/harness.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <future>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "pansharp/raster_io.hpp"

namespace pansharp {

using nlohmann::json;

namespace {

constexpr double kSmoothing = 0.9;

class EventLog {
 public:
  explicit EventLog(const fs::path& dir) : out_(dir / "log.jsonl", std::ios::app) {
    if (!out_) throw IoError("cannot open " + (dir / "log.jsonl").string());
  }
  void write(const json& event) { out_ << event.dump() << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

struct Smoother {
  std::optional<double> value;
  double push(double x) {
    value = value ? kSmoothing * *value + (1 - kSmoothing) * x : x;
    return *value;
  }
};

// Per-epoch shuffled batches, one RNG stream per (seed, epoch).
class EpochSampler {
 public:
  EpochSampler(std::size_t n, int batch, std::uint64_t seed) : n_(n), batch_(batch), seed_(seed) {
    if (n == 0) throw ValidationError("training set is empty");
  }
  int steps_per_epoch() const { return static_cast<int>((n_ + batch_ - 1) / batch_); }

  std::vector<std::size_t> batch(long step) {
    const long epoch = step / steps_per_epoch();
    if (epoch != cached_epoch_) {
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      Rng rng(mask_seed(seed_, epoch, 7));
      for (std::size_t i = n_ - 1; i > 0; --i) std::swap(perm_[i], perm_[rng() % (i + 1)]);
      cached_epoch_ = epoch;
    }
    const std::size_t begin = static_cast<std::size_t>(step % steps_per_epoch()) * batch_;
    const std::size_t end = std::min(n_, begin + static_cast<std::size_t>(batch_));
    return {perm_.begin() + static_cast<long>(begin), perm_.begin() + static_cast<long>(end)};
  }

 private:
  std::size_t n_;
  int batch_;
  std::uint64_t seed_;
  long cached_epoch_ = -1;
  std::vector<std::size_t> perm_;
};

RunConfig portable(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.train_data.clear();
  c.test_data.clear();
  return c;
}

Dataset load_training_set(const RunConfig& cfg) {
  if (cfg.train_data.empty()) throw ConfigError("train_data is not set");
  Dataset ds = read_dataset(cfg.train_data);
  if (ds.pairs.empty()) throw ValidationError("training set " + cfg.train_data.string() + " has no pairs");
  if (ds.ratio != cfg.ratio)
    throw ConfigError("config ratio " + std::to_string(cfg.ratio) + " does not match dataset ratio " +
                      std::to_string(ds.ratio));
  if (ds.pairs.front().gt.bands() != cfg.bands)
    throw ConfigError("config has " + std::to_string(cfg.bands) + " bands, dataset has " +
                      std::to_string(ds.pairs.front().gt.bands()));
  return ds;
}

Tensor<float> gt_batch(const Dataset& ds, const std::vector<std::size_t>& idx) {
  std::vector<MSImage> imgs;
  for (auto i : idx) imgs.push_back(ds.pairs[i].gt);
  return stack_images<float>(imgs);
}

Checkpoint stamp(Checkpoint c, const std::string& kind, const RunConfig& cfg, int epoch, long step) {
  c.kind = kind;
  c.config_hash = cfg.hash();
  c.config = portable(cfg).canonical();
  c.epoch = epoch;
  c.step = step;
  c.provenance["train_manifest_sha256"] = sha256_file(cfg.train_data / "manifest.json");
  return c;
}

template <typename Model, typename StepFn>
PretrainResult pretrain_loop(const RunConfig& cfg, const fs::path& run_dir, const std::string& stage, Model& model,
                             int steps, double lr, const char* kind, const fs::path& ckpt_path, StepFn step_fn) {
  const Dataset ds = load_training_set(cfg);
  EventLog log(run_dir);
  log.write({{"event", "start"}, {"stage", stage}, {"config_hash", cfg.hash()}, {"steps", steps}});
  Adam<float> opt(model.parameters());
  EpochSampler sampler(ds.pairs.size(), cfg.batch, mask_seed(cfg.seed, 11, stage == "pretrain-spatial" ? 1 : 2));
  Smoother smooth;
  PretrainResult r;
  for (int s = 0; s < steps; ++s) {
    const double loss = static_cast<double>(step_fn(model, opt, gt_batch(ds, sampler.batch(s)), lr));
    if (!std::isfinite(loss)) throw DivergenceError(stage + " loss is not finite", json{{"step", s}}.dump());
    const double sm = smooth.push(loss);
    if (s == 0) r.initial_smoothed = sm;
    r.final_smoothed = sm;
    log.write({{"event", "step"}, {"stage", stage}, {"step", s}, {"lr", lr}, {"loss", loss}, {"smoothed", sm}});
  }
  r.steps = steps;
  auto ckpt = stamp(capture(model.parameters(), &opt), kind, cfg, steps / sampler.steps_per_epoch(), steps);
  ckpt.save(ckpt_path);
  r.checkpoint = ckpt_path;
  r.checkpoint_sha256 = sha256_file(ckpt_path);
  log.write({{"event", "end"},
             {"stage", stage},
             {"checkpoint", ckpt_path.string()},
             {"checkpoint_sha256", r.checkpoint_sha256},
             {"initial_smoothed", r.initial_smoothed},
             {"final_smoothed", r.final_smoothed}});
  return r;
}

Checkpoint load_prerequisite(const std::optional<fs::path>& path, const char* what, const std::string& expected_hash,
                             bool allow_mixed, const char* expected_kind) {
  if (!path || !fs::exists(*path))
    throw DependencyError(std::string(what) + " checkpoint is required (missing " +
                          (path ? path->string() : std::string("path")) + "); pass it or set the ablation flag");
  Checkpoint c = Checkpoint::load(*path);
  if (c.kind != expected_kind)
    throw ProvenanceError(path->string() + " holds a " + c.kind + " checkpoint, expected " + expected_kind);
  if (c.config_hash != expected_hash && !allow_mixed)
    throw ProvenanceError(path->string() + " was produced under config " + c.config_hash + ", this run is " +
                          expected_hash + "; pass the mixed-hash override to use it anyway");
  return c;
}

json report_json(const MetricReport& r) {
  json j{{"id", r.id}};
  for (const auto& col : MetricReport::columns()) {
    const auto v = r.get(col);
    j[col] = v ? json(*v) : json(nullptr);
  }
  return j;
}

std::string csv_cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(12);
  os << *v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

fs::path sidecar_path(const fs::path& raster) { return raster_stem(raster).string() + ".provenance.json"; }

}  // namespace

RunLock::RunLock(const fs::path& dir) : path_(dir / "lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) throw IoError("run directory " + dir.string() + " is locked by another process");
    throw IoError("cannot create " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

PretrainResult cmd_pretrain_spatial(const RunConfig& cfg, const fs::path& run_dir) {
  cfg.validate();
  RunLock lock(run_dir);
  ConvMAE<float> model(cfg.conv_mae());
  return pretrain_loop(cfg, run_dir, "pretrain-spatial", model, cfg.cmae_steps, cfg.cmae_lr, "conv_mae",
                       run_dir / "spatial.ckpt", [&](ConvMAE<float>& m, Adam<float>& opt, const Tensor<float>& b, double lr) {
                         if (cfg.cmae_patch > std::min(b.h(), b.w()))
                           throw ConfigError("cmae_patch " + std::to_string(cfg.cmae_patch) + " exceeds the image side");
                         return conv_mae_pretrain_step(m, opt, b, lr);
                       });
}

PretrainResult cmd_pretrain_spectral(const RunConfig& cfg, const fs::path& run_dir) {
  cfg.validate();
  RunLock lock(run_dir);
  TokenMAE<float> model(cfg.token_mae());
  return pretrain_loop(cfg, run_dir, "pretrain-spectral", model, cfg.tmae_steps, cfg.tmae_lr, "token_mae",
                       run_dir / "spectral.ckpt",
                       [&](TokenMAE<float>& m, Adam<float>& opt, const Tensor<float>& b, double lr) {
                         try {
                           m.config.validate_image(b.h(), b.w(), b.c());
                         } catch (const GeometryError& e) {
                           throw ConfigError(e.what());
                         }
                         return token_mae_pretrain_step(m, opt, b, lr);
                       });
}

TrainResult cmd_train(const RunConfig& cfg, const fs::path& run_dir, const TrainOptions& opts) {
  cfg.validate();
  const std::string hash = cfg.hash();
  std::optional<Checkpoint> spatial, spectral;
  if (!cfg.disable_mae_prior)
    spatial = load_prerequisite(opts.spatial_checkpoint, "spatial MAE", hash, opts.allow_mixed_hash, "conv_mae");
  if (!cfg.disable_mae_loss)
    spectral = load_prerequisite(opts.spectral_checkpoint, "spectral MAE", hash, opts.allow_mixed_hash, "token_mae");

  RunLock lock(run_dir);
  const Dataset ds = load_training_set(cfg);
  UnfoldingModel<float> model(cfg.unfolding());
  if (spatial) {
    restore(*spatial, model.encoder.parameters(), "encoder.");
    model.encoder_lr_mult = cfg.encoder_lr_mult;
  }
  std::optional<TokenMAE<float>> emae;
  if (spectral) {
    emae.emplace(cfg.token_mae());
    restore(*spectral, emae->parameters());
    set_trainable(emae->parameters(), false);
  }

  EventLog log(run_dir);
  Adam<float> opt(model.parameters());
  EpochSampler sampler(ds.pairs.size(), cfg.batch, mask_seed(cfg.seed, 11, 3));
  const StepSchedule schedule = cfg.schedule();
  long total = static_cast<long>(cfg.epochs) * sampler.steps_per_epoch();
  if (cfg.max_steps > 0) total = std::min<long>(total, cfg.max_steps);
  log.write({{"event", "start"},
             {"stage", "train"},
             {"config_hash", hash},
             {"steps", total},
             {"steps_per_epoch", sampler.steps_per_epoch()},
             {"mae_prior", static_cast<bool>(spatial)},
             {"mae_loss", static_cast<bool>(spectral)}});

  TrainResult r;
  Smoother smooth;
  double last_lr = -1;
  int epoch = 0;
  for (long s = 0; s < total; ++s) {
    epoch = static_cast<int>(s / sampler.steps_per_epoch()) + 1;
    const double lr = schedule.lr_at_epoch(epoch);
    if (lr != last_lr) {
      log.write({{"event", "lr"}, {"stage", "train"}, {"step", s}, {"epoch", epoch}, {"lr", lr}});
      last_lr = lr;
    }
    const auto batch = make_batch<float>(ds.pairs, sampler.batch(s));
    StepReport rep;
    try {
      rep = train_step(model, opt, batch, emae ? &*emae : nullptr, cfg.lambda, lr);
    } catch (const DivergenceError& e) {
      log.write({{"event", "divergence"}, {"stage", "train"}, {"step", s}, {"diagnostics", json::parse(e.diagnostics())}});
      throw;
    }
    const double sm = smooth.push(rep.total);
    if (s == 0) r.initial_smoothed = sm;
    r.final_smoothed = sm;
    log.write({{"event", "step"},
               {"stage", "train"},
               {"step", s},
               {"epoch", epoch},
               {"lr", lr},
               {"loss", rep.total},
               {"image", rep.image},
               {"consistency", rep.consistency},
               {"smoothed", sm}});
  }
  r.steps = static_cast<int>(total);

  auto ckpt = stamp(capture(model.parameters(), &opt), "unfolding", cfg, epoch, total);
  auto link = [&](const char* key, const std::optional<fs::path>& p, const std::optional<Checkpoint>& c) {
    if (!c) return;
    ckpt.provenance[std::string(key) + "_sha256"] = sha256_file(*p);
    if (c->config_hash != hash) ckpt.provenance[std::string(key) + "_config_hash"] = c->config_hash;
  };
  link("spatial", opts.spatial_checkpoint, spatial);
  link("spectral", opts.spectral_checkpoint, spectral);
  r.checkpoint = run_dir / "unfolding.ckpt";
  ckpt.save(r.checkpoint);
  r.checkpoint_sha256 = sha256_file(r.checkpoint);
  log.write({{"event", "end"},
             {"stage", "train"},
             {"checkpoint", r.checkpoint.string()},
             {"checkpoint_sha256", r.checkpoint_sha256},
             {"initial_smoothed", r.initial_smoothed},
             {"final_smoothed", r.final_smoothed}});
  return r;
}

UnfoldingModel<float> load_unfolding(const Checkpoint& ckpt) {
  if (ckpt.kind != "unfolding") throw ProvenanceError("checkpoint holds a " + ckpt.kind + " model, not unfolding");
  const RunConfig cfg = RunConfig::parse(ckpt.config);
  if (cfg.hash() != ckpt.config_hash) throw IntegrityError("checkpoint config does not match its recorded hash");
  UnfoldingModel<float> model(cfg.unfolding());
  restore(ckpt, model.parameters());
  return model;
}

Fuser::Fuser(const std::string& method, const std::optional<fs::path>& checkpoint, int ratio)
    : method_(method), ratio_(ratio) {
  if (method == "unfolding") {
    if (!checkpoint) throw DependencyError("method unfolding needs a checkpoint");
    const Checkpoint c = Checkpoint::load(*checkpoint);
    model_.emplace(load_unfolding(c));
    config_hash_ = c.config_hash;
    checkpoint_sha256_ = sha256_file(*checkpoint);
    ratio_ = model_->config.ratio;
    if (ratio != ratio_)
      throw ConfigError("checkpoint ratio " + std::to_string(ratio_) + " differs from requested " + std::to_string(ratio));
    return;
  }
  if (method != "bicubic") parse_classical_method(method);
  if (checkpoint) throw ArgumentError("method " + method + " takes no checkpoint");
  if (ratio < 2) throw ArgumentError("ratio must be >= 2");
  config_hash_ = sha256_hex("method=" + method + "\nratio=" + std::to_string(ratio) + "\n");
}

MSImage Fuser::operator()(const MSImage& lrms, const PanImage& pan, FusionWarnings* warnings) const {
  if (model_) return model_->fuse(lrms, pan);
  const auto in = FusionInput::from_lrms(lrms, pan, ratio_);
  if (method_ == "bicubic") return MSImage(in.ms.clipped01());
  return MSImage(classical_fuse(parse_classical_method(method_), in, ratio_, warnings));
}

std::map<std::string, std::string> Fuser::provenance() const {
  std::map<std::string, std::string> p{{"method", method_}, {"config_hash", config_hash_}, {"ratio", std::to_string(ratio_)}};
  if (!checkpoint_sha256_.empty()) p["checkpoint_sha256"] = checkpoint_sha256_;
  return p;
}

namespace {

void write_fused(const Fuser& fuser, const MSImage& lrms, const PanImage& pan, const fs::path& lrms_file,
                 const fs::path& pan_file, const fs::path& out) {
  FusionWarnings warnings;
  const MSImage fused = fuser(lrms, pan, &warnings);
  save_raster(fused, out);
  json side = fuser.provenance();
  side["lrms_sha256"] = sha256_file(raster_stem(lrms_file).string() + ".bin");
  side["pan_sha256"] = sha256_file(raster_stem(pan_file).string() + ".bin");
  side["warnings"] = warnings;
  write_text(sidecar_path(out), side.dump(2) + "\n");
}

}  // namespace

void cmd_fuse(const Fuser& fuser, const fs::path& lrms, const fs::path& pan, const fs::path& out) {
  write_fused(fuser, load_ms(lrms), load_pan(pan), lrms, pan, out);
}

std::vector<fs::path> cmd_fuse_dataset(const Fuser& fuser, const fs::path& dataset, const fs::path& out_dir) {
  const Dataset ds = read_dataset(dataset);
  if (ds.ratio != fuser.ratio())
    throw GeometryError("dataset ratio " + std::to_string(ds.ratio) + " differs from fuser ratio " +
                        std::to_string(fuser.ratio()));
  fs::create_directories(out_dir);
  std::vector<fs::path> outs;
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const auto dir = dataset / "pairs" / ds.ids[i];
    const auto out = out_dir / ds.ids[i];
    write_fused(fuser, ds.pairs[i].lrms, ds.pairs[i].pan, dir / "lrms", dir / "pan", out);
    outs.push_back(out);
  }
  return outs;
}

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "reduced") return EvalMode::reduced;
  if (s == "full") return EvalMode::full;
  throw ArgumentError("evaluation mode must be reduced or full, got '" + s + "'");
}

EvaluateResult cmd_evaluate(const fs::path& fused_dir, const fs::path& reference, EvalMode mode, const fs::path& out,
                            bool allow_mixed_hash) {
  if (!fs::is_directory(fused_dir)) throw IoError("fused directory " + fused_dir.string() + " does not exist");
  const Dataset ref = read_dataset(reference);
  std::set<std::string> fused_ids;
  for (const auto& e : fs::directory_iterator(fused_dir))
    if (e.path().extension() == ".bin") fused_ids.insert(e.path().stem().string());
  const std::set<std::string> ref_ids(ref.ids.begin(), ref.ids.end());
  std::vector<std::string> only_fused, only_ref;
  std::set_difference(fused_ids.begin(), fused_ids.end(), ref_ids.begin(), ref_ids.end(), std::back_inserter(only_fused));
  std::set_difference(ref_ids.begin(), ref_ids.end(), fused_ids.begin(), fused_ids.end(), std::back_inserter(only_ref));
  if (!only_fused.empty() || !only_ref.empty()) {
    std::string msg = "unmatched ids;";
    if (!only_fused.empty()) msg += " fused only:";
    for (const auto& id : only_fused) msg += " " + id;
    if (!only_ref.empty()) msg += " reference only:";
    for (const auto& id : only_ref) msg += " " + id;
    throw IntegrityError(msg);
  }

  EvaluateResult res;
  std::set<std::string> hashes;
  for (const auto& id : ref.ids) {
    const auto side = sidecar_path(fused_dir / id);
    std::ifstream f(side);
    if (!f) throw ProvenanceError("fused raster " + id + " has no provenance sidecar");
    try {
      hashes.insert(json::parse(f).at("config_hash").get<std::string>());
    } catch (const json::exception& e) {
      throw ProvenanceError("bad provenance sidecar for " + id + ": " + e.what());
    }
  }
  if (hashes.size() > 1 && !allow_mixed_hash)
    throw ProvenanceError("fused rasters come from " + std::to_string(hashes.size()) +
                          " different config hashes; pass the mixed-hash override to evaluate them together");
  res.config_hash = hashes.size() == 1 ? *hashes.begin() : "mixed";

  const std::size_t n = ref.ids.size();
  res.rows.resize(n);
  auto score = [&](std::size_t i) {
    const MSImage fused = load_ms(fused_dir / ref.ids[i]);
    const auto& p = ref.pairs[i];
    res.rows[i] = mode == EvalMode::reduced ? MetricReport::reduced(ref.ids[i], fused, p.gt, ref.ratio)
                                            : MetricReport::full(ref.ids[i], fused, p.lrms, p.pan, ref.ratio);
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(n, std::thread::hardware_concurrency()));
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < workers; ++w)
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < n; i += workers) score(i);
    }));
  for (auto& j : jobs) j.get();
  res.aggregate = MetricReport::aggregate(res.rows);

  json rows = json::array();
  for (const auto& r : res.rows) rows.push_back(report_json(r));
  const json doc{{"config_hash", res.config_hash},
                 {"mode", mode == EvalMode::reduced ? "reduced" : "full"},
                 {"rows", rows},
                 {"aggregate", report_json(res.aggregate)}};
  res.json_path = out.string() + ".json";
  res.csv_path = out.string() + ".csv";
  write_text(res.json_path, doc.dump(2) + "\n");
  std::string csv = "id";
  for (const auto& col : MetricReport::columns()) csv += "," + col;
  csv += ",config_hash\n";
  auto csv_row = [&](const MetricReport& r) {
    csv += r.id;
    for (const auto& col : MetricReport::columns()) csv += "," + csv_cell(r.get(col));
    csv += "," + res.config_hash + "\n";
  };
  for (const auto& r : res.rows) csv_row(r);
  csv_row(res.aggregate);
  write_text(res.csv_path, csv);
  return res;
}

std::vector<AblationRow> cmd_ablate_stages(const RunConfig& cfg, const fs::path& run_dir, const std::vector<int>& ks,
                                           TrainOptions opts) {
  if (ks.empty()) throw ArgumentError("stage list is empty");
  cfg.validate();
  if (cfg.test_data.empty()) throw ConfigError("test_data is not set");
  for (int k : ks) {
    RunConfig c = cfg;
    c.stages = k;
    c.validate();
  }
  RunLock lock(run_dir);
  if (!cfg.disable_mae_prior && !opts.spatial_checkpoint)
    opts.spatial_checkpoint = cmd_pretrain_spatial(cfg, run_dir / "pretrain").checkpoint;
  if (!cfg.disable_mae_loss && !opts.spectral_checkpoint)
    opts.spectral_checkpoint = cmd_pretrain_spectral(cfg, run_dir / "pretrain").checkpoint;

  std::vector<AblationRow> rows;
  for (int k : ks) {
    RunConfig c = cfg;
    c.stages = k;
    TrainOptions o = opts;
    o.allow_mixed_hash = opts.allow_mixed_hash || k != cfg.stages;
    const auto dir = run_dir / ("K" + std::to_string(k));
    const TrainResult t = cmd_train(c, dir, o);
    const Fuser fuser("unfolding", t.checkpoint, c.ratio);
    fs::remove_all(dir / "fused");
    cmd_fuse_dataset(fuser, cfg.test_data, dir / "fused");
    const auto ev = cmd_evaluate(dir / "fused", cfg.test_data, EvalMode::reduced, dir / "report");
    rows.push_back({k, ev.aggregate, t.checkpoint_sha256});
  }
  std::string csv = "stages,psnr,ssim,sam,ergas,checkpoint_sha256\n";
  for (const auto& r : rows)
    csv += std::to_string(r.stages) + "," + csv_cell(r.metrics.psnr) + "," + csv_cell(r.metrics.ssim) + "," +
           csv_cell(r.metrics.sam) + "," + csv_cell(r.metrics.ergas) + "," + r.checkpoint_sha256 + "\n";
  write_text(run_dir / "ablation.csv", csv);
  return rows;
}

std::size_t cmd_make_toy_data(const fs::path& out, const ToyDatasetSpec& spec) {
  const auto pairs = make_toy_pairs(spec);
  std::ostringstream desc;
  desc << "seed=" << spec.seed << "\nscenes=" << spec.scenes << "\nlatent_size=" << spec.latent_size
       << "\nbands=" << spec.bands << "\nratio=" << spec.ratio << "\npan_patch=" << spec.pan_patch
       << "\nstride=" << spec.stride << "\n";
  write_dataset(out, pairs, sha256_hex(desc.str()));
  return pairs.size();
}

}  // namespace pansharp
