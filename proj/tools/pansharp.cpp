#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>

#include "pansharp/harness.hpp"

using namespace pansharp;
using nlohmann::json;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void add(CLI::App* cmd) {
    cmd->add_option("--config", path, "run config file (key = value lines)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--set", overrides, "override one config key, key=value (repeatable)");
  }

  RunConfig load() const {
    RunConfig cfg = RunConfig::load(path);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
      cfg.set(o.substr(0, eq), o.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
  }
};

void emit(const json& j) { std::cout << j.dump(2) << std::endl; }

json pretrain_json(const PretrainResult& r) {
  return {{"checkpoint", r.checkpoint.string()},
          {"checkpoint_sha256", r.checkpoint_sha256},
          {"steps", r.steps},
          {"initial_smoothed_loss", r.initial_smoothed},
          {"final_smoothed_loss", r.final_smoothed}};
}

std::vector<int> parse_stage_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ArgumentError("stage list entry '" + tok + "' is not an integer");
    }
  }
  return out;
}

int fail(const std::string& kind, const std::string& message, const std::string& diagnostics = "") {
  json j{{"kind", kind}, {"message", message}};
  if (!diagnostics.empty()) j["diagnostics"] = json::parse(diagnostics, nullptr, false);
  std::cerr << j.dump() << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pan-sharpening toolkit: MAE pretraining, unfolding training, fusion and evaluation"};
  app.require_subcommand(1);

  ConfigArgs cfg_args;
  std::string run_dir, spatial, spectral, method, checkpoint, lrms, pan, out, dataset, out_dir, fused, reference,
      mode = "reduced", stages;
  bool allow_mixed = false;
  int ratio = 4;
  ToyDatasetSpec toy;

  auto* ps = app.add_subcommand("pretrain-spatial", "train the convolutional MAE");
  cfg_args.add(ps);
  ps->add_option("--run-dir", run_dir, "output directory")->required();

  auto* pt = app.add_subcommand("pretrain-spectral", "train the spatial-spectral token MAE");
  cfg_args.add(pt);
  pt->add_option("--run-dir", run_dir, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train the unfolding network");
  cfg_args.add(tr);
  tr->add_option("--run-dir", run_dir, "output directory")->required();
  tr->add_option("--spatial", spatial, "conv MAE checkpoint");
  tr->add_option("--spectral", spectral, "token MAE checkpoint");
  tr->add_flag("--allow-mixed-hash", allow_mixed, "accept checkpoints produced under another config");

  auto* fu = app.add_subcommand("fuse", "fuse one pair or a whole dataset");
  fu->add_option("--method", method, "bicubic, ihs, brovey, gs, sfim, gfpca or unfolding")->required();
  fu->add_option("--checkpoint", checkpoint, "unfolding checkpoint");
  fu->add_option("--ratio", ratio, "resolution ratio for classical methods");
  fu->add_option("--lrms", lrms, "LR-MS raster");
  fu->add_option("--pan", pan, "PAN raster");
  fu->add_option("--out", out, "fused raster path");
  fu->add_option("--dataset", dataset, "dataset directory to fuse in full");
  fu->add_option("--out-dir", out_dir, "output directory for --dataset");

  auto* ev = app.add_subcommand("evaluate", "score fused rasters against a dataset");
  ev->add_option("--fused", fused, "directory of fused rasters")->required();
  ev->add_option("--reference", reference, "dataset directory")->required();
  ev->add_option("--mode", mode, "reduced or full");
  ev->add_option("--out", out, "report path prefix (.json and .csv are appended)")->required();
  ev->add_flag("--allow-mixed-hash", allow_mixed, "accept rasters produced under different configs");

  auto* ab = app.add_subcommand("ablate-stages", "train and score one model per stage count");
  cfg_args.add(ab);
  ab->add_option("--run-dir", run_dir, "output directory")->required();
  ab->add_option("--stages", stages, "comma-separated stage counts, e.g. 1,2,4")->required();
  ab->add_option("--spatial", spatial, "conv MAE checkpoint (pretrained when omitted)");
  ab->add_option("--spectral", spectral, "token MAE checkpoint (pretrained when omitted)");

  auto* mk = app.add_subcommand("make-toy-data", "write a synthetic dataset");
  mk->add_option("--out", out, "dataset directory")->required();
  mk->add_option("--seed", toy.seed, "scene seed");
  mk->add_option("--scenes", toy.scenes, "scene count");
  mk->add_option("--latent-size", toy.latent_size, "latent scene side");
  mk->add_option("--bands", toy.bands, "MS band count");
  mk->add_option("--ratio", toy.ratio, "resolution ratio");
  mk->add_option("--patch", toy.pan_patch, "PAN-resolution crop side");
  mk->add_option("--stride", toy.stride, "crop stride");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  auto opt_path = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<fs::path>(s); };

  try {
    if (ps->parsed()) {
      emit(pretrain_json(cmd_pretrain_spatial(cfg_args.load(), run_dir)));
    } else if (pt->parsed()) {
      emit(pretrain_json(cmd_pretrain_spectral(cfg_args.load(), run_dir)));
    } else if (tr->parsed()) {
      const auto r = cmd_train(cfg_args.load(), run_dir, {opt_path(spatial), opt_path(spectral), allow_mixed});
      emit({{"checkpoint", r.checkpoint.string()},
            {"checkpoint_sha256", r.checkpoint_sha256},
            {"steps", r.steps},
            {"initial_smoothed_loss", r.initial_smoothed},
            {"final_smoothed_loss", r.final_smoothed}});
    } else if (fu->parsed()) {
      const Fuser fuser(method, opt_path(checkpoint), ratio);
      if (!dataset.empty()) {
        if (out_dir.empty()) throw ArgumentError("--dataset needs --out-dir");
        const auto outs = cmd_fuse_dataset(fuser, dataset, out_dir);
        emit({{"method", method}, {"config_hash", fuser.config_hash()}, {"outputs", outs.size()}, {"out_dir", out_dir}});
      } else {
        if (lrms.empty() || pan.empty() || out.empty()) throw ArgumentError("fuse needs --lrms, --pan and --out");
        cmd_fuse(fuser, lrms, pan, out);
        emit({{"method", method}, {"config_hash", fuser.config_hash()}, {"output", out}});
      }
    } else if (ev->parsed()) {
      const auto r = cmd_evaluate(fused, reference, parse_eval_mode(mode), out, allow_mixed);
      json agg;
      for (const auto& col : MetricReport::columns())
        if (auto v = r.aggregate.get(col)) agg[col] = *v;
      emit({{"rows", r.rows.size()}, {"aggregate", agg}, {"config_hash", r.config_hash}, {"json", r.json_path.string()},
            {"csv", r.csv_path.string()}});
    } else if (ab->parsed()) {
      const auto rows = cmd_ablate_stages(cfg_args.load(), run_dir, parse_stage_list(stages),
                                          {opt_path(spatial), opt_path(spectral), false});
      json j = json::array();
      for (const auto& r : rows) j.push_back({{"stages", r.stages}, {"psnr", *r.metrics.psnr}});
      emit({{"table", (fs::path(run_dir) / "ablation.csv").string()}, {"rows", j}});
    } else if (mk->parsed()) {
      const auto n = cmd_make_toy_data(out, toy);
      emit({{"out", out}, {"pairs", n}});
    }
  } catch (const DivergenceError& e) {
    return fail(e.kind(), e.what(), e.diagnostics());
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
