#include "pansharp/wald.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <json.hpp>

#include "pansharp/filters.hpp"
#include "pansharp/raster_io.hpp"

namespace pansharp {

namespace fs = std::filesystem;
using nlohmann::json;

void DegradationConfig::validate() const {
  if (ratio < 1) throw ArgumentError("ratio must be >= 1");
  if (kernel_size < 3 || kernel_size % 2 == 0) throw ArgumentError("blur kernel size must be odd and >= 3");
  if (!(blur_sigma > 0)) throw ArgumentError("blur sigma must be positive");
  if (!(noise_std >= 0)) throw ArgumentError("noise std must be >= 0");
}

void SamplePair::validate() const {
  if (pan.height() != gt.height() || pan.width() != gt.width())
    throw GeometryError("pan " + pan.shape_string() + " and gt " + gt.shape_string() + " differ spatially");
  if (gt.height() != ratio * lrms.height() || gt.width() != ratio * lrms.width())
    throw GeometryError("gt " + gt.shape_string() + " is not " + std::to_string(ratio) + "x lrms " +
                        lrms.shape_string());
  if (gt.bands() != lrms.bands()) throw GeometryError("gt and lrms band counts differ");
}

Image<float> blur_decimate(const Image<float>& img, const DegradationConfig& cfg) {
  cfg.validate();
  const auto kernel = gaussian_kernel<float>(cfg.kernel_size, cfg.blur_sigma);
  return decimate(filter_reflect(img, kernel), cfg.ratio);
}

SamplePair degrade(const MSImage& scene_ms, const PanImage& scene_pan, const DegradationConfig& cfg) {
  cfg.validate();
  const int r = cfg.ratio;
  if (scene_ms.height() % r != 0 || scene_ms.width() % r != 0)
    throw GeometryError("MS scene " + scene_ms.shape_string() + " not divisible by ratio " + std::to_string(r));
  if (scene_pan.height() != r * scene_ms.height() || scene_pan.width() != r * scene_ms.width())
    throw GeometryError("PAN scene " + scene_pan.shape_string() + " must be " + std::to_string(r) +
                        "x the MS scene " + scene_ms.shape_string());

  Image<float> lr = blur_decimate(scene_ms, cfg);
  if (cfg.noise_std > 0) {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    for (Eigen::Index i = 0; i < lr.size(); ++i) lr.data()[i] += static_cast<float>(noise(rng));
  }
  lr.clip01();
  SamplePair pair{MSImage(std::move(lr)), PanImage(blur_decimate(scene_pan, cfg).clip01()), scene_ms, r};
  pair.validate();
  return pair;
}

namespace {

Image<float> crop(const Image<float>& img, int y, int x, int side) {
  Image<float> out(side, side, img.bands());
  for (int b = 0; b < img.bands(); ++b) out.band(b) = img.band(b).block(y, x, side, side);
  return out;
}

}  // namespace

std::vector<SamplePair> crop_patch_dataset(const std::vector<SamplePair>& pairs, int pan_patch, int stride) {
  if (pan_patch <= 0 || stride <= 0) throw ArgumentError("patch size and stride must be positive");
  std::vector<SamplePair> out;
  for (const auto& p : pairs) {
    p.validate();
    const int r = p.ratio;
    if (pan_patch % r != 0)
      throw ArgumentError("pan patch " + std::to_string(pan_patch) + " not divisible by ratio " + std::to_string(r));
    if (stride % r != 0)
      throw ArgumentError("stride " + std::to_string(stride) + " not divisible by ratio " + std::to_string(r));
    const int ms_patch = pan_patch / r;
    for (int y = 0; y + pan_patch <= p.gt.height(); y += stride)
      for (int x = 0; x + pan_patch <= p.gt.width(); x += stride) {
        SamplePair q{MSImage(crop(p.lrms, y / r, x / r, ms_patch)), PanImage(crop(p.pan, y, x, pan_patch)),
                     MSImage(crop(p.gt, y, x, pan_patch)), r};
        out.push_back(std::move(q));
      }
  }
  return out;
}

Eigen::VectorXd toy_pan_weights(int bands) {
  // Smoothly varying positive response across the spectrum, summing to 1.
  Eigen::VectorXd w(bands);
  for (int b = 0; b < bands; ++b) w[b] = 1.0 + 0.5 * std::sin(1.3 * b + 0.4);
  return w / w.sum();
}

std::pair<MSImage, PanImage> synth_toy_scene(std::uint64_t seed, int size, int bands) {
  if (size < 8) throw GeometryError("toy scene size must be >= 8");
  if (bands < 2) throw ArgumentError("toy scene needs at least 2 bands");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  constexpr int kMaterials = 7;
  Eigen::MatrixXd spectra(kMaterials, bands);
  for (int m = 0; m < kMaterials; ++m) {
    const double level = 0.2 + 0.55 * u01(rng);
    for (int b = 0; b < bands; ++b) spectra(m, b) = std::clamp(level + 0.25 * (u01(rng) - 0.5), 0.08, 0.92);
  }

  // Label map painted with rectangles and disks over a background material.
  Eigen::MatrixXi label = Eigen::MatrixXi::Zero(size, size);
  const int shapes = 10 + static_cast<int>(u01(rng) * 10);
  for (int s = 0; s < shapes; ++s) {
    const int m = 1 + static_cast<int>(u01(rng) * (kMaterials - 1));
    const double cy = u01(rng) * size, cx = u01(rng) * size;
    const double ry = (0.04 + 0.2 * u01(rng)) * size, rx = (0.04 + 0.2 * u01(rng)) * size;
    const bool disk = u01(rng) < 0.5;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        const bool inside = disk ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (inside) label(y, x) = m;
      }
  }

  // Low-frequency illumination and fine band-correlated texture.
  const double fy = 1.0 + 2.0 * u01(rng), fx = 1.0 + 2.0 * u01(rng), ph = 6.28 * u01(rng);
  Eigen::MatrixXd white(size, size), pan_white(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      white(y, x) = u01(rng) - 0.5;
      pan_white(y, x) = u01(rng) - 0.5;
    }

  Image<float> ms(size, size, bands);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double illum =
          1.0 + 0.08 * std::sin(6.2832 * fy * y / size + ph) * std::cos(6.2832 * fx * x / size);
      double tex = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) tex += white(reflect_index(y + dy, size), reflect_index(x + dx, size));
      tex /= 9.0;
      const int m = label(y, x);
      for (int b = 0; b < bands; ++b)
        ms(y, x, b) = static_cast<float>(std::clamp(spectra(m, b) * illum * (1.0 + 0.3 * tex), 0.0, 1.0));
    }

  const Eigen::VectorXd w = toy_pan_weights(bands);
  Image<float> pan(size, size, 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double v = 0;
      for (int b = 0; b < bands; ++b) v += w[b] * ms(y, x, b);
      pan(y, x, 0) = static_cast<float>(std::clamp(v + 0.01 * pan_white(y, x), 0.0, 1.0));
    }
  return {MSImage(std::move(ms)), PanImage(std::move(pan))};
}

std::pair<MSImage, PanImage> simulate_sensor_pair(const MSImage& latent_ms, const PanImage& latent_pan,
                                                  const DegradationConfig& cfg) {
  if (!latent_ms.same_grid(latent_pan)) throw GeometryError("latent MS and PAN grids differ");
  return {MSImage(blur_decimate(latent_ms, cfg).clip01()), latent_pan};
}

std::vector<SamplePair> make_toy_pairs(const ToyDatasetSpec& spec) {
  if (spec.latent_size % (spec.ratio * spec.ratio) != 0)
    throw GeometryError("latent size must be divisible by ratio^2");
  auto cfg = DegradationConfig::for_ratio(spec.ratio);
  std::vector<SamplePair> scenes;
  for (int i = 0; i < spec.scenes; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 stream(seq);
    const std::uint64_t scene_seed = stream();
    cfg.seed = stream();
    auto [latent_ms, latent_pan] = synth_toy_scene(scene_seed, spec.latent_size, spec.bands);
    auto [scene_ms, scene_pan] = simulate_sensor_pair(latent_ms, latent_pan, cfg);
    scenes.push_back(degrade(scene_ms, scene_pan, cfg));
  }
  return crop_patch_dataset(scenes, spec.pan_patch, spec.stride);
}

std::string pair_id(std::size_t index) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << index;
  return os.str();
}

void write_dataset(const fs::path& root, const std::vector<SamplePair>& pairs, const std::string& config_hash) {
  fs::create_directories(root / "pairs");
  json ids = json::array();
  int ratio = pairs.empty() ? 0 : pairs.front().ratio;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    p.validate();
    if (p.ratio != ratio) throw ArgumentError("dataset mixes ratios");
    const auto id = pair_id(i);
    const auto dir = root / "pairs" / id;
    fs::create_directories(dir);
    save_raster(p.lrms, dir / "lrms");
    save_raster(p.pan, dir / "pan");
    save_raster(p.gt, dir / "gt");
    ids.push_back(id);
  }
  const json manifest = {{"ids", ids}, {"ratio", ratio}, {"config_hash", config_hash}, {"count", pairs.size()}};
  std::ofstream out(root / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + root.string());
  out << manifest.dump(2) << '\n';
}

Dataset read_dataset(const fs::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw IoError("missing dataset manifest " + (root / "manifest.json").string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("corrupt manifest: " + std::string(e.what()));
  }
  Dataset ds;
  ds.ratio = m.at("ratio").get<int>();
  ds.config_hash = m.value("config_hash", "");
  for (const auto& id : m.at("ids")) {
    const auto dir = root / "pairs" / id.get<std::string>();
    SamplePair p{load_ms(dir / "lrms"), load_pan(dir / "pan"), load_ms(dir / "gt"), ds.ratio};
    p.validate();
    ds.ids.push_back(id.get<std::string>());
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

}  // namespace pansharp
