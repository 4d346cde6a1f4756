#include "pansharp/mae.hpp"

#include <numeric>
#include <random>

#include <json.hpp>

namespace pansharp {

using nlohmann::json;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// round(ratio * n) entries set, positions from a seeded Fisher-Yates shuffle.
std::vector<std::uint8_t> random_subset(int n, double ratio, std::uint64_t seed) {
  const int k = static_cast<int>(std::lround(ratio * n));
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng() % static_cast<std::uint64_t>(i + 1)]);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < k; ++i) out[perm[i]] = 1;
  return out;
}

std::vector<int> indices_where(const std::vector<std::uint8_t>& flags, std::uint8_t value) {
  std::vector<int> out;
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i] == value) out.push_back(static_cast<int>(i));
  return out;
}

void check_ratio(double ratio) {
  if (!(ratio >= 0 && ratio <= 1)) throw ArgumentError("mask ratio must lie in [0, 1], got " + std::to_string(ratio));
}

std::string bits(const std::vector<std::uint8_t>& flags) {
  std::string s;
  for (auto f : flags) s.push_back(f ? '1' : '0');
  return s;
}

std::vector<std::uint8_t> unbits(const std::string& s, std::size_t expect) {
  if (s.size() != expect) throw FormatError("mask bit string has wrong length");
  std::vector<std::uint8_t> out;
  for (char ch : s) {
    if (ch != '0' && ch != '1') throw FormatError("mask bit string must be 0/1");
    out.push_back(ch == '1');
  }
  return out;
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("mask JSON: ") + e.what());
  }
}

}  // namespace

int SpatialMaskSpec::masked_count() const { return static_cast<int>(std::count(masked.begin(), masked.end(), 1)); }
std::vector<int> SpatialMaskSpec::visible_cells() const { return indices_where(masked, 0); }
std::vector<int> SpatialMaskSpec::masked_cells() const { return indices_where(masked, 1); }

SpatialMaskSpec make_spatial_mask(int h, int w, int patch, double ratio, std::uint64_t seed) {
  check_ratio(ratio);
  if (h < 1 || w < 1) throw ArgumentError("mask needs a non-empty image");
  if (patch < 1 || patch > std::min(h, w))
    throw ArgumentError("mask patch " + std::to_string(patch) + " exceeds image side " + std::to_string(std::min(h, w)));
  SpatialMaskSpec m;
  m.height = h;
  m.width = w;
  m.patch = patch;
  m.ratio = ratio;
  m.seed = seed;
  m.grid_h = (h + patch - 1) / patch;
  m.grid_w = (w + patch - 1) / patch;
  m.masked = random_subset(m.cells(), ratio, seed);
  return m;
}

int SpatialSpectralMaskSpec::masked_count() const {
  return static_cast<int>(std::count(masked.begin(), masked.end(), 1));
}
std::vector<int> SpatialSpectralMaskSpec::visible_tokens() const { return indices_where(masked, 0); }
std::vector<int> SpatialSpectralMaskSpec::masked_tokens() const { return indices_where(masked, 1); }

SpatialSpectralMaskSpec make_spatial_spectral_mask(int h, int w, int bands, int patch, int band_group, double ratio,
                                                   std::uint64_t seed) {
  check_ratio(ratio);
  if (patch < 1 || h % patch != 0 || w % patch != 0)
    throw ArgumentError("token patch " + std::to_string(patch) + " must divide image " + std::to_string(h) + "x" +
                        std::to_string(w));
  if (band_group < 1 || bands % band_group != 0)
    throw ArgumentError("band group " + std::to_string(band_group) + " must divide " + std::to_string(bands) + " bands");
  SpatialSpectralMaskSpec m;
  m.grid_h = h / patch;
  m.grid_w = w / patch;
  m.groups = bands / band_group;
  m.patch = patch;
  m.band_group = band_group;
  m.ratio = ratio;
  m.seed = seed;
  m.masked = random_subset(m.tokens(), ratio, seed);
  return m;
}

std::string to_json(const SpatialMaskSpec& m) {
  return json{{"kind", "spatial"},   {"height", m.height}, {"width", m.width}, {"patch", m.patch},
              {"ratio", m.ratio},    {"seed", m.seed},     {"grid_h", m.grid_h}, {"grid_w", m.grid_w},
              {"masked", bits(m.masked)}}
      .dump();
}

std::string to_json(const SpatialSpectralMaskSpec& m) {
  return json{{"kind", "spatial_spectral"},
              {"grid_h", m.grid_h},
              {"grid_w", m.grid_w},
              {"groups", m.groups},
              {"patch", m.patch},
              {"band_group", m.band_group},
              {"ratio", m.ratio},
              {"seed", m.seed},
              {"masked", bits(m.masked)}}
      .dump();
}

SpatialMaskSpec spatial_mask_from_json(const std::string& text) {
  const json j = parse(text);
  try {
    if (j.at("kind") != "spatial") throw FormatError("not a spatial mask");
    SpatialMaskSpec m;
    m.height = j.at("height");
    m.width = j.at("width");
    m.patch = j.at("patch");
    m.ratio = j.at("ratio");
    m.seed = j.at("seed");
    m.grid_h = j.at("grid_h");
    m.grid_w = j.at("grid_w");
    m.masked = unbits(j.at("masked"), static_cast<std::size_t>(m.cells()));
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("mask JSON: ") + e.what());
  }
}

SpatialSpectralMaskSpec spatial_spectral_mask_from_json(const std::string& text) {
  const json j = parse(text);
  try {
    if (j.at("kind") != "spatial_spectral") throw FormatError("not a spatial-spectral mask");
    SpatialSpectralMaskSpec m;
    m.grid_h = j.at("grid_h");
    m.grid_w = j.at("grid_w");
    m.groups = j.at("groups");
    m.patch = j.at("patch");
    m.band_group = j.at("band_group");
    m.ratio = j.at("ratio");
    m.seed = j.at("seed");
    m.masked = unbits(j.at("masked"), static_cast<std::size_t>(m.tokens()));
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("mask JSON: ") + e.what());
  }
}

std::uint64_t mask_seed(std::uint64_t base, long step, int index) {
  return splitmix(splitmix(splitmix(base) ^ static_cast<std::uint64_t>(step)) ^ static_cast<std::uint64_t>(index));
}

void TokenMAEConfig::validate() const {
  if (patch < 1 || band_group < 1 || dim < 1 || heads < 1 || mlp_ratio < 1 || max_grid < 1)
    throw ArgumentError("token MAE sizes must be positive");
  if (encoder_layers < 1 || decoder_layers < 1) throw ArgumentError("token MAE needs at least one layer per stack");
  if (channels % band_group != 0)
    throw ArgumentError("band group " + std::to_string(band_group) + " must divide " + std::to_string(channels) +
                        " bands");
  if (dim % heads != 0) throw ArgumentError("embedding dim must be divisible by the head count");
  check_ratio(mask_ratio);
}

void TokenMAEConfig::validate_image(int h, int w, int c) const {
  if (c != channels) throw GeometryError("token MAE expects " + std::to_string(channels) + " bands, got " + std::to_string(c));
  if (h % patch != 0 || w % patch != 0)
    throw GeometryError("token patch " + std::to_string(patch) + " does not divide " + std::to_string(h) + "x" +
                        std::to_string(w));
  if (h / patch > max_grid || w / patch > max_grid) throw GeometryError("image exceeds the position table extent");
}

std::shared_ptr<const std::vector<Eigen::Index>> patchify_index(const Shape& s, int patch, int band_group) {
  const int gh = s.h / patch, gw = s.w / patch, groups = s.c / band_group;
  auto idx = std::make_shared<std::vector<Eigen::Index>>();
  idx->reserve(static_cast<std::size_t>(s.size()));
  for (int n = 0; n < s.n; ++n)
    for (int gy = 0; gy < gh; ++gy)
      for (int gx = 0; gx < gw; ++gx)
        for (int g = 0; g < groups; ++g)
          for (int b = 0; b < band_group; ++b)
            for (int py = 0; py < patch; ++py)
              for (int px = 0; px < patch; ++px) {
                const int c = g * band_group + b, y = gy * patch + py, x = gx * patch + px;
                idx->push_back(((static_cast<Eigen::Index>(n) * s.c + c) * s.h + y) * s.w + x);
              }
  return idx;
}

std::shared_ptr<const std::vector<Eigen::Index>> token_select_index(int tokens, int dim,
                                                                    const std::vector<std::vector<int>>& keep) {
  auto idx = std::make_shared<std::vector<Eigen::Index>>();
  for (std::size_t n = 0; n < keep.size(); ++n)
    for (int t : keep[n])
      for (int d = 0; d < dim; ++d)
        idx->push_back((static_cast<Eigen::Index>(n) * tokens + t) * dim + d);
  return idx;
}

}  // namespace pansharp
