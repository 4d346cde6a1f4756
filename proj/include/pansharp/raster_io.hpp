#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "pansharp/image.hpp"

namespace pansharp {

/// JSON sidecar describing a `<name>.bin` payload.
struct RasterHeader {
  int height = 0;
  int width = 0;
  int bands = 0;
  std::string dtype = "float32";
  std::string range = "[0,1]";
  std::string byte_order = "little";

  std::size_t element_count() const {
    return static_cast<std::size_t>(height) * width * bands;
  }
};

using Raster = std::variant<MSImage, PanImage>;

/// Accepts either `<name>`, `<name>.bin` or `<name>.json` and returns the
/// `<name>` stem that both sidecar paths derive from.
std::filesystem::path raster_stem(const std::filesystem::path& path);

RasterHeader read_header(const std::filesystem::path& path);

/// Loads a raster; a single band yields PanImage, otherwise MSImage.
Raster load_raster(const std::filesystem::path& path);
MSImage load_ms(const std::filesystem::path& path);
PanImage load_pan(const std::filesystem::path& path);

/// Validates invariants, then writes `<stem>.bin` and `<stem>.json`.
void save_raster(const Image<float>& img, const std::filesystem::path& path);

/// Integer-valued raster straight from a sensor, band-planar like Image.
struct RawRaster {
  int height = 0;
  int width = 0;
  int bands = 0;
  std::vector<std::uint32_t> values;
};

/// Scales raw counts by 1 / (2^bit_depth - 1).
Image<float> normalize(const RawRaster& raw, int bit_depth);

}  // namespace pansharp
