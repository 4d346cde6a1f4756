#include "pansharp/raster_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace pansharp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(sizeof(float) == 4, "float32 payload requires 4-byte float");

fs::path bin_path(const fs::path& stem) { return fs::path(stem.string() + ".bin"); }
fs::path json_path(const fs::path& stem) { return fs::path(stem.string() + ".json"); }

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

void to_little_endian(std::vector<std::uint32_t>& words) {
  if constexpr (std::endian::native == std::endian::big)
    for (auto& w : words) w = byteswap32(w);
}

}  // namespace

fs::path raster_stem(const fs::path& path) {
  const auto ext = path.extension();
  if (ext == ".bin" || ext == ".json") return path.parent_path() / path.stem();
  return path;
}

RasterHeader read_header(const fs::path& path) {
  const auto hp = json_path(raster_stem(path));
  std::ifstream in(hp);
  if (!in) throw IoError("cannot open raster header " + hp.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("corrupt raster header " + hp.string() + ": " + e.what());
  }
  RasterHeader h;
  try {
    h.height = j.at("height").get<int>();
    h.width = j.at("width").get<int>();
    h.bands = j.at("bands").get<int>();
    h.dtype = j.at("dtype").get<std::string>();
    h.range = j.at("range").get<std::string>();
    if (j.contains("byte_order")) h.byte_order = j.at("byte_order").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError("raster header " + hp.string() + " is missing or mistypes a key: " + e.what());
  }
  if (h.height <= 0 || h.width <= 0 || h.bands <= 0)
    throw FormatError("raster header " + hp.string() + " has non-positive dimensions");
  if (h.dtype != "float32") throw FormatError("unsupported dtype '" + h.dtype + "'");
  if (h.byte_order != "little") throw FormatError("unsupported byte order '" + h.byte_order + "'");
  return h;
}

namespace {

Image<float> load_image(const fs::path& path) {
  const auto stem = raster_stem(path);
  const RasterHeader h = read_header(stem);
  const auto bp = bin_path(stem);
  std::ifstream in(bp, std::ios::binary);
  if (!in) throw IoError("cannot open raster payload " + bp.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != h.element_count() * sizeof(float))
    throw IntegrityError("payload " + bp.string() + " holds " + std::to_string(bytes.size()) +
                         " bytes, header " + Image<float>::shape_string(h.height, h.width, h.bands) +
                         " needs " + std::to_string(h.element_count() * sizeof(float)));
  std::vector<std::uint32_t> words(h.element_count());
  std::memcpy(words.data(), bytes.data(), bytes.size());
  to_little_endian(words);
  Image<float> img(h.height, h.width, h.bands);
  std::memcpy(img.data().data(), words.data(), bytes.size());
  return img;
}

}  // namespace

Raster load_raster(const fs::path& path) {
  Image<float> img = load_image(path);
  if (img.bands() == 1) return PanImage(std::move(img));
  return MSImage(std::move(img));
}

MSImage load_ms(const fs::path& path) {
  auto r = load_raster(path);
  if (auto* ms = std::get_if<MSImage>(&r)) return std::move(*ms);
  throw ValidationError(path.string() + " is single-band, expected a multi-spectral raster");
}

PanImage load_pan(const fs::path& path) {
  auto r = load_raster(path);
  if (auto* pan = std::get_if<PanImage>(&r)) return std::move(*pan);
  throw ValidationError(path.string() + " is multi-band, expected a panchromatic raster");
}

void save_raster(const Image<float>& img, const fs::path& path) {
  if (img.bands() == 1)
    PanImageT<float>::validate(img);
  else
    MSImageT<float>::validate(img);

  const auto stem = raster_stem(path);
  if (stem.has_parent_path() && !fs::exists(stem.parent_path()))
    throw IoError("directory does not exist: " + stem.parent_path().string());

  std::vector<std::uint32_t> words(static_cast<std::size_t>(img.size()));
  std::memcpy(words.data(), img.data().data(), words.size() * sizeof(float));
  to_little_endian(words);

  std::ofstream bin(bin_path(stem), std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write " + bin_path(stem).string());
  bin.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!bin) throw IoError("short write to " + bin_path(stem).string());

  const json header = {{"height", img.height()}, {"width", img.width()},   {"bands", img.bands()},
                       {"dtype", "float32"},     {"range", "[0,1]"},       {"byte_order", "little"}};
  std::ofstream js(json_path(stem), std::ios::trunc);
  if (!js) throw IoError("cannot write " + json_path(stem).string());
  js << header.dump(2) << '\n';
}

Image<float> normalize(const RawRaster& raw, int bit_depth) {
  if (bit_depth < 1 || bit_depth > 31) throw ArgumentError("bit depth must be in [1,31]");
  const std::uint32_t full_scale = (std::uint32_t{1} << bit_depth) - 1u;
  Image<float> img(raw.height, raw.width, raw.bands);
  if (raw.values.size() != static_cast<std::size_t>(img.size()))
    throw IntegrityError("raw raster holds " + std::to_string(raw.values.size()) + " values, shape needs " +
                         std::to_string(img.size()));
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    const auto v = raw.values[i];
    if (v > full_scale)
      throw ValidationError("raw value " + std::to_string(v) + " exceeds " + std::to_string(bit_depth) +
                            "-bit full scale " + std::to_string(full_scale));
    img.data()[static_cast<Eigen::Index>(i)] =
        static_cast<float>(static_cast<double>(v) / static_cast<double>(full_scale));
  }
  return img;
}

}  // namespace pansharp
