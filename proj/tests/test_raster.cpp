#include <fstream>

#include "pansharp/raster_io.hpp"
#include "pansharp/resample.hpp"
#include "testing.hpp"

using namespace pansharp;
using testing::random_image;
using testing::TempDir;

TEST_CASE("save then load reproduces random rasters bit-exactly") {
  TempDir dir("roundtrip");
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const int h = 1 + static_cast<int>(rng() % 40), w = 1 + static_cast<int>(rng() % 40);
    const int c = 1 + static_cast<int>(rng() % 8);
    const auto img = random_image(h, w, c, rng());
    save_raster(img, dir.path / "x");
    const Raster r = load_raster(dir.path / "x.bin");
    const Image<float>& back = c == 1 ? static_cast<const Image<float>&>(std::get<PanImage>(r))
                                      : static_cast<const Image<float>&>(std::get<MSImage>(r));
    CHECK(back == img);

    // Re-saving the loaded image produces identical bytes.
    auto slurp = [](const std::filesystem::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    const auto bin1 = slurp(dir.path / "x.bin"), json1 = slurp(dir.path / "x.json");
    save_raster(back, dir.path / "x");
    CHECK(slurp(dir.path / "x.bin") == bin1);
    CHECK(slurp(dir.path / "x.json") == json1);
  }
}

TEST_CASE("constant 2x2x4 raster loads as MSImage") {
  TempDir dir("const");
  save_raster(Image<float>(2, 2, 4, 0.5f), dir.path / "c");
  const auto ms = load_ms(dir.path / "c");
  CHECK(ms.bands() == 4);
  CHECK((ms.data().array() == 0.5f).all());
}

TEST_CASE("payload holds height*width*bands float32 elements") {
  TempDir dir("size");
  save_raster(random_image(128, 128, 4, 3), dir.path / "p");
  CHECK(std::filesystem::file_size(dir.path / "p.bin") == 128u * 128u * 4u * sizeof(float));
}

TEST_CASE("header claiming more bands than the payload holds is an integrity error") {
  TempDir dir("integrity");
  save_raster(random_image(4, 4, 2, 1), dir.path / "m");
  std::ofstream(dir.path / "m.json", std::ios::trunc)
      << R"({"height":4,"width":4,"bands":3,"dtype":"float32","range":"[0,1]"})";
  CHECK_THROWS_AS(load_raster(dir.path / "m"), IntegrityError);
}

TEST_CASE("corrupt header is a format error") {
  TempDir dir("format");
  save_raster(random_image(4, 4, 2, 1), dir.path / "m");
  std::ofstream(dir.path / "m.json", std::ios::trunc) << "{\"height\": 4, \"wid";
  CHECK_THROWS_AS(load_raster(dir.path / "m"), FormatError);
  std::ofstream(dir.path / "m.json", std::ios::trunc) << R"({"height":4,"width":4,"bands":2,"dtype":"uint8","range":"[0,1]"})";
  CHECK_THROWS_AS(load_raster(dir.path / "m"), FormatError);
}

TEST_CASE("saving invalid images fails before anything is written") {
  TempDir dir("invalid");
  auto img = random_image(3, 3, 3, 2);
  img(1, 1, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(save_raster(img, dir.path / "nan"), ValidationError);
  CHECK_FALSE(std::filesystem::exists(dir.path / "nan.bin"));
  auto over = random_image(3, 3, 3, 2);
  over(0, 0, 0) = 1.5f;
  CHECK_THROWS_AS(save_raster(over, dir.path / "over"), ValidationError);
  CHECK_THROWS_AS(save_raster(random_image(3, 3, 3, 2), dir.path / "no" / "such" / "dir" / "x"), IoError);
}

TEST_CASE("image type invariants") {
  CHECK_THROWS_AS(MSImage(random_image(4, 4, 1, 1)), ValidationError);
  CHECK_THROWS_AS(PanImage(random_image(4, 4, 2, 1)), ValidationError);
  CHECK_NOTHROW(PanImage(random_image(4, 4, 1, 1)));
}

TEST_CASE("bicubic upsampling") {
  SUBCASE("constant image stays constant") {
    const Image<float> img(8, 6, 3, 0.37f);
    const auto up = bicubic_upsample(img, 4);
    CHECK(up.height() == 32);
    CHECK(up.width() == 24);
    CHECK((up.data().array() == 0.37f).all());
  }
  SUBCASE("32x32x4 at ratio 4 gives 128x128x4") {
    const auto up = bicubic_upsample(random_image(32, 32, 4, 5), 4);
    CHECK(up.height() == 128);
    CHECK(up.width() == 128);
    CHECK(up.bands() == 4);
    CHECK(up.within_unit_range());
  }
  SUBCASE("linear ramp is reproduced exactly away from the border") {
    Image<double> ramp(16, 16, 1);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) ramp(y, x, 0) = 0.1 + 0.03 * x + 0.02 * y;
    const auto up = bicubic_upsample(ramp, 2);
    for (int y = 4; y < 28; ++y)
      for (int x = 4; x < 28; ++x) {
        const double sx = (x + 0.5) / 2 - 0.5, sy = (y + 0.5) / 2 - 0.5;
        CHECK(std::abs(up(y, x, 0) - (0.1 + 0.03 * sx + 0.02 * sy)) < 1e-6);
      }
  }
  SUBCASE("mean is preserved within 1e-3") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto img = random_image(16, 16, 2, seed, 0.25f, 0.75f);
      for (int r : {2, 3, 4}) {
        const auto up = bicubic_upsample(img, r);
        CHECK(std::abs(up.data().cast<double>().mean() - img.data().cast<double>().mean()) < 1e-3);
      }
    }
  }
  SUBCASE("ratio below 2 is rejected") { CHECK_THROWS_AS(bicubic_upsample(random_image(4, 4, 2, 1), 1), ArgumentError); }
}

TEST_CASE("normalize by bit depth") {
  RawRaster raw{1, 3, 1, {2047, 0, 1023}};
  const auto img = normalize(raw, 11);
  CHECK(img(0, 0, 0) == 1.0f);
  CHECK(img(0, 1, 0) == 0.0f);
  CHECK(img(0, 2, 0) == doctest::Approx(1023.0 / 2047.0).epsilon(1e-7));
  CHECK(std::abs(img(0, 2, 0) - 0.49976) < 1e-5);

  RawRaster bad{1, 1, 1, {2048}};
  CHECK_THROWS_AS(normalize(bad, 11), ValidationError);

  SUBCASE("monotone in the raw value") {
    RawRaster ramp{1, 4096, 1, {}};
    for (std::uint32_t v = 0; v < 4096; ++v) ramp.values.push_back(v);
    const auto n = normalize(ramp, 12);
    for (int x = 1; x < 4096; ++x) CHECK(n(0, x - 1, 0) <= n(0, x, 0));
  }
}
