#include <Eigen/SVD>

#include "pansharp/baselines.hpp"
#include "pansharp/wald.hpp"
#include "testing.hpp"

using namespace pansharp;
using testing::random_image;

namespace {

double max_abs_diff(const Image<float>& a, const Image<float>& b) {
  REQUIRE(a.same_shape(b));
  return (a.data().cast<double>() - b.data().cast<double>()).cwiseAbs().maxCoeff();
}

double clip(double v) { return std::min(1.0, std::max(0.0, v)); }

double pixel_intensity(const Image<float>& ms, int y, int x) {
  double s = 0;
  for (int b = 0; b < ms.bands(); ++b) s += ms(y, x, b);
  return s / ms.bands();
}

Image<float> intensity_as_pan(const Image<float>& ms) {
  Image<float> pan(ms.height(), ms.width(), 1);
  for (int y = 0; y < ms.height(); ++y)
    for (int x = 0; x < ms.width(); ++x) pan(y, x, 0) = static_cast<float>(pixel_intensity(ms, y, x));
  return pan;
}

// Interior-weighted MS so fused values rarely clip.
Image<float> mid_image(int h, int w, int c, std::uint64_t seed) { return random_image(h, w, c, seed, 0.2f, 0.8f); }

}  // namespace

TEST_CASE("fusion input rejects mismatched grids") {
  CHECK_THROWS_AS(FusionInput(random_image(8, 8, 3, 1), random_image(8, 9, 1, 2)), GeometryError);
  CHECK_THROWS_AS(FusionInput(random_image(8, 8, 3, 1), random_image(8, 8, 2, 2)), GeometryError);
  CHECK_THROWS_AS(FusionInput::from_lrms(random_image(4, 4, 3, 1), random_image(12, 16, 1, 2), 4), GeometryError);
  const auto in = FusionInput::from_lrms(random_image(4, 4, 3, 1), random_image(16, 16, 1, 2), 4);
  CHECK(in.ms.shape_string() == "16x16x3");
}

TEST_CASE("ihs matches a per-pixel oracle") {
  const auto ms = mid_image(4, 4, 3, 3);
  const auto pan = random_image(4, 4, 1, 4);
  const auto out = ihs_fuse(FusionInput(ms, pan));
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double d = pan(y, x, 0) - pixel_intensity(ms, y, x);
      for (int b = 0; b < 3; ++b) CHECK(std::abs(out(y, x, b) - clip(ms(y, x, b) + d)) < 1e-6);
    }
  CHECK_THROWS_AS(ihs_fuse(FusionInput(random_image(4, 4, 2, 1), pan)), ArgumentError);
}

TEST_CASE("ihs identity and constant cases") {
  const auto ms = random_image(16, 16, 4, 5);
  CHECK(max_abs_diff(ihs_fuse(FusionInput(ms, intensity_as_pan(ms))), ms) < 1e-6);
  const Image<float> c(8, 8, 3, 0.4f);
  CHECK(max_abs_diff(ihs_fuse(FusionInput(c, Image<float>(8, 8, 1, 0.4f))), c) < 1e-6);
}

TEST_CASE("brovey matches a per-pixel oracle and preserves band ratios") {
  const auto ms = mid_image(4, 4, 3, 6);
  const auto pan = random_image(4, 4, 1, 7, 0.f, 0.5f);
  const auto out = brovey_fuse(FusionInput(ms, pan));
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const double g = pan(y, x, 0) / std::max(pixel_intensity(ms, y, x), 1e-6);
      for (int b = 0; b < 3; ++b) CHECK(std::abs(out(y, x, b) - clip(ms(y, x, b) * g)) < 1e-6);
      for (int b = 1; b < 3; ++b)
        CHECK(std::abs(out(y, x, b) / out(y, x, 0) - ms(y, x, b) / ms(y, x, 0)) < 1e-5);
    }
  CHECK(max_abs_diff(brovey_fuse(FusionInput(ms, intensity_as_pan(ms))), ms) < 1e-6);
}

TEST_CASE("gs matches a dense covariance oracle") {
  const int h = 8, w = 8, c = 4, n = h * w;
  const auto ms = mid_image(h, w, c, 8);
  const auto pan = random_image(h, w, 1, 9, 0.3f, 0.7f);
  // Columns 0..c-1 are bands, column c the band-mean intensity.
  Eigen::MatrixXd x(n, c + 1);
  Eigen::VectorXd p(n);
  for (int y = 0, i = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx, ++i) {
      for (int b = 0; b < c; ++b) x(i, b) = ms(y, xx, b);
      x(i, c) = pixel_intensity(ms, y, xx);
      p(i) = pan(y, xx, 0);
    }
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / n;
  const double mi = x.col(c).mean(), si = std::sqrt(cov(c, c));
  const double mp = p.mean(), sp = std::sqrt((p.array() - mp).square().mean());
  const auto out = gs_fuse(FusionInput(ms, pan));
  for (int y = 0, i = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx, ++i) {
      const double matched = (p(i) - mp) * si / sp + mi;
      for (int b = 0; b < c; ++b) {
        const double expect = clip(x(i, b) + cov(b, c) / cov(c, c) * (matched - x(i, c)));
        CHECK(std::abs(out(y, xx, b) - expect) < 1e-5);
      }
    }
}

TEST_CASE("gs identity, constant fallback and band count") {
  const auto ms = random_image(16, 16, 4, 10);
  CHECK(max_abs_diff(gs_fuse(FusionInput(ms, intensity_as_pan(ms))), ms) < 1e-6);
  const Image<float> c(8, 8, 2, 0.7f);
  FusionWarnings warns;
  CHECK(max_abs_diff(gs_fuse(FusionInput(c, Image<float>(8, 8, 1, 0.7f)), &warns), c) < 1e-6);
  CHECK(warns.size() == 1);
  CHECK_THROWS_AS(gs_fuse(FusionInput(random_image(8, 8, 1, 1), random_image(8, 8, 1, 2))), ArgumentError);
}

TEST_CASE("sfim matches a scalar-loop box filter oracle") {
  const int h = 8, w = 8, r = 2;
  const auto ms = mid_image(h, w, 3, 11);
  const auto pan = random_image(h, w, 1, 12, 0.2f, 0.9f);
  const auto out = sfim_fuse(FusionInput(ms, pan), r);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      int cnt = 0;
      for (int yy = y - r; yy <= y + r; ++yy)
        for (int xx = x - r; xx <= x + r; ++xx)
          if (yy >= 0 && yy < h && xx >= 0 && xx < w) s += pan(yy, xx, 0), ++cnt;
      const double g = pan(y, x, 0) / std::max(s / cnt, 1e-6);
      for (int b = 0; b < 3; ++b) CHECK(std::abs(out(y, x, b) - clip(ms(y, x, b) * g)) < 1e-6);
    }
}

TEST_CASE("sfim with a flat PAN returns the MS") {
  const auto ms = random_image(16, 16, 4, 13);
  CHECK(max_abs_diff(sfim_fuse(FusionInput(ms, Image<float>(16, 16, 1, 0.55f)), 4), ms) < 1e-6);
  CHECK_THROWS_AS(sfim_fuse(FusionInput(ms, Image<float>(16, 16, 1, 0.5f)), 0), ArgumentError);
}

TEST_CASE("guided filter of a constant input is that constant") {
  const RowMatrix<double> g = random_image(12, 12, 1, 14).band(0).cast<double>();
  const RowMatrix<double> p = RowMatrix<double>::Constant(12, 12, 0.25);
  CHECK((guided_filter(g, p, 3, 1e-3).array() - 0.25).abs().maxCoeff() < 1e-12);
}

TEST_CASE("pca substitution with the unchanged first component is the identity") {
  const auto ms = random_image(16, 16, 4, 15);
  const auto pca = BandPCA::fit(ms);
  CHECK(max_abs_diff(pca_substitute(ms, pca, pca.scores(ms).col(0)), ms) < 1e-6);
  CHECK(pca.variances(0) >= pca.variances(3));
}

TEST_CASE("gfpca with PAN equal to the first component stays close to the MS") {
  const auto [scene_ms, scene_pan] = synth_toy_scene(21, 64, 4);
  const Image<float>& ms = scene_ms;
  const int n = static_cast<int>(ms.pixels());
  // Independent PC1 via SVD of the centered spectra.
  const Eigen::MatrixXd s = ms.spectra().cast<double>();
  const Eigen::MatrixXd centered = s.rowwise() - s.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  Eigen::VectorXd axis = svd.matrixV().col(0);
  if (axis.sum() < 0) axis = -axis;
  const Eigen::VectorXd pc1 = centered * axis;
  Image<float> pan(ms.height(), ms.width(), 1);
  const double lo = pc1.minCoeff(), hi = pc1.maxCoeff();
  for (int i = 0; i < n; ++i) pan.data()[i] = static_cast<float>((pc1(i) - lo) / (hi - lo));

  const auto out = gfpca_fuse(FusionInput(ms, pan));
  const double mad = (out.data().cast<double>() - ms.data().cast<double>()).cwiseAbs().mean();
  CHECK(mad < 1e-3);
  CHECK(out.shape_string() == ms.shape_string());
}

TEST_CASE("gfpca constant image falls back and is unchanged") {
  const Image<float> c(16, 16, 3, 0.35f);
  FusionWarnings warns;
  CHECK(max_abs_diff(gfpca_fuse(FusionInput(c, Image<float>(16, 16, 1, 0.35f)), {}, &warns), c) < 1e-6);
  CHECK(warns.size() == 1);
}

TEST_CASE("all baselines are deterministic, in range and shape-preserving") {
  for (int seed = 0; seed < 5; ++seed) {
    const auto ms = random_image(24, 24, 4, 100 + seed);
    const auto pan = random_image(24, 24, 1, 200 + seed);
    const FusionInput in(ms, pan);
    for (auto m : {ClassicalMethod::ihs, ClassicalMethod::brovey, ClassicalMethod::gs, ClassicalMethod::sfim,
                   ClassicalMethod::gfpca}) {
      const auto a = classical_fuse(m, in, 4);
      const auto b = classical_fuse(m, in, 4);
      CHECK(a == b);
      CHECK(a.shape_string() == "24x24x4");
      CHECK(a.within_unit_range());
    }
  }
  CHECK_THROWS_AS(parse_classical_method("pnn"), ArgumentError);
}
