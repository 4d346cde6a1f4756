#include "pansharp/metrics.hpp"

#include <cmath>

#include "pansharp/filters.hpp"
#include "pansharp/wald.hpp"

namespace pansharp {

namespace {

constexpr double kQStab = 1e-8;

void require_same_shape(const Image<float>& x, const Image<float>& y, const char* metric) {
  if (!x.same_shape(y))
    throw GeometryError(std::string(metric) + ": shapes " + x.shape_string() + " and " + y.shape_string() + " differ");
}

RowMatrix<double> band_d(const Image<float>& img, int b) { return img.band(b).cast<double>(); }

// Correlation of every valid (fully covered) window position with `k`.
RowMatrix<double> valid_filter(const RowMatrix<double>& src, const RowMatrix<double>& k) {
  const Eigen::Index kh = k.rows(), kw = k.cols();
  RowMatrix<double> out(src.rows() - kh + 1, src.cols() - kw + 1);
  for (Eigen::Index y = 0; y < out.rows(); ++y)
    for (Eigen::Index x = 0; x < out.cols(); ++x) out(y, x) = src.block(y, x, kh, kw).cwiseProduct(k).sum();
  return out;
}

double q_block(const Eigen::Ref<const RowMatrix<double>>& a, const Eigen::Ref<const RowMatrix<double>>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = a.mean(), mb = b.mean();
  const double va = (a.array() - ma).square().sum() / n;
  const double vb = (b.array() - mb).square().sum() / n;
  const double cab = ((a.array() - ma) * (b.array() - mb)).sum() / n;
  return (4 * cab * ma * mb + kQStab) / ((va + vb) * (ma * ma + mb * mb) + kQStab);
}

}  // namespace

double psnr(const Image<float>& x, const Image<float>& y) {
  require_same_shape(x, y, "psnr");
  const double mse = (x.data().cast<double>() - y.data().cast<double>()).squaredNorm() / static_cast<double>(x.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image<float>& x, const Image<float>& y) {
  require_same_shape(x, y, "ssim");
  constexpr int kWin = 11;
  if (x.height() < kWin || x.width() < kWin)
    throw GeometryError("ssim: image " + x.shape_string() + " is smaller than the 11x11 window");
  const RowMatrix<double> k = gaussian_kernel<double>(kWin, 1.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  for (int b = 0; b < x.bands(); ++b) {
    const RowMatrix<double> xb = band_d(x, b), yb = band_d(y, b);
    const RowMatrix<double> mx = valid_filter(xb, k), my = valid_filter(yb, k);
    const RowMatrix<double> sxx = valid_filter(xb.cwiseProduct(xb), k) - mx.cwiseProduct(mx);
    const RowMatrix<double> syy = valid_filter(yb.cwiseProduct(yb), k) - my.cwiseProduct(my);
    const RowMatrix<double> sxy = valid_filter(xb.cwiseProduct(yb), k) - mx.cwiseProduct(my);
    const Eigen::ArrayXXd num = (2 * mx.array() * my.array() + c1) * (2 * sxy.array() + c2);
    const Eigen::ArrayXXd den = (mx.array().square() + my.array().square() + c1) * (sxx.array() + syy.array() + c2);
    total += (num / den).mean();
  }
  return total / x.bands();
}

double sam(const Image<float>& x, const Image<float>& y) {
  require_same_shape(x, y, "sam");
  if (x.bands() < 2) throw ArgumentError("sam needs at least 2 bands");
  const Eigen::MatrixXd sx = x.spectra().cast<double>(), sy = y.spectra().cast<double>();
  double sum = 0;
  Eigen::Index used = 0;
  for (Eigen::Index p = 0; p < sx.rows(); ++p) {
    const double nx = sx.row(p).norm(), ny = sy.row(p).norm();
    if (nx == 0 || ny == 0) continue;
    const Eigen::RowVectorXd ux = sx.row(p) / nx, uy = sy.row(p) / ny;
    sum += 2 * std::atan2((ux - uy).norm(), (ux + uy).norm());
    ++used;
  }
  if (used == 0) throw UndefinedMetricError("sam: every pixel has a zero spectral vector");
  return sum / static_cast<double>(used);
}

double ergas(const Image<float>& x, const Image<float>& y, double ratio) {
  require_same_shape(x, y, "ergas");
  if (!(ratio > 0)) throw ArgumentError("ergas: ratio must be positive");
  double acc = 0;
  for (int b = 0; b < x.bands(); ++b) {
    const double mu = y.band(b).cast<double>().mean();
    if (std::abs(mu) < 1e-12) throw UndefinedMetricError("ergas: reference band " + std::to_string(b) + " has zero mean");
    const double mse = (x.band(b).cast<double>() - y.band(b).cast<double>()).squaredNorm() / static_cast<double>(x.pixels());
    acc += mse / (mu * mu);
  }
  return 100.0 / ratio * std::sqrt(acc / x.bands());
}

double q_index(const Eigen::Ref<const RowMatrix<double>>& a, const Eigen::Ref<const RowMatrix<double>>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw GeometryError("q_index: band sizes differ");
  const Eigen::Index block = std::min<Eigen::Index>({32, a.rows(), a.cols()});
  double sum = 0;
  int count = 0;
  for (Eigen::Index y = 0; y + block <= a.rows(); y += block)
    for (Eigen::Index x = 0; x + block <= a.cols(); x += block) {
      sum += q_block(a.block(y, x, block, block), b.block(y, x, block, block));
      ++count;
    }
  return sum / count;
}

double d_lambda(const Image<float>& fused, const Image<float>& lrms) {
  if (fused.bands() != lrms.bands()) throw GeometryError("d_lambda: band counts differ");
  if (fused.bands() < 2) throw ArgumentError("d_lambda needs at least 2 bands");
  const int c = fused.bands();
  double sum = 0;
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) {
      if (i == j) continue;
      sum += std::abs(q_index(band_d(fused, i), band_d(fused, j)) - q_index(band_d(lrms, i), band_d(lrms, j)));
    }
  return sum / (c * (c - 1));
}

double d_s(const Image<float>& fused, const Image<float>& lrms, const Image<float>& pan, int ratio) {
  if (pan.bands() != 1) throw GeometryError("d_s: PAN must have one band");
  if (!fused.same_grid(pan)) throw GeometryError("d_s: fused " + fused.shape_string() + " and PAN differ in size");
  if (fused.bands() != lrms.bands()) throw GeometryError("d_s: band counts differ");
  if (lrms.height() * ratio != pan.height() || lrms.width() * ratio != pan.width())
    throw GeometryError("d_s: LR-MS " + lrms.shape_string() + " is not PAN / " + std::to_string(ratio));
  const Image<float> pan_lr = blur_decimate(pan, DegradationConfig::for_ratio(ratio));
  const RowMatrix<double> p = band_d(pan, 0), pl = band_d(pan_lr, 0);
  double sum = 0;
  for (int b = 0; b < fused.bands(); ++b) sum += std::abs(q_index(band_d(fused, b), p) - q_index(band_d(lrms, b), pl));
  return sum / fused.bands();
}

double qnr(double dl, double ds, double alpha, double beta) {
  return std::pow(1.0 - dl, alpha) * std::pow(1.0 - ds, beta);
}

MetricReport MetricReport::reduced(std::string id, const Image<float>& fused, const Image<float>& gt, int ratio) {
  MetricReport r;
  r.id = std::move(id);
  r.psnr = pansharp::psnr(fused, gt);
  r.ssim = pansharp::ssim(fused, gt);
  r.sam = pansharp::sam(fused, gt);
  r.ergas = pansharp::ergas(fused, gt, ratio);
  return r;
}

MetricReport MetricReport::full(std::string id, const Image<float>& fused, const Image<float>& lrms,
                                const Image<float>& pan, int ratio) {
  MetricReport r;
  r.id = std::move(id);
  r.d_lambda = pansharp::d_lambda(fused, lrms);
  r.d_s = pansharp::d_s(fused, lrms, pan, ratio);
  r.qnr = pansharp::qnr(*r.d_lambda, *r.d_s);
  return r;
}

const std::vector<std::string>& MetricReport::columns() {
  static const std::vector<std::string> cols{"psnr", "ssim", "sam", "ergas", "d_lambda", "d_s", "qnr"};
  return cols;
}

std::optional<double> MetricReport::get(const std::string& column) const {
  if (column == "psnr") return psnr;
  if (column == "ssim") return ssim;
  if (column == "sam") return sam;
  if (column == "ergas") return ergas;
  if (column == "d_lambda") return d_lambda;
  if (column == "d_s") return d_s;
  if (column == "qnr") return qnr;
  throw ArgumentError("unknown metric column '" + column + "'");
}

MetricReport MetricReport::aggregate(const std::vector<MetricReport>& rows) {
  MetricReport out;
  out.id = "mean";
  auto mean_of = [&](std::optional<double> MetricReport::*field) -> std::optional<double> {
    double s = 0;
    int n = 0;
    for (const auto& r : rows)
      if (r.*field) s += *(r.*field), ++n;
    if (n == 0) return std::nullopt;
    return s / n;
  };
  out.psnr = mean_of(&MetricReport::psnr);
  out.ssim = mean_of(&MetricReport::ssim);
  out.sam = mean_of(&MetricReport::sam);
  out.ergas = mean_of(&MetricReport::ergas);
  out.d_lambda = mean_of(&MetricReport::d_lambda);
  out.d_s = mean_of(&MetricReport::d_s);
  if (out.d_lambda && out.d_s) out.qnr = pansharp::qnr(*out.d_lambda, *out.d_s);
  return out;
}

}  // namespace pansharp
