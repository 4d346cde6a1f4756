#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pansharp/image.hpp"

namespace pansharp {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) at peak 1.0, capped when MSE < 1e-10.
double psnr(const Image<float>& x, const Image<float>& y);

/// Mean local SSIM under an 11x11, sigma 1.5 Gaussian window over fully
/// covered positions, computed per band and averaged.
double ssim(const Image<float>& x, const Image<float>& y);

/// Mean spectral angle in radians; pixels where either vector is zero are skipped.
double sam(const Image<float>& x, const Image<float>& y);

/// 100/r * sqrt(mean_b RMSE_b^2 / mean(y_b)^2), `y` is the reference.
double ergas(const Image<float>& x, const Image<float>& y, double ratio);

/// Universal image quality index of two single bands, averaged over
/// non-overlapping blocks of side min(32, h, w).
double q_index(const Eigen::Ref<const RowMatrix<double>>& a, const Eigen::Ref<const RowMatrix<double>>& b);

/// Spectral distortion: mean |Q(f_b, f_c) - Q(l_b, l_c)| over ordered band pairs b != c.
double d_lambda(const Image<float>& fused, const Image<float>& lrms);

/// Spatial distortion against the PAN and its blur-decimated version.
double d_s(const Image<float>& fused, const Image<float>& lrms, const Image<float>& pan, int ratio);

double qnr(double d_lambda, double d_s, double alpha = 1.0, double beta = 1.0);

/// One evaluated image; reduced mode fills psnr..ergas, full mode d_lambda..qnr.
struct MetricReport {
  std::string id;
  std::optional<double> psnr, ssim, sam, ergas, d_lambda, d_s, qnr;

  static MetricReport reduced(std::string id, const Image<float>& fused, const Image<float>& gt, int ratio);
  static MetricReport full(std::string id, const Image<float>& fused, const Image<float>& lrms,
                           const Image<float>& pan, int ratio);

  /// Per-field mean over the rows that carry the field; id is "mean". The
  /// aggregate qnr is formed from the aggregate d_lambda and d_s.
  static MetricReport aggregate(const std::vector<MetricReport>& rows);

  static const std::vector<std::string>& columns();
  std::optional<double> get(const std::string& column) const;
};

}  // namespace pansharp
