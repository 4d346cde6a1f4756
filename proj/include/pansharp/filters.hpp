#pragma once

#include <algorithm>
#include <cmath>

#include "pansharp/image.hpp"

namespace pansharp {

/// Mirror index into [0, n) without repeating the edge sample (a.k.a.
/// reflect-101): -1 -> 1, n -> n-2.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = i % period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Normalized isotropic Gaussian, size x size.
template <typename Scalar>
RowMatrix<Scalar> gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw ArgumentError("Gaussian kernel size must be odd and positive");
  if (!(sigma > 0)) throw ArgumentError("Gaussian sigma must be positive");
  const int half = size / 2;
  Eigen::MatrixXd k(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dy = y - half, dx = x - half;
      k(y, x) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  k /= k.sum();
  return k.cast<Scalar>();
}

/// 2-D correlation of every band with `kernel`, reflect-101 borders.
template <typename Scalar>
Image<Scalar> filter_reflect(const Image<Scalar>& img, const RowMatrix<Scalar>& kernel) {
  const int kh = static_cast<int>(kernel.rows()), kw = static_cast<int>(kernel.cols());
  const int oy = kh / 2, ox = kw / 2;
  Image<Scalar> out(img.height(), img.width(), img.bands());
  for (int b = 0; b < img.bands(); ++b) {
    const auto src = img.band(b);
    auto dst = out.band(b);
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) {
        Scalar acc = 0;
        for (int i = 0; i < kh; ++i) {
          const int sy = reflect_index(y + i - oy, img.height());
          for (int j = 0; j < kw; ++j) acc += kernel(i, j) * src(sy, reflect_index(x + j - ox, img.width()));
        }
        dst(y, x) = acc;
      }
  }
  return out;
}

/// Keeps the top-left sample of each ratio x ratio block.
template <typename Scalar>
Image<Scalar> decimate(const Image<Scalar>& img, int ratio) {
  if (ratio < 1) throw ArgumentError("decimation ratio must be >= 1");
  if (img.height() % ratio != 0 || img.width() % ratio != 0)
    throw GeometryError("image " + img.shape_string() + " is not divisible by ratio " + std::to_string(ratio));
  Image<Scalar> out(img.height() / ratio, img.width() / ratio, img.bands());
  for (int b = 0; b < img.bands(); ++b)
    out.band(b) = Eigen::Map<const RowMatrix<Scalar>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>(
        img.band(b).data(), out.height(), out.width(),
        Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(static_cast<Eigen::Index>(ratio) * img.width(), ratio));
  return out;
}

/// Mean over the (2*radius+1)^2 window clipped to the image, per band.
/// Windows at the border average only the pixels they cover.
template <typename Scalar>
RowMatrix<Scalar> box_mean(const Eigen::Ref<const RowMatrix<Scalar>>& src, int radius) {
  const Eigen::Index h = src.rows(), w = src.cols();
  // Summed-area table with a zero first row/column.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sat =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(h + 1, w + 1);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x)
      sat(y + 1, x + 1) = static_cast<double>(src(y, x)) + sat(y, x + 1) + sat(y + 1, x) - sat(y, x);
  RowMatrix<Scalar> out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    const Eigen::Index y0 = std::max<Eigen::Index>(0, y - radius), y1 = std::min<Eigen::Index>(h, y + radius + 1);
    for (Eigen::Index x = 0; x < w; ++x) {
      const Eigen::Index x0 = std::max<Eigen::Index>(0, x - radius), x1 = std::min<Eigen::Index>(w, x + radius + 1);
      const double s = sat(y1, x1) - sat(y0, x1) - sat(y1, x0) + sat(y0, x0);
      out(y, x) = static_cast<Scalar>(s / static_cast<double>((y1 - y0) * (x1 - x0)));
    }
  }
  return out;
}

/// Pearson correlation of two equally-shaped bands.
template <typename Scalar>
double correlation(const Eigen::Ref<const RowMatrix<Scalar>>& a, const Eigen::Ref<const RowMatrix<Scalar>>& b) {
  const Eigen::ArrayXd x = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(a.data(), a.size())
                               .template cast<double>()
                               .array();
  const Eigen::ArrayXd y = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(b.data(), b.size())
                               .template cast<double>()
                               .array();
  const Eigen::ArrayXd dx = x - x.mean(), dy = y - y.mean();
  const double denom = std::sqrt((dx * dx).sum() * (dy * dy).sum());
  return denom > 0 ? (dx * dy).sum() / denom : 0.0;
}

}  // namespace pansharp
