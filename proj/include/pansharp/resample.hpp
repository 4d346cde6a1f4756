#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "pansharp/filters.hpp"
#include "pansharp/image.hpp"

namespace pansharp {

/// Cubic convolution kernel; a = -0.5 is Catmull-Rom.
inline double cubic_weight(double t, double a = -0.5) {
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

namespace detail {

struct CubicTaps {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

// Output sample i sits at source coordinate (i + 0.5) / r - 0.5.
inline std::vector<CubicTaps> cubic_taps(int src_len, int ratio) {
  std::vector<CubicTaps> taps(static_cast<std::size_t>(src_len) * ratio);
  for (std::size_t i = 0; i < taps.size(); ++i) {
    const double s = (static_cast<double>(i) + 0.5) / ratio - 0.5;
    const int base = static_cast<int>(std::floor(s));
    for (int k = 0; k < 4; ++k) {
      const int j = base - 1 + k;
      taps[i].index[k] = reflect_index(j, src_len);
      taps[i].weight[k] = cubic_weight(s - j);
    }
  }
  return taps;
}

}  // namespace detail

/// Separable Catmull-Rom upsampling by an integer ratio with reflect-101
/// borders. The result is clipped to [0,1].
template <typename Scalar>
Image<Scalar> bicubic_upsample(const Image<Scalar>& img, int ratio) {
  if (ratio < 2) throw ArgumentError("upsampling ratio must be >= 2, got " + std::to_string(ratio));
  const int h = img.height(), w = img.width();
  const auto ty = detail::cubic_taps(h, ratio);
  const auto tx = detail::cubic_taps(w, ratio);
  Image<Scalar> out(h * ratio, w * ratio, img.bands());
  Eigen::MatrixXd rows(h, w * ratio);
  for (int b = 0; b < img.bands(); ++b) {
    const auto src = img.band(b);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w * ratio; ++x) {
        const auto& t = tx[static_cast<std::size_t>(x)];
        double acc = 0;
        for (int k = 0; k < 4; ++k) acc += t.weight[k] * static_cast<double>(src(y, t.index[k]));
        rows(y, x) = acc;
      }
    auto dst = out.band(b);
    for (int y = 0; y < h * ratio; ++y) {
      const auto& t = ty[static_cast<std::size_t>(y)];
      for (int x = 0; x < w * ratio; ++x) {
        double acc = 0;
        for (int k = 0; k < 4; ++k) acc += t.weight[k] * rows(t.index[k], x);
        dst(y, x) = static_cast<Scalar>(acc);
      }
    }
  }
  return out.clip01();
}

}  // namespace pansharp
