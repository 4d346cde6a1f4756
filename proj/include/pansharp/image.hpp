#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "pansharp/errors.hpp"

namespace pansharp {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Band-planar raster of shape height x width x bands.
///
/// Storage is one contiguous vector laid out band-major, then row-major inside
/// each band, which is exactly the on-disk payload order. `band(b)` exposes a
/// band as a row-major Eigen map so callers can use expression templates.
template <typename Scalar>
class Image {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using BandMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstBandMap = Eigen::Map<const RowMatrix<Scalar>>;

  Image() = default;
  Image(int height, int width, int bands) : h_(height), w_(width), c_(bands) {
    if (height <= 0 || width <= 0 || bands <= 0)
      throw GeometryError("image dimensions must be positive, got " + shape_string(height, width, bands));
    data_ = Vector::Zero(static_cast<Eigen::Index>(height) * width * bands);
  }
  Image(int height, int width, int bands, Scalar fill) : Image(height, width, bands) { data_.setConstant(fill); }

  static Image from_vector(int height, int width, int bands, Vector data) {
    Image img(height, width, bands);
    if (data.size() != img.data_.size())
      throw IntegrityError("payload holds " + std::to_string(data.size()) + " elements, shape needs " +
                           std::to_string(img.data_.size()));
    img.data_ = std::move(data);
    return img;
  }

  int height() const { return h_; }
  int width() const { return w_; }
  int bands() const { return c_; }
  Eigen::Index pixels() const { return static_cast<Eigen::Index>(h_) * w_; }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }
  bool same_shape(const Image& o) const { return h_ == o.h_ && w_ == o.w_ && c_ == o.c_; }
  bool same_grid(const Image& o) const { return h_ == o.h_ && w_ == o.w_; }

  Scalar& operator()(int y, int x, int b) { return data_[index(y, x, b)]; }
  Scalar operator()(int y, int x, int b) const { return data_[index(y, x, b)]; }

  BandMap band(int b) { return BandMap(data_.data() + b * pixels(), h_, w_); }
  ConstBandMap band(int b) const { return ConstBandMap(data_.data() + b * pixels(), h_, w_); }

  /// Pixels x bands view; row p is the spectral vector of pixel p.
  Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> spectra() {
    return {data_.data(), pixels(), c_};
  }
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> spectra() const {
    return {data_.data(), pixels(), c_};
  }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }

  template <typename Other>
  Image<Other> cast() const {
    return Image<Other>::from_vector(h_, w_, c_, data_.template cast<Other>());
  }

  Image& clip01() {
    data_ = data_.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
    return *this;
  }
  Image clipped01() const {
    Image out = *this;
    return out.clip01();
  }

  bool all_finite() const { return data_.allFinite(); }
  bool within_unit_range() const {
    return data_.size() == 0 || (data_.minCoeff() >= Scalar(0) && data_.maxCoeff() <= Scalar(1));
  }

  Image select_band(int b) const {
    Image out(h_, w_, 1);
    out.band(0) = band(b);
    return out;
  }

  std::string shape_string() const { return shape_string(h_, w_, c_); }
  static std::string shape_string(int h, int w, int c) {
    return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
  }

  friend bool operator==(const Image& a, const Image& b) { return a.same_shape(b) && a.data_ == b.data_; }

 private:
  Eigen::Index index(int y, int x, int b) const {
    return (static_cast<Eigen::Index>(b) * h_ + y) * w_ + x;
  }

  int h_ = 0, w_ = 0, c_ = 0;
  Vector data_;
};

namespace detail {
template <typename Scalar>
void require_valid_values(const Image<Scalar>& img, const char* what) {
  if (!img.all_finite()) throw ValidationError(std::string(what) + " contains non-finite values");
  if (!img.within_unit_range()) throw ValidationError(std::string(what) + " has values outside [0,1]");
}
}  // namespace detail

/// Multi-spectral raster: at least two bands, finite values in [0,1].
template <typename Scalar>
class MSImageT : public Image<Scalar> {
 public:
  MSImageT() = default;
  explicit MSImageT(Image<Scalar> img) : Image<Scalar>(std::move(img)) { validate(*this); }

  static void validate(const Image<Scalar>& img) {
    if (img.bands() < 2)
      throw ValidationError("multi-spectral image needs at least 2 bands, got " + std::to_string(img.bands()));
    detail::require_valid_values(img, "multi-spectral image");
  }
};

/// Single-band panchromatic raster, finite values in [0,1].
template <typename Scalar>
class PanImageT : public Image<Scalar> {
 public:
  PanImageT() = default;
  explicit PanImageT(Image<Scalar> img) : Image<Scalar>(std::move(img)) { validate(*this); }

  static void validate(const Image<Scalar>& img) {
    if (img.bands() != 1)
      throw ValidationError("panchromatic image must have exactly 1 band, got " + std::to_string(img.bands()));
    detail::require_valid_values(img, "panchromatic image");
  }
};

using ImageF = Image<float>;
using ImageD = Image<double>;
using MSImage = MSImageT<float>;
using PanImage = PanImageT<float>;

}  // namespace pansharp
