#pragma once

#include <Eigen/Core>

#include <array>
#include <string>

#include "pansharp/errors.hpp"
#include "pansharp/image.hpp"

namespace pansharp {

/// NCHW extent. Token sequences use (N, 1, T, D).
struct Shape {
  int n = 1, c = 1, h = 1, w = 1;

  Eigen::Index size() const { return static_cast<Eigen::Index>(n) * c * h * w; }
  Eigen::Index plane() const { return static_cast<Eigen::Index>(h) * w; }
  int operator[](int axis) const { return std::array<int, 4>{n, c, h, w}[static_cast<std::size_t>(axis)]; }
  int& operator[](int axis) {
    switch (axis) {
      case 0: return n;
      case 1: return c;
      case 2: return h;
      default: return w;
    }
  }
  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense contiguous NCHW tensor.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;
  explicit Tensor(Shape s) : shape_(s), data_(Vector::Zero(s.size())) {
    if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0) throw GeometryError("invalid tensor shape " + s.str());
  }
  Tensor(Shape s, Scalar fill) : Tensor(s) { data_.setConstant(fill); }
  Tensor(Shape s, Vector data) : shape_(s), data_(std::move(data)) {
    if (data_.size() != s.size()) throw IntegrityError("tensor data does not match shape " + s.str());
  }

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }
  Scalar item() const { return data_[0]; }

  Eigen::Index offset(int n, int c, int y, int x) const {
    return ((static_cast<Eigen::Index>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  Scalar& operator()(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  Scalar operator()(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

  /// h x w plane of (n, c).
  MatrixMap plane(int n, int c) { return {ptr() + offset(n, c, 0, 0), shape_.h, shape_.w}; }
  ConstMatrixMap plane(int n, int c) const { return {ptr() + offset(n, c, 0, 0), shape_.h, shape_.w}; }

  /// c x (h*w) matrix of sample n.
  MatrixMap sample(int n) { return {ptr() + offset(n, 0, 0, 0), shape_.c, shape_.plane()}; }
  ConstMatrixMap sample(int n) const { return {ptr() + offset(n, 0, 0, 0), shape_.c, shape_.plane()}; }

  /// h x w matrix at (n, c) for token-style tensors, identical to plane().
  MatrixMap matrix(int n, int c = 0) { return plane(n, c); }
  ConstMatrixMap matrix(int n, int c = 0) const { return plane(n, c); }

  Tensor& set_zero() {
    data_.setZero();
    return *this;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_{0, 0, 0, 0};
  Vector data_;
};

/// Image (H, W, C) and a single-sample tensor (1, C, H, W) share memory order.
template <typename Scalar>
Tensor<Scalar> to_tensor(const Image<Scalar>& img) {
  return Tensor<Scalar>(Shape{1, img.bands(), img.height(), img.width()}, img.data());
}

template <typename Scalar>
Image<Scalar> to_image(const Tensor<Scalar>& t, int n = 0) {
  typename Image<Scalar>::Vector v =
      Eigen::Map<const typename Image<Scalar>::Vector>(t.ptr() + t.offset(n, 0, 0, 0), t.c() * t.shape().plane());
  return Image<Scalar>::from_vector(t.h(), t.w(), t.c(), std::move(v));
}

/// Stacks equally-shaped single-sample images into an (N, C, H, W) batch.
template <typename Scalar, typename ImageRange>
Tensor<Scalar> stack_images(const ImageRange& images) {
  const auto& first = *std::begin(images);
  const int count = static_cast<int>(std::size(images));
  Tensor<Scalar> out(Shape{count, first.bands(), first.height(), first.width()});
  int n = 0;
  for (const auto& img : images) {
    if (!img.same_shape(first)) throw GeometryError("batch mixes image shapes");
    out.data().segment(out.offset(n, 0, 0, 0), img.size()) = img.data().template cast<Scalar>();
    ++n;
  }
  return out;
}

}  // namespace pansharp
