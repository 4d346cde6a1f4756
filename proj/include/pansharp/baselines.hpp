#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>
#include <vector>

#include "pansharp/filters.hpp"
#include "pansharp/image.hpp"
#include "pansharp/resample.hpp"

namespace pansharp {

/// Floor for ratio denominators; only active where the denominator is below it.
inline constexpr double kFusionEps = 1e-6;

/// Bicubic-upsampled MS plus the PAN on the same grid.
template <typename Scalar>
struct FusionInputT {
  Image<Scalar> ms;
  Image<Scalar> pan;

  FusionInputT(Image<Scalar> upsampled_ms, Image<Scalar> pan_img) : ms(std::move(upsampled_ms)), pan(std::move(pan_img)) {
    if (pan.bands() != 1) throw GeometryError("PAN must have one band, got " + std::to_string(pan.bands()));
    if (!ms.same_grid(pan))
      throw GeometryError("upsampled MS " + ms.shape_string() + " and PAN " + pan.shape_string() + " differ in size");
  }

  static FusionInputT from_lrms(const Image<Scalar>& lrms, const Image<Scalar>& pan_img, int ratio) {
    if (pan_img.height() != lrms.height() * ratio || pan_img.width() != lrms.width() * ratio)
      throw GeometryError("PAN " + pan_img.shape_string() + " is not " + std::to_string(ratio) + "x LR-MS " +
                          lrms.shape_string());
    return FusionInputT(bicubic_upsample(lrms, ratio), pan_img);
  }

  int bands() const { return ms.bands(); }
};

using FusionInput = FusionInputT<float>;

/// Collects fallback notices; pass nullptr to drop them.
using FusionWarnings = std::vector<std::string>;

namespace detail {

template <typename Scalar>
Eigen::ArrayXd band_mean_intensity(const Image<Scalar>& ms) {
  return ms.spectra().template cast<double>().rowwise().mean().array();
}

template <typename Scalar>
Image<Scalar> from_spectra(const Image<Scalar>& like, const Eigen::MatrixXd& spectra) {
  Image<Scalar> out(like.height(), like.width(), like.bands());
  out.spectra() = spectra.cast<Scalar>();
  return out.clip01();
}

template <typename Scalar>
Eigen::ArrayXd pan_vector(const Image<Scalar>& pan) {
  return pan.data().template cast<double>().array();
}

// Shift and scale `src` so its mean and standard deviation match `ref`.
inline Eigen::ArrayXd match_moments(const Eigen::ArrayXd& src, const Eigen::ArrayXd& ref) {
  const double ms = src.mean(), mr = ref.mean();
  const double ss = std::sqrt((src - ms).square().mean()), sr = std::sqrt((ref - mr).square().mean());
  if (ss < kFusionEps) return src - ms + mr;
  return (src - ms) * (sr / ss) + mr;
}

template <typename Scalar>
Image<Scalar> ihs_any_bands(const FusionInputT<Scalar>& in) {
  Eigen::MatrixXd s = in.ms.spectra().template cast<double>();
  const Eigen::ArrayXd detail = pan_vector(in.pan) - band_mean_intensity(in.ms);
  s.colwise() += detail.matrix();
  return from_spectra(in.ms, s);
}

inline void warn(FusionWarnings* sink, std::string msg) {
  if (sink) sink->push_back(std::move(msg));
}

}  // namespace detail

/// Generalized IHS: every band receives PAN minus the band-mean intensity.
template <typename Scalar>
Image<Scalar> ihs_fuse(const FusionInputT<Scalar>& in) {
  if (in.bands() < 3) throw ArgumentError("IHS needs at least 3 bands, got " + std::to_string(in.bands()));
  return detail::ihs_any_bands(in);
}

template <typename Scalar>
Image<Scalar> brovey_fuse(const FusionInputT<Scalar>& in) {
  Eigen::MatrixXd s = in.ms.spectra().template cast<double>();
  const Eigen::ArrayXd gain = detail::pan_vector(in.pan) / detail::band_mean_intensity(in.ms).max(kFusionEps);
  s.array().colwise() *= gain;
  return detail::from_spectra(in.ms, s);
}

/// Gram-Schmidt substitution with the band mean as simulated intensity.
///
/// PAN is moment-matched to the intensity, and each band receives the detail
/// scaled by cov(MS_b, I) / var(I). A flat intensity falls back to IHS.
template <typename Scalar>
Image<Scalar> gs_fuse(const FusionInputT<Scalar>& in, FusionWarnings* warnings = nullptr) {
  if (in.bands() < 2) throw ArgumentError("GS needs at least 2 bands");
  Eigen::MatrixXd s = in.ms.spectra().template cast<double>();
  const Eigen::ArrayXd intensity = detail::band_mean_intensity(in.ms);
  const Eigen::ArrayXd ic = intensity - intensity.mean();
  const double var_i = ic.square().mean();
  if (var_i < kFusionEps) {
    detail::warn(warnings, "gs: intensity variance below epsilon, using IHS");
    return detail::ihs_any_bands(in);
  }
  const Eigen::ArrayXd pan = detail::match_moments(detail::pan_vector(in.pan), intensity);
  const Eigen::VectorXd detail_v = (pan - intensity).matrix();
  const Eigen::RowVectorXd means = s.colwise().mean();
  const Eigen::RowVectorXd gains = (ic.matrix().transpose() * (s.rowwise() - means)) / (ic.size() * var_i);
  s += detail_v * gains;
  return detail::from_spectra(in.ms, s);
}

/// SFIM: bands modulated by PAN over its (2r+1)-box mean.
template <typename Scalar>
Image<Scalar> sfim_fuse(const FusionInputT<Scalar>& in, int radius) {
  if (radius < 1) throw ArgumentError("SFIM radius must be positive");
  const RowMatrix<double> pan = in.pan.band(0).template cast<double>();
  const RowMatrix<double> low = box_mean<double>(pan, radius);
  const Eigen::ArrayXd gain = Eigen::Map<const Eigen::ArrayXd>(pan.data(), pan.size()) /
                              Eigen::Map<const Eigen::ArrayXd>(low.data(), low.size()).max(kFusionEps);
  Eigen::MatrixXd s = in.ms.spectra().template cast<double>();
  s.array().colwise() *= gain;
  return detail::from_spectra(in.ms, s);
}

/// Guided filter of `input` steered by `guide`, box radius r and regularizer eps.
inline RowMatrix<double> guided_filter(const RowMatrix<double>& guide, const RowMatrix<double>& input, int radius,
                                       double eps) {
  const RowMatrix<double> mi = box_mean<double>(guide, radius);
  const RowMatrix<double> mp = box_mean<double>(input, radius);
  const RowMatrix<double> cov = box_mean<double>(guide.cwiseProduct(input), radius) - mi.cwiseProduct(mp);
  const RowMatrix<double> var = box_mean<double>(guide.cwiseProduct(guide), radius) - mi.cwiseProduct(mi);
  const RowMatrix<double> a = cov.array() / (var.array() + eps);
  const RowMatrix<double> b = mp - a.cwiseProduct(mi);
  return box_mean<double>(a, radius).cwiseProduct(guide) + box_mean<double>(b, radius);
}

/// Principal axes of the band covariance, largest variance first, each
/// oriented so its loadings sum to a non-negative value.
struct BandPCA {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd axes;      // bands x bands, columns are components
  Eigen::VectorXd variances;

  template <typename Scalar>
  static BandPCA fit(const Image<Scalar>& ms) {
    const Eigen::MatrixXd s = ms.spectra().template cast<double>();
    BandPCA p;
    p.mean = s.colwise().mean();
    const Eigen::MatrixXd c = s.rowwise() - p.mean;
    const Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(s.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    p.axes = eig.eigenvectors().rowwise().reverse();
    p.variances = eig.eigenvalues().reverse();
    for (int k = 0; k < p.axes.cols(); ++k)
      if (p.axes.col(k).sum() < 0) p.axes.col(k) *= -1;
    return p;
  }

  template <typename Scalar>
  Eigen::MatrixXd scores(const Image<Scalar>& ms) const {
    return (ms.spectra().template cast<double>().rowwise() - mean) * axes;
  }
  Eigen::MatrixXd reconstruct(const Eigen::MatrixXd& scores) const {
    return (scores * axes.transpose()).rowwise() + mean;
  }
};

/// Inverse PCA after swapping the first component for `pc1`.
template <typename Scalar>
Image<Scalar> pca_substitute(const Image<Scalar>& ms, const BandPCA& pca, const Eigen::VectorXd& pc1) {
  Eigen::MatrixXd sc = pca.scores(ms);
  if (pc1.size() != sc.rows()) throw GeometryError("replacement component has the wrong pixel count");
  sc.col(0) = pc1;
  return detail::from_spectra(ms, pca.reconstruct(sc));
}

/// The guided filter regularizes with `reg * reg`.
struct GFPCAParams {
  int radius = 8;
  double reg = 1e-3;
};

/// GFPCA: PC1 replaced by the moment-matched PAN guided-filtered with PC1 as guide.
template <typename Scalar>
Image<Scalar> gfpca_fuse(const FusionInputT<Scalar>& in, GFPCAParams params = {}, FusionWarnings* warnings = nullptr) {
  if (in.bands() < 2) throw ArgumentError("GFPCA needs at least 2 bands");
  const BandPCA pca = BandPCA::fit(in.ms);
  if (!(pca.variances(0) > kFusionEps * kFusionEps)) {
    detail::warn(warnings, "gfpca: degenerate band covariance, using IHS");
    return detail::ihs_any_bands(in);
  }
  const Eigen::VectorXd pc1 = pca.scores(in.ms).col(0);
  const Eigen::ArrayXd pan = detail::match_moments(detail::pan_vector(in.pan), pc1.array());
  const int h = in.ms.height(), w = in.ms.width();
  const RowMatrix<double> guide = Eigen::Map<const RowMatrix<double>>(pc1.data(), h, w);
  const RowMatrix<double> src = Eigen::Map<const RowMatrix<double>>(pan.data(), h, w);
  const RowMatrix<double> q = guided_filter(guide, src, params.radius, params.reg * params.reg);
  return pca_substitute(in.ms, pca, Eigen::Map<const Eigen::VectorXd>(q.data(), q.size()));
}

enum class ClassicalMethod { ihs, brovey, gs, sfim, gfpca };

inline ClassicalMethod parse_classical_method(const std::string& name) {
  if (name == "ihs") return ClassicalMethod::ihs;
  if (name == "brovey") return ClassicalMethod::brovey;
  if (name == "gs") return ClassicalMethod::gs;
  if (name == "sfim") return ClassicalMethod::sfim;
  if (name == "gfpca") return ClassicalMethod::gfpca;
  throw ArgumentError("unknown fusion method '" + name + "'");
}

template <typename Scalar>
Image<Scalar> classical_fuse(ClassicalMethod m, const FusionInputT<Scalar>& in, int ratio,
                             FusionWarnings* warnings = nullptr) {
  switch (m) {
    case ClassicalMethod::ihs: return ihs_fuse(in);
    case ClassicalMethod::brovey: return brovey_fuse(in);
    case ClassicalMethod::gs: return gs_fuse(in, warnings);
    case ClassicalMethod::sfim: return sfim_fuse(in, ratio);
    case ClassicalMethod::gfpca: return gfpca_fuse(in, GFPCAParams{}, warnings);
  }
  throw ArgumentError("unknown fusion method");
}

}  // namespace pansharp
