#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "redsample/errors.hpp"
#include "redsample/image.hpp"
#include "redsample/operators.hpp"
#include "redsample/plugin.hpp"

namespace redsample {

/// x -> (1 - eps0) (k * x) with a point-symmetric, nonnegative, unit-sum kernel.
/// The Jacobian is a symmetric circulant matrix with spectrum in
/// [-(1 - eps0), 1 - eps0] and the DC eigenvalue exactly 1 - eps0.
class SymmetricConv {
 public:
  SymmetricConv(Kernel kernel, double eps0) : kernel_(std::move(kernel)), eps0_(eps0) {
    if (!(eps0_ > 0.0 && eps0_ < 1.0)) throw RejectedInput("SymmetricConv: shrink eps0 must lie in (0, 1)");
    if (!kernel_.symmetric(1e-14)) throw RejectedInput("SymmetricConv: kernel must be point-symmetric");
    for (double t : kernel_.taps())
      if (t < 0.0) throw RejectedInput("SymmetricConv: kernel must be nonnegative");
    if (std::abs(kernel_.sum() - 1.0) > 1e-12) throw RejectedInput("SymmetricConv: kernel must sum to 1");
  }

  /// Gaussian family; the kernel standard deviation is the denoising strength.
  static SymmetricConv gaussian(std::size_t size, double stddev, double eps0) {
    SymmetricConv d(Kernel::gaussian(size, stddev), eps0);
    d.family_size_ = size;
    d.strength_ = stddev;
    return d;
  }

  const Kernel& kernel() const noexcept { return kernel_; }
  double eps0() const noexcept { return eps0_; }
  double strength() const noexcept { return strength_; }

  SymmetricConv with_strength(double nu) const {
    if (family_size_ == 0) throw RejectedInput("SymmetricConv: explicit kernels have no strength family");
    return gaussian(family_size_, nu, eps0_);
  }

  ImageField apply(const ImageField& x) const {
    ImageField out = detail::convolve_periodic(kernel_, x);
    out *= (1.0 - eps0_);
    return out;
  }

  /// Jacobian eigenvalues on an h x w grid (row-major frequency order).
  std::vector<double> spectrum(std::size_t h, std::size_t w) const {
    const auto tf = transfer_function(kernel_, h, w);
    std::vector<double> eig(tf.size());
    for (std::size_t k = 0; k < tf.size(); ++k) eig[k] = (1.0 - eps0_) * tf[k].real();
    return eig;
  }

 private:
  Kernel kernel_;
  double eps0_;
  std::size_t family_size_ = 0;
  double strength_ = 0.0;
};

/// Orthonormal DCT-II matrix, rows are basis functions.
inline Eigen::MatrixXd dct_matrix(std::size_t n) {
  Eigen::MatrixXd c(n, n);
  const double nn = static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double alpha = k == 0 ? std::sqrt(1.0 / nn) : std::sqrt(2.0 / nn);
    for (std::size_t i = 0; i < n; ++i) {
      c(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) =
          alpha * std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) * static_cast<double>(k) / (2.0 * nn));
    }
  }
  return c;
}

/// x -> U^T diag(s) U x with U the separable orthonormal 2D DCT, applied per channel.
class TransformShrink {
 public:
  TransformShrink(std::size_t height, std::size_t width, std::vector<double> gains, double eps0)
      : TransformShrink(height, width, std::move(gains)) {
    if (!(eps0 > 0.0 && eps0 < 1.0)) throw RejectedInput("TransformShrink: shrink eps0 must lie in (0, 1)");
    eps0_ = eps0;
    for (double s : gains_)
      if (!(s >= 0.0 && s <= 1.0 - eps0)) throw RejectedInput("TransformShrink: gains must lie in [0, 1 - eps0]");
  }

  /// Gains only required to lie in [0, 1]; eps0 is reported as 0. For fixed-point
  /// probes in tests, never for sampling.
  static TransformShrink unchecked(std::size_t height, std::size_t width, std::vector<double> gains) {
    TransformShrink d(height, width, std::move(gains));
    for (double s : d.gains_)
      if (!(s >= 0.0 && s <= 1.0)) throw RejectedInput("TransformShrink: gains must lie in [0, 1]");
    return d;
  }

  /// Low-pass family s(u, v) = (1 - eps0) / (1 + nu (w_u^2 + w_v^2)), w_u = pi u / H.
  static TransformShrink lowpass(std::size_t height, std::size_t width, double nu, double eps0) {
    if (!(nu >= 0.0)) throw RejectedInput("TransformShrink::lowpass: strength must be nonnegative");
    std::vector<double> g(height * width);
    for (std::size_t u = 0; u < height; ++u) {
      for (std::size_t v = 0; v < width; ++v) {
        const double wu = std::numbers::pi * static_cast<double>(u) / static_cast<double>(height);
        const double wv = std::numbers::pi * static_cast<double>(v) / static_cast<double>(width);
        g[u * width + v] = (1.0 - eps0) / (1.0 + nu * (wu * wu + wv * wv));
      }
    }
    TransformShrink d(height, width, std::move(g), eps0);
    d.lowpass_family_ = true;
    d.strength_ = nu;
    return d;
  }

  /// MMSE denoiser for a zero-mean Gaussian prior diagonal in the DCT basis with
  /// per-frequency variances `prior_var`, under white noise of variance `noise_var`:
  /// gains lambda / (lambda + noise_var).
  static TransformShrink gaussian_mmse(std::size_t height, std::size_t width, const std::vector<double>& prior_var,
                                       double noise_var) {
    if (prior_var.size() != height * width) throw RejectedInput("gaussian_mmse: variance count mismatch");
    if (!(noise_var > 0.0)) throw RejectedInput("gaussian_mmse: noise variance must be positive");
    std::vector<double> g(prior_var.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (!(prior_var[k] >= 0.0)) throw RejectedInput("gaussian_mmse: prior variances must be nonnegative");
      g[k] = prior_var[k] / (prior_var[k] + noise_var);
    }
    const double eps0 = 1.0 - *std::max_element(g.begin(), g.end());
    return TransformShrink(height, width, std::move(g), eps0);
  }

  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  double eps0() const noexcept { return eps0_; }
  double strength() const noexcept { return strength_; }
  const std::vector<double>& gains() const noexcept { return gains_; }

  TransformShrink with_strength(double nu) const {
    if (!lowpass_family_) throw RejectedInput("TransformShrink: explicit gains have no strength family");
    return lowpass(h_, w_, nu, eps0_);
  }

  ImageField apply(const ImageField& x) const {
    if (x.height() != h_ || x.width() != w_) {
      throw RejectedInput("TransformShrink: built for " + std::to_string(h_) + "x" + std::to_string(w_) +
                          ", got " + x.shape().str());
    }
    ImageField out(x.shape());
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto hi = static_cast<Eigen::Index>(h_), wi = static_cast<Eigen::Index>(w_);
    const Eigen::Map<const RowMat> gain(gains_.data(), hi, wi);
    for (std::size_t c = 0; c < x.channels(); ++c) {
      const std::vector<double> p = x.plane(c);
      const Eigen::Map<const RowMat> xp(p.data(), hi, wi);
      RowMat coeff = dct_h_ * xp * dct_w_.transpose();
      coeff.array() *= gain.array();
      const RowMat back = dct_h_.transpose() * coeff * dct_w_;
      out.set_plane(c, std::span<const double>(back.data(), static_cast<std::size_t>(back.size())));
    }
    return out;
  }

 private:
  TransformShrink(std::size_t height, std::size_t width, std::vector<double> gains)
      : h_(height), w_(width), gains_(std::move(gains)), dct_h_(dct_matrix(height)), dct_w_(dct_matrix(width)) {
    if (h_ == 0 || w_ == 0) throw RejectedInput("TransformShrink: dimensions must be positive");
    if (gains_.size() != h_ * w_) throw RejectedInput("TransformShrink: need one gain per frequency");
  }

  std::size_t h_, w_;
  std::vector<double> gains_;
  Eigen::MatrixXd dct_h_, dct_w_;
  double eps0_ = 0.0;
  bool lowpass_family_ = false;
  double strength_ = 0.0;
};

/// Eigenvalue range of a linear denoiser's (symmetric) Jacobian W.
struct SpectralBounds {
  double min_eig;
  double max_eig;

  /// Strong convexity constant of g_red: smallest eigenvalue of I - W.
  double m_g() const noexcept { return 1.0 - max_eig; }
  /// Hessian norm bound of g_red: largest eigenvalue of I - W.
  double M_g() const noexcept { return 1.0 - min_eig; }
};

/// The denoiser D_nu: a closed set of built-in linear maps plus an external plugin.
class Denoiser {
 public:
  using Variant = std::variant<SymmetricConv, TransformShrink, PluginDenoiser>;

  Denoiser(SymmetricConv d) : impl_(std::move(d)) {}
  Denoiser(TransformShrink d) : impl_(std::move(d)) {}
  Denoiser(PluginDenoiser d) : impl_(std::move(d)) {}

  const Variant& variant() const noexcept { return impl_; }
  bool is_linear() const noexcept { return !std::holds_alternative<PluginDenoiser>(impl_); }

  double strength() const {
    return std::visit([](const auto& d) { return d.strength(); }, impl_);
  }

  Denoiser with_strength(double nu) const {
    return std::visit([&](const auto& d) { return Denoiser(d.with_strength(nu)); }, impl_);
  }

  ImageField apply(const ImageField& x) const {
    ImageField out = std::visit([&](const auto& d) { return d.apply(x); }, impl_);
    if (!out.all_finite()) throw DenoiserFailure("denoiser produced a non-finite value");
    return out;
  }

  /// Jacobian eigenvalues for built-in variants on a given image shape.
  std::optional<std::vector<double>> spectrum(Shape shape) const {
    if (const auto* c = std::get_if<SymmetricConv>(&impl_)) return c->spectrum(shape.height, shape.width);
    if (const auto* t = std::get_if<TransformShrink>(&impl_)) {
      if (t->height() != shape.height || t->width() != shape.width) {
        throw RejectedInput("TransformShrink: spectrum requested for mismatched shape " + shape.str());
      }
      return t->gains();
    }
    return std::nullopt;
  }

  std::optional<SpectralBounds> spectral_bounds(Shape shape) const {
    const auto s = spectrum(shape);
    if (!s) return std::nullopt;
    const auto [lo, hi] = std::minmax_element(s->begin(), s->end());
    return SpectralBounds{*lo, *hi};
  }

 private:
  Variant impl_;
};

/// Applies the denoiser; free-function form of Denoiser::apply.
inline ImageField denoise_apply(const Denoiser& d, const ImageField& x) { return d.apply(x); }

}  // namespace redsample
