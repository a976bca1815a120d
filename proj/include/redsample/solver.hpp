#pragma once

#include <cmath>
#include <complex>
#include <utility>
#include <variant>
#include <vector>

#include "redsample/errors.hpp"
#include "redsample/fft.hpp"
#include "redsample/image.hpp"
#include "redsample/operators.hpp"
#include "redsample/rng.hpp"

namespace redsample {

/// Factorized precision Q of a Gaussian conditional, either diagonal in pixel
/// space or diagonal in the 2D Fourier basis (same spectrum for every channel).
class ConditionalGaussianSolver {
 public:
  struct Diagonal {
    std::vector<double> precision;
  };
  struct FourierDiagonal {
    std::vector<double> precision;
  };

  static ConditionalGaussianSolver diagonal(Shape shape, std::vector<double> precision) {
    if (precision.size() != shape.size()) throw RejectedInput("Diagonal solver: precision length mismatch");
    check_positive(precision);
    return ConditionalGaussianSolver(shape, Diagonal{std::move(precision)});
  }

  static ConditionalGaussianSolver fourier(Shape shape, std::vector<double> precision) {
    if (precision.size() != shape.plane()) throw RejectedInput("Fourier solver: need one precision per frequency");
    check_positive(precision);
    return ConditionalGaussianSolver(shape, FourierDiagonal{std::move(precision)});
  }

  const Shape& shape() const noexcept { return shape_; }
  bool is_diagonal() const noexcept { return std::holds_alternative<Diagonal>(impl_); }
  const std::vector<double>& precision() const noexcept {
    return std::visit([](const auto& v) -> const std::vector<double>& { return v.precision; }, impl_);
  }

  /// ||Q^{-1}||: reciprocal of the smallest precision.
  double inverse_norm() const {
    const auto& p = precision();
    return 1.0 / *std::min_element(p.begin(), p.end());
  }

  /// Q^{-1} rhs.
  ImageField solve(const ImageField& rhs, Fft2& fft) const { return combine(rhs, nullptr, fft); }

  /// mu + C w with C C^T = Q^{-1}, w drawn from `noise`.
  template <GaussianSource Noise>
  ImageField sample(const ImageField& mu, Noise& noise, Fft2& fft) const {
    std::vector<double> w(shape_.size());
    noise.fill_gaussian(w);
    if (is_diagonal()) {
      const auto& q = precision();
      ImageField out = mu;
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += w[k] / std::sqrt(q[k]);
      return out;
    }
    return mu + combine(ImageField(shape_, std::move(w)), nullptr, fft, true);
  }

  /// Q^{-1} rhs + C w in one pass: for the Fourier variant the two forward
  /// transforms share one inverse.
  template <GaussianSource Noise>
  ImageField solve_and_sample(const ImageField& rhs, Noise& noise, Fft2& fft) const {
    std::vector<double> w(shape_.size());
    noise.fill_gaussian(w);
    ImageField wf(shape_, std::move(w));
    if (is_diagonal()) {
      const auto& q = precision();
      ImageField out(shape_);
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = rhs[k] / q[k] + wf[k] / std::sqrt(q[k]);
      return out;
    }
    return combine(rhs, &wf, fft);
  }

 private:
  ConditionalGaussianSolver(Shape shape, std::variant<Diagonal, FourierDiagonal> impl) : shape_(shape), impl_(std::move(impl)) {}

  static void check_positive(const std::vector<double>& p) {
    for (double v : p)
      if (!(v > 0.0) || !std::isfinite(v)) throw RejectedInput("solver precisions must be positive and finite");
  }

  // Diagonal: rhs / q (+ w / sqrt q). Fourier: F^-1 [F rhs / q (+ F w / sqrt q)].
  // With sqrt_only, the rhs itself is scaled by q^{-1/2} (pure noise colouring).
  ImageField combine(const ImageField& rhs, const ImageField* w, Fft2& fft, bool sqrt_only = false) const {
    if (!(rhs.shape() == shape_)) throw RejectedInput("solver: shape mismatch " + rhs.shape().str() + " vs " + shape_.str());
    const auto& q = precision();
    ImageField out(shape_);
    if (is_diagonal()) {
      for (std::size_t k = 0; k < out.size(); ++k) out[k] = sqrt_only ? rhs[k] / std::sqrt(q[k]) : rhs[k] / q[k];
      return out;
    }
    std::vector<Complex> a, b;
    std::vector<double> plane_out(shape_.plane());
    for (std::size_t c = 0; c < shape_.channels; ++c) {
      fft.forward(rhs.plane(c), a);
      if (w) fft.forward(w->plane(c), b);
      for (std::size_t k = 0; k < a.size(); ++k) {
        a[k] = sqrt_only ? a[k] / std::sqrt(q[k]) : a[k] / q[k];
        if (w) a[k] += b[k] / std::sqrt(q[k]);
      }
      fft.inverse_real(a, plane_out);
      out.set_plane(c, plane_out);
    }
    return out;
  }

  Shape shape_;
  std::variant<Diagonal, FourierDiagonal> impl_;
};

/// Precision of x | z for A = Mask / Downsample (diagonal) or Circulant (Fourier):
/// Q = A^T A / sigma^2 + I / rho2.
inline ConditionalGaussianSolver make_conditional_solver(const DegradationOp& op, Shape x_shape, double sigma, double rho2) {
  if (!(sigma > 0.0) || !(rho2 > 0.0)) throw RejectedInput("conditional solver: sigma and rho2 must be positive");
  const double data_w = 1.0 / (sigma * sigma), tie = 1.0 / rho2;
  if (const auto* m = std::get_if<ops::Mask>(&op)) {
    if (!(m->shape == x_shape)) throw RejectedInput("conditional solver: mask shape mismatch");
    std::vector<double> q(x_shape.size());
    for (std::size_t k = 0; k < q.size(); ++k) q[k] = (m->keep[k] ? data_w : 0.0) + tie;
    return ConditionalGaussianSolver::diagonal(x_shape, std::move(q));
  }
  if (const auto* d = std::get_if<ops::Downsample>(&op)) {
    output_shape(op, x_shape);
    std::vector<double> q(x_shape.size(), tie);
    for (std::size_t i = 0; i < x_shape.height; i += d->factor)
      for (std::size_t j = 0; j < x_shape.width; j += d->factor)
        for (std::size_t c = 0; c < x_shape.channels; ++c) q[(i * x_shape.width + j) * x_shape.channels + c] += data_w;
    return ConditionalGaussianSolver::diagonal(x_shape, std::move(q));
  }
  if (const auto* c = std::get_if<ops::Circulant>(&op)) {
    const auto tf = transfer_function(c->kernel, x_shape.height, x_shape.width);
    std::vector<double> q(tf.size());
    for (std::size_t k = 0; k < q.size(); ++k) q[k] = std::norm(tf[k]) * data_w + tie;
    return ConditionalGaussianSolver::fourier(x_shape, std::move(q));
  }
  throw RejectedInput("conditional solver: BlurThenDownsample has no diagonal factorization; use run_sr_split");
}

/// mu(z) = Q^{-1}(A^T y / sigma^2 + z / rho2) together with the factorization of Q.
inline std::pair<ImageField, ConditionalGaussianSolver> conditional_mu_Q(const ImageField& z, const ImageField& y,
                                                                         const DegradationOp& op, double sigma, double rho2) {
  auto solver = make_conditional_solver(op, z.shape(), sigma, rho2);
  ImageField rhs = adjoint_op(op, y);
  rhs *= 1.0 / (sigma * sigma);
  ImageField tz = z;
  tz *= 1.0 / rho2;
  rhs += tz;
  Fft2 fft(z.height(), z.width());
  ImageField mu = solver.solve(rhs, fft);
  return {std::move(mu), std::move(solver)};
}

/// Draw x ~ N(mu, Q^{-1}).
template <GaussianSource Noise>
ImageField sample_x_cond(const ImageField& mu, const ConditionalGaussianSolver& solver, Noise& noise) {
  Fft2 fft(mu.height(), mu.width());
  ImageField out = solver.sample(mu, noise, fft);
  if (!out.all_finite()) throw RejectedInput("sample_x_cond: non-finite sample");
  return out;
}

}  // namespace redsample
