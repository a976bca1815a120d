#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "redsample/denoiser.hpp"
#include "redsample/errors.hpp"
#include "redsample/image.hpp"
#include "redsample/rng.hpp"

namespace redsample {

/// g_red(x) = 1/2 <x, x - D(x)>.
inline double red_potential(const Denoiser& d, const ImageField& x) { return 0.5 * dot(x, x - d.apply(x)); }

/// Gradient of g_red under the RED conditions: the residual x - D(x).
inline ImageField red_gradient(const Denoiser& d, const ImageField& x) { return x - d.apply(x); }

inline constexpr std::size_t kMaxDenseDim = 4096;

/// Default central-difference step: 1e-4 (1 + ||x||_inf).
inline double default_probe_epsilon(const ImageField& x) { return 1e-4 * (1.0 + max_abs(x)); }

/// Central-difference Jacobian, column j probed along e_j.
inline Eigen::MatrixXd fd_jacobian(const Denoiser& d, const ImageField& x, double eps) {
  const std::size_t n = x.size();
  if (n > kMaxDenseDim) throw RejectedInput("fd_jacobian: dimension " + std::to_string(n) + " exceeds dense limit 4096");
  if (!(eps > 0.0)) throw RejectedInput("fd_jacobian: eps must be positive");
  Eigen::MatrixXd jac(n, n);
  ImageField probe = x;
  for (std::size_t j = 0; j < n; ++j) {
    probe[j] = x[j] + eps;
    const ImageField plus = d.apply(probe);
    probe[j] = x[j] - eps;
    const ImageField minus = d.apply(probe);
    probe[j] = x[j];
    for (std::size_t i = 0; i < n; ++i) jac(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (plus[i] - minus[i]) / (2.0 * eps);
  }
  return jac;
}

/// Dominant-magnitude eigenvalue estimate by power iteration: 50 iterations or a
/// relative change below 1e-8. The start vector is a fixed pseudo-random draw.
inline double power_iteration_radius(const Eigen::MatrixXd& m, std::size_t max_iter = 50, double rel_tol = 1e-8) {
  RngStream rng(0x5eed5eedULL);
  Eigen::VectorXd v(m.cols());
  for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = rng.normal();
  v.normalize();
  double estimate = 0.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    Eigen::VectorXd mv = m * v;
    const double next = mv.norm();
    if (next == 0.0) return 0.0;
    v = mv / next;
    const bool converged = it > 0 && std::abs(next - estimate) <= rel_tol * next;
    estimate = next;
    if (converged) break;
  }
  return estimate;
}

struct RedConditionReport {
  double nmse_lh1 = 0.0;
  double nmse_lh2 = 0.0;
  double nmse_js = 0.0;
  double msr = 0.0;
  std::size_t patch_count = 0;
  std::size_t skipped_patches = 0;
  double probe_epsilon = 0.0;
};

/// Empirical RED-condition metrics averaged over patches:
///   NMSE_LH1 = ||D((1+e)x) - (1+e)D(x)||^2 / ||(1+e)D(x)||^2
///   NMSE_LH2 = ||J x - D(x)||^2 / ||D(x)||^2
///   NMSE_JS  = ||J - J^T||_F^2 / ||J||_F^2
///   MSR      = power-iteration radius of J
/// with J the central-difference Jacobian. `eps` <= 0 selects the per-patch default.
/// Patches where D(x) or J vanish are skipped and counted.
inline RedConditionReport verify_red_conditions(const Denoiser& d, const std::vector<ImageField>& patches, double eps = 0.0) {
  if (patches.empty()) throw RejectedInput("verify_red_conditions: no patches");
  RedConditionReport r;
  double eps_sum = 0.0;
  for (const ImageField& x : patches) {
    const double e = eps > 0.0 ? eps : default_probe_epsilon(x);
    const ImageField dx = d.apply(x);
    const double dx_norm2 = squared_norm(dx);
    const Eigen::MatrixXd jac = fd_jacobian(d, x, e);
    const double jac_norm2 = jac.squaredNorm();
    if (dx_norm2 == 0.0 || jac_norm2 == 0.0) {
      ++r.skipped_patches;
      continue;
    }
    const ImageField scaled = d.apply((1.0 + e) * x);
    const ImageField expected = (1.0 + e) * dx;
    r.nmse_lh1 += squared_norm(scaled - expected) / squared_norm(expected);

    const Eigen::Map<const Eigen::VectorXd> xv(x.values().data(), static_cast<Eigen::Index>(x.size()));
    const Eigen::Map<const Eigen::VectorXd> dv(dx.values().data(), static_cast<Eigen::Index>(dx.size()));
    r.nmse_lh2 += (jac * xv - dv).squaredNorm() / dx_norm2;
    r.nmse_js += (jac - jac.transpose()).squaredNorm() / jac_norm2;
    r.msr += power_iteration_radius(jac);
    eps_sum += e;
    ++r.patch_count;
  }
  if (r.patch_count == 0) throw RejectedInput("verify_red_conditions: every patch was degenerate (D(x) = 0)");
  const double n = static_cast<double>(r.patch_count);
  r.nmse_lh1 /= n;
  r.nmse_lh2 /= n;
  r.nmse_js /= n;
  r.msr /= n;
  r.probe_epsilon = eps_sum / n;
  return r;
}

/// Seeded uniform extraction of `count` size x size patches (top-left corners
/// drawn independently) from `image`.
inline std::vector<ImageField> extract_patches(const ImageField& image, std::size_t size, std::size_t count, RngStream& rng) {
  if (size == 0 || size > image.height() || size > image.width()) {
    throw RejectedInput("extract_patches: patch size does not fit in image " + image.shape().str());
  }
  std::vector<ImageField> out;
  out.reserve(count);
  for (std::size_t p = 0; p < count; ++p) {
    const std::size_t i0 = rng.below(image.height() - size + 1);
    const std::size_t j0 = rng.below(image.width() - size + 1);
    ImageField patch(Shape{size, size, image.channels()});
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j)
        for (std::size_t c = 0; c < image.channels(); ++c) patch.at(i, j, c) = image.at(i0 + i, j0 + j, c);
    out.push_back(std::move(patch));
  }
  return out;
}

}  // namespace redsample
