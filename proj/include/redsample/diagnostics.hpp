#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "redsample/errors.hpp"
#include "redsample/image.hpp"

namespace redsample {

/// 10 log10(peak^2 / MSE); +infinity when the images are identical.
inline double psnr(const ImageField& reference, const ImageField& test, double peak = 1.0) {
  reference.check_same(test, "psnr");
  if (!(peak > 0.0)) throw RejectedInput("psnr: peak must be positive");
  const double mse = squared_norm(reference - test) / static_cast<double>(reference.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline std::vector<double> ssim_window() {
  constexpr int r = 5;
  std::vector<double> w(11 * 11);
  double s = 0.0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) {
      const double v = std::exp(-(i * i + j * j) / (2.0 * 1.5 * 1.5));
      w[static_cast<std::size_t>((i + r) * 11 + (j + r))] = v;
      s += v;
    }
  for (double& v : w) v /= s;
  return w;
}

}  // namespace detail

inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// Local SSIM from window moments (dynamic range 1).
inline double ssim_local(double mx, double my, double vx, double vy, double cxy) {
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  return ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

/// Mean SSIM over all fully contained 11x11 windows (Gaussian weights, std 1.5),
/// averaged over channels.
inline double ssim(const ImageField& reference, const ImageField& test) {
  reference.check_same(test, "ssim");
  const std::size_t h = reference.height(), w = reference.width();
  if (h < 11 || w < 11) throw RejectedInput("ssim: images must be at least 11x11, got " + reference.shape().str());
  static const std::vector<double> win = detail::ssim_window();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < reference.channels(); ++c) {
    for (std::size_t i = 0; i + 11 <= h; ++i)
      for (std::size_t j = 0; j + 11 <= w; ++j) {
        double mx = 0, my = 0, exx = 0, eyy = 0, exy = 0;
        for (std::size_t a = 0; a < 11; ++a)
          for (std::size_t b = 0; b < 11; ++b) {
            const double g = win[a * 11 + b];
            const double x = reference.at(i + a, j + b, c), y = test.at(i + a, j + b, c);
            mx += g * x;
            my += g * y;
            exx += g * x * x;
            eyy += g * y * y;
            exy += g * x * y;
          }
        total += ssim_local(mx, my, exx - mx * mx, eyy - my * my, exy - mx * my);
        ++count;
      }
  }
  return total / static_cast<double>(count);
}

/// Normalized biased autocovariance, acf[0] = 1.
inline std::vector<double> acf(std::span<const double> series, std::size_t max_lag) {
  const std::size_t n = series.size();
  if (n <= max_lag) throw RejectedInput("acf: series length must exceed max_lag");
  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
  std::vector<double> centered(n);
  for (std::size_t k = 0; k < n; ++k) centered[k] = series[k] - mean;
  double c0 = 0.0;
  for (double v : centered) c0 += v * v;
  if (!(c0 > 0.0)) throw DegenerateSeries("acf: constant series");
  std::vector<double> out(max_lag + 1);
  out[0] = 1.0;
  for (std::size_t lag = 1; lag <= max_lag; ++lag) {
    double s = 0.0;
    for (std::size_t k = 0; k + lag < n; ++k) s += centered[k] * centered[k + lag];
    out[lag] = s / c0;
  }
  return out;
}

/// Integrated autocorrelation time, truncated by the initial positive sequence:
/// tau = -1 + 2 sum_m (acf[2m] + acf[2m+1]) over pairs before the first nonpositive pair.
inline double iat(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n < 1000) throw RejectedInput("iat: need at least 1000 samples");
  std::size_t max_lag = std::min<std::size_t>(n - 1, 1000);
  for (;;) {
    const std::vector<double> r = acf(series, max_lag);
    double tau = -1.0;
    std::size_t m = 0;
    for (; 2 * m + 1 <= max_lag; ++m) {
      const double pair = r[2 * m] + r[2 * m + 1];
      if (pair <= 0.0) return std::max(tau, 1e-12);
      tau += 2.0 * pair;
    }
    if (max_lag == n - 1) return tau;  // never truncated: unreliable, return full sum
    max_lag = std::min(n - 1, max_lag * 4);
  }
}

/// Index (into `traces`) of the trace whose sample variance is the median; lower median for even counts.
inline std::size_t median_variance_probe(const std::vector<std::vector<double>>& traces) {
  if (traces.empty()) throw RejectedInput("median_variance_probe: no traces");
  std::vector<std::pair<double, std::size_t>> v;
  v.reserve(traces.size());
  for (std::size_t k = 0; k < traces.size(); ++k) {
    const auto& t = traces[k];
    if (t.empty()) throw RejectedInput("median_variance_probe: empty trace");
    const double mean = std::accumulate(t.begin(), t.end(), 0.0) / static_cast<double>(t.size());
    double s = 0.0;
    for (double e : t) s += (e - mean) * (e - mean);
    v.emplace_back(s / static_cast<double>(t.size()), k);
  }
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2].second;
}

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double iat = 0.0;
  bool iat_reliable = true;
  std::vector<double> acf;
};

}  // namespace redsample
