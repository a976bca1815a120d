#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "redsample/errors.hpp"
#include "redsample/fft.hpp"
#include "redsample/image.hpp"
#include "redsample/rng.hpp"

namespace redsample {

/// Centered 2D convolution kernel with odd side lengths.
class Kernel {
 public:
  Kernel() : Kernel(1, 1, {1.0}) {}

  Kernel(std::size_t rows, std::size_t cols, std::vector<double> taps) : rows_(rows), cols_(cols), taps_(std::move(taps)) {
    if (rows_ % 2 == 0 || cols_ % 2 == 0) throw RejectedInput("Kernel: side lengths must be odd");
    if (taps_.size() != rows_ * cols_) throw RejectedInput("Kernel: tap count does not match size");
    for (double t : taps_) {
      if (!std::isfinite(t)) throw RejectedInput("Kernel: non-finite tap");
    }
  }

  static Kernel identity() { return Kernel(); }

  static Kernel box(std::size_t size) {
    const double v = 1.0 / static_cast<double>(size * size);
    return Kernel(size, size, std::vector<double>(size * size, v));
  }

  /// Sampled isotropic Gaussian normalized to unit sum.
  static Kernel gaussian(std::size_t size, double stddev) {
    if (!(stddev > 0.0)) throw RejectedInput("Kernel::gaussian: stddev must be positive");
    std::vector<double> taps(size * size);
    const double r = static_cast<double>(size / 2);
    for (std::size_t a = 0; a < size; ++a) {
      for (std::size_t b = 0; b < size; ++b) {
        const double da = static_cast<double>(a) - r, db = static_cast<double>(b) - r;
        taps[a * size + b] = std::exp(-(da * da + db * db) / (2.0 * stddev * stddev));
      }
    }
    const double s = std::accumulate(taps.begin(), taps.end(), 0.0);
    for (double& t : taps) t /= s;
    return Kernel(size, size, std::move(taps));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  long row_radius() const noexcept { return static_cast<long>(rows_ / 2); }
  long col_radius() const noexcept { return static_cast<long>(cols_ / 2); }
  double at(std::size_t a, std::size_t b) const noexcept { return taps_[a * cols_ + b]; }
  const std::vector<double>& taps() const noexcept { return taps_; }
  double sum() const { return std::accumulate(taps_.begin(), taps_.end(), 0.0); }

  /// Point symmetry k(a, b) = k(-a, -b), which makes the circulant matrix symmetric.
  bool symmetric(double tol = 0.0) const {
    for (std::size_t a = 0; a < rows_; ++a) {
      for (std::size_t b = 0; b < cols_; ++b) {
        if (std::abs(at(a, b) - at(rows_ - 1 - a, cols_ - 1 - b)) > tol) return false;
      }
    }
    return true;
  }

  Kernel flipped() const {
    std::vector<double> t(taps_.rbegin(), taps_.rend());
    return Kernel(rows_, cols_, std::move(t));
  }

  bool operator==(const Kernel&) const = default;

 private:
  std::size_t rows_, cols_;
  std::vector<double> taps_;
};

namespace ops {

struct Circulant {
  Kernel kernel;
};

/// keep[k] refers to the element index of an image of `shape`; kept values are
/// packed in scan order into a 1 x m x 1 field.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> keep;
};

/// Keeps the top-left sample of every factor x factor block.
struct Downsample {
  std::size_t factor = 1;
};

/// A = S B: periodic blur followed by regular subsampling.
struct BlurThenDownsample {
  Kernel kernel;
  std::size_t factor = 1;
};

}  // namespace ops

using DegradationOp = std::variant<ops::Circulant, ops::Mask, ops::Downsample, ops::BlurThenDownsample>;

struct NoiseModel {
  double sigma = 1.0;

  explicit NoiseModel(double s) : sigma(s) {
    if (!(s > 0.0) || !std::isfinite(s)) throw RejectedInput("NoiseModel: sigma must be positive and finite");
  }
};

inline std::size_t kept_count(const ops::Mask& m) {
  return static_cast<std::size_t>(std::count(m.keep.begin(), m.keep.end(), std::uint8_t{1}));
}

inline ops::Mask make_mask(Shape shape, std::vector<std::uint8_t> keep) {
  if (keep.size() != shape.size()) throw RejectedInput("Mask: keep length does not match shape");
  for (auto& k : keep) k = k ? 1 : 0;
  ops::Mask m{shape, std::move(keep)};
  if (kept_count(m) == 0) throw RejectedInput("Mask: must keep at least one entry");
  return m;
}

/// Masks round(masked_fraction * H * W) pixels per channel, chosen uniformly
/// without replacement and independently for each channel.
inline ops::Mask random_mask(Shape shape, double masked_fraction, RngStream& rng) {
  if (!(masked_fraction >= 0.0 && masked_fraction < 1.0)) {
    throw RejectedInput("random_mask: masked fraction must lie in [0, 1)");
  }
  const std::size_t plane = shape.plane();
  const auto n_masked = std::min(plane - 1, static_cast<std::size_t>(std::llround(masked_fraction * static_cast<double>(plane))));
  std::vector<std::uint8_t> keep(shape.size(), 1);
  std::vector<std::size_t> perm(plane);
  for (std::size_t c = 0; c < shape.channels; ++c) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t k = 0; k < n_masked; ++k) {
      const std::size_t pick = k + static_cast<std::size_t>(rng.below(plane - k));
      std::swap(perm[k], perm[pick]);
      keep[perm[k] * shape.channels + c] = 0;
    }
  }
  return make_mask(shape, std::move(keep));
}

namespace detail {

inline std::size_t wrap(long v, std::size_t n) {
  const long m = static_cast<long>(n);
  return static_cast<std::size_t>(((v % m) + m) % m);
}

/// Periodic convolution out(i,j) = sum k(a,b) x(i - (a - ra), j - (b - rb)).
inline ImageField convolve_periodic(const Kernel& k, const ImageField& x) {
  ImageField out(x.shape());
  const std::size_t h = x.height(), w = x.width(), ch = x.channels();
  const long ra = k.row_radius(), rb = k.col_radius();
  for (std::size_t a = 0; a < k.rows(); ++a) {
    for (std::size_t b = 0; b < k.cols(); ++b) {
      const double t = k.at(a, b);
      if (t == 0.0) continue;
      const long da = static_cast<long>(a) - ra, db = static_cast<long>(b) - rb;
      for (std::size_t i = 0; i < h; ++i) {
        const std::size_t si = wrap(static_cast<long>(i) - da, h);
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t sj = wrap(static_cast<long>(j) - db, w);
          for (std::size_t c = 0; c < ch; ++c) out.at(i, j, c) += t * x.at(si, sj, c);
        }
      }
    }
  }
  return out;
}

inline ImageField subsample(const ImageField& x, std::size_t d) {
  if (d == 0 || x.height() % d != 0 || x.width() % d != 0) {
    throw RejectedInput("Downsample: factor " + std::to_string(d) + " does not divide " + x.shape().str());
  }
  ImageField out(Shape{x.height() / d, x.width() / d, x.channels()});
  for (std::size_t i = 0; i < out.height(); ++i)
    for (std::size_t j = 0; j < out.width(); ++j)
      for (std::size_t c = 0; c < x.channels(); ++c) out.at(i, j, c) = x.at(i * d, j * d, c);
  return out;
}

inline ImageField upsample_zero(const ImageField& y, std::size_t d) {
  if (d == 0) throw RejectedInput("Downsample: factor must be positive");
  ImageField out(Shape{y.height() * d, y.width() * d, y.channels()});
  for (std::size_t i = 0; i < y.height(); ++i)
    for (std::size_t j = 0; j < y.width(); ++j)
      for (std::size_t c = 0; c < y.channels(); ++c) out.at(i * d, j * d, c) = y.at(i, j, c);
  return out;
}

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

}  // namespace detail

/// Shape of A x for an input of shape `in`.
inline Shape output_shape(const DegradationOp& op, Shape in) {
  return std::visit(
      detail::overloaded{
          [&](const ops::Circulant&) { return in; },
          [&](const ops::Mask& m) {
            if (!(m.shape == in)) throw RejectedInput("Mask: image shape " + in.str() + " vs mask " + m.shape.str());
            return Shape{1, kept_count(m), 1};
          },
          [&](const ops::Downsample& d) {
            if (d.factor == 0 || in.height % d.factor || in.width % d.factor)
              throw RejectedInput("Downsample: factor does not divide " + in.str());
            return Shape{in.height / d.factor, in.width / d.factor, in.channels};
          },
          [&](const ops::BlurThenDownsample& bd) {
            if (bd.factor == 0 || in.height % bd.factor || in.width % bd.factor)
              throw RejectedInput("BlurThenDownsample: factor does not divide " + in.str());
            return Shape{in.height / bd.factor, in.width / bd.factor, in.channels};
          }},
      op);
}

/// Returns A x.
inline ImageField apply_op(const DegradationOp& op, const ImageField& x) {
  return std::visit(detail::overloaded{
                        [&](const ops::Circulant& c) { return detail::convolve_periodic(c.kernel, x); },
                        [&](const ops::Mask& m) {
                          const Shape out = output_shape(op, x.shape());
                          std::vector<double> packed;
                          packed.reserve(out.size());
                          for (std::size_t k = 0; k < x.size(); ++k)
                            if (m.keep[k]) packed.push_back(x[k]);
                          return ImageField(out, std::move(packed));
                        },
                        [&](const ops::Downsample& d) { return detail::subsample(x, d.factor); },
                        [&](const ops::BlurThenDownsample& bd) {
                          output_shape(op, x.shape());
                          return detail::subsample(detail::convolve_periodic(bd.kernel, x), bd.factor);
                        }},
                    op);
}

/// Returns A^T y. Input shape of A is recovered from the operator and y.
inline ImageField adjoint_op(const DegradationOp& op, const ImageField& y) {
  return std::visit(detail::overloaded{
                        [&](const ops::Circulant& c) { return detail::convolve_periodic(c.kernel.flipped(), y); },
                        [&](const ops::Mask& m) {
                          const std::size_t kept = kept_count(m);
                          if (y.size() != kept)
                            throw RejectedInput("Mask adjoint: expected " + std::to_string(kept) + " values, got " +
                                                std::to_string(y.size()));
                          ImageField out(m.shape);
                          std::size_t p = 0;
                          for (std::size_t k = 0; k < out.size(); ++k)
                            if (m.keep[k]) out[k] = y[p++];
                          return out;
                        },
                        [&](const ops::Downsample& d) { return detail::upsample_zero(y, d.factor); },
                        [&](const ops::BlurThenDownsample& bd) {
                          return detail::convolve_periodic(bd.kernel.flipped(), detail::upsample_zero(y, bd.factor));
                        }},
                    op);
}

/// Input shape of A given an observation shape.
inline Shape input_shape(const DegradationOp& op, Shape y_shape) {
  return std::visit(detail::overloaded{[&](const ops::Circulant&) { return y_shape; },
                                       [&](const ops::Mask& m) {
                                         if (!(y_shape == Shape{1, kept_count(m), 1})) {
                                           throw RejectedInput("Mask: observation shape " + y_shape.str() + " does not match mask");
                                         }
                                         return m.shape;
                                       },
                                       [&](const ops::Downsample& d) {
                                         return Shape{y_shape.height * d.factor, y_shape.width * d.factor, y_shape.channels};
                                       },
                                       [&](const ops::BlurThenDownsample& bd) {
                                         return Shape{y_shape.height * bd.factor, y_shape.width * bd.factor,
                                                      y_shape.channels};
                                       }},
                    op);
}

/// Transfer function of a periodic convolution on an h x w grid: the kernel is
/// wrapped around the origin (taps beyond the grid accumulate) and transformed.
inline std::vector<Complex> transfer_function(const Kernel& k, std::size_t h, std::size_t w, Fft2& fft) {
  std::vector<double> embedded(h * w, 0.0);
  const long ra = k.row_radius(), rb = k.col_radius();
  for (std::size_t a = 0; a < k.rows(); ++a)
    for (std::size_t b = 0; b < k.cols(); ++b)
      embedded[detail::wrap(static_cast<long>(a) - ra, h) * w + detail::wrap(static_cast<long>(b) - rb, w)] += k.at(a, b);
  std::vector<Complex> out;
  fft.forward(embedded, out);
  return out;
}

inline std::vector<Complex> transfer_function(const Kernel& k, std::size_t h, std::size_t w) {
  Fft2 fft(h, w);
  return transfer_function(k, h, w, fft);
}

/// y = A x + sigma w, with w drawn from `rng`.
inline ImageField degrade(const ImageField& x, const DegradationOp& op, const NoiseModel& noise, RngStream& rng) {
  ImageField y = apply_op(op, x);
  std::vector<double> w(y.size());
  rng.fill_gaussian(w);
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += noise.sigma * w[k];
  return y;
}

/// Noise level giving 10 log10(||A x||^2 / (m sigma^2)) = snr_db, m = dim(A x).
inline double sigma_from_snr(const ImageField& reference, const DegradationOp& op, double snr_db) {
  if (!std::isfinite(snr_db)) throw RejectedInput("sigma_from_snr: snr must be finite");
  const ImageField ax = apply_op(op, reference);
  const double power = squared_norm(ax) / static_cast<double>(ax.size());
  if (!(power > 0.0)) throw RejectedInput("sigma_from_snr: degraded reference has zero energy");
  return std::sqrt(power / std::pow(10.0, snr_db / 10.0));
}

}  // namespace redsample
