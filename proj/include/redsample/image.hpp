#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "redsample/errors.hpp"

namespace redsample {

struct Shape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t size() const noexcept { return height * width * channels; }
  std::size_t plane() const noexcept { return height * width; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
  }
};

/// Real-valued pixel grid, row-major with interleaved channels:
/// element (i, j, c) lives at (i * width + j) * channels + c.
///
/// Every element is finite on construction. Arithmetic helpers below do not
/// re-check; samplers validate their state once per iteration instead.
class ImageField {
 public:
  ImageField() = default;

  explicit ImageField(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {
    validate_shape();
    if (!std::isfinite(fill)) throw RejectedInput("ImageField: non-finite fill value");
  }

  ImageField(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_.size()) {
      throw RejectedInput("ImageField: data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_.str());
    }
    if (!all_finite()) throw RejectedInput("ImageField: non-finite element");
  }

  static ImageField zeros(std::size_t h, std::size_t w, std::size_t c = 1) { return ImageField(Shape{h, w, c}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t height() const noexcept { return shape_.height; }
  std::size_t width() const noexcept { return shape_.width; }
  std::size_t channels() const noexcept { return shape_.channels; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(std::size_t i, std::size_t j, std::size_t c = 0) const noexcept {
    return (i * shape_.width + j) * shape_.channels + c;
  }
  double& at(std::size_t i, std::size_t j, std::size_t c = 0) noexcept { return data_[index(i, j, c)]; }
  double at(std::size_t i, std::size_t j, std::size_t c = 0) const noexcept { return data_[index(i, j, c)]; }
  double& operator[](std::size_t k) noexcept { return data_[k]; }
  double operator[](std::size_t k) const noexcept { return data_[k]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& vector() const noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  /// Channel c copied into a contiguous height x width plane.
  std::vector<double> plane(std::size_t c) const {
    std::vector<double> out(shape_.plane());
    for (std::size_t p = 0; p < out.size(); ++p) out[p] = data_[p * shape_.channels + c];
    return out;
  }
  void set_plane(std::size_t c, std::span<const double> values) {
    for (std::size_t p = 0; p < shape_.plane(); ++p) data_[p * shape_.channels + c] = values[p];
  }

  ImageField& operator+=(const ImageField& o) {
    check_same(o, "+=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  ImageField& operator-=(const ImageField& o) {
    check_same(o, "-=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  ImageField& operator*=(double a) {
    for (double& v : data_) v *= a;
    return *this;
  }

  bool operator==(const ImageField&) const = default;

  void check_same(const ImageField& o, const char* what) const {
    if (!(shape_ == o.shape_)) {
      throw RejectedInput(std::string("shape mismatch in ") + what + ": " + shape_.str() + " vs " + o.shape_.str());
    }
  }

 private:
  void validate_shape() const {
    if (shape_.height == 0 || shape_.width == 0 || shape_.channels == 0) {
      throw RejectedInput("ImageField: dimensions must be positive, got " + shape_.str());
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

inline ImageField operator+(ImageField a, const ImageField& b) { return a += b; }
inline ImageField operator-(ImageField a, const ImageField& b) { return a -= b; }
inline ImageField operator*(double s, ImageField a) { return a *= s; }

inline double dot(const ImageField& a, const ImageField& b) {
  a.check_same(b, "dot");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double squared_norm(const ImageField& a) { return dot(a, a); }
inline double norm(const ImageField& a) { return std::sqrt(squared_norm(a)); }

inline double max_abs(const ImageField& a) {
  double m = 0.0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const ImageField& a, const ImageField& b) {
  a.check_same(b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, std::abs(a[k] - b[k]));
  return m;
}

/// Affine rescale to [0, 1]; a constant field maps to zeros.
inline ImageField rescale_unit(const ImageField& a) {
  const auto [lo, hi] = std::minmax_element(a.values().begin(), a.values().end());
  ImageField out(a.shape());
  const double range = *hi - *lo;
  if (range <= 0.0) return out;
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = (a[k] - *lo) / range;
  return out;
}

/// Deterministic piecewise-smooth test scene in [0, 1]: a diagonal ramp with
/// a bright disk, a dark rectangle and a soft stripe.
inline ImageField synthetic_image(std::size_t h, std::size_t w, std::size_t channels = 1) {
  ImageField img(Shape{h, w, channels});
  const double hh = static_cast<double>(h), ww = static_cast<double>(w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double u = (static_cast<double>(i) + 0.5) / hh;
      const double v = (static_cast<double>(j) + 0.5) / ww;
      for (std::size_t c = 0; c < channels; ++c) {
        double val = 0.25 + 0.3 * (0.6 * u + 0.4 * v) + 0.05 * static_cast<double>(c);
        const double du = u - 0.35, dv = v - 0.6;
        if (du * du + dv * dv < 0.04) val = 0.85;
        if (u > 0.6 && u < 0.85 && v > 0.15 && v < 0.45) val = 0.1 + 0.05 * static_cast<double>(c);
        val += 0.08 * std::sin(6.0 * v + 2.0 * u);
        img.at(i, j, c) = std::clamp(val, 0.0, 1.0);
      }
    }
  }
  return img;
}

}  // namespace redsample
