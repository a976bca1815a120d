#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

namespace redsample {

using Complex = std::complex<double>;

/// Separable 2D DFT over a height x width plane (row-major).
///
/// Holds per-size twiddle caches, so one instance must not be shared between
/// threads. Chains own their own workspace.
class Fft2 {
 public:
  Fft2(std::size_t height, std::size_t width) : h_(height), w_(width), row_in_(width), row_out_(width), col_in_(height), col_out_(height) {}

  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }

  void forward(std::span<const double> plane, std::vector<Complex>& out) {
    out.assign(plane.begin(), plane.end());
    transform(out, false);
  }
  void forward(std::vector<Complex>& data) { transform(data, false); }

  /// Inverse transform including the 1/(h*w) normalization.
  void inverse(std::vector<Complex>& data) { transform(data, true); }

  void inverse_real(std::vector<Complex>& data, std::span<double> out) {
    transform(data, true);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = data[k].real();
  }

 private:
  void transform(std::vector<Complex>& data, bool inverse) {
    for (std::size_t i = 0; i < h_; ++i) {
      std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(i * w_), w_, row_in_.begin());
      run(row_out_, row_in_, inverse);
      std::copy(row_out_.begin(), row_out_.end(), data.begin() + static_cast<std::ptrdiff_t>(i * w_));
    }
    for (std::size_t j = 0; j < w_; ++j) {
      for (std::size_t i = 0; i < h_; ++i) col_in_[i] = data[i * w_ + j];
      run(col_out_, col_in_, inverse);
      for (std::size_t i = 0; i < h_; ++i) data[i * w_ + j] = col_out_[i];
    }
  }

  void run(std::vector<Complex>& out, const std::vector<Complex>& in, bool inverse) {
    if (in.size() == 1) {
      out[0] = in[0];
      return;
    }
    if (inverse) {
      fft_.inv(out.data(), in.data(), static_cast<Eigen::Index>(in.size()));
    } else {
      fft_.fwd(out.data(), in.data(), static_cast<Eigen::Index>(in.size()));
    }
  }

  std::size_t h_, w_;
  Eigen::FFT<double> fft_;
  std::vector<Complex> row_in_, row_out_, col_in_, col_out_;
};

}  // namespace redsample
