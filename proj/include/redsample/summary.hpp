#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "redsample/errors.hpp"
#include "redsample/image.hpp"

namespace redsample {

/// Single-pass pixelwise mean and variance (running mean plus sum of squared
/// deviations). Merging follows the pairwise update, so reductions over chains
/// do not depend on grouping beyond rounding.
class RunningMoments {
 public:
  RunningMoments() = default;
  explicit RunningMoments(Shape shape) : mean_(shape), m2_(shape) {}

  void push(const ImageField& x) {
    if (mean_.empty()) {
      mean_ = ImageField(x.shape());
      m2_ = ImageField(x.shape());
    }
    mean_.check_same(x, "RunningMoments::push");
    ++count_;
    const double inv = 1.0 / static_cast<double>(count_);
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double delta = x[k] - mean_[k];
      mean_[k] += delta * inv;
      m2_[k] += delta * (x[k] - mean_[k]);
    }
  }

  void merge(const RunningMoments& o) {
    if (o.count_ == 0) return;
    if (count_ == 0) {
      *this = o;
      return;
    }
    mean_.check_same(o.mean_, "RunningMoments::merge");
    const double na = static_cast<double>(count_), nb = static_cast<double>(o.count_);
    const double n = na + nb;
    for (std::size_t k = 0; k < mean_.size(); ++k) {
      const double delta = o.mean_[k] - mean_[k];
      mean_[k] += delta * nb / n;
      m2_[k] += o.m2_[k] + delta * delta * na * nb / n;
    }
    count_ += o.count_;
  }

  std::size_t count() const noexcept { return count_; }
  const ImageField& mean() const noexcept { return mean_; }

  /// Population variance (divisor = count), zero for a single sample.
  ImageField variance() const {
    ImageField v = m2_;
    if (count_ > 0) v *= 1.0 / static_cast<double>(count_);
    for (double& e : v.values()) e = std::max(e, 0.0);
    return v;
  }

 private:
  std::size_t count_ = 0;
  ImageField mean_;
  ImageField m2_;
};

/// Post-burn-in statistics of one chain (or a merged set of chains).
struct ChainSummary {
  RunningMoments x_moments;
  std::optional<RunningMoments> z_moments;
  std::vector<ImageField> stored_samples;
  std::vector<std::size_t> probe_pixels;
  std::vector<std::vector<double>> probe_traces;  // one series per probe pixel
  std::size_t iterations = 0;
  std::size_t projection_active = 0;  // PnP-ULA only: iterations with an active box projection
  double wall_seconds = 0.0;
  bool step_size_verified = false;  // gamma checked against the contraction bound

  ImageField mean_x() const { return x_moments.mean(); }
  ImageField var_x() const { return x_moments.variance(); }
  std::size_t sample_count() const noexcept { return x_moments.count(); }
  double projection_fraction() const {
    return iterations == 0 ? 0.0 : static_cast<double>(projection_active) / static_cast<double>(iterations);
  }

  /// Equality of every statistical field; wall-clock time is ignored.
  bool same_statistics(const ChainSummary& o) const {
    return mean_x() == o.mean_x() && var_x() == o.var_x() && stored_samples == o.stored_samples &&
           probe_pixels == o.probe_pixels && probe_traces == o.probe_traces && iterations == o.iterations &&
           projection_active == o.projection_active && sample_count() == o.sample_count();
  }
};

/// Associative reduction of independent chains: moments merge, counters add,
/// stored samples concatenate in argument order. Probe traces stay those of
/// the first argument, since autocorrelation is only meaningful within a chain.
inline ChainSummary merge_summaries(const ChainSummary& a, const ChainSummary& b) {
  ChainSummary out = a;
  out.x_moments.merge(b.x_moments);
  if (a.z_moments && b.z_moments) {
    out.z_moments->merge(*b.z_moments);
  } else {
    out.z_moments.reset();
  }
  out.stored_samples.insert(out.stored_samples.end(), b.stored_samples.begin(), b.stored_samples.end());
  out.iterations += b.iterations;
  out.projection_active += b.projection_active;
  out.wall_seconds = std::max(a.wall_seconds, b.wall_seconds);
  return out;
}

}  // namespace redsample
