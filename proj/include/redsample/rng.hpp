#pragma once

#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <span>

namespace redsample {

/// Anything that can fill a buffer with standard Gaussian variates. Samplers
/// are templated on this so tests can inject deterministic or recording streams.
template <class G>
concept GaussianSource = requires(G& g, std::span<double> out) {
  { g.fill_gaussian(out) };
};

/// Counter-based Philox4x32-10 generator with Box-Muller Gaussians.
///
/// The key is the 64-bit seed, the upper counter words carry a stream index so
/// chains derived from one master seed never overlap. Uniform bits are identical
/// on every platform; Gaussian variates additionally rely on the platform libm
/// for log/sin/cos.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  static RngStream for_chain(std::uint64_t master_seed, std::uint64_t chain_index) {
    return RngStream(master_seed, chain_index + 1);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  /// Raw Philox block for a given counter; exposed for known-answer tests.
  static std::array<std::uint32_t, 4> philox_block(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t m0 = 0xD2511F53u, m1 = 0xCD9E8D57u;
    constexpr std::uint32_t w0 = 0x9E3779B9u, w1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(m0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(m1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += w0;
      key[1] += w1;
    }
    return ctr;
  }

  std::uint64_t next_u64() {
    if (lane_ == 2) refill();
    return buffer_[lane_++];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  void fill_gaussian(std::span<double> out) {
    for (double& v : out) v = normal();
  }

 private:
  void refill() {
    const std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
        static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
    const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                              static_cast<std::uint32_t>(seed_ >> 32)};
    const auto block = philox_block(ctr, key);
    buffer_[0] = (static_cast<std::uint64_t>(block[1]) << 32) | block[0];
    buffer_[1] = (static_cast<std::uint64_t>(block[3]) << 32) | block[2];
    ++counter_;
    lane_ = 0;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int lane_ = 2;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

static_assert(GaussianSource<RngStream>);

}  // namespace redsample
