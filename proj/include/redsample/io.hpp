#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "redsample/errors.hpp"
#include "redsample/image.hpp"

namespace redsample::io {

/// Lossless float interchange frame: "RFI1 <height> <width> <channels>\n"
/// followed by row-major little-endian IEEE-754 doubles.
inline void write_rfi(std::ostream& out, const ImageField& img) {
  out << "RFI1 " << img.height() << ' ' << img.width() << ' ' << img.channels() << '\n';
  for (double v : img.values()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    char buf[8];
    std::memcpy(buf, &bits, 8);
    out.write(buf, 8);
  }
  if (!out) throw std::runtime_error("write_rfi: stream failure");
}

inline std::string encode_rfi(const ImageField& img) {
  std::ostringstream os(std::ios::binary);
  write_rfi(os, img);
  return os.str();
}

/// Reads one frame; rejects malformed headers, truncated payloads and non-finite values.
inline ImageField read_rfi(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw RejectedInput("read_rfi: missing header");
  std::istringstream hs(line);
  std::string magic;
  long long h = 0, w = 0, c = 0;
  if (!(hs >> magic >> h >> w >> c) || magic != "RFI1" || h <= 0 || w <= 0 || c <= 0) {
    throw RejectedInput("read_rfi: malformed header '" + line + "'");
  }
  std::string rest;
  if (hs >> rest) throw RejectedInput("read_rfi: trailing header content");
  const Shape shape{static_cast<std::size_t>(h), static_cast<std::size_t>(w), static_cast<std::size_t>(c)};
  std::vector<double> data(shape.size());
  for (double& v : data) {
    char buf[8];
    if (!in.read(buf, 8)) throw RejectedInput("read_rfi: truncated payload");
    std::uint64_t bits;
    std::memcpy(&bits, buf, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    v = std::bit_cast<double>(bits);
  }
  return ImageField(shape, std::move(data));
}

inline void save_rfi(const std::string& path, const ImageField& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  write_rfi(f, img);
}

inline ImageField load_rfi(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RejectedInput("cannot open " + path);
  return read_rfi(f);
}

}  // namespace redsample::io
