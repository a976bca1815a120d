#pragma once

// 8-bit PNG input/output for display artifacts. Needs libpng at link time.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <png.h>

#include "redsample/errors.hpp"
#include "redsample/image.hpp"

namespace redsample::io {

/// Reads a PNG as gray (1 channel) or RGB (3 channels) in [0, 1]; alpha is dropped.
inline ImageField load_png(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw RejectedInput("cannot read PNG " + path + ": " + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t channels = color ? 3 : 1;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw RejectedInput("cannot decode PNG " + path + ": " + msg);
  }
  std::vector<double> data(buf.size());
  for (std::size_t k = 0; k < buf.size(); ++k) data[k] = buf[k] / 255.0;
  return ImageField(Shape{img.height, img.width, channels}, std::move(data));
}

/// Writes a 1- or 3-channel field as 8-bit PNG after clamping to [0, 1].
inline void save_png(const std::string& path, const ImageField& f) {
  if (f.channels() != 1 && f.channels() != 3) throw RejectedInput("save_png: need 1 or 3 channels");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(f.width());
  img.height = static_cast<png_uint_32>(f.height());
  img.format = f.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> buf(f.size());
  for (std::size_t k = 0; k < f.size(); ++k) {
    buf[k] = static_cast<png_byte>(std::lround(std::clamp(f[k], 0.0, 1.0) * 255.0));
  }
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw RejectedInput("cannot write PNG " + path + ": " + img.message);
  }
}

/// Case-insensitive ".png" suffix test.
inline bool has_png_suffix(const std::string& path) {
  return path.size() >= 4 && std::equal(path.end() - 4, path.end(), ".png", [](char a, char b) {
           return std::tolower(static_cast<unsigned char>(a)) == b;
         });
}

}  // namespace redsample::io
