#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "vxsplat/io/binary.hpp"

namespace vxsplat::io {

namespace image_detail {

inline std::uint8_t to_byte(double v) {
  if (!std::isfinite(v)) v = 0.0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void write_png_raw(const std::filesystem::path& path, int w, int h, png_uint_32 format, const void* data) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, data, 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw InputError("cannot write PNG " + path.string() + ": " + msg);
  }
}

template <typename T>
std::vector<T> read_png_raw(const std::filesystem::path& path, png_uint_32 format, int& w, int& h) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw InputError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = format;
  w = static_cast<int>(img.width);
  h = static_cast<int>(img.height);
  std::vector<T> buf(PNG_IMAGE_SIZE(img) / sizeof(T));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw InputError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return buf;
}

inline bool has_extension(const std::filesystem::path& p, const char* ext) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

}  // namespace image_detail

/// RGB8 PNG; channel values are clamped to [0,1] and rounded to 1/255.
inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  std::vector<std::uint8_t> buf(img.data.size());
  std::transform(img.data.begin(), img.data.end(), buf.begin(), image_detail::to_byte);
  image_detail::write_png_raw(path, img.width, img.height, PNG_FORMAT_RGB, buf.data());
}

inline RgbImage read_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto buf = image_detail::read_png_raw<std::uint8_t>(path, PNG_FORMAT_RGB, w, h);
  RgbImage img(w, h);
  for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] / 255.0;
  return img;
}

/// 16-bit gray PNG of depth in millimetres; 0 marks no depth.
inline void write_depth_png(const std::filesystem::path& path, const ScalarImage& depth) {
  std::vector<std::uint16_t> buf(depth.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double mm = std::isfinite(depth.data[i]) ? depth.data[i] * 1000.0 : 0.0;
    buf[i] = static_cast<std::uint16_t>(std::lround(std::clamp(mm, 0.0, 65535.0)));
  }
  image_detail::write_png_raw(path, depth.width, depth.height, PNG_FORMAT_LINEAR_Y, buf.data());
}

inline ScalarImage read_depth_png(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto buf = image_detail::read_png_raw<std::uint16_t>(path, PNG_FORMAT_LINEAR_Y, w, h);
  ScalarImage img(w, h);
  for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] / 1000.0;
  return img;
}

/// 8-bit gray PNG of a [0,1] map such as the silhouette.
inline void write_gray_png(const std::filesystem::path& path, const ScalarImage& img) {
  std::vector<std::uint8_t> buf(img.data.size());
  std::transform(img.data.begin(), img.data.end(), buf.begin(), image_detail::to_byte);
  image_detail::write_png_raw(path, img.width, img.height, PNG_FORMAT_GRAY, buf.data());
}

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  for (double v : img.data) out += static_cast<char>(image_detail::to_byte(v));
  write_file_bytes(path, out);
}

inline RgbImage read_ppm(const std::filesystem::path& path) {
  const std::string b = read_file_bytes(path);
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) {
    throw ParseError(path.string(), ParseError::Location::Offset, pos, why);
  };
  auto field = [&]() -> long {
    for (;;) {
      while (pos < b.size() && std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
      if (pos < b.size() && b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) ++pos;
    if (pos == start || pos - start > 9) fail("bad PPM header field");
    return std::stol(b.substr(start, pos - start));
  };
  if (b.compare(0, 2, "P6") != 0) fail("not a binary PPM (P6)");
  pos = 2;
  const long w = field(), h = field(), maxval = field();
  if (maxval != 255) fail("only maxval 255 is supported");
  if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos]))) fail("bad PPM header");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (b.size() - pos != need) fail("expected " + std::to_string(need) + " pixel bytes");
  RgbImage img(static_cast<int>(w), static_cast<int>(h));
  for (std::size_t i = 0; i < need; ++i) img.data[i] = static_cast<std::uint8_t>(b[pos + i]) / 255.0;
  return img;
}

/// PNG, or binary PPM when the extension is .ppm.
inline void write_image(const std::filesystem::path& path, const RgbImage& img) {
  if (image_detail::has_extension(path, ".ppm")) write_ppm(path, img);
  else write_png(path, img);
}

inline RgbImage read_image(const std::filesystem::path& path) {
  if (image_detail::has_extension(path, ".ppm")) return read_ppm(path);
  return read_png(path);
}

}  // namespace vxsplat::io
