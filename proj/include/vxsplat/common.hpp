#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vxsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using Pose = Eigen::Isometry3d;

/// Caller supplied a value outside the operation's input domain.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented pre/post-condition between modules was broken.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Factorization or evaluation produced no usable result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Point set too degenerate (collinear, coincident) for a plane fit.
class DegenerateGeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Located parse failure: file plus line or byte offset.
class ParseError : public InputError {
 public:
  enum class Location { Line, Offset };

  ParseError(std::string file, Location kind, std::uint64_t where, std::string reason)
      : InputError(file + (kind == Location::Line ? ":line " : ":offset ") + std::to_string(where) +
                   ": " + reason),
        file_(std::move(file)),
        kind_(kind),
        where_(where),
        reason_(std::move(reason)) {}

  const std::string& file() const { return file_; }
  Location location_kind() const { return kind_; }
  std::uint64_t where() const { return where_; }
  const std::string& reason() const { return reason_; }

 private:
  std::string file_;
  Location kind_;
  std::uint64_t where_;
  std::string reason_;
};

inline bool all_finite(const Vec3& v) {
  return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

/// Row-major image with interleaved channels, values stored as double.
template <int Channels>
struct Image {
  static constexpr int kChannels = Channels;

  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * Channels, fill) {
    if (w < 0 || h < 0) throw InputError("image dimensions must be non-negative");
  }

  double& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * Channels + c];
  }
  double at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * Channels + c];
  }

  bool same_size(const Image& other) const { return width == other.width && height == other.height; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  bool operator==(const Image&) const = default;
};

using RgbImage = Image<3>;
using ScalarImage = Image<1>;

inline Vec3 pixel_rgb(const RgbImage& img, int x, int y) {
  return {img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)};
}

inline void set_pixel_rgb(RgbImage& img, int x, int y, const Vec3& c) {
  img.at(x, y, 0) = c.x();
  img.at(x, y, 1) = c.y();
  img.at(x, y, 2) = c.z();
}

}  // namespace vxsplat
