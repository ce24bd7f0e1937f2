#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "dyndepth/autodiff.hpp"
#include "dyndepth/error.hpp"
#include "dyndepth/geometry.hpp"

namespace dyndepth {

/// Row-major image, row 0 at the top.
template <class T>
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, T fill = T{})
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width + x;
  }
  T& at(int x, int y) { return data[index(x, y)]; }
  const T& at(int x, int y) const { return data[index(x, y)]; }
  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
  bool same_shape(const Raster& other) const {
    return width == other.width && height == other.height;
  }
  friend bool operator==(const Raster&, const Raster&) = default;
};

using DepthMap = Raster<double>;
using Mask = Raster<std::uint8_t>;

/// Bilinear taps for continuous position p over a width x height grid, or
/// nullopt when p lies outside [0, w-1] x [0, h-1].
std::optional<ad::Tap> bilinear_taps(int width, int height, const Pixel& p);

/// Tap selecting exactly one texel.
ad::Tap single_tap(std::uint32_t index);

std::optional<double> bilinear_sample(const Raster<double>& raster,
                                      const Pixel& p);
/// exp of the bilinear interpolation of log(raster); raster must be positive.
std::optional<double> log_bilinear_sample(const Raster<double>& raster,
                                          const Pixel& p);
std::optional<Eigen::Vector2d> bilinear_sample(
    const Raster<Eigen::Vector2d>& raster, const Pixel& p);

}  // namespace dyndepth
