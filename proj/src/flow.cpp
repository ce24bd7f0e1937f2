#include "dyndepth/flow.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dyndepth {

std::optional<ad::Tap> bilinear_taps(int width, int height, const Pixel& p) {
  if (!(p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= width - 1.0 &&
        p.y() <= height - 1.0))
    return std::nullopt;
  const int x0 = std::min(static_cast<int>(std::floor(p.x())), width - 1);
  const int y0 = std::min(static_cast<int>(std::floor(p.y())), height - 1);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double fx = p.x() - x0;
  const double fy = p.y() - y0;
  auto idx = [width](int x, int y) {
    return static_cast<std::uint32_t>(y * width + x);
  };
  ad::Tap tap;
  tap.index = {idx(x0, y0), idx(x1, y0), idx(x0, y1), idx(x1, y1)};
  tap.weight = {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy,
                fx * fy};
  return tap;
}

ad::Tap single_tap(std::uint32_t index) {
  ad::Tap tap;
  tap.index = {index, index, index, index};
  tap.weight = {1.0, 0.0, 0.0, 0.0};
  return tap;
}

std::optional<double> bilinear_sample(const Raster<double>& raster,
                                      const Pixel& p) {
  auto tap = bilinear_taps(raster.width, raster.height, p);
  if (!tap) return std::nullopt;
  double acc = 0.0;
  for (int k = 0; k < 4; ++k)
    if (tap->weight[k] != 0.0) acc += tap->weight[k] * raster.data[tap->index[k]];
  return acc;
}

std::optional<double> log_bilinear_sample(const Raster<double>& raster,
                                          const Pixel& p) {
  auto tap = bilinear_taps(raster.width, raster.height, p);
  if (!tap) return std::nullopt;
  double acc = 0.0;
  for (int k = 0; k < 4; ++k)
    if (tap->weight[k] != 0.0)
      acc += tap->weight[k] * std::log(raster.data[tap->index[k]]);
  return std::exp(acc);
}

std::optional<Eigen::Vector2d> bilinear_sample(
    const Raster<Eigen::Vector2d>& raster, const Pixel& p) {
  auto tap = bilinear_taps(raster.width, raster.height, p);
  if (!tap) return std::nullopt;
  Eigen::Vector2d acc = Eigen::Vector2d::Zero();
  for (int k = 0; k < 4; ++k)
    if (tap->weight[k] != 0.0) acc += tap->weight[k] * raster.data[tap->index[k]];
  return acc;
}

std::vector<FramePair> pair_schedule(int frame_count) {
  std::vector<FramePair> pairs;
  for (int k : kScheduleOffsets)
    for (int i = 0; i + k < frame_count; ++i) {
      pairs.push_back({i, i + k});
      pairs.push_back({i + k, i});
    }
  return pairs;
}

Pixel corresponding_pixel(const FlowField& flow, int x, int y) {
  if (!flow.vectors.contains(x, y))
    fail(ErrorKind::domain, "corresponding_pixel: (" + std::to_string(x) +
                                ", " + std::to_string(y) +
                                ") is outside the flow field");
  return Pixel(x, y) + flow.vectors.at(x, y);
}

OcclusionMask occlusion_mask(const FlowField& forward,
                             const FlowField& backward, double threshold) {
  require(forward.vectors.same_shape(backward.vectors), ErrorKind::structural,
          "occlusion_mask: forward and backward flow sizes differ");
  OcclusionMask mask{forward.source, forward.target,
                     Mask(forward.width(), forward.height(), 0)};
  for (int y = 0; y < forward.height(); ++y)
    for (int x = 0; x < forward.width(); ++x) {
      const Eigen::Vector2d& v = forward.vectors.at(x, y);
      auto back = bilinear_sample(backward.vectors, Pixel(x, y) + v);
      if (!back || (v + *back).norm() > threshold) mask.flags.at(x, y) = 1;
    }
  return mask;
}

double median(std::vector<double> values) {
  require(!values.empty(), ErrorKind::domain, "median of an empty sample");
  const std::size_t n = values.size();
  const std::size_t mid = n / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

double scale_alignment(std::span<const Raster<double>> init_depths,
                       std::span<const Raster<double>> sparse_depths) {
  require(init_depths.size() == sparse_depths.size(), ErrorKind::structural,
          "scale_alignment: frame counts differ");
  double total = 0.0;
  int frames = 0;
  for (std::size_t f = 0; f < init_depths.size(); ++f) {
    const auto& init = init_depths[f];
    const auto& sparse = sparse_depths[f];
    require(init.same_shape(sparse), ErrorKind::structural,
            "scale_alignment: raster size mismatch in frame " + std::to_string(f));
    std::vector<double> ratios;
    for (std::size_t k = 0; k < init.size(); ++k)
      if (sparse.data[k] > 0.0) ratios.push_back(init.data[k] / sparse.data[k]);
    if (ratios.empty()) continue;
    total += median(std::move(ratios));
    ++frames;
  }
  require(frames > 0, ErrorKind::domain,
          "scale_alignment: no frame has a valid sparse depth sample");
  return total / frames;
}

}  // namespace dyndepth
