#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "dyndepth/geometry.hpp"
#include "dyndepth/raster.hpp"

namespace dyndepth {

/// Dense optical flow v_{source -> target} in pixels.
struct FlowField {
  int source = 0;
  int target = 0;
  Raster<Eigen::Vector2d> vectors;

  int width() const { return vectors.width; }
  int height() const { return vectors.height; }
};

/// 1 = occluded or unreliable correspondence.
struct OcclusionMask {
  int source = 0;
  int target = 0;
  Mask flags;
};

/// 1 = static region.
struct MotionMask {
  int frame = 0;
  Mask flags;
};

struct FramePair {
  int i = 0;
  int j = 0;
  friend bool operator==(FramePair, FramePair) = default;
  friend auto operator<=>(FramePair, FramePair) = default;
};

/// Consecutive pairs plus the wide-baseline offsets {2, 4, 6, 8}, both
/// directions; pairs that run past the sequence are dropped.
/// Order: by offset, then by source frame, forward before backward.
std::vector<FramePair> pair_schedule(int frame_count);

inline constexpr int kScheduleOffsets[] = {1, 2, 4, 6, 8};

/// p = x + v(x) at integer pixel x. Throws domain error when x is outside.
Pixel corresponding_pixel(const FlowField& flow, int x, int y);

inline constexpr double kOcclusionThreshold = 1.0;

/// Forward-backward check: 1 where |v_ij(x) + v_ji(x + v_ij(x))| > threshold,
/// with v_ji sampled bilinearly; targets outside the image are marked 1.
OcclusionMask occlusion_mask(const FlowField& forward,
                             const FlowField& backward,
                             double threshold = kOcclusionThreshold);

/// Median of the values; the mean of the two central values for even counts.
double median(std::vector<double> values);

/// mean over frames of median(D_init / D_sparse) over valid sparse samples
/// (sparse value > 0). Frames without valid samples are skipped.
double scale_alignment(std::span<const Raster<double>> init_depths,
                       std::span<const Raster<double>> sparse_depths);

}  // namespace dyndepth
