#pragma once

// Moving-cube benchmark: an axis-aligned cube translating at constant
// velocity in front of a background plane, seen by a camera that slides
// along a sine path. Ground truth depth, flow and motion masks are analytic.

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "dyndepth/dataset.hpp"

namespace dyndepth {

struct CubeSceneSpec {
  int frame_count = 30;
  int width = 96;
  int height = 96;
  double focal = 96.0;
  Eigen::Vector2d principal{47.5, 47.5};
  double cube_edge = 0.5;
  Eigen::Vector3d cube_start{0.05, 0.05, 2.8};  // cube center at frame 0
  Eigen::Vector3d cube_velocity{0.0, 0.0, -0.05};  // world units per frame
  double background_z = 4.0;                     // plane z = const (world)
  Eigen::Vector3d camera_base{0.0, 0.0, 0.0};
  Eigen::Vector3d camera_axis{1.0, 0.0, 0.0};
  double camera_amplitude = 0.1;
  double camera_periods = 1.0;  // sine periods over frames 0..T-1
  double init_noise = 0.2;      // multiplicative depth noise amplitude
  int noise_grid = 4;           // noise control points per side
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static CubeSceneSpec from_json(const nlohmann::json& doc);
};

/// Throws config error on an invalid spec.
void validate(const CubeSceneSpec& spec);

/// Flow value written for pixels whose surface point is hidden in the target
/// frame (the Middlebury "unknown" marker).
inline constexpr double kUnknownFlow = 1e10;

enum class Surface : std::uint8_t { none, background, cube };

struct SurfaceHit {
  Surface surface = Surface::none;
  double depth = 0.0;  // camera-space z
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

Camera cube_camera(const CubeSceneSpec& spec, int frame);
Eigen::Vector3d cube_center(const CubeSceneSpec& spec, int frame);

/// First surface hit by the ray through pixel p of frame `frame`.
SurfaceHit trace(const CubeSceneSpec& spec, int frame, const Pixel& p);

/// World position at frame `to` of the surface point `hit` seen at `from`.
Eigen::Vector3d move_point(const CubeSceneSpec& spec, const SurfaceHit& hit,
                           int from, int to);

/// Whether the surface point seen at pixel x of frame i is visible (inside
/// the image and unoccluded) in frame j; `target` receives its projection.
bool visible_in(const CubeSceneSpec& spec, int i, int j, int x, int y,
                Pixel* target = nullptr);

struct CubeScene {
  CubeSceneSpec spec;
  Sequence seq;  // includes gt_depth, motion masks and occlusion masks
  std::vector<Raster<std::uint8_t>> surface;  // Surface per pixel and frame
};

/// Generation error naming the frame when the cube is not visible in it.
CubeScene generate(const CubeSceneSpec& spec);

// --- conditioning -------------------------------------------------------------

inline constexpr double kIllConditioned = 1e4;

struct ConditioningEntry {
  int frame = 0;
  int x = 0;
  int y = 0;
  bool valid = false;
  double condition = 0.0;  // +inf when R is rank deficient
  double min_singular = 0.0;
  bool ill = false;
  double flow_magnitude = 0.0;  // |p_{i->i+1}(x) - x|
};

struct ConditioningReport {
  double threshold = kIllConditioned;
  std::vector<ConditioningEntry> entries;  // valid entries only

  double max_condition() const;
  std::size_t ill_count() const;
  /// Ill-conditioned entries whose one-frame flow is below `max_flow` pixels.
  std::size_t ill_with_small_flow(double max_flow) const;
};

/// Condition number of [r0 r1 r2] for three world-space unit rays.
ConditioningEntry ray_conditioning(const Eigen::Vector3d& r0,
                                   const Eigen::Vector3d& r1,
                                   const Eigen::Vector3d& r2,
                                   double threshold = kIllConditioned);

/// Rays through x in frame i, x1 = p_{i->i+1}(x) and x2 = p_{i+1->i+2}(x1)
/// (bilinear flow at x1). Invalid when the chain leaves the image or meets
/// unknown flow.
ConditioningEntry conditioning_analysis(const Sequence& seq, int frame, int x,
                                        int y,
                                        double threshold = kIllConditioned);

/// Every valid pixel-frame of frames 0..T-3.
ConditioningReport conditioning_scan(const Sequence& seq,
                                     double threshold = kIllConditioned);

}  // namespace dyndepth
