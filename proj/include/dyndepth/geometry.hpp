#pragma once

#include <optional>

#include <Eigen/Core>

#include "dyndepth/autodiff.hpp"

namespace dyndepth {

/// Continuous pixel coordinates; pixel (0, 0) is the center of the top-left
/// pixel.
using Pixel = Eigen::Vector2d;

/// Intrinsics and pose of one frame. R and t map camera coordinates to world
/// coordinates: X_world = R X_cam + t.
struct Camera {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  int width = 0;
  int height = 0;
  int index = 0;

  Eigen::Vector3d center() const { return t; }
  /// Camera-space z of a world point.
  double depth_of(const Eigen::Vector3d& X) const;
  /// K R^T, the matrix the projection ops use.
  ad::ProjectionCamera projection() const { return {K * R.transpose(), t}; }
  /// R K^-1 [u, v, 1]: world-space direction with unit camera-space z.
  Eigen::Vector3d ray(const Pixel& x) const;
};

/// Throws domain error unless R is a rotation and K a valid intrinsics matrix.
void validate(const Camera& camera);

inline constexpr double kBehindCameraEpsilon = ad::kMinCameraDepth;

/// X = R (depth K^-1 x~) + t.
Eigen::Vector3d unproject(const Camera& camera, const Pixel& x, double depth);

/// pi(K R^T (X - t)); nullopt when X is not in front of the camera.
std::optional<Pixel> project(const Camera& camera, const Eigen::Vector3d& X);

/// |K R^T (X + S - t)|_z; nullopt when the displaced point is behind.
std::optional<double> reprojected_depth(const Camera& camera,
                                        const Eigen::Vector3d& X,
                                        const Eigen::Vector3d& S);

/// Unit world-space direction of the ray through x.
Eigen::Vector3d ray_direction(const Camera& camera, const Pixel& x);

}  // namespace dyndepth
