#include "dyndepth/geometry.hpp"

#include <cmath>
#include <string>

#include <Eigen/LU>

namespace dyndepth {

double Camera::depth_of(const Eigen::Vector3d& X) const {
  return (K.row(2) * (R.transpose() * (X - t)))(0);
}

Eigen::Vector3d Camera::ray(const Pixel& x) const {
  return R * K.inverse() * Eigen::Vector3d(x.x(), x.y(), 1.0);
}

void validate(const Camera& camera) {
  const Eigen::Matrix3d& R = camera.R;
  const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  require(ortho < 1e-9 && std::abs(R.determinant() - 1.0) < 1e-9,
          ErrorKind::domain,
          "camera " + std::to_string(camera.index) + ": R is not a rotation");
  const Eigen::Matrix3d& K = camera.K;
  require(K(1, 0) == 0.0 && K(2, 0) == 0.0 && K(2, 1) == 0.0 && K(2, 2) == 1.0,
          ErrorKind::domain,
          "camera " + std::to_string(camera.index) +
              ": K must be upper triangular with K(2,2) = 1");
  require(K(0, 0) > 0.0 && K(1, 1) > 0.0, ErrorKind::domain,
          "camera " + std::to_string(camera.index) +
              ": focal lengths must be positive");
  require(camera.width > 0 && camera.height > 0, ErrorKind::domain,
          "camera " + std::to_string(camera.index) +
              ": image size must be positive");
}

Eigen::Vector3d unproject(const Camera& camera, const Pixel& x, double depth) {
  if (!(depth > 0.0))
    fail(ErrorKind::domain, "unproject: depth must be positive, got " +
                                std::to_string(depth));
  return camera.ray(x) * depth + camera.t;
}

std::optional<Pixel> project(const Camera& camera, const Eigen::Vector3d& X) {
  const Eigen::Vector3d y = camera.K * (camera.R.transpose() * (X - camera.t));
  if (y.z() <= kBehindCameraEpsilon) return std::nullopt;
  return Pixel(y.x() / y.z(), y.y() / y.z());
}

std::optional<double> reprojected_depth(const Camera& camera,
                                        const Eigen::Vector3d& X,
                                        const Eigen::Vector3d& S) {
  const double z = camera.depth_of(X + S);
  if (z <= kBehindCameraEpsilon) return std::nullopt;
  return z;
}

Eigen::Vector3d ray_direction(const Camera& camera, const Pixel& x) {
  return camera.ray(x).normalized();
}

}  // namespace dyndepth
