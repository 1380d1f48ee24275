#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>

#include "subdepth/ops.hpp"
#include "subdepth/tensor.hpp"

namespace subdepth {

/// Transformed points at or below this depth are invalid for projection.
inline constexpr double kMinProjectionDepth = 1e-3;

/// Pinhole intrinsics in pixel units. Pixel (u, v) has its centre at integer
/// coordinates.
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::size_t width = 1;
  std::size_t height = 1;

  /// Throws std::invalid_argument when focal lengths or principal point are
  /// out of range.
  void validate() const;

  /// Shared intrinsics with the principal point at the image centre.
  static Intrinsics centered(std::size_t width, std::size_t height, double focal);

  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

/// Axis-angle rotation (radians times unit axis) and translation.
struct Pose6DoF {
  std::array<double, 3> axis_angle{};
  std::array<double, 3> translation{};

  void validate() const;
  friend bool operator==(const Pose6DoF&, const Pose6DoF&) = default;
};

/// Rigid 4x4 homogeneous transform.
class SE3Transform {
 public:
  SE3Transform() : m_(Eigen::Matrix4d::Identity()) {}
  explicit SE3Transform(const Eigen::Matrix4d& m) : m_(m) {}

  [[nodiscard]] const Eigen::Matrix4d& matrix() const { return m_; }
  [[nodiscard]] Eigen::Matrix3d rotation() const { return m_.topLeftCorner<3, 3>(); }
  [[nodiscard]] Eigen::Vector3d translation() const { return m_.topRightCorner<3, 1>(); }

  /// Closed-form rigid inverse [R^T, -R^T t].
  [[nodiscard]] SE3Transform inverse() const;
  [[nodiscard]] Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation() * p + translation(); }

  /// Orthonormal rotation, unit determinant and (0,0,0,1) last row.
  [[nodiscard]] bool is_valid(double tol = 1e-9) const;

  friend SE3Transform operator*(const SE3Transform& a, const SE3Transform& b) {
    return SE3Transform(a.m_ * b.m_);
  }

 private:
  Eigen::Matrix4d m_;
};

/// Exponential map: Rodrigues' formula with a series expansion near zero.
SE3Transform pose_to_transform(const Pose6DoF& pose);
/// Logarithm of the rotation block; the result has angle in [0, pi].
Pose6DoF transform_to_pose(const SE3Transform& t);

/// Differentiable exponential map: 6-vector (axis-angle, translation) to a
/// 4 x 4 row-major transform.
Tensor pose_to_transform(const Tensor& pose);
/// Inverse of a 4 x 4 rigid transform: [R^T | -R^T t].
Tensor invert_transform(const Tensor& transform);
/// Records `t` as a 4 x 4 constant.
Tensor transform_constant(Graph& graph, const SE3Transform& t);

/// depth (H x W) -> camera-frame points (H x W x 3). Throws on depth <= 0.
Tensor backproject(const Tensor& depth, const Intrinsics& k);

/// Applies a 4 x 4 rigid transform to H x W x 3 points.
Tensor transform_points(const Tensor& points, const Tensor& transform);

struct Projection {
  Tensor coords;  ///< H x W x 2 pixel coordinates (u, v)
  Mask valid;     ///< z > kMinProjectionDepth and inside the image
};

/// Pinhole projection of camera-frame points.
Projection pinhole_project(const Tensor& points, const Intrinsics& k);
/// Transforms the points, then projects them.
Projection project(const Tensor& points, const Intrinsics& k, const Tensor& transform);
Projection project(const Tensor& points, const Intrinsics& k, const SE3Transform& transform);

struct ViewSynthesis {
  Tensor reconstruction;  ///< target-aligned H x W x C resampling of the source
  Mask valid;
};

/// Inverse warp of `source` into the target view given target depth and the
/// target-to-source transform.
ViewSynthesis synthesize_view(const Tensor& source, const Tensor& depth, const Tensor& transform,
                              const Intrinsics& k);

}  // namespace subdepth
