#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "subdepth/geometry.hpp"
#include "subdepth/image.hpp"

namespace subdepth {

/// Generator settings. Depths are in scene units.
struct SceneConfig {
  std::size_t width = 64;
  std::size_t height = 48;
  /// Focal length as a fraction of the image width.
  double focal_ratio = 0.6;
  double depth_min = 2.0;
  double depth_max = 40.0;
  /// Multiplies every texture frequency.
  double texture_frequency = 1.0;
  /// Nominal forward camera travel per frame.
  double motion_magnitude = 0.3;
  double moving_object_probability = 0.25;
  /// Minimum fraction of target pixels that must stay visible in each source.
  double min_visibility = 0.8;

  void validate() const;
  [[nodiscard]] Intrinsics intrinsics() const;
  friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

void to_json(nlohmann::json& j, const SceneConfig& c);
void from_json(const nlohmann::json& j, SceneConfig& c);

/// Band-limited procedural texture: a base colour, a sum of sinusoids and a
/// soft checkerboard, each component low-pass attenuated by the pixel
/// footprint at render time.
struct Texture {
  struct Wave {
    double fu, fv;  ///< cycles per scene unit along the surface axes
    double phase;
    std::array<double, 3> amplitude;
  };
  std::array<double, 3> base{};
  std::vector<Wave> waves;
  double checker_period = 1.0;
  std::array<double, 3> checker_amplitude{};
};

/// Planar surface patch. Points satisfy dot(normal, p) = offset; `u_axis` and
/// `v_axis` span the plane and give texture coordinates relative to `origin`.
struct Surface {
  std::array<double, 3> normal{};
  double offset = 0.0;
  std::array<double, 3> origin{};
  std::array<double, 3> u_axis{};
  std::array<double, 3> v_axis{};
  /// Extent along the axes from the origin; infinite for unbounded planes.
  double u_min, u_max, v_min, v_max;
  Texture texture;
};

/// Street-canyon layout in frame-0 camera coordinates (x right, y down,
/// z forward): ground plane, two side walls, a back wall and fronto-parallel
/// boxes, plus an optional independently moving rectangle.
struct Scene {
  std::uint64_t seed = 0;
  SceneConfig config;
  std::vector<Surface> surfaces;
  std::optional<Surface> moving_object;
  /// Lateral displacement of the moving object per frame.
  double object_velocity = 0.0;

  [[nodiscard]] bool is_static() const { return !moving_object.has_value(); }
};

/// Camera-to-world motion of the neighbouring frames relative to frame 0.
struct CameraMotion {
  SE3Transform prev_to_world;
  SE3Transform next_to_world;

  /// Forward travel with a small yaw and lateral drift, scaled by
  /// `config.motion_magnitude`.
  static CameraMotion sample(std::uint64_t seed, const SceneConfig& config);
  static CameraMotion stationary() { return {}; }
};

/// Frames in order {I_-1, I_0, I_1} with ground truth for the centre frame.
struct FrameTriplet {
  std::string id;
  std::array<Image, 3> frames;
  Intrinsics intrinsics;
  std::optional<Image> gt_depth;
  std::optional<Pose6DoF> gt_pose_to_prev;
  std::optional<Pose6DoF> gt_pose_to_next;
  /// Frame-0 footprint of the moving object, when there is one.
  std::optional<std::vector<std::uint8_t>> object_mask;

  [[nodiscard]] const Image& target() const { return frames[1]; }
};

/// Deterministic in (seed, config). Throws std::invalid_argument on bad config.
Scene generate_scene(std::uint64_t seed, const SceneConfig& config);

/// Ray-casts all three frames. Throws std::runtime_error when fewer than
/// `min_visibility` of the target pixels project into a source frame.
FrameTriplet render_triplet(const Scene& scene, const CameraMotion& motion);

/// Fraction of target pixels whose ground-truth reprojection lands inside the
/// source image.
double visible_fraction(const Image& depth, const Intrinsics& k, const SE3Transform& target_to_source);

}  // namespace subdepth
