#include "subdepth/synthscene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace subdepth {
namespace {

using Vec3 = std::array<double, 3>;

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) { return lo + (hi - lo) * static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform(0.0, static_cast<double>(n))) % n; }
  bool chance(double p) { return uniform(0.0, 1.0) < p; }

 private:
  std::mt19937_64 engine_;
};

constexpr double kInf = std::numeric_limits<double>::infinity();

Texture make_texture(Rng& rng, double frequency, double contrast) {
  Texture t;
  for (auto& b : t.base) b = rng.uniform(0.25, 0.75);
  for (int k = 0; k < 6; ++k) {
    const double f = rng.log_uniform(0.08, 1.2) * frequency;
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double a = rng.uniform(0.05, 0.15) * contrast;
    Texture::Wave w{f * std::cos(angle), f * std::sin(angle), rng.uniform(0.0, 2.0 * std::numbers::pi), {}};
    for (auto& amp : w.amplitude) amp = a * rng.uniform(0.6, 1.0);
    t.waves.push_back(w);
  }
  t.checker_period = rng.uniform(0.8, 3.0) / frequency;
  for (auto& c : t.checker_amplitude) c = rng.uniform(0.05, 0.15) * contrast;
  return t;
}

// Gaussian prefilter response for a component of `freq` cycles per unit.
double attenuation(double freq, double footprint) {
  const double x = std::numbers::pi * freq * footprint;
  return std::exp(-2.0 * x * x);
}

Vec3 shade(const Texture& t, double s, double v, double footprint) {
  Vec3 c = t.base;
  for (const auto& w : t.waves) {
    const double f = std::hypot(w.fu, w.fv);
    const double g = attenuation(f, footprint) * std::sin(2.0 * std::numbers::pi * (w.fu * s + w.fv * v) + w.phase);
    for (int ch = 0; ch < 3; ++ch) c[ch] += w.amplitude[ch] * g;
  }
  const double p = t.checker_period;
  const double checker = std::tanh(3.0 * std::sin(std::numbers::pi * s / p) * std::sin(std::numbers::pi * v / p)) *
                         attenuation(std::numbers::sqrt2 / (2.0 * p), footprint);
  for (int ch = 0; ch < 3; ++ch) c[ch] = std::clamp(c[ch] + t.checker_amplitude[ch] * checker, 0.0, 1.0);
  return c;
}

Surface plane(const Vec3& normal, double offset, const Vec3& origin, const Vec3& u, const Vec3& v, Texture tex) {
  return Surface{normal, offset, origin, u, v, -kInf, kInf, -kInf, kInf, std::move(tex)};
}

struct Hit {
  double t = kInf;
  const Surface* surface = nullptr;
  double su = 0.0, sv = 0.0;
  bool object = false;
};

void intersect(const Surface& s, const Vec3& o, const Vec3& d, double origin_shift, bool object, Hit& best) {
  const double denom = dot(s.normal, d);
  if (std::abs(denom) < 1e-12) return;
  Vec3 origin = s.origin;
  origin[0] += origin_shift;
  const double offset = s.offset + s.normal[0] * origin_shift;
  const double t = (offset - dot(s.normal, o)) / denom;
  if (!(t > 1e-6) || t >= best.t) return;
  const Vec3 local{o[0] + t * d[0] - origin[0], o[1] + t * d[1] - origin[1], o[2] + t * d[2] - origin[2]};
  const double su = dot(local, s.u_axis);
  const double sv = dot(local, s.v_axis);
  if (su < s.u_min || su > s.u_max || sv < s.v_min || sv > s.v_max) return;
  best = Hit{t, &s, su, sv, object};
}

struct Frame {
  Image rgb;
  Image depth;
  std::vector<std::uint8_t> object_mask;
};

Frame render_frame(const Scene& scene, const SE3Transform& camera_to_world, double time) {
  const auto k = scene.config.intrinsics();
  const Eigen::Matrix3d r = camera_to_world.rotation();
  const Eigen::Vector3d c = camera_to_world.translation();
  const Vec3 o{c.x(), c.y(), c.z()};
  Frame f{Image(k.height, k.width, 3), Image(k.height, k.width, 1), std::vector<std::uint8_t>(k.width * k.height, 0)};
  for (std::size_t v = 0; v < k.height; ++v) {
    for (std::size_t u = 0; u < k.width; ++u) {
      const Eigen::Vector3d ray_cam((static_cast<double>(u) - k.cx) / k.fx, (static_cast<double>(v) - k.cy) / k.fy, 1.0);
      const Eigen::Vector3d ray = r * ray_cam;
      const Vec3 d{ray.x(), ray.y(), ray.z()};
      Hit hit;
      for (const auto& s : scene.surfaces) intersect(s, o, d, 0.0, false, hit);
      if (scene.moving_object) intersect(*scene.moving_object, o, d, time * scene.object_velocity, true, hit);
      Vec3 colour{0.5, 0.5, 0.5};
      double depth = scene.config.depth_max;
      if (hit.surface) {
        const double length = hit.t * ray.norm();
        const double cosine = std::abs(dot(hit.surface->normal, d)) / ray.norm();
        const double footprint = 0.6 * length / (k.fx * std::max(cosine, 0.15));
        colour = shade(hit.surface->texture, hit.su, hit.sv, footprint);
        depth = hit.t * ray_cam.z();
      }
      for (int ch = 0; ch < 3; ++ch) f.rgb.at(v, u, static_cast<std::size_t>(ch)) = quantize16(colour[ch]);
      f.depth.at(v, u) = quantize_f32(std::clamp(depth, scene.config.depth_min, scene.config.depth_max));
      f.object_mask[v * k.width + u] = hit.object ? 1 : 0;
    }
  }
  return f;
}

}  // namespace

void SceneConfig::validate() const {
  if (width < 16 || height < 16) throw std::invalid_argument("scene config: resolution below 16x16");
  if (!(focal_ratio > 0.0)) throw std::invalid_argument("scene config: focal_ratio must be positive");
  if (!(depth_min > 0.0) || !(depth_max > 4.0 * depth_min)) {
    throw std::invalid_argument("scene config: need 0 < depth_min and depth_max > 4 * depth_min");
  }
  if (!(texture_frequency > 0.0)) throw std::invalid_argument("scene config: texture_frequency must be positive");
  if (!(motion_magnitude >= 0.0)) throw std::invalid_argument("scene config: motion_magnitude must be >= 0");
  if (!(moving_object_probability >= 0.0 && moving_object_probability <= 1.0)) {
    throw std::invalid_argument("scene config: moving_object_probability outside [0, 1]");
  }
  if (!(min_visibility >= 0.0 && min_visibility <= 1.0)) {
    throw std::invalid_argument("scene config: min_visibility outside [0, 1]");
  }
}

Intrinsics SceneConfig::intrinsics() const {
  return Intrinsics::centered(width, height, focal_ratio * static_cast<double>(width));
}

void to_json(nlohmann::json& j, const SceneConfig& c) {
  j = nlohmann::json{{"width", c.width},
                     {"height", c.height},
                     {"focal_ratio", c.focal_ratio},
                     {"depth_min", c.depth_min},
                     {"depth_max", c.depth_max},
                     {"texture_frequency", c.texture_frequency},
                     {"motion_magnitude", c.motion_magnitude},
                     {"moving_object_probability", c.moving_object_probability},
                     {"min_visibility", c.min_visibility}};
}

void from_json(const nlohmann::json& j, SceneConfig& c) {
  SceneConfig d;
  c.width = j.value("width", d.width);
  c.height = j.value("height", d.height);
  c.focal_ratio = j.value("focal_ratio", d.focal_ratio);
  c.depth_min = j.value("depth_min", d.depth_min);
  c.depth_max = j.value("depth_max", d.depth_max);
  c.texture_frequency = j.value("texture_frequency", d.texture_frequency);
  c.motion_magnitude = j.value("motion_magnitude", d.motion_magnitude);
  c.moving_object_probability = j.value("moving_object_probability", d.moving_object_probability);
  c.min_visibility = j.value("min_visibility", d.min_visibility);
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& config) {
  config.validate();
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
  const auto k = config.intrinsics();
  const double dmin = config.depth_min;
  const double freq = config.texture_frequency;

  Scene scene;
  scene.seed = seed;
  scene.config = config;

  // Nearest visible ground and wall points stay beyond depth_min.
  const double height = dmin * (static_cast<double>(k.height - 1) - k.cy) / k.fy * rng.uniform(1.4, 2.0);
  const double left = dmin * k.cx / k.fx * rng.uniform(1.4, 2.5);
  const double right = dmin * k.cx / k.fx * rng.uniform(1.4, 2.5);
  const double back = config.depth_max * rng.uniform(0.6, 0.95);

  scene.surfaces.push_back(plane({0, 1, 0}, height, {0, height, 0}, {1, 0, 0}, {0, 0, 1}, make_texture(rng, freq, 1.0)));
  scene.surfaces.push_back(plane({1, 0, 0}, -left, {-left, 0, 0}, {0, 0, 1}, {0, 1, 0}, make_texture(rng, freq, 1.0)));
  scene.surfaces.push_back(plane({1, 0, 0}, right, {right, 0, 0}, {0, 0, 1}, {0, 1, 0}, make_texture(rng, freq, 1.0)));
  scene.surfaces.push_back(plane({0, 0, 1}, back, {0, 0, back}, {1, 0, 0}, {0, 1, 0}, make_texture(rng, freq, 1.0)));

  const double box_near = 2.0 * dmin;
  const double box_far = 0.6 * back;
  const std::size_t boxes = rng.below(4);
  for (std::size_t b = 0; b < boxes && box_far > box_near; ++b) {
    const double z = rng.uniform(box_near, box_far);
    const double w = rng.uniform(0.15, 0.35) * (left + right);
    const double x0 = rng.uniform(-left, right - w);
    const double h = rng.uniform(0.5, 2.0) * height;
    Surface s = plane({0, 0, 1}, z, {x0, height - h, z}, {1, 0, 0}, {0, 1, 0}, make_texture(rng, freq, 1.0));
    s.u_min = 0.0;
    s.u_max = w;
    s.v_min = 0.0;
    s.v_max = h;
    scene.surfaces.push_back(std::move(s));
  }

  if (rng.chance(config.moving_object_probability)) {
    const double z = rng.uniform(box_near, std::max(box_near * 1.01, std::min(0.4 * back, 6.0 * dmin)));
    const double px = z / k.fx;  // scene units per pixel at the object's depth
    const double w = rng.uniform(12.0, 20.0) * px;
    const double h = rng.uniform(10.0, 16.0) * px;
    const double centre = rng.uniform(16.0, static_cast<double>(k.width) - 16.0);
    const double x0 = (centre - k.cx) * px - 0.5 * w;
    Surface s = plane({0, 0, 1}, z, {x0, height - h, z}, {1, 0, 0}, {0, 1, 0}, make_texture(rng, freq * 2.0, 2.5));
    s.u_min = 0.0;
    s.u_max = w;
    s.v_min = 0.0;
    s.v_max = h;
    scene.moving_object = std::move(s);
    scene.object_velocity = (rng.chance(0.5) ? 1.0 : -1.0) * rng.uniform(4.0, 8.0) * px;
  }
  return scene;
}

CameraMotion CameraMotion::sample(std::uint64_t seed, const SceneConfig& config) {
  Rng rng(seed ^ 0xc0ffee1234567ULL);
  const double m = config.motion_magnitude;
  const double forward = m * rng.uniform(0.7, 1.1);
  const double lateral = m * rng.uniform(-0.1, 0.1);
  const double yaw = m > 0.0 ? rng.uniform(-0.015, 0.015) : 0.0;
  CameraMotion motion;
  motion.next_to_world = pose_to_transform(Pose6DoF{{0.0, yaw, 0.0}, {lateral, 0.0, forward}});
  motion.prev_to_world = pose_to_transform(Pose6DoF{{0.0, -yaw, 0.0}, {-lateral, 0.0, -forward}});
  return motion;
}

double visible_fraction(const Image& depth, const Intrinsics& k, const SE3Transform& target_to_source) {
  std::size_t visible = 0;
  const double umax = static_cast<double>(k.width - 1);
  const double vmax = static_cast<double>(k.height - 1);
  for (std::size_t v = 0; v < depth.height; ++v) {
    for (std::size_t u = 0; u < depth.width; ++u) {
      const double d = depth.at(v, u);
      const Eigen::Vector3d p(d * (static_cast<double>(u) - k.cx) / k.fx, d * (static_cast<double>(v) - k.cy) / k.fy, d);
      const Eigen::Vector3d q = target_to_source.apply(p);
      if (q.z() <= kMinProjectionDepth) continue;
      const double pu = k.fx * q.x() / q.z() + k.cx;
      const double pv = k.fy * q.y() / q.z() + k.cy;
      if (pu >= 0.0 && pu <= umax && pv >= 0.0 && pv <= vmax) ++visible;
    }
  }
  return static_cast<double>(visible) / static_cast<double>(depth.pixels());
}

FrameTriplet render_triplet(const Scene& scene, const CameraMotion& motion) {
  const auto k = scene.config.intrinsics();
  auto prev = render_frame(scene, motion.prev_to_world, -1.0);
  auto centre = render_frame(scene, SE3Transform(), 0.0);
  auto next = render_frame(scene, motion.next_to_world, 1.0);

  const SE3Transform to_prev = motion.prev_to_world.inverse();
  const SE3Transform to_next = motion.next_to_world.inverse();
  const double vis = std::min(visible_fraction(centre.depth, k, to_prev), visible_fraction(centre.depth, k, to_next));
  if (vis < scene.config.min_visibility) {
    throw std::runtime_error("render_triplet: only " + std::to_string(vis) +
                             " of target pixels visible in a source frame; reduce motion_magnitude");
  }

  FrameTriplet t;
  t.frames = {std::move(prev.rgb), std::move(centre.rgb), std::move(next.rgb)};
  t.intrinsics = k;
  t.gt_depth = std::move(centre.depth);
  t.gt_pose_to_prev = transform_to_pose(to_prev);
  t.gt_pose_to_next = transform_to_pose(to_next);
  if (scene.moving_object) t.object_mask = std::move(centre.object_mask);
  return t;
}

}  // namespace subdepth
