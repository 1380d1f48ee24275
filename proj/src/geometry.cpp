#include "subdepth/geometry.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace subdepth {
namespace {

// Scalar carrying derivatives with respect to the three axis-angle components.
struct Dual3 {
  double v = 0.0;
  std::array<double, 3> d{};

  Dual3() = default;
  Dual3(double value) : v(value) {}  // NOLINT(google-explicit-constructor)

  friend Dual3 operator+(Dual3 a, const Dual3& b) {
    a.v += b.v;
    for (int i = 0; i < 3; ++i) a.d[i] += b.d[i];
    return a;
  }
  friend Dual3 operator-(Dual3 a, const Dual3& b) {
    a.v -= b.v;
    for (int i = 0; i < 3; ++i) a.d[i] -= b.d[i];
    return a;
  }
  friend Dual3 operator*(const Dual3& a, const Dual3& b) {
    Dual3 r(a.v * b.v);
    for (int i = 0; i < 3; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
  }
  friend Dual3 operator/(const Dual3& a, const Dual3& b) {
    Dual3 r(a.v / b.v);
    for (int i = 0; i < 3; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) / b.v;
    return r;
  }
};

Dual3 chain(const Dual3& x, double value, double slope) {
  Dual3 r(value);
  for (int i = 0; i < 3; ++i) r.d[i] = slope * x.d[i];
  return r;
}

double value_of(double x) { return x; }
double value_of(const Dual3& x) { return x.v; }

using std::cos;
using std::sin;
using std::sqrt;
Dual3 sin(const Dual3& x) { return chain(x, std::sin(x.v), std::cos(x.v)); }
Dual3 cos(const Dual3& x) { return chain(x, std::cos(x.v), -std::sin(x.v)); }
Dual3 sqrt(const Dual3& x) {
  const double s = std::sqrt(x.v);
  return chain(x, s, 0.5 / s);
}

// Row-major 3x3 rotation from axis-angle. Below the series threshold the
// coefficients are expanded in theta^2 so derivatives stay finite at zero.
template <class T>
std::array<T, 9> rodrigues(const std::array<T, 3>& w) {
  const T theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
  T a, b;
  if (value_of(theta2) < 1e-6) {
    a = T(1.0) - theta2 / T(6.0) + theta2 * theta2 / T(120.0);
    b = T(0.5) - theta2 / T(24.0) + theta2 * theta2 / T(720.0);
  } else {
    const T theta = sqrt(theta2);
    a = sin(theta) / theta;
    b = (T(1.0) - cos(theta)) / theta2;
  }
  // K = [w]x, K^2 = w w^T - theta^2 I
  const std::array<T, 9> k{T(0.0), T(0.0) - w[2], w[1], w[2], T(0.0), T(0.0) - w[0], T(0.0) - w[1], w[0], T(0.0)};
  std::array<T, 9> r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      T k2 = w[i] * w[j];
      if (i == j) k2 = k2 - theta2;
      r[3 * i + j] = T(i == j ? 1.0 : 0.0) + a * k[3 * i + j] + b * k2;
    }
  }
  return r;
}

}  // namespace

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (!(cx >= 0.0 && cx < static_cast<double>(width)) || !(cy >= 0.0 && cy < static_cast<double>(height))) {
    throw std::invalid_argument("intrinsics: principal point outside the image");
  }
}

Intrinsics Intrinsics::centered(std::size_t width, std::size_t height, double focal) {
  Intrinsics k{focal, focal, 0.5 * static_cast<double>(width - 1), 0.5 * static_cast<double>(height - 1), width,
               height};
  k.validate();
  return k;
}

void Pose6DoF::validate() const {
  double n2 = 0.0;
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(axis_angle[i]) || !std::isfinite(translation[i])) {
      throw std::invalid_argument("pose: non-finite component");
    }
    n2 += axis_angle[i] * axis_angle[i];
  }
  if (std::sqrt(n2) >= std::numbers::pi) throw std::invalid_argument("pose: rotation angle must be below pi");
}

SE3Transform SE3Transform::inverse() const {
  Eigen::Matrix4d inv = Eigen::Matrix4d::Identity();
  const Eigen::Matrix3d rt = rotation().transpose();
  inv.topLeftCorner<3, 3>() = rt;
  inv.topRightCorner<3, 1>() = -rt * translation();
  return SE3Transform(inv);
}

bool SE3Transform::is_valid(double tol) const {
  const Eigen::Matrix3d r = rotation();
  if (!((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol)) return false;
  if (!(std::abs(r.determinant() - 1.0) <= tol)) return false;
  return m_(3, 0) == 0.0 && m_(3, 1) == 0.0 && m_(3, 2) == 0.0 && m_(3, 3) == 1.0;
}

SE3Transform pose_to_transform(const Pose6DoF& pose) {
  pose.validate();
  const auto r = rodrigues<double>(pose.axis_angle);
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m(i, j) = r[3 * i + j];
    m(i, 3) = pose.translation[i];
  }
  return SE3Transform(m);
}

Pose6DoF transform_to_pose(const SE3Transform& t) {
  const Eigen::AngleAxisd aa(t.rotation());
  const Eigen::Vector3d w = aa.angle() * aa.axis();
  const Eigen::Vector3d tr = t.translation();
  return Pose6DoF{{w.x(), w.y(), w.z()}, {tr.x(), tr.y(), tr.z()}};
}

Tensor pose_to_transform(const Tensor& pose) {
  if (pose.size() != 6) throw ShapeError("pose_to_transform", "expected 6 values, got " + to_string(pose.shape()));
  auto pv = pose.values();
  std::array<Dual3, 3> w;
  for (int i = 0; i < 3; ++i) {
    w[i] = Dual3(pv[i]);
    w[i].d[i] = 1.0;
  }
  const auto r = rodrigues<Dual3>(w);
  std::vector<double> out(16, 0.0);
  std::array<double, 27> jac{};  // d r[e] / d w[k] at jac[e * 3 + k]
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out[4 * i + j] = r[3 * i + j].v;
      for (int k = 0; k < 3; ++k) jac[(3 * i + j) * 3 + k] = r[3 * i + j].d[k];
    }
    out[4 * i + 3] = pv[3 + i];
  }
  out[15] = 1.0;
  const std::array<Tensor, 1> ins{pose};
  return pose.graph().record(OpKind::pose_to_matrix, ins, {4, 4}, std::move(out), [jac](const BackwardArgs& args) {
    auto g = args.input_grad(0);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double go = args.out_grad[4 * i + j];
        for (int k = 0; k < 3; ++k) g[k] += go * jac[(3 * i + j) * 3 + k];
      }
      g[3 + i] += args.out_grad[4 * i + 3];
    }
  });
}

Tensor invert_transform(const Tensor& transform) {
  if (transform.shape() != Shape{4, 4}) {
    throw ShapeError("invert_transform", "expected 4 x 4, got " + to_string(transform.shape()));
  }
  auto m = transform.values();
  std::vector<double> out(16, 0.0);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out[4 * i + j] = m[4 * j + i];
      out[4 * i + 3] -= m[4 * j + i] * m[4 * j + 3];
    }
  }
  out[15] = 1.0;
  const std::array<Tensor, 1> ins{transform};
  return transform.graph().record(OpKind::rigid_inverse, ins, {4, 4}, std::move(out), [](const BackwardArgs& args) {
    auto g = args.input_grad(0);
    auto m = args.input(0);
    const auto& go = args.out_grad;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        // out[i][j] = R[j][i];  out[i][3] = -sum_j R[j][i] t[j]
        g[4 * j + i] += go[4 * i + j] - go[4 * i + 3] * m[4 * j + 3];
        g[4 * j + 3] -= go[4 * i + 3] * m[4 * j + i];
      }
    }
  });
}

Tensor transform_constant(Graph& graph, const SE3Transform& t) {
  std::vector<double> v(16);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) v[4 * i + j] = t.matrix()(i, j);
  }
  return graph.constant({4, 4}, std::move(v));
}

Tensor backproject(const Tensor& depth, const Intrinsics& k) {
  const auto& s = depth.shape();
  if (s.size() != 2 || s[0] != k.height || s[1] != k.width) {
    throw ShapeError("backproject", "depth " + to_string(s) + " vs intrinsics " + std::to_string(k.height) + "x" +
                                        std::to_string(k.width));
  }
  const std::size_t H = s[0], W = s[1];
  auto dv = depth.values();
  std::vector<double> rays(H * W * 3);
  std::vector<double> out(H * W * 3);
  for (std::size_t v = 0; v < H; ++v) {
    for (std::size_t u = 0; u < W; ++u) {
      const std::size_t p = v * W + u;
      const double d = dv[p];
      if (!(d > 0.0)) {
        throw std::invalid_argument("backproject: nonpositive depth at pixel (" + std::to_string(u) + ", " +
                                    std::to_string(v) + ")");
      }
      rays[3 * p] = (static_cast<double>(u) - k.cx) / k.fx;
      rays[3 * p + 1] = (static_cast<double>(v) - k.cy) / k.fy;
      rays[3 * p + 2] = 1.0;
      for (int c = 0; c < 3; ++c) out[3 * p + c] = d * rays[3 * p + c];
    }
  }
  const std::array<Tensor, 1> ins{depth};
  return depth.graph().record(OpKind::backproject, ins, {H, W, 3}, std::move(out),
                              [rays = std::move(rays)](const BackwardArgs& args) {
                                auto g = args.input_grad(0);
                                for (std::size_t p = 0; p < g.size(); ++p) {
                                  g[p] += rays[3 * p] * args.out_grad[3 * p] +
                                          rays[3 * p + 1] * args.out_grad[3 * p + 1] +
                                          rays[3 * p + 2] * args.out_grad[3 * p + 2];
                                }
                              });
}

Tensor transform_points(const Tensor& points, const Tensor& transform) {
  const auto& s = points.shape();
  if (s.empty() || s.back() != 3 || transform.size() != 16) {
    throw ShapeError("transform_points", "points " + to_string(s) + ", transform " + to_string(transform.shape()));
  }
  const std::size_t n = points.size() / 3;
  auto p = points.values();
  auto t = transform.values();
  std::vector<double> out(points.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (int r = 0; r < 3; ++r) {
      out[3 * i + r] = t[4 * r] * p[3 * i] + t[4 * r + 1] * p[3 * i + 1] + t[4 * r + 2] * p[3 * i + 2] + t[4 * r + 3];
    }
  }
  const std::array<Tensor, 2> ins{points, transform};
  return points.graph().record(OpKind::transform_points, ins, s, std::move(out), [n](const BackwardArgs& args) {
    auto p = args.input(0);
    auto t = args.input(1);
    auto gp = args.input_grad(0);
    auto gt = args.input_grad(1);
    const double* go = args.out_grad.data();
    for (std::size_t i = 0; i < n; ++i) {
      if (!gp.empty()) {
        for (int c = 0; c < 3; ++c) {
          gp[3 * i + c] += t[c] * go[3 * i] + t[4 + c] * go[3 * i + 1] + t[8 + c] * go[3 * i + 2];
        }
      }
      if (!gt.empty()) {
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) gt[4 * r + c] += go[3 * i + r] * p[3 * i + c];
          gt[4 * r + 3] += go[3 * i + r];
        }
      }
    }
  });
}

Projection pinhole_project(const Tensor& points, const Intrinsics& k) {
  const auto& s = points.shape();
  if (s.size() != 3 || s[2] != 3) throw ShapeError("pinhole_project", "expected H x W x 3, got " + to_string(s));
  const std::size_t n = s[0] * s[1];
  auto p = points.values();
  std::vector<double> out(2 * n);
  Mask valid(n, 0);
  Mask front(n, 0);
  // border pixels round-trip with ~1e-15 error; do not drop them
  constexpr double slack = 1e-6;
  const double umax = static_cast<double>(k.width - 1) + slack;
  const double vmax = static_cast<double>(k.height - 1) + slack;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = p[3 * i], y = p[3 * i + 1], z = p[3 * i + 2];
    if (z > kMinProjectionDepth) {
      front[i] = 1;
      const double u = k.fx * x / z + k.cx;
      const double v = k.fy * y / z + k.cy;
      out[2 * i] = u;
      out[2 * i + 1] = v;
      valid[i] = (u >= -slack && u <= umax && v >= -slack && v <= vmax) ? 1 : 0;
    } else {
      out[2 * i] = -1.0;
      out[2 * i + 1] = -1.0;
    }
  }
  const std::array<Tensor, 1> ins{points};
  Tensor coords = points.graph().record(
      OpKind::pinhole_project, ins, {s[0], s[1], 2}, std::move(out), [n, k, front](const BackwardArgs& args) {
        auto p = args.input(0);
        auto g = args.input_grad(0);
        for (std::size_t i = 0; i < n; ++i) {
          if (!front[i]) continue;
          const double x = p[3 * i], y = p[3 * i + 1], z = p[3 * i + 2];
          const double gu = args.out_grad[2 * i], gv = args.out_grad[2 * i + 1];
          const double iz = 1.0 / z;
          g[3 * i] += gu * k.fx * iz;
          g[3 * i + 1] += gv * k.fy * iz;
          g[3 * i + 2] -= (gu * k.fx * x + gv * k.fy * y) * iz * iz;
        }
      });
  return Projection{coords, std::move(valid)};
}

Projection project(const Tensor& points, const Intrinsics& k, const Tensor& transform) {
  return pinhole_project(transform_points(points, transform), k);
}

Projection project(const Tensor& points, const Intrinsics& k, const SE3Transform& transform) {
  return project(points, k, transform_constant(points.graph(), transform));
}

ViewSynthesis synthesize_view(const Tensor& source, const Tensor& depth, const Tensor& transform,
                              const Intrinsics& k) {
  const auto& ss = source.shape();
  if (ss.size() != 3 || ss[0] != k.height || ss[1] != k.width) {
    throw ShapeError("synthesize_view", "source " + to_string(ss) + " vs depth " + to_string(depth.shape()));
  }
  auto proj = project(backproject(depth, k), k, transform);
  return ViewSynthesis{bilinear_sample(source, proj.coords), std::move(proj.valid)};
}

}  // namespace subdepth
