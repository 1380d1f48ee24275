#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "subdepth/dataset.hpp"
#include "subdepth/geometry.hpp"
#include "subdepth/grad_check.hpp"
#include "subdepth/losses.hpp"
#include "subdepth/pipeline.hpp"
#include "support.hpp"

namespace subdepth {
namespace {

using testing_support::uniform;

Pose6DoF random_pose(std::mt19937_64& rng, double max_angle) {
  Pose6DoF p;
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (auto& a : p.axis_angle) a = d(rng) * max_angle / std::sqrt(3.0);
  for (auto& t : p.translation) t = d(rng);
  return p;
}

std::vector<double> pose_values(const Pose6DoF& p) {
  return {p.axis_angle[0], p.axis_angle[1], p.axis_angle[2], p.translation[0], p.translation[1], p.translation[2]};
}

TEST(PoseToTransform, ZeroIsIdentity) {
  EXPECT_TRUE(pose_to_transform(Pose6DoF{}).matrix().isApprox(Eigen::Matrix4d::Identity(), 0.0));
}

TEST(PoseToTransform, QuarterTurnAboutZ) {
  const auto t = pose_to_transform(Pose6DoF{{0, 0, std::numbers::pi / 2}, {0, 0, 0}});
  const Eigen::Vector3d y = t.apply(Eigen::Vector3d(1, 0, 0));
  EXPECT_NEAR(y.x(), 0.0, 1e-9);
  EXPECT_NEAR(y.y(), 1.0, 1e-9);
  EXPECT_NEAR(y.z(), 0.0, 1e-9);
}

TEST(PoseToTransform, ComposedWithInverseIsIdentity) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const auto t = pose_to_transform(random_pose(rng, 3.0));
    ASSERT_TRUE(t.is_valid());
    const Eigen::Matrix4d oracle = t.matrix().inverse();
    EXPECT_LT((t.inverse().matrix() - oracle).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT(((t * t.inverse()).matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(PoseToTransform, NegatedInverseMotionMatchesMatrixInverse) {
  // For the small-angle regime the inverse motion is (-w, -R^T t).
  std::mt19937_64 rng(12);
  for (int i = 0; i < 50; ++i) {
    const auto p = random_pose(rng, 0.9);
    const auto t = pose_to_transform(p);
    const Eigen::Vector3d back = -(t.rotation().transpose() * t.translation());
    const Pose6DoF q{{-p.axis_angle[0], -p.axis_angle[1], -p.axis_angle[2]}, {back.x(), back.y(), back.z()}};
    EXPECT_LT((pose_to_transform(q).matrix() - t.matrix().inverse()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(PoseToTransform, TinyAnglesStayOrthonormal) {
  for (double a : {0.0, 1e-12, 1e-9, 1e-7, 1e-5}) {
    EXPECT_TRUE(pose_to_transform(Pose6DoF{{a, -a, 0.5 * a}, {0.1, 0.2, 0.3}}).is_valid()) << a;
  }
}

TEST(PoseToTransform, LogRoundTrip) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 20; ++i) {
    const auto p = random_pose(rng, 2.5);
    const auto q = transform_to_pose(pose_to_transform(p));
    for (int k = 0; k < 3; ++k) {
      EXPECT_NEAR(q.axis_angle[k], p.axis_angle[k], 1e-9);
      EXPECT_NEAR(q.translation[k], p.translation[k], 1e-9);
    }
  }
}

TEST(PoseToTransform, TensorFormMatchesClosedForm) {
  std::mt19937_64 rng(14);
  const auto p = random_pose(rng, 1.5);
  Graph g;
  const Tensor m = pose_to_transform(g.variable({6}, pose_values(p)));
  const Eigen::Matrix4d ref = pose_to_transform(p).matrix();
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(m[4 * r + c], ref(r, c), 1e-12);
  }
}

TEST(PoseToTransform, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(15);
  const auto w = uniform(rng, 16, -1, 1);
  for (int i = 0; i < 20; ++i) {
    const auto r = grad_check(
        [&](Graph& g, const Tensor& x) { return sum(pose_to_transform(x) * g.constant({4, 4}, w)); }, {6},
        pose_values(random_pose(rng, 1.0)));
    EXPECT_LT(r.max_rel_error, 1e-3);
  }
  // Through the series branch too.
  const auto r = grad_check([&](Graph& g, const Tensor& x) { return sum(pose_to_transform(x) * g.constant({4, 4}, w)); },
                            {6}, {1e-9, -2e-9, 0.0, 0.3, 0.1, -0.2});
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(InvertTransform, MatchesRigidInverseAndDifferentiates) {
  std::mt19937_64 rng(16);
  const auto w = uniform(rng, 16, -1, 1);
  for (int i = 0; i < 20; ++i) {
    const auto p = random_pose(rng, 1.2);
    Graph g;
    const Tensor inv = invert_transform(pose_to_transform(g.variable({6}, pose_values(p))));
    const Eigen::Matrix4d ref = pose_to_transform(p).matrix().inverse();
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) EXPECT_NEAR(inv[4 * r + c], ref(r, c), 1e-9);
    }
    const auto check = grad_check(
        [&](Graph& gg, const Tensor& x) {
          return sum(invert_transform(pose_to_transform(x)) * gg.constant({4, 4}, w));
        },
        {6}, pose_values(p));
    EXPECT_LT(check.max_rel_error, 1e-3);
  }
}

TEST(Backproject, PrincipalRay) {
  const Intrinsics k{10, 10, 2, 1, 5, 3};
  Graph g;
  std::vector<double> depth(15, 1.0);
  depth[1 * 5 + 2] = 7.0;
  const Tensor pts = backproject(g.constant({3, 5}, depth), k);
  const std::size_t at = (1 * 5 + 2) * 3;
  EXPECT_EQ(pts[at + 0], 0.0);
  EXPECT_EQ(pts[at + 1], 0.0);
  EXPECT_EQ(pts[at + 2], 7.0);
}

TEST(Backproject, DirectFormula) {
  const Intrinsics k{1, 1, 0, 0, 3, 3};
  Graph g;
  const Tensor pts = backproject(g.constant({3, 3}, 3.0), k);
  const std::size_t at = (2 * 3 + 1) * 3;  // pixel (u=1, v=2)
  EXPECT_DOUBLE_EQ(pts[at + 0], 3.0);
  EXPECT_DOUBLE_EQ(pts[at + 1], 6.0);
  EXPECT_DOUBLE_EQ(pts[at + 2], 3.0);
}

TEST(Backproject, RejectsNonPositiveDepth) {
  const auto k = Intrinsics::centered(4, 4, 3.0);
  Graph g;
  std::vector<double> depth(16, 2.0);
  depth[5] = 0.0;
  EXPECT_THROW((void)backproject(g.constant({4, 4}, depth), k), std::invalid_argument);
}

TEST(Project, RoundTripReproducesGrid) {
  std::mt19937_64 rng(17);
  const auto k = Intrinsics::centered(12, 8, 9.0);
  for (int trial = 0; trial < 10; ++trial) {
    Graph g;
    const Tensor depth = g.constant({8, 12}, uniform(rng, 96, 0.5, 50.0));
    const auto proj = project(backproject(depth, k), k, SE3Transform());
    for (std::size_t v = 0; v < 8; ++v) {
      for (std::size_t u = 0; u < 12; ++u) {
        const std::size_t i = (v * 12 + u) * 2;
        ASSERT_NEAR(proj.coords[i], static_cast<double>(u), 1e-9);
        ASSERT_NEAR(proj.coords[i + 1], static_cast<double>(v), 1e-9);
        ASSERT_TRUE(proj.valid[v * 12 + u]);
      }
    }
  }
}

TEST(Project, ForwardTranslationContractsTowardPrincipalPoint) {
  const auto k = Intrinsics::centered(16, 12, 10.0);
  Graph g;
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(2, 3) = 1.0;
  const auto proj = project(backproject(g.constant({12, 16}, 2.0), k), k, SE3Transform(m));
  for (std::size_t v = 0; v < 12; ++v) {
    for (std::size_t u = 0; u < 16; ++u) {
      const std::size_t i = (v * 16 + u) * 2;
      EXPECT_NEAR(proj.coords[i] - k.cx, (static_cast<double>(u) - k.cx) * 2.0 / 3.0, 1e-9);
      EXPECT_NEAR(proj.coords[i + 1] - k.cy, (static_cast<double>(v) - k.cy) * 2.0 / 3.0, 1e-9);
    }
  }
}

TEST(Project, PointAtCameraPlaneIsMasked) {
  const auto k = Intrinsics::centered(4, 4, 3.0);
  Graph g;
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m(2, 3) = -2.0;
  const auto proj = project(backproject(g.constant({4, 4}, 2.0), k), k, SE3Transform(m));
  for (auto v : proj.valid) EXPECT_FALSE(v);
}

TEST(Bilinear, IntegerCoordinatesAreExact) {
  Graph g;
  const Tensor img = g.constant({2, 3, 1}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const Tensor c = g.constant({1, 2, 2}, std::vector<double>{2, 1, 0, 0});
  const Tensor s = bilinear_sample(img, c);
  EXPECT_EQ(s[0], 6.0);
  EXPECT_EQ(s[1], 1.0);
}

TEST(Bilinear, MidpointAveragesNeighbours) {
  Graph g;
  const Tensor img = g.constant({1, 2, 1}, std::vector<double>{0, 1});
  const Tensor s = bilinear_sample(img, g.constant({1, 1, 2}, std::vector<double>{0.5, 0}));
  EXPECT_DOUBLE_EQ(s[0], 0.5);
}

TEST(Bilinear, ConstantImageHasNoCoordinateGradient) {
  std::mt19937_64 rng(18);
  Graph g;
  const Tensor img = g.constant({5, 5, 3}, 0.42);
  const Tensor c = g.variable({4, 4, 2}, uniform(rng, 32, -2.0, 7.0));
  const Tensor s = bilinear_sample(img, c);
  for (double v : s.values()) EXPECT_NEAR(v, 0.42, 1e-15);
  for (double v : g.backward(sum(s)).of(c)) EXPECT_EQ(v, 0.0);
}

TEST(Bilinear, OutOfBoundsClampsToBorder) {
  Graph g;
  const Tensor img = g.constant({2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  const Tensor s = bilinear_sample(img, g.constant({1, 2, 2}, std::vector<double>{-5, -5, 9, 9}));
  EXPECT_EQ(s[0], 1.0);
  EXPECT_EQ(s[1], 4.0);
}

TEST(SynthesizeView, IdentityReturnsSource) {
  std::mt19937_64 rng(19);
  const auto k = Intrinsics::centered(8, 8, 6.0);
  Graph g;
  const Tensor src = g.constant({8, 8, 3}, uniform(rng, 192, 0, 1));
  const Tensor depth = g.constant({8, 8}, uniform(rng, 64, 0.5, 20));
  const auto view = synthesize_view(src, depth, transform_constant(g, SE3Transform()), k);
  for (std::size_t i = 0; i < src.size(); ++i) EXPECT_NEAR(view.reconstruction[i], src[i], 1e-9);
}

TEST(SynthesizeView, DepthGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(20);
  const auto k = Intrinsics::centered(8, 8, 6.0);
  const auto src = uniform(rng, 192, 0, 1);
  Eigen::Matrix4d m = pose_to_transform(Pose6DoF{{0.01, -0.02, 0.005}, {0.05, 0.02, 0.1}}).matrix();
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = grad_check(
        [&](Graph& g, const Tensor& d) {
          return sum(synthesize_view(g.constant({8, 8, 3}, src), d, transform_constant(g, SE3Transform(m)), k)
                         .reconstruction);
        },
        {8, 8}, uniform(rng, 64, 1.0, 3.0));
    EXPECT_LT(r.max_rel_error, 1e-3) << "trial " << trial;
  }
}

TEST(SynthesizeView, PoseGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  const auto k = Intrinsics::centered(8, 8, 6.0);
  const auto src = uniform(rng, 192, 0, 1);
  const auto depth = uniform(rng, 64, 1.0, 3.0);
  // Bilinear sampling kinks at integer coordinates; keep every projection clear of them.
  const auto clear_of_kinks = [&](const std::vector<double>& pose) {
    Graph g;
    const auto proj = project(backproject(g.constant({8, 8}, depth), k), k, pose_to_transform(g.constant({6}, pose)));
    for (double c : proj.coords.values()) {
      if (std::abs(c - std::round(c)) < 0.01) return false;
    }
    return true;
  };
  for (int trial = 0; trial < 20; ++trial) {
    auto pose = uniform(rng, 6, -0.05, 0.05);
    while (!clear_of_kinks(pose)) pose = uniform(rng, 6, -0.05, 0.05);
    const auto r = grad_check(
        [&](Graph& g, const Tensor& p) {
          return sum(synthesize_view(g.constant({8, 8, 3}, src), g.constant({8, 8}, depth), pose_to_transform(p), k)
                         .reconstruction);
        },
        {6}, pose);
    EXPECT_LT(r.max_rel_error, 1e-3) << "trial " << trial;
  }
}

TEST(SynthesizeView, GroundTruthWarpReconstructsTarget) {
  SceneConfig cfg;
  cfg.moving_object_probability = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = make_triplet(1000 + seed, cfg);
    Graph g;
    const Tensor depth = g.constant({t.intrinsics.height, t.intrinsics.width}, t.gt_depth->data);
    const Tensor target = image_constant(g, t.target());
    for (int side = 0; side < 2; ++side) {
      const auto& pose = side == 0 ? *t.gt_pose_to_prev : *t.gt_pose_to_next;
      const auto view = synthesize_view(image_constant(g, t.frames[side == 0 ? 0 : 2]), depth,
                                        transform_constant(g, pose_to_transform(pose)), t.intrinsics);
      double err = 0.0;
      std::size_t n = 0;
      for (std::size_t p = 0; p < view.valid.size(); ++p) {
        if (!view.valid[p]) continue;
        for (std::size_t c = 0; c < 3; ++c) err += std::abs(view.reconstruction[3 * p + c] - target[3 * p + c]);
        n += 3;
      }
      ASSERT_GT(n, 0u);
      EXPECT_LT(err / static_cast<double>(n), 0.02) << "seed " << seed << " side " << side;
    }
  }
}

double mean_photometric(const FrameTriplet& t, const std::vector<double>& depth) {
  Graph g;
  const Tensor d = g.constant({t.intrinsics.height, t.intrinsics.width}, depth);
  const Tensor target = image_constant(g, t.target());
  const auto view = synthesize_view(image_constant(g, t.frames[2]), d,
                                    transform_constant(g, pose_to_transform(*t.gt_pose_to_next)), t.intrinsics);
  return masked_mean(photometric_error(target, view.reconstruction, 0.85), view.valid).item();
}

TEST(SynthesizeView, GroundTruthBeatsPerturbedDepth) {
  SceneConfig cfg;
  cfg.moving_object_probability = 0.0;
  std::mt19937_64 rng(22);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t = make_triplet(2000 + seed, cfg);
    const double truth = mean_photometric(t, t.gt_depth->data);
    for (int i = 0; i < 10; ++i) {
      auto d = t.gt_depth->data;
      for (auto& v : d) v *= std::uniform_real_distribution<double>(0.8, 1.2)(rng);
      EXPECT_LT(truth, mean_photometric(t, d)) << "seed " << seed;
    }
  }
}

}  // namespace
}  // namespace subdepth
