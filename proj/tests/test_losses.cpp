#include <gtest/gtest.h>

#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <random>

#include "subdepth/grad_check.hpp"
#include "subdepth/losses.hpp"
#include "support.hpp"

namespace subdepth {
namespace {

using testing_support::uniform;

constexpr std::size_t H = 6, W = 7;

std::vector<double> checkerboard(std::size_t h, std::size_t w, std::size_t c) {
  std::vector<double> v(h * w * c);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t k = 0; k < c; ++k) v[(y * w + x) * c + k] = (x + y) % 2 ? 0.95 : 0.05;
    }
  }
  return v;
}

TEST(Ssim, SelfSimilarityIsOne) {
  std::mt19937_64 rng(30);
  Graph g;
  const Tensor x = g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1));
  for (double v : ssim(x, x).values()) EXPECT_NEAR(v, 1.0, 1e-12);
  const Tensor c = g.constant({H, W, 3}, 0.5);
  for (double v : ssim(c, c).values()) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Ssim, InvertedCheckerboardIsNegativeInside) {
  Graph g;
  const auto v = checkerboard(8, 8, 3);
  std::vector<double> inv(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) inv[i] = 1.0 - v[i];
  const Tensor s = ssim(g.constant({8, 8, 3}, v), g.constant({8, 8, 3}, inv));
  for (std::size_t y = 1; y + 1 < 8; ++y) {
    for (std::size_t x = 1; x + 1 < 8; ++x) EXPECT_LT(s[y * 8 + x], 0.0);
  }
}

TEST(Ssim, RejectsShapeMismatch) {
  Graph g;
  EXPECT_THROW((void)ssim(g.constant({4, 4, 3}, 0.1), g.constant({4, 4, 1}, 0.1)), ShapeError);
}

TEST(Photometric, ZeroForIdenticalImages) {
  std::mt19937_64 rng(31);
  Graph g;
  const Tensor x = g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1));
  for (double alpha : {0.0, 0.3, 0.85, 1.0}) {
    for (double v : photometric_error(x, x, alpha).values()) EXPECT_NEAR(v, 0.0, 1e-12);
  }
}

TEST(Photometric, PureL1Branch) {
  Graph g;
  const Tensor e = photometric_error(g.constant({H, W, 3}, 0.6), g.constant({H, W, 3}, 0.3), 0.0);
  for (double v : e.values()) EXPECT_NEAR(v, 0.3, 1e-12);
}

TEST(Photometric, ConstantImagesUseSsimOracle) {
  Graph g;
  const Tensor a = g.constant({H, W, 3}, 0.5);
  const Tensor b = g.constant({H, W, 3}, 0.7);
  const auto e = photometric_error(a, b, 0.85);
  // Constant patches have zero variance, so SSIM reduces to its luminance term.
  const double s = (2 * 0.5 * 0.7 + kSsimC1) / (0.25 + 0.49 + kSsimC1);
  for (double v : e.values()) EXPECT_NEAR(v, 0.85 * (1 - s) / 2 + 0.15 * 0.2, 1e-12);
}

TEST(Photometric, FusedOpMatchesComposedFormula) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 10; ++trial) {
    Graph g;
    const Tensor a = g.variable({H, W, 3}, uniform(rng, H * W * 3, 0, 1));
    const Tensor b = g.variable({H, W, 3}, uniform(rng, H * W * 3, 0, 1));
    const Tensor fused = photometric_error(a, b, 0.85);
    const Tensor composed = (-ssim(a, b) + 1.0) * (0.85 / 2) + mean_channels(abs(a - b)) * 0.15;
    for (std::size_t i = 0; i < fused.size(); ++i) EXPECT_NEAR(fused[i], composed[i], 1e-12);

    const Tensor w = g.constant({H, W}, uniform(rng, H * W, -1, 1));
    const auto gf = g.backward(sum(fused * w));
    const auto gc = g.backward(sum(composed * w));
    EXPECT_LT(testing_support::max_abs_diff(gf.of(a), gc.of(a)), 1e-12);
    EXPECT_LT(testing_support::max_abs_diff(gf.of(b), gc.of(b)), 1e-12);
  }
}

TEST(Smoothness, ConstantDisparityIsZero) {
  std::mt19937_64 rng(33);
  Graph g;
  EXPECT_EQ(smoothness_loss(g.constant({H, W}, 0.4), g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1))).item(),
            0.0);
}

TEST(Smoothness, RampOnFlatImageGivesNormalisedSlope) {
  Graph g;
  std::vector<double> ramp(H * W);
  double total = 0.0;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) total += ramp[y * W + x] = 0.2 + 0.05 * static_cast<double>(x);
  }
  const double mean_disp = total / static_cast<double>(H * W);
  const double flat = smoothness_loss(g.constant({H, W}, ramp), g.constant({H, W, 3}, 0.3)).item();
  EXPECT_NEAR(flat, 0.05 / mean_disp, 1e-12);

  // A vertical edge aligned with the ramp attenuates the penalty.
  std::vector<double> edge(H * W * 3);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t c = 0; c < 3; ++c) edge[(y * W + x) * 3 + c] = x < W / 2 ? 0.0 : 1.0;
    }
  }
  EXPECT_LT(smoothness_loss(g.constant({H, W}, ramp), g.constant({H, W, 3}, edge)).item(), flat);
}

TEST(Smoothness, ZeroMeanDisparityIsAnError) {
  Graph g;
  EXPECT_THROW((void)smoothness_loss(g.constant({H, W}, 0.0), g.constant({H, W, 3}, 0.3)), std::invalid_argument);
}

TEST(MinReprojection, PerfectReconstructionsGiveZeroMap) {
  std::mt19937_64 rng(34);
  Graph g;
  const Tensor t = g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1));
  const std::array<Tensor, 2> src{g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1)),
                                  g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1))};
  const std::array<Tensor, 2> rec{t, t};
  const auto r = min_reprojection_with_automask(t, src, rec, 0.85);
  for (double v : r.min_error.values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(MinReprojection, PicksSmallerErrorAndSource) {
  Graph g;
  const Tensor t = g.constant({H, W, 3}, 0.5);
  const std::array<Tensor, 2> rec{g.constant({H, W, 3}, 0.7), g.constant({H, W, 3}, 0.6)};
  const std::array<Tensor, 2> src{g.constant({H, W, 3}, 0.0), g.constant({H, W, 3}, 1.0)};
  const auto r = min_reprojection_with_automask(t, src, rec, 0.0);
  for (double v : r.min_error.values()) EXPECT_NEAR(v, 0.1, 1e-12);
  for (auto s : r.source) EXPECT_EQ(s, 1);
  for (auto m : r.mask) EXPECT_EQ(m, 1);
}

TEST(MinReprojection, StaticCameraMasksEverything) {
  std::mt19937_64 rng(35);
  Graph g;
  const Tensor t = g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1));
  const std::array<Tensor, 2> src{t, t};
  const std::array<Tensor, 2> rec{g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1)),
                                  g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1))};
  const auto r = min_reprojection_with_automask(t, src, rec, 0.85);
  for (auto m : r.mask) EXPECT_EQ(m, 0);
}

TEST(MinReprojection, NeverExceedsEitherSource) {
  std::mt19937_64 rng(36);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    const Tensor t = g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1));
    const std::array<Tensor, 2> src{g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1)),
                                    g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1))};
    const std::array<Tensor, 2> rec{g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1)),
                                    g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1))};
    const auto r = min_reprojection_with_automask(t, src, rec, 0.85);
    const auto e0 = photometric_error(t, rec[0], 0.85);
    const auto e1 = photometric_error(t, rec[1], 0.85);
    for (std::size_t i = 0; i < r.min_error.size(); ++i) {
      EXPECT_LE(r.min_error[i], e0[i]);
      EXPECT_LE(r.min_error[i], e1[i]);
    }
  }
}

ScaleTerms scale_terms(Graph& g, std::mt19937_64& rng, const Tensor& disp) {
  const Tensor t = g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1));
  const std::array<Tensor, 2> src{g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1)),
                                  g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1))};
  const std::array<Tensor, 2> rec{g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1)),
                                  g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1))};
  return {min_reprojection_with_automask(t, src, rec, 0.85), smoothness_loss(disp, t)};
}

TEST(SdeObjective, PerfectAndFlatIsZero) {
  std::mt19937_64 rng(37);
  Graph g;
  const Tensor t = g.constant({H, W, 3}, uniform(rng, H * W * 3, 0, 1));
  const std::array<Tensor, 2> src{g.constant({H, W, 3}, 0.2), g.constant({H, W, 3}, 0.9)};
  const std::array<Tensor, 2> rec{t, t};
  std::vector<ScaleTerms> scales;
  for (int s = 0; s < 4; ++s) {
    scales.push_back({min_reprojection_with_automask(t, src, rec, 0.85), smoothness_loss(g.constant({H, W}, 0.3), t)});
  }
  EXPECT_NEAR(sde_objective(scales, 1e-3).item(), 0.0, 1e-12);
}

TEST(SdeObjective, SingleScaleWithoutSmoothnessIsMaskedMean) {
  std::mt19937_64 rng(38);
  Graph g;
  const std::vector<ScaleTerms> scales{scale_terms(g, rng, g.constant({H, W}, uniform(rng, H * W, 0.1, 0.9)))};
  const auto& r = scales[0].reprojection;
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < r.mask.size(); ++i) {
    if (r.mask[i]) {
      s += r.min_error[i];
      ++n;
    }
  }
  ASSERT_GT(n, 0u);
  EXPECT_NEAR(sde_objective(scales, 0.0).item(), s / static_cast<double>(n), 1e-12);
}

TEST(SdeObjective, BetaAddsScaledSmoothness) {
  std::mt19937_64 rng(39);
  Graph g;
  std::vector<ScaleTerms> scales;
  for (int s = 0; s < 4; ++s) scales.push_back(scale_terms(g, rng, g.constant({H, W}, uniform(rng, H * W, 0.1, 0.9))));
  double expected = 0.0;
  for (std::size_t s = 0; s < 4; ++s) expected += scales[s].smoothness.item() / std::pow(2.0, s);
  expected *= 1e-3 / 4.0;
  EXPECT_NEAR(sde_objective(scales, 1e-3).item() - sde_objective(scales, 0.0).item(), expected, 1e-12);
}

TEST(Regression, AbsoluteDifferenceAndDetachedTarget) {
  Graph g;
  const Tensor d = g.variable({H, W}, std::vector<double>(H * W, 0.8));
  const Tensor p = g.variable({H, W}, std::vector<double>(H * W, 0.3));
  const Tensor r = regression_loss(d, p);
  for (double v : r.values()) EXPECT_NEAR(v, 0.5, 1e-12);
  for (double v : regression_loss(d, d).values()) EXPECT_EQ(v, 0.0);
  const auto grads = g.backward(sum(r));
  for (double v : grads.of(p)) EXPECT_EQ(v, 0.0);
  for (double v : grads.of(d)) EXPECT_EQ(v, 1.0);
}

TEST(UncertaintyWeight, UnitSigmaIsPlainMean) {
  std::mt19937_64 rng(40);
  Graph g;
  const auto v = uniform(rng, H * W, 0, 2);
  const Tensor l = g.constant({H, W}, v);
  EXPECT_EQ(uncertainty_weight(l, g.constant({H, W}, 1.0)).item(), mean(l).item());
}

TEST(UncertaintyWeight, RejectsNonPositiveSigma) {
  Graph g;
  std::vector<double> s(H * W, 1.0);
  s[3] = 0.0;
  EXPECT_THROW((void)uncertainty_weight(g.constant({H, W}, 0.1), g.constant({H, W}, s)), std::invalid_argument);
}

double weighted_single(double r, double sigma) {
  Graph g;
  return uncertainty_weight(g.constant({1}, r), g.constant({1}, sigma)).item();
}

TEST(UncertaintyWeight, NumericMinimiserIsResidual) {
  std::mt19937_64 rng(41);
  for (double r : uniform(rng, 100, 0.01, 5.0)) {
    const auto [log_sigma, value] = boost::math::tools::brent_find_minima(
        [r](double s) { return weighted_single(r, std::exp(s)); }, std::log(r) - 3.0, std::log(r) + 3.0,
        std::numeric_limits<double>::digits / 2);
    EXPECT_NEAR(std::exp(log_sigma), r, 1e-6 * std::max(1.0, r));
    EXPECT_GT(weighted_single(r, r / 10), value);
    EXPECT_GT(weighted_single(r, r * 10), value);
  }
}

TEST(UncertaintyWeight, AvoidsDegenerateSigma) {
  EXPECT_GT(weighted_single(0.5, 0.05), weighted_single(0.5, 0.5));
  EXPECT_GT(weighted_single(0.5, 5.0), weighted_single(0.5, 0.5));
}

TEST(UncertaintyWeight, PerPixelMinimiserOnRandomMaps) {
  std::mt19937_64 rng(42);
  Graph g;
  const auto r = uniform(rng, H * W, 0.05, 2.0);
  const Tensor loss = g.constant({H, W}, r);
  const double at_star = uncertainty_weight(loss, g.constant({H, W}, r)).item();
  for (int trial = 0; trial < 20; ++trial) {
    auto s = r;
    for (auto& v : s) v *= std::exp(std::uniform_real_distribution<double>(-0.5, 0.5)(rng));
    EXPECT_GT(uncertainty_weight(loss, g.constant({H, W}, s)).item(), at_star);
  }
}

TEST(FinalLoss, SumsTerms) {
  Graph g;
  const auto f = final_loss({g.scalar(0.4), g.scalar(0.3), 0.7}, {g.scalar(0.1), g.scalar(0.2), 0.6});
  EXPECT_NEAR(f.value.item(), 0.5, 1e-15);
  EXPECT_NEAR(f.breakdown.l_final, 0.5, 1e-15);
  EXPECT_EQ(f.breakdown.l_photometric, 0.4);
  EXPECT_EQ(f.breakdown.l_regression, 0.1);
  EXPECT_EQ(f.breakdown.mean_sigma_pho, 0.7);
  EXPECT_EQ(f.breakdown.mean_sigma_reg, 0.6);
}

TEST(FinalLoss, ZeroLossUnitSigmaIsZero) {
  Graph g;
  const Tensor zero = g.constant({H, W}, 0.0);
  const Tensor one = g.constant({H, W}, 1.0);
  const auto f = final_loss({mean(zero), uncertainty_weight(zero, one), 1.0},
                            {mean(zero), uncertainty_weight(zero, one), 1.0});
  EXPECT_EQ(f.value.item(), 0.0);
}

TEST(FinalLoss, AdditiveOnRandomBatches) {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    Graph g;
    const Tensor lp = g.constant({H, W}, uniform(rng, H * W, 0, 1));
    const Tensor lr = g.constant({H, W}, uniform(rng, H * W, 0, 1));
    const Tensor sp = g.constant({H, W}, uniform(rng, H * W, 0.1, 3));
    const Tensor sr = g.constant({H, W}, uniform(rng, H * W, 0.1, 3));
    const auto f = final_loss({mean(lp), uncertainty_weight(lp, sp), mean(sp).item()},
                              {mean(lr), uncertainty_weight(lr, sr), mean(sr).item()});
    const auto& b = f.breakdown;
    EXPECT_NEAR(b.l_final, b.l_reconstruction + b.l_distillation, 1e-9);
    EXPECT_GT(b.mean_sigma_pho, 0.0);
    EXPECT_GT(b.mean_sigma_reg, 0.0);
  }
}

TEST(SigmaFromLog, ClampsBeforeExponentiating) {
  Graph g;
  const Tensor s = sigma_from_log(g.constant({3}, std::vector<double>{-100, 0, 100}));
  EXPECT_DOUBLE_EQ(s[0], std::exp(kLogSigmaMin));
  EXPECT_DOUBLE_EQ(s[1], 1.0);
  EXPECT_DOUBLE_EQ(s[2], std::exp(kLogSigmaMax));
}

// Gradient checks at random interior points, one per loss.

void expect_gradients(const ScalarFn& fn, const Shape& shape, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = grad_check(fn, shape, uniform(rng, numel(shape), lo, hi));
    ASSERT_LT(r.max_rel_error, 1e-3) << "trial " << trial << " coordinate " << r.worst_index;
  }
}

struct Fixture {
  std::vector<double> target, src0, src1, other;
  explicit Fixture(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    target = uniform(rng, H * W * 3, 0, 1);
    src0 = uniform(rng, H * W * 3, 0, 1);
    src1 = uniform(rng, H * W * 3, 0, 1);
    other = uniform(rng, H * W * 3, 0, 1);
  }
};

TEST(LossGradients, Ssim) {
  const Fixture f(50);
  expect_gradients([&](Graph& g, const Tensor& x) { return sum(ssim(g.constant({H, W, 3}, f.target), x)); },
                   {H, W, 3}, 0, 1, 1);
}

TEST(LossGradients, PhotometricWrtBothImages) {
  const Fixture f(51);
  expect_gradients([&](Graph& g, const Tensor& x) { return mean(photometric_error(g.constant({H, W, 3}, f.target), x, 0.85)); },
                   {H, W, 3}, 0, 1, 2);
  expect_gradients([&](Graph& g, const Tensor& x) { return mean(photometric_error(x, g.constant({H, W, 3}, f.other), 0.85)); },
                   {H, W, 3}, 0, 1, 3);
}

TEST(LossGradients, Smoothness) {
  const Fixture f(52);
  expect_gradients([&](Graph& g, const Tensor& d) { return smoothness_loss(d, g.constant({H, W, 3}, f.target)); },
                   {H, W}, 0.2, 2, 4);
}

TEST(LossGradients, MinReprojection) {
  const Fixture f(53);
  expect_gradients(
      [&](Graph& g, const Tensor& x) {
        const Tensor t = g.constant({H, W, 3}, f.target);
        const std::array<Tensor, 2> src{g.constant({H, W, 3}, f.src0), g.constant({H, W, 3}, f.src1)};
        const std::array<Tensor, 2> rec{x, g.constant({H, W, 3}, f.other)};
        const auto r = min_reprojection_with_automask(t, src, rec, 0.85);
        return masked_mean(r.min_error, r.mask);
      },
      {H, W, 3}, 0, 1, 5);
}

TEST(LossGradients, SdeObjective) {
  const Fixture f(54);
  expect_gradients(
      [&](Graph& g, const Tensor& d) {
        const Tensor t = g.constant({H, W, 3}, f.target);
        const std::array<Tensor, 2> src{g.constant({H, W, 3}, f.src0), g.constant({H, W, 3}, f.src1)};
        const std::array<Tensor, 2> rec{g.constant({H, W, 3}, f.other) * mean(d), g.constant({H, W, 3}, f.src1)};
        const std::vector<ScaleTerms> scales{{min_reprojection_with_automask(t, src, rec, 0.85), smoothness_loss(d, t)}};
        return sde_objective(scales, 1e-3);
      },
      {H, W}, 0.2, 1.0, 6);
}

TEST(LossGradients, ReconstructionObjectiveWrtSigma) {
  const Fixture f(55);
  expect_gradients(
      [&](Graph& g, const Tensor& s) {
        const Tensor t = g.constant({H, W, 3}, f.target);
        const std::array<Tensor, 2> src{g.constant({H, W, 3}, f.src0), g.constant({H, W, 3}, f.src1)};
        const std::array<Tensor, 2> rec{g.constant({H, W, 3}, f.other), g.constant({H, W, 3}, f.src1)};
        const std::vector<ScaleTerms> scales{
            {min_reprojection_with_automask(t, src, rec, 0.85), smoothness_loss(g.constant({H, W}, 0.5), t)}};
        const std::array<Tensor, 2> sigma{s, s * s};
        return reconstruction_objective(scales, sigma, 1e-3);
      },
      {H, W}, 0.2, 2, 7);
}

TEST(LossGradients, RegressionAndDistillation) {
  std::mt19937_64 rng(56);
  const auto pseudo = uniform(rng, H * W, 0, 1);
  const auto sigma = uniform(rng, H * W, 0.2, 2);
  expect_gradients(
      [&](Graph& g, const Tensor& d) {
        return uncertainty_weight(regression_loss(d, g.constant({H, W}, pseudo)), g.constant({H, W}, sigma));
      },
      {H, W}, 0, 1, 8);
  expect_gradients(
      [&](Graph& g, const Tensor& s) {
        return uncertainty_weight(regression_loss(g.constant({H, W}, sigma), g.constant({H, W}, pseudo)),
                                  sigma_from_log(s));
      },
      {H, W}, -2, 2, 9);
}

TEST(LossGradients, FinalLoss) {
  std::mt19937_64 rng(57);
  const auto a = uniform(rng, H * W, 0, 1);
  expect_gradients(
      [&](Graph& g, const Tensor& s) {
        const Tensor la = g.constant({H, W}, a);
        return final_loss({mean(la), uncertainty_weight(la, s), 1.0}, {mean(s), uncertainty_weight(s * s, s), 1.0})
            .value;
      },
      {H, W}, 0.2, 2, 10);
}

}  // namespace
}  // namespace subdepth
