#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "subdepth/grad_check.hpp"
#include "subdepth/ops.hpp"
#include "support.hpp"

namespace subdepth {
namespace {

using testing_support::uniform;

TEST(Record, AdditiveAndMultiplicativeIdentity) {
  Graph g;
  std::mt19937_64 rng(1);
  const auto v = uniform(rng, 6, -2.0, 2.0);
  const Tensor x = g.variable({2, 3}, v);
  const Tensor a = x + g.constant({2, 3}, 0.0);
  const Tensor m = x * g.constant({2, 3}, 1.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(a[i], v[i]);
    EXPECT_EQ(m[i], v[i]);
  }
}

TEST(Record, LogOfExpRoundTrips) {
  Graph g;
  std::mt19937_64 rng(2);
  const auto v = uniform(rng, 10, -3.0, 3.0);
  const Tensor y = log(exp(g.variable({10}, v)));
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(y[i], v[i], 1e-6);
}

TEST(Record, ShapeMismatchNamesOpAndShapes) {
  Graph g;
  const Tensor a = g.constant({2, 3}, 1.0);
  const Tensor b = g.constant({3, 2}, 1.0);
  try {
    (void)add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("add"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2"), std::string::npos) << msg;
  }
}

TEST(Record, InputsPrecedeEveryNode) {
  Graph g;
  const Tensor x = g.variable({4}, {0.5, 1.0, 1.5, 2.0});
  (void)sum(exp(x) * x + sigmoid(x));
  for (NodeId id = 0; id < g.size(); ++id) {
    for (NodeId in : g.inputs(id)) EXPECT_LT(in, id);
  }
}

TEST(Backward, SumGivesOnes) {
  Graph g;
  const Tensor x = g.variable({2, 2}, {1, -2, 3, 4});
  const auto grad = g.backward(sum(x)).of(x);
  EXPECT_EQ(grad, (std::vector<double>{1, 1, 1, 1}));
}

TEST(Backward, SumOfSquares) {
  Graph g;
  const Tensor x = g.variable({2}, {1, 2});
  const auto grad = g.backward(sum(x * x)).of(x);
  EXPECT_EQ(grad, (std::vector<double>{2, 4}));
}

TEST(Backward, RejectsNonScalarRoot) {
  Graph g;
  const Tensor x = g.variable({2}, {1, 2});
  EXPECT_THROW((void)g.backward(x * x), DiffError);
}

TEST(Backward, RejectsRootFromAnotherGraph) {
  Graph g, other;
  const Tensor x = other.variable({1}, {1.0});
  EXPECT_THROW((void)g.backward(sum(x)), DiffError);
}

TEST(Backward, UnreachedLeafGetsZeros) {
  Graph g;
  const Tensor x = g.variable({3}, {1, 2, 3});
  const Tensor y = g.variable({2}, {1, 2});
  const auto grads = g.backward(sum(x));
  EXPECT_FALSE(grads.reached(y));
  EXPECT_EQ(grads.of(y), (std::vector<double>{0, 0}));
}

TEST(Backward, DetachBlocksGradient) {
  Graph g;
  const Tensor x = g.variable({2}, {1, 2});
  const auto grad = g.backward(sum(detach(x) * x)).of(x);
  EXPECT_EQ(grad, (std::vector<double>{1, 2}));
}

TEST(Backward, IsLinear) {
  std::mt19937_64 rng(3);
  const auto v = uniform(rng, 9, 0.2, 2.0);
  const auto f = [](const Tensor& x) { return sum(exp(x) * x); };
  const auto h = [](const Tensor& x) { return mean(log(x) + sigmoid(x * x)); };
  const double a = 0.7, b = -1.3;

  Graph g1;
  const Tensor x1 = g1.variable({3, 3}, v);
  const auto combined = g1.backward(f(x1) * a + h(x1) * b).of(x1);
  Graph g2;
  const Tensor x2 = g2.variable({3, 3}, v);
  const auto gf = g2.backward(f(x2)).of(x2);
  Graph g3;
  const Tensor x3 = g3.variable({3, 3}, v);
  const auto gh = g3.backward(h(x3)).of(x3);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(combined[i], a * gf[i] + b * gh[i], 1e-6);
}

TEST(Backward, ReplayIsBitIdentical) {
  std::mt19937_64 rng(4);
  const auto img = uniform(rng, 8 * 8 * 2, 0.0, 1.0);
  const auto w = uniform(rng, 3 * 3 * 2 * 4, -0.5, 0.5);
  const auto run = [&] {
    Graph g;
    const Tensor x = g.variable({8, 8, 2}, img);
    const Tensor k = g.variable({3, 3, 2, 4}, w);
    const Tensor y = sum(elu(conv2d(x, k, g.constant({4}, 0.1), 2, 1)));
    const auto grads = g.backward(y);
    auto out = grads.of(k);
    out.push_back(y.item());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(GradCheck, SumOfSquares) {
  std::mt19937_64 rng(5);
  const auto r = grad_check([](Graph&, const Tensor& x) { return sum(x * x); }, {3, 3}, uniform(rng, 9, -1, 1), 1e-4);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(GradCheck, AbsAwayFromZero) {
  std::mt19937_64 rng(6);
  auto p = uniform(rng, 9, 0.1, 1.0);
  for (std::size_t i = 0; i < p.size(); i += 2) p[i] = -p[i] - 0.05;
  const auto r = grad_check([](Graph&, const Tensor& x) { return sum(abs(x)); }, {3, 3}, p, 1e-4);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, ConstantFunctionIsExact) {
  const auto r = grad_check([](Graph& g, const Tensor&) { return g.scalar(3.0); }, {2}, {0.5, 0.7}, 1e-4);
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(GradCheck, NanProbeIsReported) {
  // log(x) is finite at 0.5 but the probe at 0.5 - 0.6 is not.
  EXPECT_THROW((void)grad_check([](Graph&, const Tensor& x) { return sum(log(x)); }, {1}, {0.5}, 0.6), DiffError);
}

TEST(GradCheck, RejectsNonPositiveEps) {
  EXPECT_THROW((void)grad_check([](Graph&, const Tensor& x) { return sum(x); }, {1}, {0.5}, 0.0), DiffError);
}

struct Primitive {
  std::string name;
  Shape shape;
  std::function<Tensor(Graph&, const Tensor&)> fn;
};

void PrintTo(const Primitive& p, std::ostream* os) { *os << p.name; }

// Each primitive is reduced through a fixed random weighting so that every
// output element carries a distinct adjoint.
Tensor weighted(Graph& g, const Tensor& y) {
  std::mt19937_64 rng(99);
  return sum(y * g.constant(y.shape(), uniform(rng, y.size(), -1.0, 1.0)));
}

std::vector<Primitive> primitives() {
  std::vector<Primitive> p;
  const Shape img{4, 4, 2};
  p.push_back({"add", {6}, [](Graph& g, const Tensor& x) { return weighted(g, x + x * x); }});
  p.push_back({"sub", {6}, [](Graph& g, const Tensor& x) { return weighted(g, x - exp(x)); }});
  p.push_back({"mul", {6}, [](Graph& g, const Tensor& x) { return weighted(g, x * x); }});
  p.push_back({"div", {6}, [](Graph& g, const Tensor& x) { return weighted(g, (x + 1.0) / x); }});
  p.push_back({"neg", {6}, [](Graph& g, const Tensor& x) { return weighted(g, -(x * x)); }});
  p.push_back({"abs", {6}, [](Graph& g, const Tensor& x) { return weighted(g, abs(x - 1.1) * x); }});
  p.push_back({"log", {6}, [](Graph& g, const Tensor& x) { return weighted(g, log(x)); }});
  p.push_back({"exp", {6}, [](Graph& g, const Tensor& x) { return weighted(g, exp(x)); }});
  p.push_back({"pow", {6}, [](Graph& g, const Tensor& x) { return weighted(g, pow(x, 2.5)); }});
  p.push_back({"sum", {6}, [](Graph&, const Tensor& x) { return sum(x * x); }});
  p.push_back({"mean", {6}, [](Graph&, const Tensor& x) { return mean(exp(x)); }});
  p.push_back({"minimum", {6}, [](Graph& g, const Tensor& x) { return weighted(g, minimum(x, x * x * 0.5 + 0.3)); }});
  p.push_back({"maximum", {6}, [](Graph& g, const Tensor& x) { return weighted(g, maximum(x, x * x * 0.5 + 0.3)); }});
  p.push_back({"clamp", {6}, [](Graph& g, const Tensor& x) { return weighted(g, clamp(x * x, 0.5, 2.5)); }});
  p.push_back({"sigmoid", {6}, [](Graph& g, const Tensor& x) { return weighted(g, sigmoid(x - 1.0)); }});
  p.push_back({"elu", {6}, [](Graph& g, const Tensor& x) { return weighted(g, elu(x * 2.0 - 2.0)); }});
  p.push_back({"relu", {6}, [](Graph& g, const Tensor& x) { return weighted(g, relu(x - 1.05) * x); }});
  p.push_back({"conv2d", img, [](Graph& g, const Tensor& x) {
                 std::mt19937_64 rng(7);
                 const Tensor k = g.constant({3, 3, 2, 3}, uniform(rng, 54, -1, 1));
                 return weighted(g, conv2d(x, k, g.constant({3}, 0.2), 1, 1));
               }});
  p.push_back({"conv2d_weight", {3, 3, 2, 3}, [](Graph& g, const Tensor& w) {
                 std::mt19937_64 rng(8);
                 const Tensor x = g.constant({4, 4, 2}, uniform(rng, 32, 0, 1));
                 return weighted(g, conv2d(x, w, g.constant({3}, 0.0), 2, 1));
               }});
  p.push_back({"upsample", img, [](Graph& g, const Tensor& x) { return weighted(g, upsample_nearest(x, 2)); }});
  p.push_back({"downsample", img, [](Graph& g, const Tensor& x) { return weighted(g, downsample_area(x * x, 2)); }});
  p.push_back({"avg_pool", img, [](Graph& g, const Tensor& x) { return weighted(g, avg_pool3x3(x * x)); }});
  p.push_back({"grad_x", img, [](Graph& g, const Tensor& x) { return weighted(g, grad_x(x * x)); }});
  p.push_back({"grad_y", img, [](Graph& g, const Tensor& x) { return weighted(g, grad_y(x * x)); }});
  p.push_back({"bilinear_image", {5, 5, 1}, [](Graph& g, const Tensor& x) {
                 std::mt19937_64 rng(9);
                 const Tensor c = g.constant({3, 3, 2}, uniform(rng, 18, 0.3, 3.7));
                 return weighted(g, bilinear_sample(x, c));
               }});
  p.push_back({"bilinear_coords", {3, 3, 2}, [](Graph& g, const Tensor& c) {
                 std::mt19937_64 rng(10);
                 const Tensor img = g.constant({5, 5, 2}, uniform(rng, 50, 0, 1));
                 return weighted(g, bilinear_sample(img, c + 0.13));
               }});
  p.push_back({"reshape", {6}, [](Graph& g, const Tensor& x) { return weighted(g, reshape(x * x, {2, 3})); }});
  p.push_back({"concat", img, [](Graph& g, const Tensor& x) { return weighted(g, concat({x, exp(x)})); }});
  p.push_back({"slice", {4, 4, 3}, [](Graph& g, const Tensor& x) { return weighted(g, slice_channels(x * x, 1, 3)); }});
  p.push_back({"expand", {4, 4}, [](Graph& g, const Tensor& x) { return weighted(g, expand_channels(x * x, 3)); }});
  p.push_back({"mean_channels", img, [](Graph& g, const Tensor& x) { return weighted(g, mean_channels(x * x)); }});
  p.push_back({"spatial_mean", img, [](Graph& g, const Tensor& x) { return weighted(g, spatial_mean(x * x)); }});
  p.push_back({"broadcast_scalar", {6}, [](Graph& g, const Tensor& x) {
                 return weighted(g, reshape(slice_channels(reshape(x, {1, 1, 6}), 2, 3), {1}) * x);
               }});
  p.push_back({"where", {6}, [](Graph& g, const Tensor& x) {
                 return weighted(g, where(Mask{1, 0, 1, 1, 0, 0}, x * x, exp(x)));
               }});
  p.push_back({"masked_mean", {6}, [](Graph&, const Tensor& x) { return masked_mean(x * x, Mask{0, 1, 1, 0, 1, 0}); }});
  return p;
}

class PrimitiveGradient : public ::testing::TestWithParam<Primitive> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferencesAtTwentyPoints) {
  const auto& prim = GetParam();
  std::mt19937_64 rng(std::hash<std::string>{}(prim.name));
  for (int trial = 0; trial < 20; ++trial) {
    const auto point = uniform(rng, numel(prim.shape), 0.2, 2.0);
    const auto r = grad_check(prim.fn, prim.shape, point, 1e-4);
    ASSERT_LT(r.max_rel_error, 1e-3) << prim.name << " trial " << trial << " coordinate " << r.worst_index;
  }
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient, ::testing::ValuesIn(primitives()),
                         [](const auto& info) { return info.param.name; });

TEST(Bilinear, GradientReachesImageAndCoords) {
  Graph g;
  const Tensor img = g.variable({3, 3, 1}, {0, 1, 2, 3, 4, 5, 6, 7, 9});
  const Tensor c = g.variable({1, 1, 2}, {0.4, 1.3});
  const auto grads = g.backward(sum(bilinear_sample(img, c)));
  EXPECT_TRUE(grads.reached(img));
  EXPECT_TRUE(grads.reached(c));
  const auto gc = grads.of(c);
  EXPECT_NE(gc[0], 0.0);
  EXPECT_NE(gc[1], 0.0);
}

}  // namespace
}  // namespace subdepth
