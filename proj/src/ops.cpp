#include "subdepth/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>

#include <Eigen/Core>

namespace subdepth {
namespace {

struct Dims {
  std::size_t h, w, c;
};

Dims image_dims(const Tensor& x, const char* op) {
  const auto& s = x.shape();
  if (s.size() == 2) return {s[0], s[1], 1};
  if (s.size() == 3) return {s[0], s[1], s[2]};
  throw ShapeError(op, "expected H x W or H x W x C, got " + to_string(s));
}

Shape like(const Tensor& x, std::size_t h, std::size_t w, std::size_t c) {
  if (x.shape().size() == 2) return {h, w};
  return {h, w, c};
}

template <class F, class DA, class DB>
Tensor binary(OpKind kind, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const bool a_bcast = a.size() == 1 && b.size() != 1;
  const bool b_bcast = b.size() == 1 && a.size() != 1;
  if (!a_bcast && !b_bcast && sa != sb) {
    throw ShapeError(op_name(kind), to_string(sa) + " vs " + to_string(sb));
  }
  const Shape out_shape = a_bcast ? sb : sa;
  const std::size_t n = a_bcast ? b.size() : a.size();
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(av[a_bcast ? 0 : i], bv[b_bcast ? 0 : i]);
  }
  const std::array<Tensor, 2> ins{a, b};
  return a.graph().record(kind, ins, out_shape, std::move(out),
                          [a_bcast, b_bcast, n, da, db](const BackwardArgs& args) {
                            auto x = args.input(0);
                            auto y = args.input(1);
                            auto ga = args.input_grad(0);
                            auto gb = args.input_grad(1);
                            for (std::size_t i = 0; i < n; ++i) {
                              const double xi = x[a_bcast ? 0 : i];
                              const double yi = y[b_bcast ? 0 : i];
                              const double g = args.out_grad[i];
                              if (!ga.empty()) ga[a_bcast ? 0 : i] += g * da(xi, yi, args.out_value[i]);
                              if (!gb.empty()) gb[b_bcast ? 0 : i] += g * db(xi, yi, args.out_value[i]);
                            }
                          });
}

template <class F, class D>
Tensor unary(OpKind kind, const Tensor& x, F f, D d) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(kind, ins, x.shape(), std::move(out), [d](const BackwardArgs& args) {
    auto gx = args.input_grad(0);
    auto xv = args.input(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += args.out_grad[i] * d(xv[i], args.out_value[i]);
  });
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto m = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= m) i = 2 * m - 2 - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::add, a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::sub, a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::mul, a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::div, a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::minimum, a, b, [](double x, double y) { return std::min(x, y); },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::maximum, a, b, [](double x, double y) { return std::max(x, y); },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Tensor add(const Tensor& a, double c) {
  return unary(
      OpKind::add, a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor mul(const Tensor& a, double c) {
  return unary(
      OpKind::mul, a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& x) {
  return unary(
      OpKind::neg, x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor abs(const Tensor& x) {
  return unary(
      OpKind::abs, x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor log(const Tensor& x) {
  return unary(
      OpKind::log, x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
  return unary(
      OpKind::exp, x, [](double v) { return std::exp(v); }, [](double, double o) { return o; });
}

Tensor pow(const Tensor& x, double p) {
  return unary(
      OpKind::pow, x, [p](double v) { return std::pow(v, p); },
      [p](double v, double) { return p * std::pow(v, p - 1.0); });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      OpKind::clamp, x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      OpKind::sigmoid, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double o) { return o * (1.0 - o); });
}

Tensor elu(const Tensor& x) {
  return unary(
      OpKind::elu, x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
      [](double v, double o) { return v > 0.0 ? 1.0 : o + 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      OpKind::relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(OpKind::sum, ins, {1}, {s}, [](const BackwardArgs& args) {
    auto gx = args.input_grad(0);
    const double g = args.out_grad[0];
    for (auto& v : gx) v += g;
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x.values()) s += v;
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(OpKind::mean, ins, {1}, {s / n}, [n](const BackwardArgs& args) {
    auto gx = args.input_grad(0);
    const double g = args.out_grad[0] / n;
    for (auto& v : gx) v += g;
  });
}

Tensor masked_mean(const Tensor& x, const Mask& mask) {
  if (mask.size() != x.size()) {
    throw ShapeError("masked_mean", to_string(x.shape()) + " vs mask of " + std::to_string(mask.size()));
  }
  std::size_t count = 0;
  double s = 0.0;
  auto xv = x.values();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (mask[i]) {
      s += xv[i];
      ++count;
    }
  }
  if (count == 0) return x.graph().scalar(0.0);
  const double n = static_cast<double>(count);
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(OpKind::mean, ins, {1}, {s / n}, [n, mask](const BackwardArgs& args) {
    auto gx = args.input_grad(0);
    const double g = args.out_grad[0] / n;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (mask[i]) gx[i] += g;
    }
  });
}

Tensor where(const Mask& mask, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || mask.size() != a.size()) {
    throw ShapeError("where", to_string(a.shape()) + " vs " + to_string(b.shape()) + " with mask of " +
                                  std::to_string(mask.size()));
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] ? av[i] : bv[i];
  const std::array<Tensor, 2> ins{a, b};
  return a.graph().record(OpKind::where, ins, a.shape(), std::move(out), [mask](const BackwardArgs& args) {
    auto ga = args.input_grad(0);
    auto gb = args.input_grad(1);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) {
        if (!ga.empty()) ga[i] += args.out_grad[i];
      } else if (!gb.empty()) {
        gb[i] += args.out_grad[i];
      }
    }
  });
}

Tensor detach(const Tensor& x) {
  auto v = x.values();
  return x.graph().constant(x.shape(), std::vector<double>(v.begin(), v.end()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) throw ShapeError("reshape", to_string(x.shape()) + " -> " + to_string(shape));
  auto v = x.values();
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(OpKind::reshape, ins, std::move(shape), std::vector<double>(v.begin(), v.end()),
                          [](const BackwardArgs& args) {
                            auto gx = args.input_grad(0);
                            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += args.out_grad[i];
                          });
}

Tensor concat(std::initializer_list<Tensor> parts) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DiffError("concat: no inputs");
  const auto d0 = image_dims(parts[0], "concat");
  std::vector<std::size_t> chans;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto d = image_dims(p, "concat");
    if (d.h != d0.h || d.w != d0.w) {
      throw ShapeError("concat", to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
    }
    chans.push_back(d.c);
    total += d.c;
  }
  const std::size_t pixels = d0.h * d0.w;
  std::vector<double> out(pixels * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    const auto c = chans[k];
    for (std::size_t p = 0; p < pixels; ++p) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(p * c), c, out.begin() + static_cast<std::ptrdiff_t>(p * total + offset));
    }
    offset += c;
  }
  return parts[0].graph().record(
      OpKind::concat, parts, {d0.h, d0.w, total}, std::move(out),
      [chans, total, pixels](const BackwardArgs& args) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < chans.size(); ++k) {
          const auto c = chans[k];
          auto g = args.input_grad(k);
          if (!g.empty()) {
            for (std::size_t p = 0; p < pixels; ++p) {
              for (std::size_t j = 0; j < c; ++j) g[p * c + j] += args.out_grad[p * total + offset + j];
            }
          }
          offset += c;
        }
      });
}

Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  const auto d = image_dims(x, "slice_channels");
  if (begin >= end || end > d.c) {
    throw ShapeError("slice_channels", to_string(x.shape()) + " [" + std::to_string(begin) + "," +
                                           std::to_string(end) + ")");
  }
  const std::size_t c = end - begin;
  const std::size_t pixels = d.h * d.w;
  auto v = x.values();
  std::vector<double> out(pixels * c);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t j = 0; j < c; ++j) out[p * c + j] = v[p * d.c + begin + j];
  }
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(OpKind::slice, ins, {d.h, d.w, c}, std::move(out),
                          [=](const BackwardArgs& args) {
                            auto g = args.input_grad(0);
                            for (std::size_t p = 0; p < pixels; ++p) {
                              for (std::size_t j = 0; j < c; ++j) g[p * d.c + begin + j] += args.out_grad[p * c + j];
                            }
                          });
}

Tensor expand_channels(const Tensor& x, std::size_t channels) {
  const auto d = image_dims(x, "expand_channels");
  if (d.c != 1) throw ShapeError("expand_channels", "expected one channel, got " + to_string(x.shape()));
  const std::size_t pixels = d.h * d.w;
  auto v = x.values();
  std::vector<double> out(pixels * channels);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t j = 0; j < channels; ++j) out[p * channels + j] = v[p];
  }
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(OpKind::broadcast, ins, {d.h, d.w, channels}, std::move(out),
                          [=](const BackwardArgs& args) {
                            auto g = args.input_grad(0);
                            for (std::size_t p = 0; p < pixels; ++p) {
                              double s = 0.0;
                              for (std::size_t j = 0; j < channels; ++j) s += args.out_grad[p * channels + j];
                              g[p] += s;
                            }
                          });
}

Tensor mean_channels(const Tensor& x) {
  const auto d = image_dims(x, "mean_channels");
  const std::size_t pixels = d.h * d.w;
  auto v = x.values();
  std::vector<double> out(pixels);
  const double inv = 1.0 / static_cast<double>(d.c);
  for (std::size_t p = 0; p < pixels; ++p) {
    double s = 0.0;
    for (std::size_t j = 0; j < d.c; ++j) s += v[p * d.c + j];
    out[p] = s * inv;
  }
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(OpKind::reduce_channels, ins, {d.h, d.w}, std::move(out),
                          [=](const BackwardArgs& args) {
                            auto g = args.input_grad(0);
                            for (std::size_t p = 0; p < pixels; ++p) {
                              const double gp = args.out_grad[p] * inv;
                              for (std::size_t j = 0; j < d.c; ++j) g[p * d.c + j] += gp;
                            }
                          });
}

Tensor spatial_mean(const Tensor& x) {
  const auto d = image_dims(x, "spatial_mean");
  const std::size_t pixels = d.h * d.w;
  const double inv = 1.0 / static_cast<double>(pixels);
  auto v = x.values();
  std::vector<double> out(d.c, 0.0);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t j = 0; j < d.c; ++j) out[j] += v[p * d.c + j];
  }
  for (auto& o : out) o *= inv;
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(OpKind::mean, ins, {d.c}, std::move(out), [=](const BackwardArgs& args) {
    auto g = args.input_grad(0);
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t j = 0; j < d.c; ++j) g[p * d.c + j] += args.out_grad[j] * inv;
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 3 || ws.size() != 4 || ws[2] != xs[2] || bias.size() != ws[3] || stride == 0) {
    throw ShapeError("conv2d", "input " + to_string(xs) + ", kernel " + to_string(ws) + ", bias " +
                                   to_string(bias.shape()));
  }
  const std::size_t H = xs[0], W = xs[1], Ci = xs[2];
  const std::size_t KH = ws[0], KW = ws[1], Co = ws[3];
  if (H + 2 * padding < KH || W + 2 * padding < KW) {
    throw ShapeError("conv2d", "kernel " + to_string(ws) + " larger than padded input " + to_string(xs));
  }
  const std::size_t Ho = (H + 2 * padding - KH) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - KW) / stride + 1;
  const std::size_t P = Ho * Wo;
  const std::size_t K = KH * KW * Ci;

  // im2col: row p holds the receptive field of output pixel p in kernel order.
  auto in = x.values();
  auto cols = std::make_shared<RowMat>(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(K));
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      double* row = cols->data() + (oy * Wo + ox) * K;
      for (std::size_t ky = 0; ky < KH; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) {
          std::fill_n(row + ky * KW * Ci, KW * Ci, 0.0);
          continue;
        }
        for (std::size_t kx = 0; kx < KW; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) {
            std::fill_n(row + (ky * KW + kx) * Ci, Ci, 0.0);
            continue;
          }
          std::copy_n(in.data() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Ci, Ci,
                      row + (ky * KW + kx) * Ci);
        }
      }
    }
  }
  const auto Pi = static_cast<Eigen::Index>(P), Ki = static_cast<Eigen::Index>(K), Ci_ = static_cast<Eigen::Index>(Co);
  // Products run on Eigen-owned (aligned) copies. Over std::vector storage the
  // single-column kernels peel by address, so summation order and the last
  // bits would change from run to run.
  const RowMat wmat = Eigen::Map<const RowMat>(weight.values().data(), Ki, Ci_);
  Eigen::Map<const Eigen::RowVectorXd> bvec(bias.values().data(), Ci_);
  RowMat omat = (*cols) * wmat;
  omat.rowwise() += bvec;
  std::vector<double> out(omat.data(), omat.data() + P * Co);

  const std::array<Tensor, 3> ins{x, weight, bias};
  return x.graph().record(
      OpKind::conv2d, ins, {Ho, Wo, Co}, std::move(out),
      [=, cols = std::move(cols)](const BackwardArgs& args) {
        const RowMat gout = Eigen::Map<const RowMat>(args.out_grad.data(), Pi, Ci_);
        auto gb = args.input_grad(2);
        if (!gb.empty()) {
          const Eigen::RowVectorXd db = gout.colwise().sum();
          Eigen::Map<Eigen::RowVectorXd>(gb.data(), Ci_) += db;
        }
        auto gw = args.input_grad(1);
        if (!gw.empty()) {
          const RowMat dw = cols->transpose() * gout;
          Eigen::Map<RowMat>(gw.data(), Ki, Ci_) += dw;
        }
        auto gin = args.input_grad(0);
        if (gin.empty()) return;
        const RowMat wmat = Eigen::Map<const RowMat>(args.input(1).data(), Ki, Ci_);
        const RowMat gcols = gout * wmat.transpose();
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const double* row = gcols.data() + (oy * Wo + ox) * K;
            for (std::size_t ky = 0; ky < KH; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                double* g = gin.data() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * Ci;
                const double* src = row + (ky * KW + kx) * Ci;
                for (std::size_t ci = 0; ci < Ci; ++ci) g[ci] += src[ci];
              }
            }
          }
        }
      });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  const auto d = image_dims(x, "upsample_nearest");
  if (factor == 0) throw ShapeError("upsample_nearest", "factor 0");
  const std::size_t Ho = d.h * factor, Wo = d.w * factor;
  auto v = x.values();
  std::vector<double> out(Ho * Wo * d.c);
  for (std::size_t y = 0; y < Ho; ++y) {
    for (std::size_t xx = 0; xx < Wo; ++xx) {
      const double* src = v.data() + ((y / factor) * d.w + xx / factor) * d.c;
      std::copy_n(src, d.c, out.data() + (y * Wo + xx) * d.c);
    }
  }
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(OpKind::upsample, ins, like(x, Ho, Wo, d.c), std::move(out),
                          [=](const BackwardArgs& args) {
                            auto g = args.input_grad(0);
                            for (std::size_t y = 0; y < Ho; ++y) {
                              for (std::size_t xx = 0; xx < Wo; ++xx) {
                                const double* go = args.out_grad.data() + (y * Wo + xx) * d.c;
                                double* gi = g.data() + ((y / factor) * d.w + xx / factor) * d.c;
                                for (std::size_t c = 0; c < d.c; ++c) gi[c] += go[c];
                              }
                            }
                          });
}

Tensor downsample_area(const Tensor& x, std::size_t factor) {
  const auto d = image_dims(x, "downsample_area");
  if (factor == 0 || d.h % factor != 0 || d.w % factor != 0) {
    throw ShapeError("downsample_area", to_string(x.shape()) + " by factor " + std::to_string(factor));
  }
  const std::size_t Ho = d.h / factor, Wo = d.w / factor;
  const double inv = 1.0 / static_cast<double>(factor * factor);
  auto v = x.values();
  std::vector<double> out(Ho * Wo * d.c, 0.0);
  for (std::size_t y = 0; y < d.h; ++y) {
    for (std::size_t xx = 0; xx < d.w; ++xx) {
      double* o = out.data() + ((y / factor) * Wo + xx / factor) * d.c;
      const double* s = v.data() + (y * d.w + xx) * d.c;
      for (std::size_t c = 0; c < d.c; ++c) o[c] += s[c] * inv;
    }
  }
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(OpKind::downsample, ins, like(x, Ho, Wo, d.c), std::move(out),
                          [=](const BackwardArgs& args) {
                            auto g = args.input_grad(0);
                            for (std::size_t y = 0; y < d.h; ++y) {
                              for (std::size_t xx = 0; xx < d.w; ++xx) {
                                const double* go = args.out_grad.data() + ((y / factor) * Wo + xx / factor) * d.c;
                                double* gi = g.data() + (y * d.w + xx) * d.c;
                                for (std::size_t c = 0; c < d.c; ++c) gi[c] += go[c] * inv;
                              }
                            }
                          });
}

Tensor avg_pool3x3(const Tensor& x) {
  const auto d = image_dims(x, "avg_pool3x3");
  auto v = x.values();
  std::vector<double> out(v.size(), 0.0);
  constexpr double inv = 1.0 / 9.0;
  for (std::size_t y = 0; y < d.h; ++y) {
    for (std::size_t xx = 0; xx < d.w; ++xx) {
      double* o = out.data() + (y * d.w + xx) * d.c;
      for (int dy = -1; dy <= 1; ++dy) {
        const auto sy = reflect(static_cast<std::ptrdiff_t>(y) + dy, d.h);
        for (int dx = -1; dx <= 1; ++dx) {
          const auto sx = reflect(static_cast<std::ptrdiff_t>(xx) + dx, d.w);
          const double* s = v.data() + (sy * d.w + sx) * d.c;
          for (std::size_t c = 0; c < d.c; ++c) o[c] += s[c];
        }
      }
      for (std::size_t c = 0; c < d.c; ++c) o[c] *= inv;
    }
  }
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(OpKind::avg_pool, ins, x.shape(), std::move(out), [d](const BackwardArgs& args) {
    auto g = args.input_grad(0);
    for (std::size_t y = 0; y < d.h; ++y) {
      for (std::size_t xx = 0; xx < d.w; ++xx) {
        const double* go = args.out_grad.data() + (y * d.w + xx) * d.c;
        for (int dy = -1; dy <= 1; ++dy) {
          const auto sy = reflect(static_cast<std::ptrdiff_t>(y) + dy, d.h);
          for (int dx = -1; dx <= 1; ++dx) {
            const auto sx = reflect(static_cast<std::ptrdiff_t>(xx) + dx, d.w);
            double* gi = g.data() + (sy * d.w + sx) * d.c;
            for (std::size_t c = 0; c < d.c; ++c) gi[c] += go[c] * inv;
          }
        }
      }
    }
  });
}

Tensor grad_x(const Tensor& x) {
  const auto d = image_dims(x, "grad_x");
  if (d.w < 2) throw ShapeError("grad_x", "width < 2 in " + to_string(x.shape()));
  const std::size_t Wo = d.w - 1;
  auto v = x.values();
  std::vector<double> out(d.h * Wo * d.c);
  for (std::size_t y = 0; y < d.h; ++y) {
    for (std::size_t xx = 0; xx < Wo; ++xx) {
      for (std::size_t c = 0; c < d.c; ++c) {
        out[(y * Wo + xx) * d.c + c] = v[(y * d.w + xx + 1) * d.c + c] - v[(y * d.w + xx) * d.c + c];
      }
    }
  }
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(OpKind::spatial_grad, ins, like(x, d.h, Wo, d.c), std::move(out),
                          [=](const BackwardArgs& args) {
                            auto g = args.input_grad(0);
                            for (std::size_t y = 0; y < d.h; ++y) {
                              for (std::size_t xx = 0; xx < Wo; ++xx) {
                                for (std::size_t c = 0; c < d.c; ++c) {
                                  const double go = args.out_grad[(y * Wo + xx) * d.c + c];
                                  g[(y * d.w + xx + 1) * d.c + c] += go;
                                  g[(y * d.w + xx) * d.c + c] -= go;
                                }
                              }
                            }
                          });
}

Tensor grad_y(const Tensor& x) {
  const auto d = image_dims(x, "grad_y");
  if (d.h < 2) throw ShapeError("grad_y", "height < 2 in " + to_string(x.shape()));
  const std::size_t Ho = d.h - 1;
  const std::size_t row = d.w * d.c;
  auto v = x.values();
  std::vector<double> out(Ho * row);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i + row] - v[i];
  const std::array<Tensor, 1> ins{x};
  return x.graph().record(OpKind::spatial_grad, ins, like(x, Ho, d.w, d.c), std::move(out),
                          [row](const BackwardArgs& args) {
                            auto g = args.input_grad(0);
                            for (std::size_t i = 0; i < args.out_grad.size(); ++i) {
                              g[i + row] += args.out_grad[i];
                              g[i] -= args.out_grad[i];
                            }
                          });
}

Tensor bilinear_sample(const Tensor& image, const Tensor& coords) {
  const auto d = image_dims(image, "bilinear_sample");
  const auto& cs = coords.shape();
  if (cs.size() != 3 || cs[2] != 2) {
    throw ShapeError("bilinear_sample", "coords must be H x W x 2, got " + to_string(cs));
  }
  const std::size_t Ho = cs[0], Wo = cs[1], C = d.c;
  const std::size_t n = Ho * Wo;

  // Per output pixel: base index, fractional weights and clamp flags.
  struct Tap {
    std::size_t x0, x1, y0, y1;
    double ax, ay;
    bool free_u, free_v;
  };
  std::vector<Tap> taps(n);
  auto cv = coords.values();
  const double umax = static_cast<double>(d.w - 1);
  const double vmax = static_cast<double>(d.h - 1);
  auto axis = [](double c, double cmax, std::size_t extent, std::size_t& i0, std::size_t& i1, double& a,
                 bool& free) {
    free = c > 0.0 && c < cmax;
    const double cc = std::clamp(c, 0.0, cmax);
    if (extent < 2) {
      i0 = i1 = 0;
      a = 0.0;
      free = false;
      return;
    }
    auto f = static_cast<std::size_t>(std::floor(cc));
    if (f > extent - 2) f = extent - 2;
    i0 = f;
    i1 = f + 1;
    a = cc - static_cast<double>(f);
  };
  std::vector<double> out(n * C);
  auto iv = image.values();
  for (std::size_t p = 0; p < n; ++p) {
    Tap& t = taps[p];
    axis(cv[2 * p], umax, d.w, t.x0, t.x1, t.ax, t.free_u);
    axis(cv[2 * p + 1], vmax, d.h, t.y0, t.y1, t.ay, t.free_v);
    const double* i00 = iv.data() + (t.y0 * d.w + t.x0) * C;
    const double* i01 = iv.data() + (t.y0 * d.w + t.x1) * C;
    const double* i10 = iv.data() + (t.y1 * d.w + t.x0) * C;
    const double* i11 = iv.data() + (t.y1 * d.w + t.x1) * C;
    const double w00 = (1 - t.ax) * (1 - t.ay), w01 = t.ax * (1 - t.ay);
    const double w10 = (1 - t.ax) * t.ay, w11 = t.ax * t.ay;
    for (std::size_t c = 0; c < C; ++c) {
      out[p * C + c] = w00 * i00[c] + w01 * i01[c] + w10 * i10[c] + w11 * i11[c];
    }
  }
  const std::array<Tensor, 2> ins{image, coords};
  return image.graph().record(
      OpKind::bilinear_sample, ins, {Ho, Wo, C}, std::move(out),
      [taps = std::move(taps), d, C, n](const BackwardArgs& args) {
        auto iv = args.input(0);
        auto gi = args.input_grad(0);
        auto gc = args.input_grad(1);
        for (std::size_t p = 0; p < n; ++p) {
          const Tap& t = taps[p];
          const double* go = args.out_grad.data() + p * C;
          const std::size_t o00 = (t.y0 * d.w + t.x0) * C, o01 = (t.y0 * d.w + t.x1) * C;
          const std::size_t o10 = (t.y1 * d.w + t.x0) * C, o11 = (t.y1 * d.w + t.x1) * C;
          if (!gi.empty()) {
            const double w00 = (1 - t.ax) * (1 - t.ay), w01 = t.ax * (1 - t.ay);
            const double w10 = (1 - t.ax) * t.ay, w11 = t.ax * t.ay;
            for (std::size_t c = 0; c < C; ++c) {
              gi[o00 + c] += w00 * go[c];
              gi[o01 + c] += w01 * go[c];
              gi[o10 + c] += w10 * go[c];
              gi[o11 + c] += w11 * go[c];
            }
          }
          if (!gc.empty()) {
            double gu = 0.0, gv = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              const double i00 = iv[o00 + c], i01 = iv[o01 + c], i10 = iv[o10 + c], i11 = iv[o11 + c];
              gu += go[c] * ((1 - t.ay) * (i01 - i00) + t.ay * (i11 - i10));
              gv += go[c] * ((1 - t.ax) * (i10 - i00) + t.ax * (i11 - i01));
            }
            if (t.free_u) gc[2 * p] += gu;
            if (t.free_v) gc[2 * p + 1] += gv;
          }
        }
      });
}

}  // namespace subdepth
