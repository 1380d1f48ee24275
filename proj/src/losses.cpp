#include "subdepth/losses.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <random>
#include <stdexcept>

namespace subdepth {
namespace {

struct Dims {
  std::size_t h, w, c;
};

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto m = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= m) i = 2 * m - 2 - i;
  return static_cast<std::size_t>(i);
}

Dims photometric_dims(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("photometric_error", to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const auto& s = a.shape();
  if (s.size() == 2) return {s[0], s[1], 1};
  if (s.size() == 3) return {s[0], s[1], s[2]};
  throw ShapeError("photometric_error", "expected H x W or H x W x C, got " + to_string(s));
}

// Separable 3x3 reflection-padded box mean and its adjoint.
std::vector<double> box(const std::vector<double>& in, const Dims& d) {
  const std::size_t row = d.w * d.c;
  std::vector<double> tmp(in.size());
  for (std::size_t y = 0; y < d.h; ++y) {
    const double* r = in.data() + y * row;
    double* t = tmp.data() + y * row;
    for (std::size_t x = 0; x < d.w; ++x) {
      const double* l = r + reflect(static_cast<std::ptrdiff_t>(x) - 1, d.w) * d.c;
      const double* m = r + x * d.c;
      const double* rr = r + reflect(static_cast<std::ptrdiff_t>(x) + 1, d.w) * d.c;
      for (std::size_t c = 0; c < d.c; ++c) t[x * d.c + c] = l[c] + m[c] + rr[c];
    }
  }
  std::vector<double> out(in.size());
  for (std::size_t y = 0; y < d.h; ++y) {
    const double* up = tmp.data() + reflect(static_cast<std::ptrdiff_t>(y) - 1, d.h) * row;
    const double* mid = tmp.data() + y * row;
    const double* dn = tmp.data() + reflect(static_cast<std::ptrdiff_t>(y) + 1, d.h) * row;
    double* o = out.data() + y * row;
    for (std::size_t i = 0; i < row; ++i) o[i] = (up[i] + mid[i] + dn[i]) * (1.0 / 9.0);
  }
  return out;
}

std::vector<double> box_adjoint(const std::vector<double>& g, const Dims& d) {
  const std::size_t row = d.w * d.c;
  std::vector<double> tmp(g.size(), 0.0);
  for (std::size_t y = 0; y < d.h; ++y) {
    double* up = tmp.data() + reflect(static_cast<std::ptrdiff_t>(y) - 1, d.h) * row;
    double* mid = tmp.data() + y * row;
    double* dn = tmp.data() + reflect(static_cast<std::ptrdiff_t>(y) + 1, d.h) * row;
    const double* gi = g.data() + y * row;
    for (std::size_t i = 0; i < row; ++i) {
      const double v = gi[i] * (1.0 / 9.0);
      up[i] += v;
      mid[i] += v;
      dn[i] += v;
    }
  }
  std::vector<double> out(g.size(), 0.0);
  for (std::size_t y = 0; y < d.h; ++y) {
    const double* t = tmp.data() + y * row;
    double* o = out.data() + y * row;
    for (std::size_t x = 0; x < d.w; ++x) {
      double* l = o + reflect(static_cast<std::ptrdiff_t>(x) - 1, d.w) * d.c;
      double* m = o + x * d.c;
      double* r = o + reflect(static_cast<std::ptrdiff_t>(x) + 1, d.w) * d.c;
      for (std::size_t c = 0; c < d.c; ++c) {
        l[c] += t[x * d.c + c];
        m[c] += t[x * d.c + c];
        r[c] += t[x * d.c + c];
      }
    }
  }
  return out;
}

struct SsimStats {
  std::vector<double> mu_a, mu_b, e_aa, e_bb, e_ab;

  SsimStats(std::span<const double> a, std::span<const double> b, const Dims& d) {
    std::vector<double> va(a.begin(), a.end()), vb(b.begin(), b.end()), aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    mu_a = box(va, d);
    mu_b = box(vb, d);
    e_aa = box(aa, d);
    e_bb = box(bb, d);
    e_ab = box(ab, d);
  }
};

void photometric_values(std::span<const double> a, std::span<const double> b, const Dims& d, double alpha,
                        std::span<double> out) {
  const SsimStats st(a, b, d);
  const double inv_c = 1.0 / static_cast<double>(d.c);
  for (std::size_t p = 0; p < d.h * d.w; ++p) {
    double s_sum = 0.0, l1 = 0.0;
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t i = p * d.c + c;
      const double ma = st.mu_a[i], mb = st.mu_b[i];
      const double num = (2.0 * ma * mb + kSsimC1) * (2.0 * (st.e_ab[i] - ma * mb) + kSsimC2);
      const double den = (ma * ma + mb * mb + kSsimC1) * ((st.e_aa[i] - ma * ma) + (st.e_bb[i] - mb * mb) + kSsimC2);
      s_sum += num / den;
      l1 += std::abs(a[i] - b[i]);
    }
    out[p] = 0.5 * alpha * (1.0 - s_sum * inv_c) + (1.0 - alpha) * l1 * inv_c;
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void photometric_backward(const BackwardArgs& args, const Dims& d, double alpha) {
  const auto a = args.input(0);
  const auto b = args.input(1);
  const SsimStats st(a, b, d);
  const std::size_t n = a.size();
  const double inv_c = 1.0 / static_cast<double>(d.c);
  std::vector<double> g_mu_a(n), g_mu_b(n), g_aa(n), g_bb(n), g_ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = args.out_grad[i / d.c] * (-0.5 * alpha * inv_c);
    const double ma = st.mu_a[i], mb = st.mu_b[i];
    const double a1 = 2.0 * ma * mb + kSsimC1;
    const double a2 = 2.0 * (st.e_ab[i] - ma * mb) + kSsimC2;
    const double b1 = ma * ma + mb * mb + kSsimC1;
    const double b2 = (st.e_aa[i] - ma * ma) + (st.e_bb[i] - mb * mb) + kSsimC2;
    const double den = b1 * b2;
    const double s = a1 * a2 / den;
    g_mu_a[i] = g * ((2.0 * mb * (a2 - a1)) - s * 2.0 * ma * (b2 - b1)) / den;
    g_mu_b[i] = g * ((2.0 * ma * (a2 - a1)) - s * 2.0 * mb * (b2 - b1)) / den;
    g_ab[i] = g * 2.0 * a1 / den;
    g_aa[i] = g * (-s * b1 / den);
    g_bb[i] = g_aa[i];
  }
  const auto p_ab = box_adjoint(g_ab, d);
  const double l1 = (1.0 - alpha) * inv_c;
  if (args.needs_grad(0)) {
    const auto p_mu = box_adjoint(g_mu_a, d);
    const auto p_aa = box_adjoint(g_aa, d);
    auto ga = args.input_grad(0);
    for (std::size_t i = 0; i < n; ++i) {
      ga[i] += p_mu[i] + p_ab[i] * b[i] + 2.0 * p_aa[i] * a[i] + args.out_grad[i / d.c] * l1 * sign(a[i] - b[i]);
    }
  }
  if (args.needs_grad(1)) {
    const auto p_mu = box_adjoint(g_mu_b, d);
    const auto p_bb = box_adjoint(g_bb, d);
    auto gb = args.input_grad(1);
    for (std::size_t i = 0; i < n; ++i) {
      gb[i] += p_mu[i] + p_ab[i] * a[i] + 2.0 * p_bb[i] * b[i] + args.out_grad[i / d.c] * l1 * sign(b[i] - a[i]);
    }
  }
}

const std::vector<double>& automask_noise(std::size_t n) {
  thread_local std::vector<double> noise;
  if (noise.size() < n) {
    std::mt19937_64 rng(0x5eedULL);
    noise.resize(n);
    for (auto& v : noise) v = kAutomaskNoise * static_cast<double>(rng() >> 11) * 0x1.0p-53;
  }
  return noise;
}

void require_positive(const Tensor& sigma, const char* op) {
  for (double s : sigma.values()) {
    if (!(s > 0.0)) throw std::invalid_argument(std::string(op) + ": sigma must be positive");
  }
}

Tensor scale_sum(std::span<const ScaleTerms> scales, double beta, const std::vector<Tensor>& photometric) {
  if (scales.empty()) throw std::invalid_argument("photometric objective: no scales");
  Tensor total;
  double weight = 1.0;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    Tensor term = photometric[s] + scales[s].smoothness * (beta / weight);
    total = total.valid() ? total + term : term;
    weight *= 2.0;
  }
  return total / static_cast<double>(scales.size());
}

}  // namespace

Tensor ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("ssim", to_string(a.shape()) + " vs " + to_string(b.shape()));
  const Tensor mu_a = avg_pool3x3(a);
  const Tensor mu_b = avg_pool3x3(b);
  const Tensor var_a = avg_pool3x3(a * a) - mu_a * mu_a;
  const Tensor var_b = avg_pool3x3(b * b) - mu_b * mu_b;
  const Tensor cov = avg_pool3x3(a * b) - mu_a * mu_b;
  const Tensor num = (mu_a * mu_b * 2.0 + kSsimC1) * (cov * 2.0 + kSsimC2);
  const Tensor den = (mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2);
  const Tensor s = num / den;
  return a.shape().size() == 3 ? mean_channels(s) : s;
}

Tensor photometric_error(const Tensor& target, const Tensor& recon, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("photometric_error: alpha outside [0, 1]");
  const Dims d = photometric_dims(target, recon);
  std::vector<double> out(d.h * d.w);
  photometric_values(target.values(), recon.values(), d, alpha, out);
  const std::array<Tensor, 2> ins{target, recon};
  return target.graph().record(OpKind::photometric, ins, {d.h, d.w}, std::move(out),
                               [d, alpha](const BackwardArgs& args) {
                                 photometric_backward(args, d, alpha);
                               });
}

Tensor smoothness_loss(const Tensor& disp, const Tensor& image) {
  const auto& ds = disp.shape();
  const auto& is = image.shape();
  if (ds.size() != 2 || is.size() < 2 || is[0] != ds[0] || is[1] != ds[1]) {
    throw ShapeError("smoothness_loss", to_string(ds) + " vs image " + to_string(is));
  }
  const Tensor m = mean(disp);
  if (m.item() == 0.0) throw std::invalid_argument("smoothness_loss: zero mean disparity");
  const Tensor norm = disp / m;
  Tensor ix = abs(grad_x(image));
  Tensor iy = abs(grad_y(image));
  if (is.size() == 3) {
    ix = mean_channels(ix);
    iy = mean_channels(iy);
  }
  const Tensor sx = abs(grad_x(norm)) * exp(-ix);
  const Tensor sy = abs(grad_y(norm)) * exp(-iy);
  return mean(sx) + mean(sy);
}

std::vector<double> identity_reprojection(const Tensor& target, std::span<const Tensor> sources, double alpha) {
  if (sources.empty()) throw std::invalid_argument("identity_reprojection: no sources");
  const std::size_t n = target.shape()[0] * target.shape()[1];
  std::vector<double> identity(n, std::numeric_limits<double>::infinity());
  std::vector<double> e(n);
  for (const auto& src : sources) {
    photometric_values(target.values(), src.values(), photometric_dims(target, src), alpha, e);
    for (std::size_t i = 0; i < n; ++i) identity[i] = std::min(identity[i], e[i]);
  }
  const auto& noise = automask_noise(n);
  for (std::size_t i = 0; i < n; ++i) identity[i] += noise[i];
  return identity;
}

Reprojection min_reprojection_with_automask(const Tensor& target, std::span<const Tensor> sources,
                                            std::span<const Tensor> recons, double alpha) {
  return min_reprojection_with_automask(target, recons, alpha, identity_reprojection(target, sources, alpha));
}

Reprojection min_reprojection_with_automask(const Tensor& target, std::span<const Tensor> recons, double alpha,
                                            const std::vector<double>& identity) {
  if (recons.empty()) throw std::invalid_argument("min_reprojection: no reconstructions");
  Reprojection out;
  std::vector<Tensor> errors;
  errors.reserve(recons.size());
  for (const auto& r : recons) errors.push_back(photometric_error(target, r, alpha));
  out.min_error = errors[0];
  const std::size_t n = errors[0].size();
  if (identity.size() != n) throw std::invalid_argument("min_reprojection: identity map size mismatch");
  out.source.assign(n, 0);
  for (std::size_t k = 1; k < errors.size(); ++k) {
    auto best = out.min_error.values();
    auto cand = errors[k].values();
    for (std::size_t i = 0; i < n; ++i) {
      if (cand[i] < best[i]) out.source[i] = static_cast<std::uint8_t>(k);
    }
    out.min_error = minimum(out.min_error, errors[k]);
  }
  auto warped = out.min_error.values();
  out.mask.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) out.mask[i] = warped[i] < identity[i] ? 1 : 0;
  return out;
}

Tensor sde_objective(std::span<const ScaleTerms> scales, double beta) {
  std::vector<Tensor> photometric;
  for (const auto& s : scales) photometric.push_back(masked_mean(s.reprojection.min_error, s.reprojection.mask));
  return scale_sum(scales, beta, photometric);
}

Tensor reconstruction_objective(std::span<const ScaleTerms> scales, std::span<const Tensor> sigma_per_source,
                                double beta) {
  if (sigma_per_source.empty()) throw std::invalid_argument("reconstruction_objective: no sigma maps");
  std::vector<Tensor> photometric;
  for (const auto& s : scales) {
    Tensor sigma = sigma_per_source[0];
    for (std::size_t k = 1; k < sigma_per_source.size(); ++k) {
      Mask pick(s.reprojection.source.size());
      for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = s.reprojection.source[i] == k ? 1 : 0;
      sigma = where(pick, sigma_per_source[k], sigma);
    }
    photometric.push_back(uncertainty_weight(s.reprojection.min_error, sigma, s.reprojection.mask));
  }
  return scale_sum(scales, beta, photometric);
}

Tensor regression_loss(const Tensor& d, const Tensor& d_pseudo) {
  if (d.shape() != d_pseudo.shape()) {
    throw ShapeError("regression_loss", to_string(d.shape()) + " vs " + to_string(d_pseudo.shape()));
  }
  return abs(d - detach(d_pseudo));
}

Tensor sigma_from_log(const Tensor& log_sigma) { return exp(clamp(log_sigma, kLogSigmaMin, kLogSigmaMax)); }

Tensor uncertainty_weight(const Tensor& loss_map, const Tensor& sigma_map) {
  if (loss_map.shape() != sigma_map.shape()) {
    throw ShapeError("uncertainty_weight", to_string(loss_map.shape()) + " vs " + to_string(sigma_map.shape()));
  }
  require_positive(sigma_map, "uncertainty_weight");
  return mean(loss_map / sigma_map + log(sigma_map));
}

Tensor uncertainty_weight(const Tensor& loss_map, const Tensor& sigma_map, const Mask& mask) {
  if (loss_map.shape() != sigma_map.shape()) {
    throw ShapeError("uncertainty_weight", to_string(loss_map.shape()) + " vs " + to_string(sigma_map.shape()));
  }
  require_positive(sigma_map, "uncertainty_weight");
  return masked_mean(loss_map / sigma_map + log(sigma_map), mask);
}

FinalLoss final_loss(const ReconstructionTerms& reconstruction, const DistillationTerms& distillation) {
  FinalLoss out{reconstruction.l_reconstruction + distillation.l_distillation, {}};
  auto& b = out.breakdown;
  b.l_photometric = reconstruction.l_photometric.item();
  b.l_regression = distillation.l_regression.item();
  b.l_reconstruction = reconstruction.l_reconstruction.item();
  b.l_distillation = distillation.l_distillation.item();
  b.l_final = out.value.item();
  b.mean_sigma_pho = reconstruction.mean_sigma_pho;
  b.mean_sigma_reg = distillation.mean_sigma_reg;
  return out;
}

}  // namespace subdepth
