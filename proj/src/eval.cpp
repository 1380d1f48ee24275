#include "subdepth/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace subdepth {
namespace {

std::uint8_t byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
  const double upper = v[n / 2];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2));
  return 0.5 * (lower + upper);
}

void check_sizes(std::size_t a, std::size_t b, std::size_t m, const char* op) {
  if (a != b || a != m) throw std::invalid_argument(std::string(op) + ": pred, gt and mask sizes differ");
}

std::vector<std::uint8_t> map_pixels(const Image& img, auto&& fn) {
  std::vector<std::uint8_t> rgb;
  rgb.reserve(img.pixels() * 3);
  for (std::size_t i = 0; i < img.pixels(); ++i) {
    const auto c = fn(i);
    rgb.insert(rgb.end(), c.begin(), c.end());
  }
  return rgb;
}

}  // namespace

std::vector<double> median_scale(std::span<const double> pred, std::span<const double> gt, const Mask& mask) {
  check_sizes(pred.size(), gt.size(), mask.size(), "median_scale");
  std::vector<double> p, g;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    p.push_back(pred[i]);
    g.push_back(gt[i]);
  }
  if (p.empty()) throw std::invalid_argument("median_scale: empty mask");
  const double mp = median(std::move(p));
  if (mp == 0.0) throw std::invalid_argument("median_scale: zero median prediction");
  const double factor = median(std::move(g)) / mp;
  std::vector<double> out(pred.begin(), pred.end());
  for (auto& v : out) v *= factor;
  return out;
}

Metrics compute_metrics(std::span<const double> pred, std::span<const double> gt, const Mask& mask,
                        std::pair<double, double> clamp_range) {
  check_sizes(pred.size(), gt.size(), mask.size(), "compute_metrics");
  const auto [lo, hi] = clamp_range;
  if (!(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("compute_metrics: bad clamp range");
  // Extended precision keeps means of identical terms exact.
  long double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0, d1 = 0, d2 = 0, d3 = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double g = gt[i];
    if (!(g > 0.0)) throw std::invalid_argument("compute_metrics: ground truth must be positive on the mask");
    const double p = std::clamp(pred[i], lo, hi);
    const double diff = p - g;
    const double log_diff = std::log(p) - std::log(g);
    const double ratio = std::max(p / g, g / p);
    abs_rel += std::abs(diff) / g;
    sq_rel += diff * diff / g;
    sq += diff * diff;
    sq_log += log_diff * log_diff;
    d1 += ratio < 1.25 ? 1 : 0;
    d2 += ratio < 1.25 * 1.25 ? 1 : 0;
    d3 += ratio < 1.25 * 1.25 * 1.25 ? 1 : 0;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("compute_metrics: empty mask");
  const long double count = static_cast<long double>(n);
  return Metrics{static_cast<double>(abs_rel / count),
                 static_cast<double>(sq_rel / count),
                 std::sqrt(static_cast<double>(sq / count)),
                 std::sqrt(static_cast<double>(sq_log / count)),
                 static_cast<double>(d1 / count),
                 static_cast<double>(d2 / count),
                 static_cast<double>(d3 / count)};
}

Metrics average(std::span<const Metrics> metrics) {
  if (metrics.empty()) throw std::invalid_argument("average: no metrics");
  std::array<long double, 7> acc{};
  for (const auto& m : metrics) {
    const auto a = m.as_array();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += a[i];
  }
  const long double n = static_cast<long double>(metrics.size());
  return Metrics{static_cast<double>(acc[0] / n), static_cast<double>(acc[1] / n), static_cast<double>(acc[2] / n),
                 static_cast<double>(acc[3] / n), static_cast<double>(acc[4] / n), static_cast<double>(acc[5] / n),
                 static_cast<double>(acc[6] / n)};
}

std::vector<std::string> select_hardest(const std::vector<std::pair<std::string, double>>& per_image, std::size_t k) {
  if (k > per_image.size()) {
    throw std::invalid_argument("select_hardest: k = " + std::to_string(k) + " exceeds " +
                                std::to_string(per_image.size()) + " images");
  }
  auto sorted = per_image;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < k; ++i) ids.push_back(sorted[i].first);
  return ids;
}

std::array<std::uint8_t, 3> colormap_sequential(double t) {
  // Polynomial fit of matplotlib's viridis.
  t = std::clamp(t, 0.0, 1.0);
  static constexpr double c[7][3] = {{0.2777273272234177, 0.005407344544966578, 0.3340998053353061},
                                     {0.1050930431085774, 1.404613529898575, 1.384590162594685},
                                     {-0.3308618287255563, 0.214847559468213, 0.09509516302823659},
                                     {-4.634230498983486, -5.799100973351585, -19.33244095627987},
                                     {6.228269936347081, 14.17993336680509, 56.69055260068105},
                                     {4.776384997670288, -13.74514537774601, -65.35303263337234},
                                     {-5.435455855934631, 4.645852612178535, 26.3124352495832}};
  std::array<std::uint8_t, 3> out{};
  for (int ch = 0; ch < 3; ++ch) {
    double v = 0.0;
    for (int k = 6; k >= 0; --k) v = v * t + c[k][ch];
    out[static_cast<std::size_t>(ch)] = byte(v);
  }
  return out;
}

std::array<std::uint8_t, 3> colormap_hot(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return {byte(3.0 * t), byte(3.0 * t - 1.0), byte(3.0 * t - 2.0)};
}

std::vector<std::uint8_t> colorize_depth(const Image& depth, double depth_min, double depth_max) {
  const double lo = 1.0 / depth_max;
  const double span = 1.0 / depth_min - lo;
  return map_pixels(depth, [&](std::size_t i) { return colormap_sequential((1.0 / depth.data[i] - lo) / span); });
}

std::vector<std::uint8_t> colorize_sigma(const Image& sigma) {
  const auto [mn, mx] = std::minmax_element(sigma.data.begin(), sigma.data.end());
  const double range = *mx - *mn;
  return map_pixels(sigma, [&](std::size_t i) {
    return colormap_hot(range > 0.0 ? (sigma.data[i] - *mn) / range : 0.0);
  });
}

std::vector<std::uint8_t> colorize_abs_rel(const Image& pred, const Image& gt) {
  if (pred.data.size() != gt.data.size()) throw std::invalid_argument("colorize_abs_rel: size mismatch");
  return map_pixels(pred, [&](std::size_t i) { return colormap_hot(std::abs(pred.data[i] - gt.data[i]) / gt.data[i]); });
}

std::vector<std::filesystem::path> export_maps(const std::filesystem::path& dir, const MapExport& maps,
                                               double depth_min, double depth_max) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  const auto w = maps.depth.width;
  const auto h = maps.depth.height;
  const auto put = [&](const std::string& suffix, const std::vector<std::uint8_t>& rgb) {
    written.push_back(dir / (maps.id + suffix));
    write_ppm8(written.back(), rgb, w, h);
  };
  put("_depth.ppm", colorize_depth(maps.depth, depth_min, depth_max));
  if (maps.sigma_pho) {
    put("_sigma_pho.ppm", colorize_sigma(*maps.sigma_pho));
    written.push_back(dir / (maps.id + "_sigma_pho.pfm"));
    write_pfm(written.back(), *maps.sigma_pho);
  }
  if (maps.sigma_reg) {
    put("_sigma_reg.ppm", colorize_sigma(*maps.sigma_reg));
    written.push_back(dir / (maps.id + "_sigma_reg.pfm"));
    write_pfm(written.back(), *maps.sigma_reg);
  }
  if (maps.gt_depth) put("_error.ppm", colorize_abs_rel(maps.depth, *maps.gt_depth));
  return written;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, Metrics>>& rows,
                       const Metrics& aggregate) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "# predictions median-scaled per image; rows in image order:";
  for (const auto& [id, m] : rows) os << ' ' << id;
  os << "\n# last row is the mean over images\n" << kMetricsHeader << '\n';
  os << std::setprecision(17);
  const auto row = [&](const Metrics& m) {
    const auto a = m.as_array();
    for (std::size_t i = 0; i < a.size(); ++i) os << (i ? "," : "") << a[i];
    os << '\n';
  };
  for (const auto& [id, m] : rows) row(m);
  row(aggregate);
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace subdepth
