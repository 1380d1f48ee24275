#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "subdepth/image.hpp"
#include "subdepth/ops.hpp"

namespace subdepth {

struct Metrics {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;

  [[nodiscard]] std::array<double, 7> as_array() const {
    return {abs_rel, sq_rel, rmse, rmse_log, delta1, delta2, delta3};
  }
  friend bool operator==(const Metrics&, const Metrics&) = default;
};

inline constexpr const char* kMetricsHeader = "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3";

/// pred * median(gt[mask]) / median(pred[mask]). Even counts use the mean of
/// the two middle values. Throws std::invalid_argument on an empty mask or a
/// zero median prediction.
std::vector<double> median_scale(std::span<const double> pred, std::span<const double> gt, const Mask& mask);

/// Scores `pred` against `gt` over the mask after clamping pred to
/// [clamp_lo, clamp_hi]. Throws std::invalid_argument on an empty mask or
/// nonpositive gt.
Metrics compute_metrics(std::span<const double> pred, std::span<const double> gt, const Mask& mask,
                        std::pair<double, double> clamp_range);

/// Field-wise mean.
Metrics average(std::span<const Metrics> metrics);

/// Ids of the k largest abs_rel values, descending, ties by ascending id.
std::vector<std::string> select_hardest(const std::vector<std::pair<std::string, double>>& per_image, std::size_t k);

/// Viridis-like ramp, t in [0, 1] (dark purple to yellow).
std::array<std::uint8_t, 3> colormap_sequential(double t);
/// Black-red-yellow-white ramp, t in [0, 1].
std::array<std::uint8_t, 3> colormap_hot(double t);

/// Near = bright: t is the disparity position of each depth inside
/// [depth_min, depth_max].
std::vector<std::uint8_t> colorize_depth(const Image& depth, double depth_min, double depth_max);
/// Min-max normalised hot map; constant maps come out black.
std::vector<std::uint8_t> colorize_sigma(const Image& sigma);
/// Per-pixel |pred - gt| / gt on a fixed [0, 1] hot scale.
std::vector<std::uint8_t> colorize_abs_rel(const Image& pred, const Image& gt);

struct MapExport {
  std::string id;
  Image depth;
  std::optional<Image> sigma_pho;
  std::optional<Image> sigma_reg;
  std::optional<Image> gt_depth;
};

/// Writes <id>_depth.ppm and, when present, <id>_sigma_pho.{ppm,pfm},
/// <id>_sigma_reg.{ppm,pfm} and <id>_error.ppm. Returns the written paths.
std::vector<std::filesystem::path> export_maps(const std::filesystem::path& dir, const MapExport& maps,
                                               double depth_min, double depth_max);

/// Metrics CSV: '#' comment lines, the header, one row per image and the
/// aggregate row last.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, Metrics>>& rows,
                       const Metrics& aggregate);

}  // namespace subdepth
