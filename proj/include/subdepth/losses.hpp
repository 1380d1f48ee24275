#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "subdepth/ops.hpp"

namespace subdepth {

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
/// Bounds applied to predicted log-uncertainty before exponentiation.
inline constexpr double kLogSigmaMin = -6.0;
inline constexpr double kLogSigmaMax = 6.0;
/// Amplitude of the fixed pseudo-random offset added to identity errors.
inline constexpr double kAutomaskNoise = 1e-5;

/// One training step's losses. `l_final` is always the sum of the
/// reconstruction and distillation terms.
struct LossBreakdown {
  std::int64_t step = 0;
  double l_photometric = 0.0;
  double l_regression = 0.0;
  double l_reconstruction = 0.0;
  double l_distillation = 0.0;
  double l_final = 0.0;
  double mean_sigma_pho = 1.0;
  double mean_sigma_reg = 1.0;
};

/// Per-pixel SSIM (H x W) from 3x3 reflection-padded box statistics,
/// averaged over channels.
Tensor ssim(const Tensor& a, const Tensor& b);

/// alpha * (1 - SSIM) / 2 + (1 - alpha) * channel-mean |target - recon|,
/// recorded as a single node with an analytic backward.
Tensor photometric_error(const Tensor& target, const Tensor& recon, double alpha);

/// Edge-aware smoothness of a mean-normalised disparity map. Throws
/// std::invalid_argument when the disparity has zero mean.
Tensor smoothness_loss(const Tensor& disp, const Tensor& image);

struct Reprojection {
  Tensor min_error;                  ///< H x W per-pixel minimum over sources
  Mask mask;                         ///< pixels where warping beats the identity
  std::vector<std::uint8_t> source;  ///< index of the source achieving the minimum
};

/// Minimum reprojection error over the sources with identity auto-masking.
/// A pixel is kept when the warped minimum is strictly below the (noised)
/// identity minimum.
Reprojection min_reprojection_with_automask(const Tensor& target, std::span<const Tensor> sources,
                                            std::span<const Tensor> recons, double alpha);
/// Same, with the noised identity minimum precomputed by identity_reprojection.
Reprojection min_reprojection_with_automask(const Tensor& target, std::span<const Tensor> recons, double alpha,
                                            const std::vector<double>& identity);

/// Per-pixel minimum over sources of the unwarped error, plus the fixed
/// tie-breaking noise. Plain values; no graph nodes are recorded.
std::vector<double> identity_reprojection(const Tensor& target, std::span<const Tensor> sources, double alpha);

/// Everything the photometric objective needs from one pyramid scale.
struct ScaleTerms {
  Reprojection reprojection;
  Tensor smoothness;  ///< smoothness_loss at the scale's native resolution
};

/// Mean over scales of masked-mean reprojection + beta * smoothness / 2^s.
Tensor sde_objective(std::span<const ScaleTerms> scales, double beta);

/// Same reduction as sde_objective with each scale's reprojection map
/// uncertainty-weighted. `sigma_per_source[i]` is the H x W uncertainty for
/// source i; every pixel uses the sigma of the source it selected.
Tensor reconstruction_objective(std::span<const ScaleTerms> scales, std::span<const Tensor> sigma_per_source,
                                double beta);

/// |d - d_pseudo|; d_pseudo is detached.
Tensor regression_loss(const Tensor& d, const Tensor& d_pseudo);

/// sigma = exp(clamp(log_sigma, kLogSigmaMin, kLogSigmaMax)).
Tensor sigma_from_log(const Tensor& log_sigma);

/// mean(loss / sigma + log sigma). Throws std::invalid_argument on sigma <= 0.
Tensor uncertainty_weight(const Tensor& loss_map, const Tensor& sigma_map);
/// Masked variant; an empty mask yields a constant 0.
Tensor uncertainty_weight(const Tensor& loss_map, const Tensor& sigma_map, const Mask& mask);

struct ReconstructionTerms {
  Tensor l_photometric;
  Tensor l_reconstruction;
  double mean_sigma_pho = 1.0;
};

struct DistillationTerms {
  Tensor l_regression;
  Tensor l_distillation;
  double mean_sigma_reg = 1.0;
};

struct FinalLoss {
  Tensor value;
  LossBreakdown breakdown;
};

/// l_final = l_reconstruction + l_distillation.
FinalLoss final_loss(const ReconstructionTerms& reconstruction, const DistillationTerms& distillation);

}  // namespace subdepth
