#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "subdepth/eval.hpp"
#include "subdepth/losses.hpp"
#include "subdepth/networks.hpp"
#include "subdepth/synthscene.hpp"

namespace subdepth {

/// Loss and output-range settings shared by training and inference.
struct ObjectiveSettings {
  double alpha = 0.85;
  double beta = 1e-3;
  double d_min = 0.1;
  double d_max = 100.0;
  std::size_t num_scales = kNumScales;
};

struct TripletInputs {
  Tensor target;
  std::array<Tensor, 2> sources;  ///< {I_-1, I_1}
};

TripletInputs bind_triplet(Graph& graph, const FrameTriplet& triplet);

Tensor image_constant(Graph& graph, const Image& image);
Image to_image(const Tensor& t);

/// Depth outputs plus the per-scale photometric terms they induce.
struct PhotometricForward {
  std::vector<DepthScale> depth;  ///< first `num_scales` depthnet outputs
  std::vector<ScaleTerms> scales;
  std::array<Tensor, 2> poses;       ///< posenet outputs for (I_-1, I_0) and (I_0, I_1)
  std::array<Tensor, 2> transforms;  ///< target-to-source 4 x 4
};

/// Runs depthnet and posenet, warps both sources at every scale (disparity
/// upsampled to full resolution) and evaluates the auto-masked minimum
/// reprojection and smoothness terms.
PhotometricForward photometric_forward(const BoundParams& depth, const BoundParams& pose, const TripletInputs& in,
                                       const Intrinsics& k, const ObjectiveSettings& settings);

/// exp-clamped uncertnet output for each (target, source) pair.
std::array<Tensor, 2> photometric_sigmas(const BoundParams& uncert, const TripletInputs& in);

/// Per-pixel value of the sigma belonging to the source that won the minimum.
std::vector<double> select_by_source(const std::array<Tensor, 2>& sigma, const std::vector<std::uint8_t>& source);

struct Prediction {
  Image depth;                     ///< finest-scale depth in network units
  std::optional<Image> sigma_pho;  ///< needs pose and uncertainty networks
  std::optional<Image> sigma_reg;  ///< needs the two-channel depthnet
};

Image predict_depth(const NetworkParams& depth, const Image& frame, const ObjectiveSettings& settings);
Prediction predict(const ModelBundle& model, const FrameTriplet& triplet, const ObjectiveSettings& settings);

struct EvalReport {
  std::vector<std::pair<std::string, Metrics>> per_image;
  Metrics aggregate;
};

/// Per-image median scaling over all pixels, then metrics with predictions
/// clamped to `clamp_range`. Throws std::invalid_argument when a triplet has
/// no ground-truth depth.
EvalReport evaluate_depth(const NetworkParams& depth, const std::vector<FrameTriplet>& triplets,
                          const ObjectiveSettings& settings, std::pair<double, double> clamp_range);

}  // namespace subdepth
