#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "subdepth/geometry.hpp"
#include "subdepth/ops.hpp"

namespace subdepth {

inline constexpr const char* kDepthNetTag = "depthnet-v1";
inline constexpr const char* kPoseNetTag = "posenet-v1";
inline constexpr const char* kUncertNetTag = "uncertnet-v1";
/// Stride-2 encoder stages shared by all three networks.
inline constexpr std::size_t kEncoderStages = 4;
inline constexpr std::size_t kNumScales = 4;
/// Raw pose outputs are multiplied by this before use.
inline constexpr double kPoseScale = 0.01;

struct ParamTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Named parameter tensors of one network, in a fixed order.
struct NetworkParams {
  std::string architecture;
  std::uint64_t seed = 0;
  std::vector<ParamTensor> tensors;

  [[nodiscard]] const ParamTensor* find(std::string_view name) const;
  [[nodiscard]] ParamTensor* find(std::string_view name);
  [[nodiscard]] std::size_t parameter_count() const;
  /// FNV-1a over names, shapes and raw values.
  [[nodiscard]] std::uint64_t hash() const;
};

/// Kaiming-uniform (fan-in) kernels, zero biases. With `sigma_head` false the
/// network is the one-channel baseline; disparity weights do not depend on it.
NetworkParams init_depthnet(std::uint64_t seed, bool sigma_head = true);
NetworkParams init_posenet(std::uint64_t seed);
NetworkParams init_uncertnet(std::uint64_t seed);

/// True for the depthnet tensors that only feed the uncertainty channel.
bool is_sigma_head_param(std::string_view name);

/// Parameters recorded into a graph, either as gradient leaves or constants.
class BoundParams {
 public:
  BoundParams(Graph& graph, const NetworkParams& params, bool trainable);

  [[nodiscard]] const Tensor& operator[](std::string_view name) const;
  [[nodiscard]] bool contains(std::string_view name) const;
  [[nodiscard]] const std::vector<Tensor>& leaves() const { return leaves_; }
  [[nodiscard]] const NetworkParams& source() const { return *source_; }

 private:
  const NetworkParams* source_;
  std::vector<Tensor> leaves_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

struct DepthScale {
  Tensor disparity;    ///< H_s x W_s in (0, 1)
  Tensor log_sigma;    ///< H_s x W_s, invalid handle for the one-channel baseline
};

/// Per-scale outputs, finest first (scale s has resolution H / 2^s).
/// Throws std::invalid_argument when H or W is not divisible by 2^4.
std::vector<DepthScale> depthnet_forward(const BoundParams& params, const Tensor& image);

/// depth = 1 / (1/d_max + (1/d_min - 1/d_max) * disp).
Tensor disparity_to_depth(const Tensor& disp, double d_min, double d_max);

/// 6-vector (axis-angle, translation) for the target-to-source motion of a
/// channel-concatenated (target, source) pair.
Tensor posenet_forward(const BoundParams& params, const Tensor& frame_pair);
Pose6DoF to_pose(const Tensor& pose);

/// Full-resolution photometric log-uncertainty for a (target, source) pair.
Tensor uncertnet_forward(const BoundParams& params, const Tensor& frame_pair);

/// Depth, pose and photometric-uncertainty networks trained together.
struct ModelBundle {
  NetworkParams depth;
  std::optional<NetworkParams> pose;
  std::optional<NetworkParams> uncert;
};

}  // namespace subdepth
