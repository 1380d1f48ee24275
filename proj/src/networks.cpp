#include "subdepth/networks.hpp"

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

#include "subdepth/hash.hpp"

namespace subdepth {
namespace {

struct UNetLayout {
  std::size_t in_channels;
  std::array<std::size_t, kEncoderStages> encoder;
  std::array<std::size_t, kEncoderStages> decoder;
};

constexpr UNetLayout kDepthLayout{3, {16, 32, 64, 128}, {8, 8, 16, 32}};
constexpr UNetLayout kPoseLayout{6, {8, 16, 32, 64}, {0, 0, 0, 0}};
constexpr UNetLayout kUncertLayout{6, {8, 16, 32, 64}, {8, 8, 16, 32}};

std::string idx(const char* prefix, std::size_t i, const char* suffix) {
  return std::string(prefix) + std::to_string(i) + suffix;
}

class Initializer {
 public:
  Initializer(NetworkParams& params) : params_(params) {}

  void conv(const std::string& name, std::size_t k, std::size_t ci, std::size_t co) {
    Fnv1a h;
    h.update_value(params_.seed);
    h.update(params_.architecture);
    h.update(name);
    std::mt19937_64 rng(h.digest());
    const double fan_in = static_cast<double>(k * k * ci);
    const double bound = std::sqrt(6.0 / fan_in);
    ParamTensor w{name + ".w", {k, k, ci, co}, std::vector<double>(k * k * ci * co)};
    for (auto& v : w.values) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      v = (2.0 * u - 1.0) * bound;
    }
    params_.tensors.push_back(std::move(w));
    params_.tensors.push_back(ParamTensor{name + ".b", {co}, std::vector<double>(co, 0.0)});
  }

 private:
  NetworkParams& params_;
};

void init_encoder(Initializer& init, const UNetLayout& layout) {
  for (std::size_t i = 0; i < kEncoderStages; ++i) {
    init.conv(idx("enc", i, ""), 3, i == 0 ? layout.in_channels : layout.encoder[i - 1], layout.encoder[i]);
  }
}

void init_decoder_level(Initializer& init, const UNetLayout& layout, std::size_t i) {
  const std::size_t in = i + 1 == kEncoderStages ? layout.encoder.back() : layout.decoder[i + 1];
  const std::size_t skip = i > 0 ? layout.encoder[i - 1] : 0;
  init.conv(idx("dec", i, ".up"), 3, in, layout.decoder[i]);
  init.conv(idx("dec", i, ".fuse"), 3, layout.decoder[i] + skip, layout.decoder[i]);
}

Tensor conv(const BoundParams& p, const std::string& name, const Tensor& x, std::size_t stride) {
  const auto& w = p[name + ".w"];
  return conv2d(x, w, p[name + ".b"], stride, w.shape()[0] / 2);
}

std::vector<Tensor> encode(const BoundParams& p, const Tensor& x) {
  std::vector<Tensor> features;
  // roughly zero-mean, unit-variance inputs
  Tensor h = (x + -0.45) * (1.0 / 0.225);
  for (std::size_t i = 0; i < kEncoderStages; ++i) {
    h = elu(conv(p, idx("enc", i, ""), h, 2));
    features.push_back(h);
  }
  return features;
}

// Returns the decoder feature map at each level, finest first.
std::vector<Tensor> decode(const BoundParams& p, const std::vector<Tensor>& features) {
  std::vector<Tensor> levels(kEncoderStages);
  Tensor h = features.back();
  for (std::size_t i = kEncoderStages; i-- > 0;) {
    h = upsample_nearest(elu(conv(p, idx("dec", i, ".up"), h, 1)), 2);
    if (i > 0) h = concat({h, features[i - 1]});
    h = elu(conv(p, idx("dec", i, ".fuse"), h, 1));
    levels[i] = h;
  }
  return levels;
}

void require_divisible(const Tensor& x, std::size_t channels, const char* op) {
  const auto& s = x.shape();
  constexpr std::size_t factor = std::size_t{1} << kEncoderStages;
  if (s.size() != 3 || s[2] != channels) {
    throw ShapeError(op, "expected H x W x " + std::to_string(channels) + ", got " + to_string(s));
  }
  if (s[0] % factor != 0 || s[1] % factor != 0) {
    throw std::invalid_argument(std::string(op) + ": resolution " + std::to_string(s[1]) + "x" + std::to_string(s[0]) +
                                " is not divisible by " + std::to_string(factor));
  }
}

Tensor squeeze(const Tensor& x) {
  const auto& s = x.shape();
  return reshape(x, {s[0], s[1]});
}

}  // namespace

const ParamTensor* NetworkParams::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

ParamTensor* NetworkParams::find(std::string_view name) {
  for (auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

std::uint64_t NetworkParams::hash() const {
  Fnv1a h;
  h.update(architecture);
  for (const auto& t : tensors) {
    h.update(t.name);
    for (auto d : t.shape) h.update_value(static_cast<std::uint64_t>(d));
    for (double v : t.values) h.update_value(v);
  }
  return h.digest();
}

NetworkParams init_depthnet(std::uint64_t seed, bool sigma_head) {
  NetworkParams params{kDepthNetTag, seed, {}};
  Initializer init(params);
  init_encoder(init, kDepthLayout);
  for (std::size_t i = kEncoderStages; i-- > 0;) {
    init_decoder_level(init, kDepthLayout, i);
    init.conv(idx("dec", i, ".disp"), 3, kDepthLayout.decoder[i], 1);
    if (sigma_head) init.conv(idx("dec", i, ".sigma"), 3, kDepthLayout.decoder[i], 1);
  }
  return params;
}

NetworkParams init_posenet(std::uint64_t seed) {
  NetworkParams params{kPoseNetTag, seed, {}};
  Initializer init(params);
  init_encoder(init, kPoseLayout);
  init.conv("pose", 1, kPoseLayout.encoder.back(), 6);
  init.conv("pose.x", 1, kPoseLayout.encoder.back(), 6);
  init.conv("pose.y", 1, kPoseLayout.encoder.back(), 6);
  return params;
}

NetworkParams init_uncertnet(std::uint64_t seed) {
  NetworkParams params{kUncertNetTag, seed, {}};
  Initializer init(params);
  init_encoder(init, kUncertLayout);
  for (std::size_t i = kEncoderStages; i-- > 0;) init_decoder_level(init, kUncertLayout, i);
  init.conv("dec0.sigma", 3, kUncertLayout.decoder[0], 1);
  return params;
}

bool is_sigma_head_param(std::string_view name) {
  return name.starts_with("dec") && name.find(".sigma.") != std::string_view::npos;
}

BoundParams::BoundParams(Graph& graph, const NetworkParams& params, bool trainable) : source_(&params) {
  leaves_.reserve(params.tensors.size());
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& t = params.tensors[i];
    leaves_.push_back(trainable ? graph.variable(t.shape, t.values) : graph.constant(t.shape, t.values));
    index_.emplace(t.name, i);
  }
}

const Tensor& BoundParams::operator[](std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::out_of_range("network " + source_->architecture + " has no parameter " + std::string(name));
  }
  return leaves_[it->second];
}

bool BoundParams::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::vector<DepthScale> depthnet_forward(const BoundParams& params, const Tensor& image) {
  require_divisible(image, 3, "depthnet_forward");
  const auto levels = decode(params, encode(params, image));
  std::vector<DepthScale> out;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    DepthScale scale;
    scale.disparity = squeeze(sigmoid(conv(params, idx("dec", s, ".disp"), levels[s], 1)));
    if (params.contains(idx("dec", s, ".sigma.w"))) {
      scale.log_sigma = squeeze(conv(params, idx("dec", s, ".sigma"), levels[s], 1));
    }
    out.push_back(scale);
  }
  return out;
}

Tensor disparity_to_depth(const Tensor& disp, double d_min, double d_max) {
  if (!(d_min > 0.0) || !(d_max > d_min)) throw std::invalid_argument("disparity_to_depth: need 0 < d_min < d_max");
  const double lo = 1.0 / d_max;
  const double span = 1.0 / d_min - 1.0 / d_max;
  return pow(disp * span + lo, -1.0);
}

Tensor posenet_forward(const BoundParams& params, const Tensor& frame_pair) {
  require_divisible(frame_pair, 6, "posenet_forward");
  const auto features = encode(params, frame_pair);
  const Tensor& f = features.back();
  // A plain spatial mean cannot see radial flow, so two heads are weighted by
  // the normalised x and y coordinate.
  const auto& s = f.shape();
  std::vector<double> xs(s[0] * s[1] * 6);
  std::vector<double> ys(xs.size());
  for (std::size_t y = 0; y < s[0]; ++y) {
    for (std::size_t x = 0; x < s[1]; ++x) {
      for (std::size_t c = 0; c < 6; ++c) {
        xs[(y * s[1] + x) * 6 + c] = (2.0 * static_cast<double>(x) + 1.0) / static_cast<double>(s[1]) - 1.0;
        ys[(y * s[1] + x) * 6 + c] = (2.0 * static_cast<double>(y) + 1.0) / static_cast<double>(s[0]) - 1.0;
      }
    }
  }
  Graph& g = f.graph();
  const Tensor px = g.constant({s[0], s[1], 6}, std::move(xs));
  const Tensor py = g.constant({s[0], s[1], 6}, std::move(ys));
  const Tensor head = conv(params, "pose", f, 1) + conv(params, "pose.x", f, 1) * px + conv(params, "pose.y", f, 1) * py;
  return spatial_mean(head) * kPoseScale;
}

Pose6DoF to_pose(const Tensor& pose) {
  auto v = pose.values();
  if (v.size() != 6) throw ShapeError("to_pose", "expected 6 values, got " + to_string(pose.shape()));
  return Pose6DoF{{v[0], v[1], v[2]}, {v[3], v[4], v[5]}};
}

Tensor uncertnet_forward(const BoundParams& params, const Tensor& frame_pair) {
  require_divisible(frame_pair, 6, "uncertnet_forward");
  const auto levels = decode(params, encode(params, frame_pair));
  return squeeze(conv(params, "dec0.sigma", levels[0], 1));
}

}  // namespace subdepth
