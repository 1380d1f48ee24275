#include "subdepth/pipeline.hpp"

#include <stdexcept>

namespace subdepth {

Tensor image_constant(Graph& graph, const Image& image) {
  return graph.constant({image.height, image.width, image.channels}, image.data);
}

Image to_image(const Tensor& t) {
  const auto& s = t.shape();
  if (s.size() != 2 && s.size() != 3) throw ShapeError("to_image", "expected rank 2 or 3, got " + to_string(s));
  Image img(s[0], s[1], s.size() == 3 ? s[2] : 1);
  const auto v = t.values();
  img.data.assign(v.begin(), v.end());
  return img;
}

TripletInputs bind_triplet(Graph& graph, const FrameTriplet& triplet) {
  return TripletInputs{image_constant(graph, triplet.frames[1]),
                       {image_constant(graph, triplet.frames[0]), image_constant(graph, triplet.frames[2])}};
}

PhotometricForward photometric_forward(const BoundParams& depth, const BoundParams& pose, const TripletInputs& in,
                                       const Intrinsics& k, const ObjectiveSettings& settings) {
  if (settings.num_scales == 0 || settings.num_scales > kNumScales) {
    throw std::invalid_argument("num_scales must be in [1, " + std::to_string(kNumScales) + "]");
  }
  PhotometricForward out;
  out.depth = depthnet_forward(depth, in.target);
  out.depth.resize(settings.num_scales);

  // Frames go in temporal order so the network only ever sees forward
  // motion; the previous frame's transform is inverted afterwards.
  out.poses[0] = posenet_forward(pose, concat({in.sources[0], in.target}));
  out.poses[1] = posenet_forward(pose, concat({in.target, in.sources[1]}));
  out.transforms = {invert_transform(pose_to_transform(out.poses[0])), pose_to_transform(out.poses[1])};
  const auto& transforms = out.transforms;

  const auto identity = identity_reprojection(in.target, in.sources, settings.alpha);
  Tensor image = in.target;
  for (std::size_t s = 0; s < out.depth.size(); ++s) {
    const std::size_t factor = std::size_t{1} << s;
    const Tensor& disp = out.depth[s].disparity;
    const Tensor full = s == 0 ? disp : upsample_nearest(disp, factor);
    const Tensor d = disparity_to_depth(full, settings.d_min, settings.d_max);
    std::array<Tensor, 2> recons;
    for (std::size_t i = 0; i < 2; ++i) recons[i] = synthesize_view(in.sources[i], d, transforms[i], k).reconstruction;
    if (s > 0) image = downsample_area(image, 2);
    out.scales.push_back(ScaleTerms{min_reprojection_with_automask(in.target, recons, settings.alpha, identity),
                                    smoothness_loss(disp, image)});
  }
  return out;
}

std::array<Tensor, 2> photometric_sigmas(const BoundParams& uncert, const TripletInputs& in) {
  return {sigma_from_log(uncertnet_forward(uncert, concat({in.target, in.sources[0]}))),
          sigma_from_log(uncertnet_forward(uncert, concat({in.target, in.sources[1]})))};
}

std::vector<double> select_by_source(const std::array<Tensor, 2>& sigma, const std::vector<std::uint8_t>& source) {
  const auto a = sigma[0].values();
  const auto b = sigma[1].values();
  std::vector<double> out(source.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = source[i] ? b[i] : a[i];
  return out;
}

Image predict_depth(const NetworkParams& depth, const Image& frame, const ObjectiveSettings& settings) {
  Graph g;
  const BoundParams p(g, depth, false);
  const auto outputs = depthnet_forward(p, image_constant(g, frame));
  return to_image(disparity_to_depth(outputs[0].disparity, settings.d_min, settings.d_max));
}

Prediction predict(const ModelBundle& model, const FrameTriplet& triplet, const ObjectiveSettings& settings) {
  Graph g;
  const BoundParams depth(g, model.depth, false);
  const auto in = bind_triplet(g, triplet);
  Prediction out;
  std::vector<DepthScale> outputs;
  std::optional<PhotometricForward> fw;
  if (model.pose && model.uncert) {
    const BoundParams pose(g, *model.pose, false);
    fw = photometric_forward(depth, pose, in, triplet.intrinsics, settings);
    outputs = fw->depth;
    const BoundParams uncert(g, *model.uncert, false);
    Image sigma(triplet.intrinsics.height, triplet.intrinsics.width, 1);
    sigma.data = select_by_source(photometric_sigmas(uncert, in), fw->scales[0].reprojection.source);
    out.sigma_pho = std::move(sigma);
  } else {
    outputs = depthnet_forward(depth, in.target);
  }
  out.depth = to_image(disparity_to_depth(outputs[0].disparity, settings.d_min, settings.d_max));
  if (outputs[0].log_sigma.valid()) out.sigma_reg = to_image(sigma_from_log(outputs[0].log_sigma));
  return out;
}

EvalReport evaluate_depth(const NetworkParams& depth, const std::vector<FrameTriplet>& triplets,
                          const ObjectiveSettings& settings, std::pair<double, double> clamp_range) {
  if (triplets.empty()) throw std::invalid_argument("evaluate_depth: no triplets");
  EvalReport report;
  std::vector<Metrics> all;
  for (const auto& t : triplets) {
    if (!t.gt_depth) throw std::invalid_argument("evaluate_depth: triplet " + t.id + " has no ground-truth depth");
    const Image pred = predict_depth(depth, t.target(), settings);
    const Mask mask(pred.data.size(), 1);
    const auto scaled = median_scale(pred.data, t.gt_depth->data, mask);
    all.push_back(compute_metrics(scaled, t.gt_depth->data, mask, clamp_range));
    report.per_image.emplace_back(t.id, all.back());
  }
  report.aggregate = average(all);
  return report;
}

}  // namespace subdepth
