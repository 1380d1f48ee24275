#include "subdepth/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "subdepth/checkpoint.hpp"

namespace subdepth {
namespace {

using Clock = std::chrono::steady_clock;
using GradBuffer = std::vector<std::vector<double>>;

GradBuffer zeros_like(const NetworkParams& p) {
  GradBuffer g;
  for (const auto& t : p.tensors) g.emplace_back(t.values.size(), 0.0);
  return g;
}

void accumulate(GradBuffer& acc, const Gradients& grads, const BoundParams& bound) {
  const auto& leaves = bound.leaves();
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (!grads.reached(leaves[i])) continue;
    const auto g = grads.of(leaves[i]);
    for (std::size_t j = 0; j < g.size(); ++j) acc[i][j] += g[j];
  }
}

void scale(GradBuffer& acc, double factor) {
  for (auto& t : acc) {
    for (auto& v : t) v *= factor;
  }
}

// Fisher-Yates with a 53-bit uniform draw, independent of the standard
// library's distribution implementations.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + epoch + 1);
  for (std::size_t i = n; i > 1; --i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    std::swap(order[i - 1], order[static_cast<std::size_t>(u * static_cast<double>(i))]);
  }
  return order;
}

struct Trainable {
  NetworkParams* params = nullptr;
  AdamState state;
  GradBuffer grads;
  std::function<bool(std::string_view)> frozen;
};

class Session {
 public:
  Session(const Dataset& dataset, const TrainConfig& config, ModelBundle model,
          std::vector<std::vector<double>> pseudo_labels)
      : dataset_(dataset), config_(config), model_(std::move(model)), pseudo_(std::move(pseudo_labels)) {
    const auto mode = config_.objective_mode;
    train_pose_ = uses_photometric(mode);
    use_uncert_ = weights_photometric(mode) && !config_.freeze_sigma;
    const bool sigma_frozen = config_.freeze_sigma || !weights_regression(mode);
    nets_.push_back(Trainable{&model_.depth, {}, {}, [sigma_frozen](std::string_view n) {
                                return sigma_frozen && is_sigma_head_param(n);
                              }});
    if (train_pose_) nets_.push_back(Trainable{&*model_.pose, {}, {}, {}});
    if (use_uncert_) nets_.push_back(Trainable{&*model_.uncert, {}, {}, {}});
  }

  TrainResult run() {
    const auto& train = dataset_.train;
    const auto objective = config_.objective();
    const auto clamp = eval_clamp_range(dataset_, config_);
    std::int64_t step = 0;
    for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
      const auto start = Clock::now();
      const double lr = lr_schedule(epoch, config_);
      const auto order = epoch_order(train.size(), config_.seed, epoch);
      double sigma_pho_sum = 0.0, sigma_reg_sum = 0.0;
      std::size_t epoch_steps = 0;
      for (std::size_t b = 0; b < order.size(); b += config_.batch_size) {
        const std::size_t end = std::min(order.size(), b + config_.batch_size);
        auto breakdown = train_step(std::span(order).subspan(b, end - b), lr, objective);
        breakdown.step = step++;
        sigma_pho_sum += breakdown.mean_sigma_pho;
        sigma_reg_sum += breakdown.mean_sigma_reg;
        ++epoch_steps;
        spdlog::debug("step {}: l_final {:.6f} l_pho {:.6f} l_reg {:.6f} lr {:g}", breakdown.step, breakdown.l_final,
                      breakdown.l_photometric, breakdown.l_regression, lr);
        log_.steps.push_back(breakdown);
        if (config_.max_steps && static_cast<std::size_t>(step) >= config_.max_steps) break;
      }
      EpochRecord rec;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.mean_sigma_pho = sigma_pho_sum / static_cast<double>(epoch_steps);
      rec.mean_sigma_reg = sigma_reg_sum / static_cast<double>(epoch_steps);
      if (config_.eval_each_epoch && dataset_.has_ground_truth()) {
        rec.eval = evaluate_depth(model_.depth, dataset_.eval, objective, clamp).aggregate;
      }
      rec.seconds = std::chrono::duration<double>(Clock::now() - start).count();
      const auto& last = log_.steps.back();
      spdlog::info("{} epoch {}/{}: l_final {:.5f} l_pho {:.5f} l_reg {:.5f} sigma_pho {:.4f} sigma_reg {:.4f}{} ({:.1f}s)",
                   mode_name(config_.objective_mode), epoch + 1, config_.epochs, last.l_final, last.l_photometric,
                   last.l_regression, rec.mean_sigma_pho, rec.mean_sigma_reg,
                   rec.eval ? fmt::format(" abs_rel {:.4f}", rec.eval->abs_rel) : std::string(), rec.seconds);
      log_.epochs.push_back(rec);
      if (config_.max_steps && static_cast<std::size_t>(step) >= config_.max_steps) break;
    }
    return TrainResult{std::move(model_), std::move(log_)};
  }

 private:
  LossBreakdown train_step(std::span<const std::size_t> batch, double lr, const ObjectiveSettings& objective) {
    for (auto& n : nets_) n.grads = zeros_like(*n.params);
    LossBreakdown sum;
    sum.mean_sigma_pho = 0.0;
    sum.mean_sigma_reg = 0.0;
    for (std::size_t index : batch) {
      const auto b = sample_step(index, objective);
      sum.l_photometric += b.l_photometric;
      sum.l_regression += b.l_regression;
      sum.l_reconstruction += b.l_reconstruction;
      sum.l_distillation += b.l_distillation;
      sum.l_final += b.l_final;
      sum.mean_sigma_pho += b.mean_sigma_pho;
      sum.mean_sigma_reg += b.mean_sigma_reg;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& n : nets_) {
      scale(n.grads, inv);
      adam_step(*n.params, n.grads, n.state, lr, config_.beta1, config_.beta2, kAdamEps, n.frozen);
    }
    LossBreakdown mean;
    mean.l_photometric = sum.l_photometric * inv;
    mean.l_regression = sum.l_regression * inv;
    mean.l_reconstruction = sum.l_reconstruction * inv;
    mean.l_distillation = sum.l_distillation * inv;
    mean.l_final = sum.l_final * inv;
    mean.mean_sigma_pho = sum.mean_sigma_pho * inv;
    mean.mean_sigma_reg = sum.mean_sigma_reg * inv;
    return mean;
  }

  LossBreakdown sample_step(std::size_t index, const ObjectiveSettings& objective) {
    const auto mode = config_.objective_mode;
    const auto& triplet = dataset_.train[index];
    Graph g;
    const BoundParams depth(g, model_.depth, true);
    const BoundParams pose(g, *model_.pose, train_pose_);
    const auto in = bind_triplet(g, triplet);
    const auto fw = photometric_forward(depth, pose, in, triplet.intrinsics, objective);
    const Tensor zero = g.scalar(0.0);

    ReconstructionTerms rec{sde_objective(fw.scales, objective.beta), zero, 1.0};
    std::optional<BoundParams> uncert;
    if (weights_photometric(mode)) {
      std::array<Tensor, 2> sigma;
      if (use_uncert_) {
        uncert.emplace(g, *model_.uncert, true);
        sigma = photometric_sigmas(*uncert, in);
      } else {
        sigma = {g.constant(fw.depth[0].disparity.shape(), 1.0), g.constant(fw.depth[0].disparity.shape(), 1.0)};
      }
      rec.l_reconstruction = reconstruction_objective(fw.scales, sigma, objective.beta);
      const auto selected = select_by_source(sigma, fw.scales[0].reprojection.source);
      double s = 0.0;
      for (double v : selected) s += v;
      rec.mean_sigma_pho = s / static_cast<double>(selected.size());
    } else if (uses_photometric(mode)) {
      rec.l_reconstruction = rec.l_photometric;
    }

    DistillationTerms dist{zero, zero, 1.0};
    if (!pseudo_.empty()) {
      const Tensor& d = fw.depth[0].disparity;
      const Tensor residual = regression_loss(d, g.constant(d.shape(), pseudo_[index]));
      dist.l_regression = mean(residual);
      if (weights_regression(mode)) {
        const Tensor sigma =
            config_.freeze_sigma ? g.constant(d.shape(), 1.0) : sigma_from_log(fw.depth[0].log_sigma);
        dist.l_distillation = uncertainty_weight(residual, sigma);
        dist.mean_sigma_reg = mean(sigma).item();
      } else if (uses_regression(mode)) {
        dist.l_distillation = dist.l_regression;
      }
    }

    const auto final = final_loss(rec, dist);
    if (!std::isfinite(final.breakdown.l_final)) {
      throw std::domain_error("non-finite loss on triplet " + triplet.id + " in mode " +
                              std::string(mode_name(mode)));
    }
    const auto grads = g.backward(final.value);
    accumulate(nets_[0].grads, grads, depth);
    if (train_pose_) accumulate(nets_[1].grads, grads, pose);
    if (uncert) accumulate(nets_.back().grads, grads, *uncert);
    return final.breakdown;
  }

  const Dataset& dataset_;
  const TrainConfig& config_;
  ModelBundle model_;
  std::vector<std::vector<double>> pseudo_;
  std::vector<Trainable> nets_;
  bool train_pose_ = false;
  bool use_uncert_ = false;
  TrainLog log_;
};

void require_dataset(const Dataset& dataset) {
  if (dataset.train.empty()) throw std::invalid_argument("dataset " + dataset.root.string() + " has no training triplets");
}

std::vector<std::vector<double>> pseudo_labels(const NetworkParams& teacher, const Dataset& dataset) {
  std::vector<std::vector<double>> out;
  out.reserve(dataset.train.size());
  for (const auto& t : dataset.train) {
    Graph g;
    const BoundParams p(g, teacher, false);
    const auto disp = depthnet_forward(p, image_constant(g, t.target()))[0].disparity.values();
    out.emplace_back(disp.begin(), disp.end());
  }
  return out;
}

}  // namespace

std::string_view mode_name(ObjectiveMode mode) {
  switch (mode) {
    case ObjectiveMode::photometric: return "photometric";
    case ObjectiveMode::regression: return "regression";
    case ObjectiveMode::photometric_regression: return "photometric+regression";
    case ObjectiveMode::reconstruction: return "reconstruction";
    case ObjectiveMode::distillation: return "distillation";
    case ObjectiveMode::subdepth: return "subdepth";
  }
  return "unknown";
}

ObjectiveMode parse_mode(std::string_view name) {
  for (auto m : kAllModes) {
    if (mode_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown objective_mode '" + std::string(name) +
                              "' (expected photometric, regression, photometric+regression, reconstruction, "
                              "distillation or subdepth)");
}

bool uses_photometric(ObjectiveMode m) {
  return m == ObjectiveMode::photometric || m == ObjectiveMode::photometric_regression ||
         m == ObjectiveMode::reconstruction || m == ObjectiveMode::subdepth;
}

bool uses_regression(ObjectiveMode m) {
  return m == ObjectiveMode::regression || m == ObjectiveMode::photometric_regression ||
         m == ObjectiveMode::distillation || m == ObjectiveMode::subdepth;
}

bool weights_photometric(ObjectiveMode m) { return m == ObjectiveMode::reconstruction || m == ObjectiveMode::subdepth; }

bool weights_regression(ObjectiveMode m) { return m == ObjectiveMode::distillation || m == ObjectiveMode::subdepth; }

void TrainConfig::validate() const {
  const auto fail = [](const std::string& why) { throw std::invalid_argument("train config: " + why); };
  if (epochs == 0) fail("epochs must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(lr_initial > 0.0) || !(lr_finetune > 0.0)) fail("learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("Adam betas must lie in [0, 1)");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1]");
  if (!(beta >= 0.0)) fail("beta must be nonnegative");
  if (!(d_min > 0.0) || !(d_max > d_min)) fail("need 0 < d_min < d_max");
  if (num_scales == 0 || num_scales > kNumScales) fail("num_scales must be in [1, " + std::to_string(kNumScales) + "]");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr_initial", c.lr_initial},
                     {"lr_finetune", c.lr_finetune},
                     {"lr_switch_epoch", c.lr_switch_epoch},
                     {"betas", {c.beta1, c.beta2}},
                     {"alpha", c.alpha},
                     {"beta", c.beta},
                     {"seed", c.seed},
                     {"objective_mode", mode_name(c.objective_mode)},
                     {"d_min", c.d_min},
                     {"d_max", c.d_max},
                     {"num_scales", c.num_scales},
                     {"init_from_teacher", c.init_from_teacher},
                     {"freeze_sigma", c.freeze_sigma},
                     {"max_steps", c.max_steps},
                     {"eval_each_epoch", c.eval_each_epoch}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") c.epochs = value.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "lr_initial") c.lr_initial = value.get<double>();
    else if (key == "lr_finetune") c.lr_finetune = value.get<double>();
    else if (key == "lr_switch_epoch") c.lr_switch_epoch = value.get<std::size_t>();
    else if (key == "betas") {
      const auto b = value.get<std::array<double, 2>>();
      c.beta1 = b[0];
      c.beta2 = b[1];
    }
    else if (key == "alpha") c.alpha = value.get<double>();
    else if (key == "beta") c.beta = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "objective_mode") c.objective_mode = parse_mode(value.get<std::string>());
    else if (key == "d_min") c.d_min = value.get<double>();
    else if (key == "d_max") c.d_max = value.get<double>();
    else if (key == "num_scales") c.num_scales = value.get<std::size_t>();
    else if (key == "init_from_teacher") c.init_from_teacher = value.get<bool>();
    else if (key == "freeze_sigma") c.freeze_sigma = value.get<bool>();
    else if (key == "max_steps") c.max_steps = value.get<std::size_t>();
    else if (key == "eval_each_epoch") c.eval_each_epoch = value.get<bool>();
    else throw std::invalid_argument("train config: unknown key '" + key + "'");
  }
}

void adam_step(NetworkParams& params, const std::vector<std::vector<double>>& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps, const std::function<bool(std::string_view)>& frozen) {
  auto& tensors = params.tensors;
  if (grads.size() != tensors.size()) {
    throw ShapeError("adam_step", std::to_string(grads.size()) + " gradients for " + std::to_string(tensors.size()) +
                                      " parameters of " + params.architecture);
  }
  if (state.m.empty()) {
    for (const auto& t : tensors) {
      state.m.emplace_back(t.values.size(), 0.0);
      state.v.emplace_back(t.values.size(), 0.0);
    }
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (grads[i].size() != tensors[i].values.size() || state.m[i].size() != tensors[i].values.size()) {
      throw ShapeError("adam_step", "size mismatch for " + tensors[i].name);
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        throw std::domain_error("non-finite gradient for parameter " + params.architecture + "/" + tensors[i].name);
      }
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (frozen && frozen(tensors[i].name)) continue;
    auto& w = tensors[i].values;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

double lr_schedule(std::size_t epoch, const TrainConfig& config) {
  return epoch < config.lr_switch_epoch ? config.lr_initial : config.lr_finetune;
}

void TrainLog::write_steps_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "step,l_photometric,l_regression,l_reconstruction,l_distillation,l_final,mean_sigma_pho,mean_sigma_reg\n"
     << std::setprecision(17);
  for (const auto& s : steps) {
    os << s.step << ',' << s.l_photometric << ',' << s.l_regression << ',' << s.l_reconstruction << ','
       << s.l_distillation << ',' << s.l_final << ',' << s.mean_sigma_pho << ',' << s.mean_sigma_reg << '\n';
  }
  if (!os) throw IoError("write failed for " + path.string());
}

void TrainLog::write_epochs_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "epoch,lr,seconds,mean_sigma_pho,mean_sigma_reg," << kMetricsHeader << '\n' << std::setprecision(17);
  for (const auto& e : epochs) {
    os << e.epoch << ',' << e.lr << ',' << e.seconds << ',' << e.mean_sigma_pho << ',' << e.mean_sigma_reg;
    if (e.eval) {
      for (double v : e.eval->as_array()) os << ',' << v;
    } else {
      os << ",,,,,,,";
    }
    os << '\n';
  }
  if (!os) throw IoError("write failed for " + path.string());
}

std::pair<double, double> eval_clamp_range(const Dataset& dataset, const TrainConfig& config) {
  if (dataset.scene) return {dataset.scene->depth_min, dataset.scene->depth_max};
  return {config.d_min, config.d_max};
}

TrainResult train_teacher(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  require_dataset(dataset);
  if (config.objective_mode != ObjectiveMode::photometric) {
    throw std::invalid_argument("train_teacher requires objective_mode photometric");
  }
  ModelBundle model{init_depthnet(config.seed, false), init_posenet(config.seed), std::nullopt};
  return Session(dataset, config, std::move(model), {}).run();
}

TrainResult train_subdepth(const Dataset& dataset, const std::optional<ModelBundle>& teacher,
                           const TrainConfig& config) {
  config.validate();
  require_dataset(dataset);
  const auto mode = config.objective_mode;
  if (uses_regression(mode) && !teacher) {
    throw std::invalid_argument("objective_mode " + std::string(mode_name(mode)) + " needs a teacher checkpoint");
  }
  ModelBundle model{init_depthnet(config.seed, true), init_posenet(config.seed), init_uncertnet(config.seed)};
  std::vector<std::vector<double>> labels;
  if (teacher) {
    const bool two_channel = teacher->depth.find("dec0.sigma.w") != nullptr;
    require_compatible(teacher->depth, init_depthnet(0, two_channel));
    if (config.init_from_teacher) {
      for (auto& t : model.depth.tensors) {
        if (const auto* src = teacher->depth.find(t.name)) t.values = src->values;
      }
      if (teacher->pose) {
        require_compatible(*teacher->pose, init_posenet(0));
        model.pose = teacher->pose;
      }
    }
    const auto before = teacher->depth.hash();
    labels = pseudo_labels(teacher->depth, dataset);
    if (teacher->depth.hash() != before) throw std::logic_error("teacher parameters changed during labelling");
  }
  return Session(dataset, config, std::move(model), std::move(labels)).run();
}

}  // namespace subdepth
