#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "subdepth/dataset.hpp"
#include "subdepth/pipeline.hpp"

namespace subdepth {

enum class ObjectiveMode { photometric, regression, photometric_regression, reconstruction, distillation, subdepth };

inline constexpr std::array<ObjectiveMode, 6> kAllModes = {
    ObjectiveMode::photometric,    ObjectiveMode::regression,   ObjectiveMode::photometric_regression,
    ObjectiveMode::reconstruction, ObjectiveMode::distillation, ObjectiveMode::subdepth};

std::string_view mode_name(ObjectiveMode mode);
/// Accepts the names returned by mode_name. Throws std::invalid_argument.
ObjectiveMode parse_mode(std::string_view name);

/// Which terms a mode optimises, and whether each is uncertainty-weighted.
bool uses_photometric(ObjectiveMode mode);
bool uses_regression(ObjectiveMode mode);
bool weights_photometric(ObjectiveMode mode);
bool weights_regression(ObjectiveMode mode);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  double lr_initial = 1e-3;
  double lr_finetune = 1e-4;
  std::size_t lr_switch_epoch = 14;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double alpha = 0.85;
  double beta = 1e-3;
  std::uint64_t seed = 0;
  ObjectiveMode objective_mode = ObjectiveMode::subdepth;
  double d_min = 0.1;
  double d_max = 100.0;
  std::size_t num_scales = kNumScales;
  bool init_from_teacher = false;
  /// Replace both uncertainty maps by 1 and never update sigma parameters.
  bool freeze_sigma = false;
  /// Stop after this many optimiser steps; 0 runs the full schedule.
  std::size_t max_steps = 0;
  /// Score the eval split after every epoch when it has ground truth.
  bool eval_each_epoch = true;

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
  [[nodiscard]] ObjectiveSettings objective() const { return {alpha, beta, d_min, d_max, num_scales}; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// First and second moments per parameter tensor.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t t = 0;
};

inline constexpr double kAdamEps = 1e-8;

/// One bias-corrected Adam update of every tensor in `params`. Tensors for
/// which `frozen` returns true are left untouched. Throws std::domain_error
/// naming the parameter when a gradient is not finite, and ShapeError when
/// gradient shapes disagree with the parameters.
void adam_step(NetworkParams& params, const std::vector<std::vector<double>>& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps = kAdamEps,
               const std::function<bool(std::string_view)>& frozen = {});

/// lr_initial before lr_switch_epoch, lr_finetune from then on.
double lr_schedule(std::size_t epoch, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double seconds = 0.0;
  double mean_sigma_pho = 1.0;
  double mean_sigma_reg = 1.0;
  std::optional<Metrics> eval;
};

struct TrainLog {
  std::vector<LossBreakdown> steps;
  std::vector<EpochRecord> epochs;

  /// step,l_photometric,l_regression,l_reconstruction,l_distillation,l_final,mean_sigma_pho,mean_sigma_reg
  void write_steps_csv(const std::filesystem::path& path) const;
  void write_epochs_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  ModelBundle model;
  TrainLog log;
};

/// Photometric-only training of the one-channel teacher. Throws
/// std::invalid_argument for an empty dataset or a non-photometric mode.
TrainResult train_teacher(const Dataset& dataset, const TrainConfig& config);

/// Trains a student under `config.objective_mode` with the teacher frozen.
/// Regression-bearing modes require `teacher`; CheckpointError is raised when
/// its depth network is not a depthnet of the expected layout.
TrainResult train_subdepth(const Dataset& dataset, const std::optional<ModelBundle>& teacher,
                           const TrainConfig& config);

/// Clamp range used for scoring: the dataset's scene depth range when known,
/// otherwise the configured output range.
std::pair<double, double> eval_clamp_range(const Dataset& dataset, const TrainConfig& config);

}  // namespace subdepth
