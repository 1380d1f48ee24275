#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "subdepth/trainer.hpp"

namespace subdepth {

struct AblationRun {
  ObjectiveMode mode = ObjectiveMode::subdepth;
  std::uint64_t seed = 0;
  TrainResult result;
  Metrics eval;
};

/// Trains every (mode, seed) pair against the same teacher, seeds
/// base.seed, base.seed + 1, ... Each run is scored on the eval split.
/// `on_run` sees every finished run before the next one starts.
std::vector<AblationRun> run_ablation(const Dataset& dataset, const ModelBundle& teacher, const TrainConfig& base,
                                      std::span<const ObjectiveMode> modes, std::size_t seeds,
                                      const std::function<void(const AblationRun&)>& on_run = {});

struct AblationRow {
  ObjectiveMode mode = ObjectiveMode::subdepth;
  std::size_t seeds = 0;
  Metrics mean;  ///< seed average
  /// Seed averages of the final-epoch mean sigmas.
  double mean_sigma_pho = 1.0;
  double mean_sigma_reg = 1.0;
};

/// One row per mode, in first-appearance order.
std::vector<AblationRow> summarize_ablation(std::span<const AblationRun> runs);

/// objective_mode,seeds,abs_rel,...,delta3,mean_sigma_pho,mean_sigma_reg
void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);

}  // namespace subdepth
