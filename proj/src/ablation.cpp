#include "subdepth/ablation.hpp"

#include <fstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "subdepth/image.hpp"

namespace subdepth {

std::vector<AblationRun> run_ablation(const Dataset& dataset, const ModelBundle& teacher, const TrainConfig& base,
                                      std::span<const ObjectiveMode> modes, std::size_t seeds,
                                      const std::function<void(const AblationRun&)>& on_run) {
  if (seeds == 0) throw std::invalid_argument("run_ablation: need at least one seed");
  if (!dataset.has_ground_truth()) throw std::invalid_argument("run_ablation: eval split has no ground truth");
  const auto clamp = eval_clamp_range(dataset, base);
  std::vector<AblationRun> runs;
  for (const auto mode : modes) {
    for (std::size_t s = 0; s < seeds; ++s) {
      TrainConfig config = base;
      config.objective_mode = mode;
      config.seed = base.seed + s;
      spdlog::info("ablation: {} seed {}", mode_name(mode), config.seed);
      AblationRun run{mode, config.seed, train_subdepth(dataset, teacher, config), {}};
      run.eval = evaluate_depth(run.result.model.depth, dataset.eval, config.objective(), clamp).aggregate;
      if (on_run) on_run(run);
      runs.push_back(std::move(run));
    }
  }
  return runs;
}

std::vector<AblationRow> summarize_ablation(std::span<const AblationRun> runs) {
  std::vector<AblationRow> rows;
  std::vector<std::vector<Metrics>> metrics;
  for (const auto& r : runs) {
    std::size_t i = 0;
    while (i < rows.size() && rows[i].mode != r.mode) ++i;
    if (i == rows.size()) {
      rows.push_back(AblationRow{r.mode, 0, {}, 0.0, 0.0});
      metrics.emplace_back();
    }
    auto& row = rows[i];
    metrics[i].push_back(r.eval);
    ++row.seeds;
    if (!r.result.log.epochs.empty()) {
      row.mean_sigma_pho += r.result.log.epochs.back().mean_sigma_pho;
      row.mean_sigma_reg += r.result.log.epochs.back().mean_sigma_reg;
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].mean = average(metrics[i]);
    rows[i].mean_sigma_pho /= static_cast<double>(rows[i].seeds);
    rows[i].mean_sigma_reg /= static_cast<double>(rows[i].seeds);
  }
  return rows;
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "objective_mode,seeds," << kMetricsHeader << ",mean_sigma_pho,mean_sigma_reg\n";
  for (const auto& r : rows) {
    out << mode_name(r.mode) << ',' << r.seeds;
    for (double v : r.mean.as_array()) out << ',' << v;
    out << ',' << r.mean_sigma_pho << ',' << r.mean_sigma_reg << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace subdepth
