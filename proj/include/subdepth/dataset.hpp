#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "subdepth/synthscene.hpp"

namespace subdepth {

inline constexpr int kDatasetFormatVersion = 1;
/// Written next to command outputs; never part of the dataset hash.
inline constexpr const char* kRunManifestName = "run_manifest.json";

struct DatasetSpec {
  std::uint64_t seed = 0;
  std::size_t train_triplets = 500;
  std::size_t eval_triplets = 100;
  SceneConfig scene;
};

/// Renders one triplet; the scene and camera motion are both derived from
/// `scene_seed`.
FrameTriplet make_triplet(std::uint64_t scene_seed, const SceneConfig& config);

/// Writes `manifest.json`, `intrinsics.json` and `train/`, `eval/` triplet
/// directories under `root`. A scene seed whose motion fails the visibility
/// check is skipped; the manifest lists the seeds actually used.
/// Returns the dataset hash. Throws IoError when `root` already holds splits.
std::uint64_t generate_dataset(const std::filesystem::path& root, const DatasetSpec& spec);

struct Dataset {
  std::filesystem::path root;
  std::vector<FrameTriplet> train;
  std::vector<FrameTriplet> eval;
  /// Present when a manifest was found.
  std::optional<SceneConfig> scene;
  std::uint64_t hash = 0;

  [[nodiscard]] bool has_ground_truth() const;
};

/// Loads every triplet directory under `root/train` and `root/eval` in name
/// order. Ground-truth files are optional; intrinsics come from the triplet
/// directory or, failing that, from `root/intrinsics.json`.
/// Throws IoError on missing or malformed files.
Dataset load_dataset(const std::filesystem::path& root);

/// FNV-1a over relative paths and bytes of every regular file, in path order,
/// skipping a top-level run manifest.
std::uint64_t dataset_hash(const std::filesystem::path& root);

void write_triplet(const std::filesystem::path& dir, const FrameTriplet& t);
FrameTriplet read_triplet(const std::filesystem::path& dir, const std::optional<Intrinsics>& shared_intrinsics);

}  // namespace subdepth
