#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

namespace subdepth {

/// Build version, `git describe` style when the source tree was a checkout.
std::string version_tag();

/// Enough to re-run a command: its name, resolved inputs and configuration.
struct RunManifest {
  std::string command;
  nlohmann::json inputs = nlohmann::json::object();  ///< paths and command-specific options
  nlohmann::json config = nlohmann::json::object();  ///< effective dataset / train config
  std::string dataset_hash;                          ///< 16 hex digits, empty when no dataset
  std::string version;
  std::uint64_t seed = 0;
  std::string started_at;  ///< UTC, ISO 8601
  std::string finished_at;
};

void to_json(nlohmann::json& j, const RunManifest& m);
void from_json(const nlohmann::json& j, RunManifest& m);

std::string utc_timestamp();
std::string hash_hex(std::uint64_t hash);

void write_run_manifest(const std::filesystem::path& dir, const RunManifest& m);
RunManifest read_run_manifest(const std::filesystem::path& path);

}  // namespace subdepth
