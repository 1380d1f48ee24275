#include "subdepth/run_manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include <fmt/format.h>

#include "subdepth/dataset.hpp"

#ifndef SUBDEPTH_VERSION
#define SUBDEPTH_VERSION "unknown"
#endif

namespace subdepth {

std::string version_tag() { return SUBDEPTH_VERSION; }

void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"command", m.command},          {"inputs", m.inputs},   {"config", m.config},
                     {"dataset_hash", m.dataset_hash}, {"version", m.version}, {"seed", m.seed},
                     {"started_at", m.started_at},     {"finished_at", m.finished_at}};
}

void from_json(const nlohmann::json& j, RunManifest& m) {
  j.at("command").get_to(m.command);
  j.at("inputs").get_to(m.inputs);
  j.at("config").get_to(m.config);
  j.at("dataset_hash").get_to(m.dataset_hash);
  j.at("version").get_to(m.version);
  j.at("seed").get_to(m.seed);
  j.at("started_at").get_to(m.started_at);
  j.at("finished_at").get_to(m.finished_at);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hash_hex(std::uint64_t hash) { return fmt::format("{:016x}", hash); }

void write_run_manifest(const std::filesystem::path& dir, const RunManifest& m) {
  std::filesystem::create_directories(dir);
  const auto path = dir / kRunManifestName;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << nlohmann::json(m).dump(2) << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

RunManifest read_run_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is).get<RunManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad run manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace subdepth
