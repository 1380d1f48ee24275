#include "subdepth/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>

#include "subdepth/hash.hpp"

namespace subdepth {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kEvalSeedOffset = 1ULL << 40;
constexpr std::size_t kMaxSeedAttempts = 16;

json intrinsics_json(const Intrinsics& k) {
  return json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

Intrinsics intrinsics_from(const json& j, const fs::path& source) {
  try {
    Intrinsics k{j.at("fx").get<double>(),         j.at("fy").get<double>(),
                 j.at("cx").get<double>(),         j.at("cy").get<double>(),
                 j.at("width").get<std::size_t>(), j.at("height").get<std::size_t>()};
    k.validate();
    return k;
  } catch (const std::exception& e) {
    throw IoError("bad intrinsics in " + source.string() + ": " + e.what());
  }
}

json pose_json(const Pose6DoF& p) {
  const Eigen::Matrix4d m = pose_to_transform(p).matrix();
  std::vector<double> rows;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) rows.push_back(m(r, c));
  }
  return json{{"axis_angle", p.axis_angle}, {"translation", p.translation}, {"matrix", rows}};
}

Pose6DoF pose_from(const json& j) {
  return Pose6DoF{j.at("axis_angle").get<std::array<double, 3>>(), j.at("translation").get<std::array<double, 3>>()};
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed for " + path.string());
}

std::string triplet_name(std::size_t i) {
  std::string digits = std::to_string(i);
  return "t" + std::string(digits.size() < 5 ? 5 - digits.size() : 0, '0') + digits;
}

std::vector<FrameTriplet> read_split(const fs::path& dir, const std::optional<Intrinsics>& shared) {
  std::vector<FrameTriplet> out;
  if (!fs::is_directory(dir)) return out;
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) entries.push_back(e.path());
  }
  std::sort(entries.begin(), entries.end());
  for (const auto& e : entries) out.push_back(read_triplet(e, shared));
  return out;
}

std::vector<std::uint64_t> render_split(const fs::path& dir, std::uint64_t first_seed, std::size_t count,
                                        const SceneConfig& config) {
  fs::create_directories(dir);
  std::vector<std::uint64_t> seeds;
  std::uint64_t candidate = first_seed;
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t attempt = 0;; ++attempt, ++candidate) {
      try {
        auto t = make_triplet(candidate, config);
        t.id = triplet_name(i);
        write_triplet(dir / t.id, t);
        seeds.push_back(candidate++);
        break;
      } catch (const std::runtime_error&) {
        if (attempt + 1 >= kMaxSeedAttempts) throw;
      }
    }
  }
  return seeds;
}

}  // namespace

FrameTriplet make_triplet(std::uint64_t scene_seed, const SceneConfig& config) {
  const auto scene = generate_scene(scene_seed, config);
  return render_triplet(scene, CameraMotion::sample(scene_seed, config));
}

void write_triplet(const fs::path& dir, const FrameTriplet& t) {
  fs::create_directories(dir);
  write_ppm16(dir / "frame_-1.ppm", t.frames[0]);
  write_ppm16(dir / "frame_0.ppm", t.frames[1]);
  write_ppm16(dir / "frame_1.ppm", t.frames[2]);
  write_json(dir / "intrinsics.json", intrinsics_json(t.intrinsics));
  if (t.gt_depth) write_pfm(dir / "depth_0.pfm", *t.gt_depth);
  if (t.gt_pose_to_prev && t.gt_pose_to_next) {
    write_json(dir / "poses.json", json{{"pose_0_to_-1", pose_json(*t.gt_pose_to_prev)},
                                        {"pose_0_to_1", pose_json(*t.gt_pose_to_next)}});
  }
  if (t.object_mask) write_pgm_mask(dir / "object_mask_0.pgm", *t.object_mask, t.intrinsics.width, t.intrinsics.height);
}

FrameTriplet read_triplet(const fs::path& dir, const std::optional<Intrinsics>& shared) {
  FrameTriplet t;
  t.id = dir.filename().string();
  t.frames = {read_ppm(dir / "frame_-1.ppm"), read_ppm(dir / "frame_0.ppm"), read_ppm(dir / "frame_1.ppm")};
  if (fs::exists(dir / "intrinsics.json")) {
    t.intrinsics = intrinsics_from(read_json(dir / "intrinsics.json"), dir / "intrinsics.json");
  } else if (shared) {
    t.intrinsics = *shared;
  } else {
    throw IoError("no intrinsics for triplet " + dir.string());
  }
  for (const auto& f : t.frames) {
    if (f.width != t.intrinsics.width || f.height != t.intrinsics.height) {
      throw IoError("frame size does not match intrinsics in " + dir.string());
    }
  }
  if (fs::exists(dir / "depth_0.pfm")) {
    auto depth = read_pfm(dir / "depth_0.pfm");
    if (depth.width != t.intrinsics.width || depth.height != t.intrinsics.height) {
      throw IoError("depth size does not match intrinsics in " + dir.string());
    }
    t.gt_depth = std::move(depth);
  }
  if (fs::exists(dir / "poses.json")) {
    const auto j = read_json(dir / "poses.json");
    try {
      t.gt_pose_to_prev = pose_from(j.at("pose_0_to_-1"));
      t.gt_pose_to_next = pose_from(j.at("pose_0_to_1"));
    } catch (const json::exception& e) {
      throw IoError("bad poses.json in " + dir.string() + ": " + e.what());
    }
  }
  if (fs::exists(dir / "object_mask_0.pgm")) {
    std::size_t w = 0, h = 0;
    t.object_mask = read_pgm_mask(dir / "object_mask_0.pgm", w, h);
    if (w != t.intrinsics.width || h != t.intrinsics.height) throw IoError("mask size mismatch in " + dir.string());
  }
  return t;
}

std::uint64_t generate_dataset(const fs::path& root, const DatasetSpec& spec) {
  spec.scene.validate();
  for (const char* split : {"train", "eval"}) {
    if (fs::exists(root / split) && !fs::is_empty(root / split)) {
      throw IoError(root.string() + " already holds a dataset; choose an empty output directory");
    }
  }
  fs::create_directories(root);
  const auto train = render_split(root / "train", spec.seed * 1000003ULL, spec.train_triplets, spec.scene);
  const auto eval = render_split(root / "eval", spec.seed * 1000003ULL + kEvalSeedOffset, spec.eval_triplets, spec.scene);
  write_json(root / "intrinsics.json", intrinsics_json(spec.scene.intrinsics()));
  write_json(root / "manifest.json", json{{"format_version", kDatasetFormatVersion},
                                          {"seed", spec.seed},
                                          {"config", spec.scene},
                                          {"train_seeds", train},
                                          {"eval_seeds", eval}});
  return dataset_hash(root);
}

bool Dataset::has_ground_truth() const {
  const auto complete = [](const FrameTriplet& t) { return t.gt_depth.has_value(); };
  return !eval.empty() && std::all_of(eval.begin(), eval.end(), complete);
}

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset directory " + root.string() + " not found");
  Dataset d;
  d.root = root;
  std::optional<Intrinsics> shared;
  if (fs::exists(root / "intrinsics.json")) {
    shared = intrinsics_from(read_json(root / "intrinsics.json"), root / "intrinsics.json");
  }
  if (fs::exists(root / "manifest.json")) {
    const auto m = read_json(root / "manifest.json");
    if (m.value("format_version", 0) != kDatasetFormatVersion) {
      throw IoError("unsupported dataset format in " + (root / "manifest.json").string());
    }
    d.scene = m.at("config").get<SceneConfig>();
  }
  d.train = read_split(root / "train", shared);
  d.eval = read_split(root / "eval", shared);
  d.hash = dataset_hash(root);
  return d;
}

std::uint64_t dataset_hash(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), root));
  }
  std::erase(files, fs::path(kRunManifestName));
  std::sort(files.begin(), files.end());
  Fnv1a h;
  for (const auto& rel : files) {
    h.update(rel.generic_string());
    std::ifstream is(root / rel, std::ios::binary);
    std::ostringstream bytes;
    bytes << is.rdbuf();
    h.update(bytes.view());
  }
  return h.digest();
}

}  // namespace subdepth
