#include "subdepth/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace subdepth {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'S', 'U', 'B', 'D', 'E', 'P', 'T', 'H'};
constexpr std::uint64_t kMaxElements = 1ULL << 28;

class Writer {
 public:
  explicit Writer(const fs::path& path) : os_(path, std::ios::binary), path_(path) {
    if (!os_) throw CheckpointError("cannot open " + path.string() + " for writing");
  }
  template <class T>
  void put(T v) {
    static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void close() {
    os_.close();
    if (!os_) throw CheckpointError("write failed for " + path_.string());
  }
  std::ofstream& stream() { return os_; }

 private:
  std::ofstream os_;
  fs::path path_;
};

class Reader {
 public:
  explicit Reader(const fs::path& path) : is_(path, std::ios::binary), path_(path) {
    if (!is_) throw CheckpointError("cannot open " + path.string());
  }
  template <class T>
  T get() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is_) fail("truncated");
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (n > 4096) fail("implausible string length");
    std::string s(n, '\0');
    is_.read(s.data(), n);
    if (!is_) fail("truncated");
    return s;
  }
  void read(void* dst, std::size_t bytes) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (!is_) fail("truncated");
  }
  [[noreturn]] void fail(const std::string& why) const {
    throw CheckpointError("corrupt checkpoint " + path_.string() + ": " + why);
  }

 private:
  std::ifstream is_;
  fs::path path_;
};

std::vector<const NetworkParams*> networks(const ModelBundle& b) {
  std::vector<const NetworkParams*> out{&b.depth};
  if (b.pose) out.push_back(&*b.pose);
  if (b.uncert) out.push_back(&*b.uncert);
  return out;
}

}  // namespace

void save_checkpoint(const fs::path& path, const ModelBundle& bundle) {
  const auto nets = networks(bundle);
  std::string tag;
  std::uint32_t count = 0;
  for (const auto* n : nets) {
    tag += (tag.empty() ? "" : "+") + n->architecture;
    count += static_cast<std::uint32_t>(n->tensors.size());
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  Writer w(path);
  w.stream().write(kMagic, sizeof(kMagic));
  w.put(kCheckpointVersion);
  w.put(tag);
  w.put(static_cast<std::uint64_t>(bundle.depth.seed));
  w.put(count);
  for (const auto* n : nets) {
    w.put(static_cast<std::uint64_t>(n->seed));
    w.put(static_cast<std::uint32_t>(n->tensors.size()));
    for (const auto& t : n->tensors) {
      w.put(n->architecture + "/" + t.name);
      w.put(static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) w.put(static_cast<std::uint64_t>(d));
      for (double v : t.values) w.put(v);
    }
  }
  w.close();
}

ModelBundle load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  Reader r(path);
  char magic[sizeof(kMagic)];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("bad magic");
  if (r.get<std::uint32_t>() != kCheckpointVersion) r.fail("unsupported version");
  const std::string tag = r.get_string();
  r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();

  std::vector<std::string> archs;
  for (std::size_t pos = 0; pos <= tag.size();) {
    const auto next = std::min(tag.find('+', pos), tag.size());
    archs.push_back(tag.substr(pos, next - pos));
    pos = next + 1;
  }
  if (archs.empty() || archs.front() != kDepthNetTag) r.fail("first network must be " + std::string(kDepthNetTag));

  std::vector<NetworkParams> nets;
  std::uint32_t seen = 0;
  for (const auto& arch : archs) {
    if (arch != kDepthNetTag && arch != kPoseNetTag && arch != kUncertNetTag) r.fail("unknown architecture " + arch);
    nets.push_back(NetworkParams{arch, r.get<std::uint64_t>(), {}});
    const auto block = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < block; ++k, ++seen) {
      if (seen >= count) r.fail("tensor count mismatch");
      const auto name = r.get_string();
      const auto slash = name.find('/');
      if (slash == std::string::npos || name.compare(0, slash, arch) != 0) {
        r.fail("tensor " + name + " outside its network block");
      }
      ParamTensor t{name.substr(slash + 1), {}, {}};
      const auto ndim = r.get<std::uint32_t>();
      if (ndim == 0 || ndim > 4) r.fail("bad rank for " + name);
      std::uint64_t numel = 1;
      for (std::uint32_t i = 0; i < ndim; ++i) {
        const auto d = r.get<std::uint64_t>();
        if (d == 0 || d > kMaxElements) r.fail("bad dimension for " + name);
        numel *= d;
        if (numel > kMaxElements) r.fail("tensor too large: " + name);
        t.shape.push_back(static_cast<std::size_t>(d));
      }
      t.values.resize(numel);
      r.read(t.values.data(), numel * sizeof(double));
      nets.back().tensors.push_back(std::move(t));
    }
  }
  if (seen != count) r.fail("tensor count mismatch");

  ModelBundle bundle;
  for (auto& n : nets) {
    if (n.architecture == kDepthNetTag) {
      bundle.depth = std::move(n);
    } else if (n.architecture == kPoseNetTag) {
      bundle.pose = std::move(n);
    } else {
      bundle.uncert = std::move(n);
    }
  }
  return bundle;
}

void require_compatible(const NetworkParams& params, const NetworkParams& reference) {
  const auto fail = [&](const std::string& why) {
    throw CheckpointError("architecture mismatch for " + reference.architecture + ": " + why);
  };
  if (params.architecture != reference.architecture) fail("got " + params.architecture);
  if (params.tensors.size() != reference.tensors.size()) fail("tensor count differs");
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& a = params.tensors[i];
    const auto& b = reference.tensors[i];
    if (a.name != b.name || a.shape != b.shape) fail("tensor " + a.name + " does not match " + b.name);
    for (double v : a.values) {
      if (!std::isfinite(v)) fail("non-finite value in " + a.name);
    }
  }
}

}  // namespace subdepth
