#pragma once

#include <filesystem>
#include <stdexcept>

#include "subdepth/networks.hpp"

namespace subdepth {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary little-endian file: magic "SUBDEPTH", version, the joined
/// architecture tags, the depth network seed and total tensor count, then one
/// block per network: seed, tensor count and each tensor as (tag/name, dims,
/// float64 values).
void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle);

/// Throws CheckpointError("checkpoint not found: ...") for a missing file and
/// CheckpointError for corrupt or unknown content.
ModelBundle load_checkpoint(const std::filesystem::path& path);

/// Raises CheckpointError unless `params` has exactly the tensor names and
/// shapes of `reference`.
void require_compatible(const NetworkParams& params, const NetworkParams& reference);

}  // namespace subdepth
