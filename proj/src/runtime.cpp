#include "subdepth/runtime.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

#include <spdlog/spdlog.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace subdepth {

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

void set_log_level(std::string_view level) {
  if (level.empty() || level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    throw std::invalid_argument("SUBDEPTH_LOG must be one of error, info, debug; got '" + std::string(level) + "'");
  }
}

void init_logging_from_env() {
  const char* v = std::getenv("SUBDEPTH_LOG");
  set_log_level(v ? v : "");
}

}  // namespace subdepth
