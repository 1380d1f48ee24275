#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace subdepth {

/// Plain row-major H x W x C buffer, independent of any graph.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c = 0) { return data[(y * width + x) * channels + c]; }
  [[nodiscard]] double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return data[(y * width + x) * channels + c];
  }
  [[nodiscard]] std::size_t pixels() const { return height * width; }

  friend bool operator==(const Image&, const Image&) = default;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary P6, maxval 65535 (big-endian samples). Values are clamped to [0, 1].
void write_ppm16(const std::filesystem::path& path, const Image& rgb);
Image read_ppm(const std::filesystem::path& path);
/// Binary P6 with maxval 255.
void write_ppm8(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, std::size_t width,
                std::size_t height);
/// Grayscale little-endian PFM ("Pf", negative scale, rows bottom to top).
void write_pfm(const std::filesystem::path& path, const Image& gray);
Image read_pfm(const std::filesystem::path& path);
/// Binary P5 mask, 0 or 255.
void write_pgm_mask(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask, std::size_t width,
                    std::size_t height);
std::vector<std::uint8_t> read_pgm_mask(const std::filesystem::path& path, std::size_t& width, std::size_t& height);

/// Rounds to the nearest 16-bit level, matching a write/read round trip.
double quantize16(double v);
/// Rounds to float32, matching a PFM round trip.
double quantize_f32(double v);

}  // namespace subdepth
