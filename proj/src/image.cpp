#include "subdepth/image.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace subdepth {
namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return is;
}

// Reads whitespace-separated header tokens, skipping '#' comments.
std::string token(std::istream& is, const std::filesystem::path& path) {
  std::string t;
  while (is) {
    int ch = is.peek();
    if (ch == '#') {
      std::string line;
      std::getline(is, line);
      continue;
    }
    if (std::isspace(ch)) {
      is.get();
      continue;
    }
    break;
  }
  is >> t;
  if (t.empty()) throw IoError("truncated header in " + path.string());
  return t;
}

std::size_t parse_size(const std::string& s, const std::filesystem::path& path) {
  try {
    return static_cast<std::size_t>(std::stoull(s));
  } catch (const std::exception&) {
    throw IoError("bad header field '" + s + "' in " + path.string());
  }
}

void finish(std::ofstream& os, const std::filesystem::path& path) {
  os.flush();
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace

double quantize16(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 65535.0) / 65535.0; }

double quantize_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void write_ppm16(const std::filesystem::path& path, const Image& rgb) {
  if (rgb.channels != 3) throw IoError("write_ppm16: expected 3 channels");
  auto os = open_out(path);
  os << "P6\n" << rgb.width << ' ' << rgb.height << "\n65535\n";
  std::vector<unsigned char> buf(rgb.data.size() * 2);
  for (std::size_t i = 0; i < rgb.data.size(); ++i) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(rgb.data[i], 0.0, 1.0) * 65535.0));
    buf[2 * i] = static_cast<unsigned char>(q >> 8);
    buf[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  finish(os, path);
}

Image read_ppm(const std::filesystem::path& path) {
  auto is = open_in(path);
  if (token(is, path) != "P6") throw IoError(path.string() + " is not a binary PPM");
  const auto w = parse_size(token(is, path), path);
  const auto h = parse_size(token(is, path), path);
  const auto maxval = parse_size(token(is, path), path);
  if (maxval == 0 || maxval > 65535) throw IoError("bad maxval in " + path.string());
  is.get();
  const std::size_t bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> buf(w * h * 3 * bytes);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (is.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError("truncated pixel data in " + path.string());
  Image img(h, w, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const unsigned v = bytes == 2 ? (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1] : buf[i];
    img.data[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

void write_ppm8(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, std::size_t width,
                std::size_t height) {
  if (rgb.size() != width * height * 3) throw IoError("write_ppm8: buffer size mismatch");
  auto os = open_out(path);
  os << "P6\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  finish(os, path);
}

void write_pfm(const std::filesystem::path& path, const Image& gray) {
  if (gray.channels != 1) throw IoError("write_pfm: expected one channel");
  auto os = open_out(path);
  os << "Pf\n" << gray.width << ' ' << gray.height << "\n-1.0\n";
  std::vector<unsigned char> buf(gray.data.size() * 4);
  std::size_t k = 0;
  for (std::size_t y = gray.height; y-- > 0;) {
    for (std::size_t x = 0; x < gray.width; ++x) {
      auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(gray.at(y, x)));
      for (int b = 0; b < 4; ++b) buf[k++] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
    }
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  finish(os, path);
}

Image read_pfm(const std::filesystem::path& path) {
  auto is = open_in(path);
  const auto magic = token(is, path);
  if (magic != "Pf") throw IoError(path.string() + " is not a grayscale PFM");
  const auto w = parse_size(token(is, path), path);
  const auto h = parse_size(token(is, path), path);
  const double scale = std::stod(token(is, path));
  is.get();
  const bool little = scale < 0.0;
  std::vector<unsigned char> buf(w * h * 4);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (is.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError("truncated PFM data in " + path.string());
  Image img(h, w, 1);
  std::size_t k = 0;
  for (std::size_t y = h; y-- > 0;) {
    for (std::size_t x = 0; x < w; ++x) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        const std::uint32_t byte = buf[k + static_cast<std::size_t>(little ? b : 3 - b)];
        bits |= byte << (8 * b);
      }
      k += 4;
      img.at(y, x) = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return img;
}

void write_pgm_mask(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask, std::size_t width,
                    std::size_t height) {
  if (mask.size() != width * height) throw IoError("write_pgm_mask: buffer size mismatch");
  auto os = open_out(path);
  os << "P5\n" << width << ' ' << height << "\n255\n";
  for (auto m : mask) os.put(static_cast<char>(m ? 255 : 0));
  finish(os, path);
}

std::vector<std::uint8_t> read_pgm_mask(const std::filesystem::path& path, std::size_t& width, std::size_t& height) {
  auto is = open_in(path);
  if (token(is, path) != "P5") throw IoError(path.string() + " is not a binary PGM");
  width = parse_size(token(is, path), path);
  height = parse_size(token(is, path), path);
  const auto maxval = parse_size(token(is, path), path);
  if (maxval != 255) throw IoError("unsupported maxval in " + path.string());
  is.get();
  std::vector<std::uint8_t> mask(width * height);
  is.read(reinterpret_cast<char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
  if (is.gcount() != static_cast<std::streamsize>(mask.size())) throw IoError("truncated mask in " + path.string());
  for (auto& m : mask) m = m ? 1 : 0;
  return mask;
}

}  // namespace subdepth
