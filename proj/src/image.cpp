#include "compnet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "compnet/errors.hpp"

namespace compnet {

Image::Image(int h, int w, int c, float fill) : height(h), width(w), channels(c) {
  if (h <= 0 || w <= 0 || (c != 1 && c != 3)) throw ShapeError("invalid image geometry");
  pixels.assign(static_cast<std::size_t>(h) * w * c, fill);
}

float Image::luminance(int y, int x) const {
  if (channels == 1) return at(y, x);
  float s = 0.0f;
  for (int c = 0; c < channels; ++c) s += at(y, x, c);
  return s / static_cast<float>(channels);
}

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

void quantize_8bit(Image& img) {
  for (auto& p : img.pixels) p = static_cast<float>(to_byte(p)) / 255.0f;
}

void write_pnm(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw ShapeError("PNM supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> bytes(img.pixels.size());
  std::transform(img.pixels.begin(), img.pixels.end(), bytes.begin(), to_byte);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  const auto magic = header_token(in);
  int channels = 0;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw FormatError(path.string() + ": not a binary PGM/PPM image");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(header_token(in));
    h = std::stoi(header_token(in));
    maxval = std::stoi(header_token(in));
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed PNM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw FormatError(path.string() + ": unsupported PNM geometry or maxval");
  Image img(h, w, channels);
  std::vector<std::uint8_t> bytes(img.pixels.size());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw FormatError(path.string() + ": truncated PNM payload");
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

}  // namespace compnet
