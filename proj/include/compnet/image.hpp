#pragma once

#include <filesystem>
#include <vector>

namespace compnet {

/// Row-major image with interleaved channels, pixel values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f);

  float& at(int y, int x, int c = 0) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  /// Channel mean at (y, x).
  float luminance(int y, int x) const;

  bool operator==(const Image&) const = default;
};

/// Binary PGM (P5) for 1 channel, PPM (P6) for 3 channels; 8-bit, maxval 255.
void write_pnm(const Image& img, const std::filesystem::path& path);
Image read_pnm(const std::filesystem::path& path);

/// Snap pixels onto the 8-bit grid so a PNM round trip is lossless.
void quantize_8bit(Image& img);

}  // namespace compnet
