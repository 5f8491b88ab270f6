#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace gazemil {

/// Interleaved 8-bit image (1 = grayscale, 3 = RGB). Real-valued channel
/// intensity is byte / 255.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> data;

  Image8() = default;
  Image8(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  std::uint8_t& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  bool operator==(const Image8&) const = default;
};

/// Interleaved double image used while rendering.
struct ImageF {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  ImageF() = default;
  ImageF(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
};

/// Rounds each channel of a [0,1] image to the nearest 8-bit level.
Image8 quantize(const ImageF& image);

/// Binary PGM (P5) for 1 channel, PPM (P6) for 3 channels, maxval 255.
void write_pnm(const std::filesystem::path& path, const Image8& image);
Image8 read_pnm(const std::filesystem::path& path);

}  // namespace gazemil
