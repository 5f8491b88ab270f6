#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "gazemil/image.hpp"

namespace gazemil {

/// A recorded gaze fixation in pixel coordinates (x = column, y = row).
struct FixationPoint {
  int x = 0;
  int y = 0;
  bool operator==(const FixationPoint&) const = default;
};

struct GaussianSpec {
  double sigma = 60.0;  // pixels
};

/// Per-pixel attention field with the dimensions of its source image.
/// `values` is row-major; `quantized` is filled by quantize_gaze_map().
struct GazeMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;
  std::optional<std::vector<std::uint8_t>> quantized;

  double at(int x, int y) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t level(int x, int y) const {
    return (*quantized)[static_cast<std::size_t>(y) * width + x];
  }
};

/// Sums an isotropic Gaussian kernel (peak 1/(2*pi*sigma^2)) at every
/// fixation. Each kernel is truncated to the square |dx|,|dy| <= 3*sigma.
GazeMap render_gaze_map(std::span<const FixationPoint> fixations, int width,
                        int height, const GaussianSpec& spec = {});

/// Populates `quantized` with floor(255 * v / max(v)); all-zero maps stay zero.
GazeMap quantize_gaze_map(GazeMap map);

/// Lossless 8-bit forms: a quantized map as a grayscale image, and back. The
/// reloaded map's values are the 0..255 levels themselves.
Image8 gaze_map_image(const GazeMap& map);
GazeMap gaze_map_from_image(const Image8& image);

/// Convenience for the standard pipeline: render, quantize, and return the
/// map whose values are the quantized levels (identical to what a reload of
/// the written PGM produces).
GazeMap render_quantized_levels(std::span<const FixationPoint> fixations,
                                int width, int height,
                                const GaussianSpec& spec = {});

/// CSV with header `x,y`, one fixation per row.
std::vector<FixationPoint> read_fixations_csv(const std::filesystem::path& path);
void write_fixations_csv(const std::filesystem::path& path,
                         std::span<const FixationPoint> fixations);

}  // namespace gazemil
