#include "gazemil/gaze_render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "gazemil/errors.hpp"

namespace gazemil {

GazeMap render_gaze_map(std::span<const FixationPoint> fixations, int width,
                        int height, const GaussianSpec& spec) {
  if (width <= 0 || height <= 0) {
    throw InputError("render_gaze_map: width and height must be positive");
  }
  if (!(spec.sigma > 0.0)) throw InputError("render_gaze_map: sigma must be > 0");
  for (const auto& f : fixations) {
    if (f.x < 0 || f.x >= width || f.y < 0 || f.y >= height) {
      std::ostringstream msg;
      msg << "render_gaze_map: fixation (" << f.x << "," << f.y
          << ") outside " << width << "x" << height << " image";
      throw InputError(msg.str());
    }
  }

  GazeMap map;
  map.width = width;
  map.height = height;
  map.values.assign(static_cast<std::size_t>(width) * height, 0.0);

  const int radius = static_cast<int>(std::floor(3.0 * spec.sigma));
  const double two_var = 2.0 * spec.sigma * spec.sigma;
  const double peak = 1.0 / (std::numbers::pi * two_var);
  // The kernel is separable: G(dx,dy) = peak * e(dx) * e(dy).
  std::vector<double> falloff(2 * radius + 1);
  for (int d = -radius; d <= radius; ++d) {
    falloff[d + radius] = std::exp(-static_cast<double>(d) * d / two_var);
  }

  for (const auto& f : fixations) {
    const int y0 = std::max(0, f.y - radius), y1 = std::min(height - 1, f.y + radius);
    const int x0 = std::max(0, f.x - radius), x1 = std::min(width - 1, f.x + radius);
    for (int y = y0; y <= y1; ++y) {
      const double wy = peak * falloff[y - f.y + radius];
      double* row = map.values.data() + static_cast<std::size_t>(y) * width;
      for (int x = x0; x <= x1; ++x) row[x] += wy * falloff[x - f.x + radius];
    }
  }
  return map;
}

GazeMap quantize_gaze_map(GazeMap map) {
  const double peak =
      map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
  std::vector<std::uint8_t> q(map.values.size(), 0);
  if (peak > 0.0) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      // (v / peak) is exactly 1 at the maximum, so only maxima reach 255.
      q[i] = static_cast<std::uint8_t>(std::floor(map.values[i] / peak * 255.0));
    }
  }
  map.quantized = std::move(q);
  return map;
}

Image8 gaze_map_image(const GazeMap& map) {
  if (!map.quantized) throw InputError("gaze_map_image: map is not quantized");
  Image8 img(map.width, map.height, 1);
  img.data = *map.quantized;
  return img;
}

GazeMap gaze_map_from_image(const Image8& image) {
  if (image.channels != 1) {
    throw InputError("gaze map image must be single-channel");
  }
  GazeMap map;
  map.width = image.width;
  map.height = image.height;
  map.values.assign(image.data.begin(), image.data.end());
  map.quantized = image.data;
  return map;
}

GazeMap render_quantized_levels(std::span<const FixationPoint> fixations,
                                int width, int height, const GaussianSpec& spec) {
  return gaze_map_from_image(
      gaze_map_image(quantize_gaze_map(render_gaze_map(fixations, width, height, spec))));
}

std::vector<FixationPoint> read_fixations_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open fixation file: " + path.string());
  std::vector<FixationPoint> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line == "x,y") continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected x,y");
    }
    try {
      std::size_t used = 0;
      FixationPoint p;
      p.x = std::stoi(line.substr(0, comma), &used);
      p.y = std::stoi(line.substr(comma + 1), &used);
      out.push_back(p);
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) +
                    ": non-integer fixation coordinate");
    }
  }
  return out;
}

void write_fixations_csv(const std::filesystem::path& path,
                         std::span<const FixationPoint> fixations) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "x,y\n";
  for (const auto& f : fixations) os << f.x << ',' << f.y << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace gazemil
