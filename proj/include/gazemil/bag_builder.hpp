#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gazemil/gaze_render.hpp"
#include "gazemil/image.hpp"

namespace gazemil {

inline constexpr int kPatchSize = 224;

/// Mean gaze value of the M x M window whose top-left corner is (row, col).
struct WindowScore {
  int row = 0;
  int col = 0;
  double score = 0.0;
  bool operator==(const WindowScore&) const = default;
};

/// A 224x224 RGB instance stored at 8-bit depth; value() scales to [0,1].
class Patch {
 public:
  Patch() : pixels_(kPatchSize, kPatchSize, 3) {}
  explicit Patch(Image8 pixels);

  double value(int channel, int y, int x) const {
    return pixels_.at(x, y, channel) / 255.0;
  }
  const Image8& pixels() const { return pixels_; }
  Image8& pixels() { return pixels_; }

  bool operator==(const Patch&) const = default;

 private:
  Image8 pixels_;
};

struct WindowOrigin {
  int row = 0;
  int col = 0;
  bool operator==(const WindowOrigin&) const = default;
};

/// K instances cropped from one image. `instance_labels` is ground truth
/// only available for synthetic data.
struct InstanceBag {
  std::string bag_id;
  std::vector<Patch> instances;
  int label = 0;
  int domain = 0;
  int window = 0;  // M, crop size in source pixels
  std::vector<WindowOrigin> positions;
  std::optional<std::vector<int>> instance_labels;

  std::size_t size() const { return instances.size(); }
  /// Throws InputError on a shape or labeling violation.
  void validate() const;

  bool operator==(const InstanceBag&) const = default;
};

/// Scores every fully contained M x M window on the stride-M/2 grid, in
/// row-major order of origins. M must be even and fit inside the map.
std::vector<WindowScore> score_windows(const GazeMap& map, int window);

/// The k highest scores, descending; ties go to the smaller (row, col).
std::vector<WindowScore> select_top_k(std::span<const WindowScore> scores, int k);

/// Gaze-free baseline: k distinct grid windows drawn uniformly with `seed`.
std::vector<WindowScore> select_uniform(int width, int height, int window, int k,
                                        std::uint64_t seed);

/// Crops the selected windows from an RGB image and bilinearly resizes each
/// to 224x224 (rounded back to 8-bit levels).
InstanceBag crop_bag(const Image8& image, std::span<const WindowScore> selected,
                     int window, int label, int domain, std::string bag_id = {});

/// Bilinear resize of the square region at (row, col) of side `window`.
Image8 crop_resize(const Image8& image, int row, int col, int window, int out_size);

/// A permutation of 0..n-1 drawn deterministically from `seed`.
std::vector<std::size_t> draw_permutation(std::size_t n, std::uint64_t seed);

/// Reorders instances, positions and instance labels by one permutation drawn
/// from `seed`. out[i] = in[perm[i]].
InstanceBag sequence_augment(const InstanceBag& bag, std::uint64_t seed);
InstanceBag permute_bag(const InstanceBag& bag, std::span<const std::size_t> perm);

/// Disc-shaped region used to derive instance labels.
struct Disc {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
};

/// y = 1 when the window covers at least `min_fraction` of some disc's pixel
/// area (pixel centers inside the disc).
std::vector<int> label_instances(std::span<const WindowOrigin> positions, int window,
                                 std::span<const Disc> lesions,
                                 double min_fraction = 0.25);

/// Bag cache: `<root>/manifest.csv` plus one directory per bag holding
/// instance_00.ppm ... and, when present, instance_labels.csv.
class BagCache {
 public:
  explicit BagCache(std::filesystem::path root);

  void save(const InstanceBag& bag);
  /// Rewrites manifest.csv from every bag saved so far (call once at the end).
  void flush_manifest() const;

  std::vector<std::string> bag_ids() const;
  InstanceBag load(const std::string& bag_id) const;
  std::vector<InstanceBag> load_all() const;

  const std::filesystem::path& root() const { return root_; }

 private:
  struct Row {
    std::string bag_id;
    int label = 0;
    int domain = 0;
    int k = 0;
    int window = 0;
    std::vector<WindowOrigin> positions;
  };
  std::vector<Row> read_manifest() const;

  std::filesystem::path root_;
  std::vector<Row> rows_;
};

}  // namespace gazemil
