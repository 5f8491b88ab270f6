#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gazemil/bag_builder.hpp"
#include "gazemil/gaze_render.hpp"
#include "gazemil/image.hpp"

namespace gazemil {

/// Synthetic colour fundus photograph with a circular field of view.
/// Pixels outside the field of view are black.
struct FundusImage {
  Image8 rgb;
  double fov_cx = 0.0;
  double fov_cy = 0.0;
  double fov_radius = 0.0;
  // Bright optic-disc distractor present in every image.
  double disc_x = 0.0;
  double disc_y = 0.0;
  double disc_radius = 0.0;

  bool in_fov(double x, double y) const {
    double dx = x - fov_cx, dy = y - fov_cy;
    return dx * dx + dy * dy <= fov_radius * fov_radius;
  }
};

struct LesionSpec {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
  double contrast = 0.0;  // signed: bright (>0) or dark (<0)
  bool operator==(const LesionSpec&) const = default;
};

/// Photographic style of one acquisition domain.
struct DomainStyle {
  int domain_id = 0;
  std::array<double, 3> gains{1.0, 1.0, 1.0};  // each in [0.6, 1.4]
  double brightness = 0.0;
};

/// Deterministic style palette; domain 0 is the identity style.
DomainStyle domain_style(int domain_id);

/// v -> clip(gain_c * v + brightness, 0, 1) inside the field of view.
void apply_style(ImageF& image, const DomainStyle& style);
/// Inverse of apply_style wherever no clipping occurred.
void invert_style(ImageF& image, const DomainStyle& style);

/// Appearance knobs of the generator.
struct SynthParams {
  int width = 800;
  int height = 800;
  double fov_radius_fraction = 0.47;
  double lesion_radius_min = 8.0;
  double lesion_radius_max = 20.0;
  double contrast_min = 0.15;
  double contrast_max = 0.40;
  int max_lesions = 4;
  double disc_radius = 55.0;
  double noise_std = 0.01;
};

struct GeneratedImage {
  FundusImage image;
  std::vector<LesionSpec> lesions;
};

/// Renders one image. label 1 plants 1..max_lesions lesions, label 0 none.
/// Deterministic in (label, style, seed, params).
GeneratedImage gen_image(int label, const DomainStyle& style, std::uint64_t seed,
                         const SynthParams& params = {});

/// Simulated reader: each fixation lands near a random lesion with
/// probability attend_prob (when lesions exist), otherwise near the optic
/// disc or uniformly inside the field of view. Jitter std is 30 px.
std::vector<FixationPoint> gen_fixations(const FundusImage& image,
                                         const std::vector<LesionSpec>& lesions, int n_fix,
                                         double attend_prob, std::uint64_t seed);

std::vector<Disc> lesion_discs(const std::vector<LesionSpec>& lesions);

enum class Split { train, val, test };
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct ClassCounts {
  int negative = 0;
  int positive = 0;
};

/// Everything needed to generate a dataset and turn it into bags.
struct DatasetConfig {
  std::string preset = "desk-dr";
  ClassCounts train{200, 200};
  ClassCounts val{60, 60};
  ClassCounts test{60, 60};
  int domains = 4;
  double attend_prob = 0.8;
  int n_fix = 30;
  std::uint64_t seed = 0;
  double sigma = 60.0;
  int window = 200;   // M
  int bag_size = 10;  // K
  SynthParams synth;

  const ClassCounts& counts(Split s) const;
};

/// Named presets: desk-dr, desk-amd (200/60/60 per class), paper-amd and
/// paper-dr (Table-scale counts). AMD presets crop 100 px windows, DR 200 px.
DatasetConfig dataset_preset(std::string_view name);

struct DatasetEntry {
  std::string id;
  std::string image;  // paths relative to the dataset root
  std::string gaze;
  int label = 0;
  int domain = 0;
  Split split = Split::train;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<DatasetEntry> entries;

  std::vector<const DatasetEntry*> split(Split s) const;
  int count(Split s, int label) const;
  int count_domain(int domain) const;

  /// CSV with header `image,gaze,label,domain,split`.
  void write(const std::filesystem::path& csv_path) const;
  static DatasetManifest read(const std::filesystem::path& csv_path);
};

/// Entry list for a config: splits in train/val/test order, negatives before
/// positives within a split, domains assigned round-robin over the list.
DatasetManifest plan_dataset(const DatasetConfig& config);

/// One fully materialized sample (in memory).
struct SyntheticSample {
  GeneratedImage generated;
  std::vector<FixationPoint> fixations;
  GazeMap gaze;  // quantized levels, as reloaded from the gaze PGM
};

SyntheticSample make_sample(const DatasetConfig& config, const DatasetEntry& entry);

/// Writes images/, gaze/, fixations/, lesions.csv and manifest.csv under `out`.
DatasetManifest gen_dataset(const DatasetConfig& config, const std::filesystem::path& out);

/// lesions.csv written by gen_dataset, keyed by entry id.
std::map<std::string, std::vector<LesionSpec>> read_lesions(
    const std::filesystem::path& dataset_root);

}  // namespace gazemil
