#include "gazemil/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "gazemil/errors.hpp"
#include "gazemil/rng.hpp"

namespace gazemil {

namespace fs = std::filesystem;

DomainStyle domain_style(int domain_id) {
  static constexpr std::array<std::array<double, 4>, 4> kPalette{{
      {1.00, 1.00, 1.00, 0.00},
      {1.25, 0.90, 0.75, 0.03},
      {0.80, 1.10, 1.25, -0.04},
      {1.10, 1.20, 0.70, 0.00},
  }};
  DomainStyle s;
  s.domain_id = domain_id;
  if (domain_id >= 0 && domain_id < static_cast<int>(kPalette.size())) {
    const auto& p = kPalette[static_cast<std::size_t>(domain_id)];
    s.gains = {p[0], p[1], p[2]};
    s.brightness = p[3];
  } else {
    Rng rng(derive_seed(0x5717e, {static_cast<std::uint64_t>(domain_id)}));
    std::uniform_real_distribution<double> gain(0.7, 1.3), offset(-0.05, 0.05);
    s.gains = {gain(rng), gain(rng), gain(rng)};
    s.brightness = offset(rng);
  }
  return s;
}

void apply_style(ImageF& image, const DomainStyle& style) {
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        double& v = image.at(x, y, c);
        v = std::clamp(style.gains[static_cast<std::size_t>(c % 3)] * v + style.brightness,
                       0.0, 1.0);
      }
    }
  }
}

void invert_style(ImageF& image, const DomainStyle& style) {
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        double& v = image.at(x, y, c);
        v = (v - style.brightness) / style.gains[static_cast<std::size_t>(c % 3)];
      }
    }
  }
}

namespace {

// 1 inside radius - 1, 0 beyond radius + 1, linear in between.
double soft_disc(double dist, double radius) {
  return std::clamp((radius + 1.0 - dist) / 2.0, 0.0, 1.0);
}

}  // namespace

GeneratedImage gen_image(int label, const DomainStyle& style, std::uint64_t seed,
                         const SynthParams& params) {
  if (label != 0 && label != 1) throw InputError("gen_image: label must be 0 or 1");
  Rng rng(mix_seed(seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int w = params.width, h = params.height;

  GeneratedImage out;
  FundusImage& fi = out.image;
  fi.fov_cx = (w - 1) / 2.0;
  fi.fov_cy = (h - 1) / 2.0;
  fi.fov_radius = params.fov_radius_fraction * std::min(w, h);
  const double R = fi.fov_radius;

  // Optic disc on a random side of the field of view.
  const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
  fi.disc_radius = params.disc_radius;
  fi.disc_x = fi.fov_cx + side * (0.35 + 0.15 * unit(rng)) * R;
  fi.disc_y = fi.fov_cy + (unit(rng) - 0.5) * 0.2 * R;

  if (label == 1) {
    std::uniform_int_distribution<int> count_dist(1, params.max_lesions);
    const int count = count_dist(rng);
    for (int attempt = 0; attempt < 1000 && static_cast<int>(out.lesions.size()) < count;
         ++attempt) {
      LesionSpec l;
      l.radius = params.lesion_radius_min +
                 unit(rng) * (params.lesion_radius_max - params.lesion_radius_min);
      const double reach = R - l.radius - 4.0;
      const double rho = reach * std::sqrt(unit(rng));
      const double phi = 2.0 * std::numbers::pi * unit(rng);
      l.cx = fi.fov_cx + rho * std::cos(phi);
      l.cy = fi.fov_cy + rho * std::sin(phi);
      const double mag =
          params.contrast_min + unit(rng) * (params.contrast_max - params.contrast_min);
      l.contrast = unit(rng) < 0.5 ? mag : -mag;
      if (std::hypot(l.cx - fi.disc_x, l.cy - fi.disc_y) < fi.disc_radius + l.radius + 15.0) {
        continue;
      }
      bool clash = false;
      for (const auto& o : out.lesions) {
        if (std::hypot(l.cx - o.cx, l.cy - o.cy) < l.radius + o.radius + 10.0) clash = true;
      }
      if (!clash) out.lesions.push_back(l);
    }
  }

  // Low-frequency texture: a few plane waves, evaluated separably.
  constexpr int kWaves = 6;
  std::vector<double> amp(kWaves), kx(kWaves), ky(kWaves), ph(kWaves);
  for (int i = 0; i < kWaves; ++i) {
    const double wavelength = 150.0 + 250.0 * unit(rng);
    const double theta = 2.0 * std::numbers::pi * unit(rng);
    kx[i] = 2.0 * std::numbers::pi / wavelength * std::cos(theta);
    ky[i] = 2.0 * std::numbers::pi / wavelength * std::sin(theta);
    ph[i] = 2.0 * std::numbers::pi * unit(rng);
    amp[i] = 0.012 + 0.012 * unit(rng);
  }
  std::vector<double> cos_x(static_cast<std::size_t>(kWaves) * w),
      sin_x(static_cast<std::size_t>(kWaves) * w);
  for (int i = 0; i < kWaves; ++i) {
    for (int x = 0; x < w; ++x) {
      cos_x[static_cast<std::size_t>(i) * w + x] = std::cos(kx[i] * x);
      sin_x[static_cast<std::size_t>(i) * w + x] = std::sin(kx[i] * x);
    }
  }

  static constexpr std::array<double, 3> kBase{0.72, 0.36, 0.16};
  static constexpr std::array<double, 3> kDiscTint{0.24, 0.30, 0.18};
  static constexpr std::array<double, 3> kLesionTint{1.0, 0.9, 0.7};
  std::normal_distribution<double> noise(0.0, params.noise_std);

  ImageF img(w, h, 3, 0.0);
  std::vector<double> cy_wave(kWaves), sy_wave(kWaves);
  for (int y = 0; y < h; ++y) {
    for (int i = 0; i < kWaves; ++i) {
      cy_wave[i] = std::cos(ky[i] * y + ph[i]);
      sy_wave[i] = std::sin(ky[i] * y + ph[i]);
    }
    for (int x = 0; x < w; ++x) {
      if (!fi.in_fov(x, y)) continue;
      double tex = 0.0;
      for (int i = 0; i < kWaves; ++i) {
        const std::size_t j = static_cast<std::size_t>(i) * w + x;
        tex += amp[i] * (cos_x[j] * cy_wave[i] - sin_x[j] * sy_wave[i]);
      }
      const double r2 = (std::pow(x - fi.fov_cx, 2) + std::pow(y - fi.fov_cy, 2)) / (R * R);
      const double shade = 1.0 - 0.25 * r2;
      const double disc =
          soft_disc(std::hypot(x - fi.disc_x, y - fi.disc_y), fi.disc_radius);
      double lesion[3] = {0.0, 0.0, 0.0};
      for (const auto& l : out.lesions) {
        const double d = std::hypot(x - l.cx, y - l.cy);
        if (d > l.radius + 1.0) continue;
        const double wgt = soft_disc(d, l.radius) * l.contrast;
        for (int c = 0; c < 3; ++c) lesion[c] += wgt * kLesionTint[c];
      }
      for (int c = 0; c < 3; ++c) {
        img.at(x, y, c) = kBase[c] * shade * (1.0 + tex) + disc * kDiscTint[c] + lesion[c] +
                          noise(rng);
      }
    }
  }

  apply_style(img, style);
  // Keep the background outside the field of view black after styling.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (fi.in_fov(x, y)) continue;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 0.0;
    }
  }
  fi.rgb = quantize(img);
  return out;
}

std::vector<FixationPoint> gen_fixations(const FundusImage& image,
                                         const std::vector<LesionSpec>& lesions, int n_fix,
                                         double attend_prob, std::uint64_t seed) {
  if (n_fix < 1) throw InputError("gen_fixations: n_fix must be >= 1");
  if (!(attend_prob >= 0.0 && attend_prob <= 1.0)) {
    throw InputError("gen_fixations: attend_prob must lie in [0, 1]");
  }
  Rng rng(mix_seed(seed));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 30.0);
  const int w = image.rgb.width, h = image.rgb.height;

  std::vector<FixationPoint> out;
  out.reserve(static_cast<std::size_t>(n_fix));
  for (int i = 0; i < n_fix; ++i) {
    double x, y;
    if (!lesions.empty() && unit(rng) < attend_prob) {
      const auto& l = lesions[static_cast<std::size_t>(rng() % lesions.size())];
      x = l.cx + jitter(rng);
      y = l.cy + jitter(rng);
    } else if (unit(rng) < 0.5) {
      x = image.disc_x + jitter(rng);
      y = image.disc_y + jitter(rng);
    } else {
      const double rho = image.fov_radius * std::sqrt(unit(rng));
      const double phi = 2.0 * std::numbers::pi * unit(rng);
      x = image.fov_cx + rho * std::cos(phi);
      y = image.fov_cy + rho * std::sin(phi);
    }
    out.push_back({std::clamp(static_cast<int>(std::lround(x)), 0, w - 1),
                   std::clamp(static_cast<int>(std::lround(y)), 0, h - 1)});
  }
  return out;
}

std::vector<Disc> lesion_discs(const std::vector<LesionSpec>& lesions) {
  std::vector<Disc> discs;
  for (const auto& l : lesions) discs.push_back({l.cx, l.cy, l.radius});
  return discs;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw InputError("unknown split '" + std::string(name) + "'");
}

const ClassCounts& DatasetConfig::counts(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return train;
}

DatasetConfig dataset_preset(std::string_view name) {
  DatasetConfig c;
  c.preset = std::string(name);
  if (name == "desk-dr") {
    c.window = 200;
  } else if (name == "desk-amd") {
    c.window = 100;
  } else if (name == "paper-amd") {
    c.train = {357, 340};
    c.val = {100, 100};
    c.test = {100, 100};
    c.window = 100;
  } else if (name == "paper-dr") {
    c.train = {299, 321};
    c.val = {100, 100};
    c.test = {100, 100};
    c.window = 200;
  } else {
    throw InputError("unknown dataset preset '" + std::string(name) +
                     "' (expected desk-dr, desk-amd, paper-amd, paper-dr)");
  }
  return c;
}

std::vector<const DatasetEntry*> DatasetManifest::split(Split s) const {
  std::vector<const DatasetEntry*> out;
  for (const auto& e : entries) {
    if (e.split == s) out.push_back(&e);
  }
  return out;
}

int DatasetManifest::count(Split s, int label) const {
  return static_cast<int>(std::count_if(entries.begin(), entries.end(), [&](const auto& e) {
    return e.split == s && e.label == label;
  }));
}

int DatasetManifest::count_domain(int domain) const {
  return static_cast<int>(std::count_if(entries.begin(), entries.end(),
                                        [&](const auto& e) { return e.domain == domain; }));
}

void DatasetManifest::write(const fs::path& csv_path) const {
  std::ofstream os(csv_path);
  if (!os) throw IoError("cannot write manifest " + csv_path.string());
  os << "image,gaze,label,domain,split\n";
  for (const auto& e : entries) {
    os << e.image << ',' << e.gaze << ',' << e.label << ',' << e.domain << ','
       << split_name(e.split) << '\n';
  }
  if (!os) throw IoError("write failed: " + csv_path.string());
}

DatasetManifest DatasetManifest::read(const fs::path& csv_path) {
  std::ifstream is(csv_path);
  if (!is) throw IoError("missing dataset manifest: " + csv_path.string());
  DatasetManifest m;
  m.root = csv_path.parent_path();
  std::string line;
  std::getline(is, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "image,gaze,label,domain,split") {
    throw IoError(csv_path.string() + ": unexpected header '" + line + "'");
  }
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) {
      throw IoError(csv_path.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
    }
    DatasetEntry e;
    e.image = cells[0];
    e.gaze = cells[1];
    try {
      e.label = std::stoi(cells[2]);
      e.domain = std::stoi(cells[3]);
      e.split = parse_split(cells[4]);
    } catch (const std::exception& ex) {
      throw IoError(csv_path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
    e.id = fs::path(e.image).stem().string();
    m.entries.push_back(std::move(e));
  }
  return m;
}

DatasetManifest plan_dataset(const DatasetConfig& config) {
  if (config.domains < 1) throw InputError("domain count must be >= 1");
  for (Split s : {Split::train, Split::val, Split::test}) {
    const auto& c = config.counts(s);
    if (c.negative < 1 || c.positive < 1) {
      throw InputError("every split needs at least one image per class (" +
                       std::string(split_name(s)) + ")");
    }
  }
  DatasetManifest m;
  std::size_t index = 0;
  for (Split s : {Split::train, Split::val, Split::test}) {
    const auto& c = config.counts(s);
    for (int label : {0, 1}) {
      const int n = label == 0 ? c.negative : c.positive;
      for (int i = 0; i < n; ++i, ++index) {
        std::ostringstream id;
        id << split_name(s) << '_' << (label == 0 ? "neg" : "pos") << '_' << std::setw(4)
           << std::setfill('0') << i;
        DatasetEntry e;
        e.id = id.str();
        e.image = "images/" + e.id + ".ppm";
        e.gaze = "gaze/" + e.id + ".pgm";
        e.label = label;
        e.domain = static_cast<int>(index % static_cast<std::size_t>(config.domains));
        e.split = s;
        e.seed = derive_seed(config.seed, {index});
        m.entries.push_back(std::move(e));
      }
    }
  }
  return m;
}

SyntheticSample make_sample(const DatasetConfig& config, const DatasetEntry& entry) {
  SyntheticSample s;
  s.generated = gen_image(entry.label, domain_style(entry.domain),
                          derive_seed(entry.seed, {1}), config.synth);
  s.fixations = gen_fixations(s.generated.image, s.generated.lesions, config.n_fix,
                              config.attend_prob, derive_seed(entry.seed, {2}));
  s.gaze = render_quantized_levels(s.fixations, config.synth.width, config.synth.height,
                                   GaussianSpec{config.sigma});
  return s;
}

DatasetManifest gen_dataset(const DatasetConfig& config, const fs::path& out) {
  DatasetManifest m = plan_dataset(config);
  m.root = out;
  std::error_code ec;
  for (const char* sub : {"images", "gaze", "fixations"}) {
    fs::create_directories(out / sub, ec);
    if (ec) throw IoError("cannot create " + (out / sub).string() + ": " + ec.message());
  }
  std::ofstream lesions(out / "lesions.csv");
  if (!lesions) throw IoError("cannot write " + (out / "lesions.csv").string());
  lesions << "image,cx,cy,radius,contrast\n";
  lesions.precision(17);
  for (const auto& e : m.entries) {
    SyntheticSample s = make_sample(config, e);
    write_pnm(out / e.image, s.generated.image.rgb);
    write_pnm(out / e.gaze, gaze_map_image(s.gaze));
    write_fixations_csv(out / "fixations" / (e.id + ".csv"), s.fixations);
    for (const auto& l : s.generated.lesions) {
      lesions << e.id << ',' << l.cx << ',' << l.cy << ',' << l.radius << ',' << l.contrast
              << '\n';
    }
  }
  if (!lesions) throw IoError("write failed: " + (out / "lesions.csv").string());
  m.write(out / "manifest.csv");
  return m;
}

std::map<std::string, std::vector<LesionSpec>> read_lesions(const fs::path& dataset_root) {
  const fs::path path = dataset_root / "lesions.csv";
  std::ifstream is(path);
  if (!is) throw IoError("missing lesion table: " + path.string());
  std::map<std::string, std::vector<LesionSpec>> out;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw IoError("malformed row in " + path.string());
    out[cells[0]].push_back(
        {std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]), std::stod(cells[4])});
  }
  return out;
}

}  // namespace gazemil
