#include "gazemil/bag_builder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "gazemil/errors.hpp"
#include "gazemil/rng.hpp"

namespace gazemil {

namespace fs = std::filesystem;

Patch::Patch(Image8 pixels) : pixels_(std::move(pixels)) {
  if (pixels_.width != kPatchSize || pixels_.height != kPatchSize ||
      pixels_.channels != 3) {
    throw InputError("patch must be 224x224x3, got " + std::to_string(pixels_.width) +
                     "x" + std::to_string(pixels_.height) + "x" +
                     std::to_string(pixels_.channels));
  }
}

void InstanceBag::validate() const {
  const std::size_t k = instances.size();
  if (k == 0) throw InputError("bag " + bag_id + " has no instances");
  if (positions.size() != k) {
    throw InputError("bag " + bag_id + ": positions/instances size mismatch");
  }
  for (const auto& p : instances) {
    const auto& px = p.pixels();
    if (px.width != kPatchSize || px.height != kPatchSize || px.channels != 3) {
      throw InputError("bag " + bag_id + ": instance is not 224x224x3");
    }
  }
  if (label != 0 && label != 1) throw InputError("bag " + bag_id + ": label must be 0 or 1");
  if (instance_labels) {
    if (instance_labels->size() != k) {
      throw InputError("bag " + bag_id + ": instance label count mismatch");
    }
    for (int y : *instance_labels) {
      if (y != 0 && y != 1) throw InputError("bag " + bag_id + ": instance label not 0/1");
      if (label == 0 && y == 1) {
        throw InputError("bag " + bag_id + ": negative bag contains a positive instance");
      }
    }
  }
}

std::vector<WindowScore> score_windows(const GazeMap& map, int window) {
  if (window <= 0 || window % 2 != 0) {
    throw InputError("score_windows: window size must be a positive even number, got " +
                     std::to_string(window));
  }
  if (window > map.width || window > map.height) {
    throw InputError("score_windows: window " + std::to_string(window) +
                     " larger than map " + std::to_string(map.width) + "x" +
                     std::to_string(map.height));
  }
  const int stride = window / 2;
  const int rows = (map.height - window) / stride + 1;
  const int cols = (map.width - window) / stride + 1;
  const double area = static_cast<double>(window) * window;

  std::vector<WindowScore> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int row = r * stride, col = c * stride;
      double sum = 0.0;
      for (int y = row; y < row + window; ++y) {
        const double* line = map.values.data() + static_cast<std::size_t>(y) * map.width;
        for (int x = col; x < col + window; ++x) sum += line[x];
      }
      out.push_back({row, col, sum / area});
    }
  }
  return out;
}

std::vector<WindowScore> select_top_k(std::span<const WindowScore> scores, int k) {
  if (k < 1) throw InputError("select_top_k: k must be >= 1");
  if (static_cast<std::size_t>(k) > scores.size()) {
    throw InputError("select_top_k: k=" + std::to_string(k) + " exceeds window count " +
                     std::to_string(scores.size()));
  }
  std::vector<WindowScore> sorted(scores.begin(), scores.end());
  std::partial_sort(sorted.begin(), sorted.begin() + k, sorted.end(),
                    [](const WindowScore& a, const WindowScore& b) {
                      if (a.score != b.score) return a.score > b.score;
                      if (a.row != b.row) return a.row < b.row;
                      return a.col < b.col;
                    });
  sorted.resize(static_cast<std::size_t>(k));
  return sorted;
}

std::vector<WindowScore> select_uniform(int width, int height, int window, int k,
                                        std::uint64_t seed) {
  GazeMap flat;
  flat.width = width;
  flat.height = height;
  flat.values.assign(static_cast<std::size_t>(width) * height, 0.0);
  auto grid = score_windows(flat, window);
  if (k < 1 || static_cast<std::size_t>(k) > grid.size()) {
    throw InputError("select_uniform: k=" + std::to_string(k) + " outside [1, " +
                     std::to_string(grid.size()) + "]");
  }
  auto perm = draw_permutation(grid.size(), seed);
  std::vector<WindowScore> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) out.push_back(grid[perm[static_cast<std::size_t>(i)]]);
  return out;
}

Image8 crop_resize(const Image8& image, int row, int col, int window, int out_size) {
  if (row < 0 || col < 0 || row + window > image.height || col + window > image.width) {
    throw InputError("crop window (" + std::to_string(row) + "," + std::to_string(col) +
                     ") size " + std::to_string(window) + " exceeds image " +
                     std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  Image8 out(out_size, out_size, image.channels);
  const double scale = static_cast<double>(window) / out_size;
  // Half-pixel-center mapping; identity when window == out_size.
  std::vector<int> i0(out_size), i1(out_size);
  std::vector<double> frac(out_size);
  for (int d = 0; d < out_size; ++d) {
    double s = std::clamp((d + 0.5) * scale - 0.5, 0.0, static_cast<double>(window - 1));
    int lo = static_cast<int>(std::floor(s));
    i0[d] = lo;
    i1[d] = std::min(lo + 1, window - 1);
    frac[d] = s - lo;
  }
  for (int y = 0; y < out_size; ++y) {
    const int sy0 = row + i0[y], sy1 = row + i1[y];
    const double fy = frac[y];
    for (int x = 0; x < out_size; ++x) {
      const int sx0 = col + i0[x], sx1 = col + i1[x];
      const double fx = frac[x];
      for (int c = 0; c < image.channels; ++c) {
        double top = image.at(sx0, sy0, c) * (1.0 - fx) + image.at(sx1, sy0, c) * fx;
        double bot = image.at(sx0, sy1, c) * (1.0 - fx) + image.at(sx1, sy1, c) * fx;
        double v = top * (1.0 - fy) + bot * fy;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

InstanceBag crop_bag(const Image8& image, std::span<const WindowScore> selected, int window,
                     int label, int domain, std::string bag_id) {
  if (image.channels != 3) throw InputError("crop_bag: image must be RGB");
  InstanceBag bag;
  bag.bag_id = std::move(bag_id);
  bag.label = label;
  bag.domain = domain;
  bag.window = window;
  bag.instances.reserve(selected.size());
  for (const auto& w : selected) {
    bag.instances.emplace_back(crop_resize(image, w.row, w.col, window, kPatchSize));
    bag.positions.push_back({w.row, w.col});
  }
  return bag;
}

std::vector<std::size_t> draw_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(mix_seed(seed));
  // Explicit Fisher-Yates so the ordering does not depend on the library's
  // std::shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

InstanceBag permute_bag(const InstanceBag& bag, std::span<const std::size_t> perm) {
  if (perm.size() != bag.size()) throw InputError("permute_bag: permutation size mismatch");
  InstanceBag out;
  out.bag_id = bag.bag_id;
  out.label = bag.label;
  out.domain = bag.domain;
  out.window = bag.window;
  out.instances.reserve(perm.size());
  for (std::size_t i : perm) {
    out.instances.push_back(bag.instances[i]);
    out.positions.push_back(bag.positions[i]);
  }
  if (bag.instance_labels) {
    std::vector<int> labels;
    for (std::size_t i : perm) labels.push_back((*bag.instance_labels)[i]);
    out.instance_labels = std::move(labels);
  }
  return out;
}

InstanceBag sequence_augment(const InstanceBag& bag, std::uint64_t seed) {
  return permute_bag(bag, draw_permutation(bag.size(), seed));
}

std::vector<int> label_instances(std::span<const WindowOrigin> positions, int window,
                                 std::span<const Disc> lesions, double min_fraction) {
  std::vector<int> labels(positions.size(), 0);
  for (const auto& d : lesions) {
    const int x0 = static_cast<int>(std::floor(d.cx - d.radius));
    const int x1 = static_cast<int>(std::ceil(d.cx + d.radius));
    const int y0 = static_cast<int>(std::floor(d.cy - d.radius));
    const int y1 = static_cast<int>(std::ceil(d.cy + d.radius));
    const double r2 = d.radius * d.radius;
    std::vector<std::pair<int, int>> inside;
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        double dx = x - d.cx, dy = y - d.cy;
        if (dx * dx + dy * dy <= r2) inside.emplace_back(x, y);
      }
    }
    if (inside.empty()) continue;
    for (std::size_t k = 0; k < positions.size(); ++k) {
      const auto& p = positions[k];
      std::size_t covered = 0;
      for (auto [x, y] : inside) {
        if (x >= p.col && x < p.col + window && y >= p.row && y < p.row + window) ++covered;
      }
      if (static_cast<double>(covered) >= min_fraction * static_cast<double>(inside.size())) {
        labels[k] = 1;
      }
    }
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Bag cache

BagCache::BagCache(fs::path root) : root_(std::move(root)) {}

namespace {

std::string instance_file(std::size_t k) {
  std::ostringstream os;
  os << "instance_" << std::setw(2) << std::setfill('0') << k << ".ppm";
  return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

void BagCache::save(const InstanceBag& bag) {
  bag.validate();
  if (bag.bag_id.empty() || bag.bag_id.find_first_of(",/\\") != std::string::npos) {
    throw InputError("bag id must be non-empty and free of ',' and path separators");
  }
  if (!rows_.empty() && rows_.front().k != static_cast<int>(bag.size())) {
    throw InputError("bag cache requires a uniform K per cache");
  }
  const fs::path dir = root_ / bag.bag_id;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create bag directory " + dir.string() + ": " + ec.message());
  for (std::size_t k = 0; k < bag.size(); ++k) {
    write_pnm(dir / instance_file(k), bag.instances[k].pixels());
  }
  if (bag.instance_labels) {
    std::ofstream os(dir / "instance_labels.csv");
    if (!os) throw IoError("cannot write instance labels in " + dir.string());
    os << "instance,label\n";
    for (std::size_t k = 0; k < bag.size(); ++k) os << k << ',' << (*bag.instance_labels)[k] << '\n';
  } else {
    fs::remove(dir / "instance_labels.csv", ec);
  }
  Row row{bag.bag_id, bag.label, bag.domain, static_cast<int>(bag.size()), bag.window,
          bag.positions};
  auto it = std::find_if(rows_.begin(), rows_.end(),
                         [&](const Row& r) { return r.bag_id == bag.bag_id; });
  if (it != rows_.end()) {
    *it = std::move(row);
  } else {
    rows_.push_back(std::move(row));
  }
}

void BagCache::flush_manifest() const {
  std::error_code ec;
  fs::create_directories(root_, ec);
  std::ofstream os(root_ / "manifest.csv");
  if (!os) throw IoError("cannot write " + (root_ / "manifest.csv").string());
  os << "bag_id,label,domain,K,M";
  const int k = rows_.empty() ? 0 : rows_.front().k;
  for (int i = 0; i < k; ++i) os << ",row" << i << ",col" << i;
  os << '\n';
  for (const auto& r : rows_) {
    os << r.bag_id << ',' << r.label << ',' << r.domain << ',' << r.k << ',' << r.window;
    for (const auto& p : r.positions) os << ',' << p.row << ',' << p.col;
    os << '\n';
  }
  if (!os) throw IoError("write failed: " + (root_ / "manifest.csv").string());
}

std::vector<BagCache::Row> BagCache::read_manifest() const {
  const fs::path path = root_ / "manifest.csv";
  std::ifstream is(path);
  if (!is) throw IoError("missing bag cache manifest: " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<Row> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv(line);
    try {
      if (cells.size() < 5) throw std::invalid_argument("short row");
      Row r;
      r.bag_id = cells[0];
      r.label = std::stoi(cells[1]);
      r.domain = std::stoi(cells[2]);
      r.k = std::stoi(cells[3]);
      r.window = std::stoi(cells[4]);
      if (cells.size() != 5 + 2 * static_cast<std::size_t>(r.k)) {
        throw std::invalid_argument("origin count does not match K");
      }
      for (int i = 0; i < r.k; ++i) {
        r.positions.push_back({std::stoi(cells[5 + 2 * i]), std::stoi(cells[6 + 2 * i])});
      }
      rows.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

std::vector<std::string> BagCache::bag_ids() const {
  std::vector<std::string> ids;
  for (const auto& r : read_manifest()) ids.push_back(r.bag_id);
  return ids;
}

InstanceBag BagCache::load(const std::string& bag_id) const {
  for (const auto& r : read_manifest()) {
    if (r.bag_id != bag_id) continue;
    InstanceBag bag;
    bag.bag_id = r.bag_id;
    bag.label = r.label;
    bag.domain = r.domain;
    bag.window = r.window;
    bag.positions = r.positions;
    const fs::path dir = root_ / r.bag_id;
    for (int k = 0; k < r.k; ++k) {
      bag.instances.emplace_back(read_pnm(dir / instance_file(static_cast<std::size_t>(k))));
    }
    const fs::path labels_path = dir / "instance_labels.csv";
    if (fs::exists(labels_path)) {
      std::ifstream is(labels_path);
      std::string line;
      std::getline(is, line);
      std::vector<int> labels;
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != 2) throw IoError("malformed " + labels_path.string());
        labels.push_back(std::stoi(cells[1]));
      }
      bag.instance_labels = std::move(labels);
    }
    bag.validate();
    return bag;
  }
  throw IoError("bag " + bag_id + " not found in cache " + root_.string());
}

std::vector<InstanceBag> BagCache::load_all() const {
  std::vector<InstanceBag> bags;
  for (const auto& id : bag_ids()) bags.push_back(load(id));
  return bags;
}

}  // namespace gazemil
