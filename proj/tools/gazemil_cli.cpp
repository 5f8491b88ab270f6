// gazemil: command-line front end for the gaze-guided MIL pipeline.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gazemil/config.hpp"
#include "gazemil/gaze_render.hpp"
#include "gazemil/plot.hpp"
#include "gazemil/train_eval.hpp"

namespace fs = std::filesystem;
using namespace gazemil;

namespace {

struct Globals {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  bool paper_scale = false;
};

struct Options {
  std::string dataset;
  std::string bags;
  std::string source = "gaze";
  std::string checkpoint;
  std::string split = "test";
  std::string table = "both";
  std::string fixations;
  std::string output;
  int width = 0;
  int height = 0;
  std::vector<std::string> rocs;
};

RunConfig resolve(const Globals& g) {
  RunConfig c = default_run_config(g.paper_scale);
  if (!g.config.empty()) c = load_run_config(g.config, c);
  if (g.seed) {
    c.data.seed = *g.seed;
    c.train = c.train.with_seed(*g.seed);
  }
  finalize(c);
  return c;
}

fs::path out_dir(const Globals& g) {
  const fs::path p(g.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create output directory " + p.string() + ": " + ec.message());
  return p;
}

std::string hex_digest(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char c;
  while (is.get(c)) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

DatasetManifest require_dataset(const std::string& dir) {
  if (dir.empty()) throw InputError("--dataset is required (a directory written by `synth`)");
  const fs::path manifest = fs::path(dir) / "manifest.csv";
  if (!fs::exists(manifest)) {
    throw IoError("missing artifact " + manifest.string() + " (run `gazemil synth` first)");
  }
  return DatasetManifest::read(manifest);
}

int domain_count(const DatasetManifest& m, const RunConfig& c) {
  int d = c.data.domains;
  for (const auto& e : m.entries) d = std::max(d, e.domain + 1);
  return d;
}

BagSet load_data(const RunConfig& c, const Options& o, const DatasetManifest& m, int bag_size) {
  if (!o.bags.empty()) {
    const fs::path root(o.bags);
    if (!fs::exists(root / "manifest.csv")) {
      throw IoError("missing artifact " + (root / "manifest.csv").string() +
                    " (run `gazemil bags` first)");
    }
    return load_cached_bag_set(m, BagCache(root), c.train.encoder, domain_count(m, c));
  }
  BagRecipe r{parse_instance_source(o.source), bag_size, c.data.window, c.uniform_seed};
  return load_bag_set(m, r, c.train.encoder, domain_count(m, c));
}

int window_count(const DatasetManifest& m, int window) {
  if (m.entries.empty()) return 0;
  const Image8 img = read_pnm(m.root / m.entries.front().image);
  const int step = window / 2;
  auto axis = [&](int extent) { return extent < window ? 0 : (extent - window) / step + 1; };
  return axis(img.width) * axis(img.height);
}

void print_metrics(const std::vector<HeadMetrics>& heads) {
  std::printf("%-4s %5s %5s %5s %5s %9s %9s %9s %9s %9s\n", "head", "TP", "FP", "TN", "FN",
              "accuracy", "recall", "precision", "f1", "auc");
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto& m = heads[h];
    std::printf("H%-3zu %5d %5d %5d %5d %9.4f %9.4f %9.4f %9.4f %9.4f\n", h + 1, m.counts.tp,
                m.counts.fp, m.counts.tn, m.counts.fn, m.accuracy, m.recall, m.precision, m.f1,
                m.auc);
  }
}

void write_rocs(const fs::path& out, const std::vector<HeadMetrics>& heads) {
  std::vector<std::string> names;
  std::vector<RocCurve> curves;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    if (heads[h].roc.points.empty()) continue;
    const std::string name = "H" + std::to_string(h + 1);
    write_roc_csv(out / ("roc_" + name + ".csv"), heads[h].roc);
    names.push_back(name);
    curves.push_back(heads[h].roc);
  }
  if (!curves.empty()) write_svg(out / "roc.svg", roc_svg(names, curves));
}

void write_attention(const fs::path& path, const DcamilParams& params, ModelMode mode,
                     const std::vector<PreparedBag>& bags) {
  bool first = true;
  for (const auto& bag : bags) {
    if (bag.label != 1 || !bag.instance_labels) continue;
    write_attention_csv(path, bag.id, attention_report(params, mode, bag), !first);
    first = false;
  }
}

// ---------------------------------------------------------------------------

void cmd_synth(const Globals& g) {
  const RunConfig c = resolve(g);
  const fs::path out = out_dir(g);
  const DatasetManifest m = gen_dataset(c.data, out);
  std::printf("dataset %s: %zu images, preset %s, %d domains\n", out.string().c_str(),
              m.entries.size(), c.data.preset.c_str(), c.data.domains);
  for (Split s : {Split::train, Split::val, Split::test}) {
    std::printf("split %-5s negative %4d positive %4d\n", std::string(split_name(s)).c_str(),
                m.count(s, 0), m.count(s, 1));
  }
  for (int d = 0; d < c.data.domains; ++d) {
    std::printf("domain %d: %d images\n", d, m.count_domain(d));
  }
  std::printf("manifest checksum %s\n", hex_digest(out / "manifest.csv").c_str());
}

void cmd_gaze(const Globals& g, const Options& o) {
  const RunConfig c = resolve(g);
  const GaussianSpec spec{c.data.sigma};
  if (!o.fixations.empty()) {
    if (o.width < 1 || o.height < 1) throw InputError("--width and --height are required with --fixations");
    const auto fix = read_fixations_csv(o.fixations);
    const GazeMap map = quantize_gaze_map(render_gaze_map(fix, o.width, o.height, spec));
    const fs::path target = o.output.empty() ? out_dir(g) / "gaze.pgm" : fs::path(o.output);
    write_pnm(target, gaze_map_image(map));
    std::printf("gaze map %s: %zu fixations, %dx%d\n", target.string().c_str(), fix.size(),
                o.width, o.height);
    return;
  }
  const DatasetManifest m = require_dataset(o.dataset);
  const fs::path out = out_dir(g);
  for (const auto& e : m.entries) {
    const fs::path fix_path = m.root / "fixations" / (e.id + ".csv");
    if (!fs::exists(fix_path)) throw IoError("missing artifact " + fix_path.string());
    const Image8 image = read_pnm(m.root / e.image);
    const auto fix = read_fixations_csv(fix_path);
    const GazeMap map = quantize_gaze_map(render_gaze_map(fix, image.width, image.height, spec));
    fs::create_directories((out / e.gaze).parent_path());
    write_pnm(out / e.gaze, gaze_map_image(map));
  }
  std::printf("rendered %zu gaze maps into %s\n", m.entries.size(), out.string().c_str());
}

void cmd_bags(const Globals& g, const Options& o) {
  const RunConfig c = resolve(g);
  const DatasetManifest m = require_dataset(o.dataset);
  const fs::path out = out_dir(g);
  BagCache cache(out);
  const BagRecipe r{parse_instance_source(o.source), c.data.bag_size, c.data.window, c.uniform_seed};
  std::map<std::string, std::vector<LesionSpec>> lesions;
  const bool labelled = fs::exists(m.root / "lesions.csv");
  if (labelled) lesions = read_lesions(m.root);
  const std::vector<LesionSpec> none;
  for (const auto& e : m.entries) {
    const fs::path gaze_path = m.root / e.gaze;
    if (!fs::exists(gaze_path)) throw IoError("missing artifact " + gaze_path.string());
    const Image8 rgb = read_pnm(m.root / e.image);
    const GazeMap gaze = gaze_map_from_image(read_pnm(gaze_path));
    const auto it = lesions.find(e.id);
    const auto* l = it != lesions.end() ? &it->second : (labelled ? &none : nullptr);
    cache.save(build_bag(rgb, gaze, e, r, l));
  }
  cache.flush_manifest();
  std::printf("bag cache %s: %zu bags, K=%d, M=%d, source %s\n", out.string().c_str(),
              m.entries.size(), r.bag_size, r.window, o.source.c_str());
}

void cmd_train(const Globals& g, const Options& o) {
  const RunConfig c = resolve(g);
  const DatasetManifest m = require_dataset(o.dataset);
  const fs::path out = out_dir(g);
  const BagSet data = load_data(c, o, m, c.data.bag_size);
  const RunRecord rec = train(data, c.train, [](const EpochLog& e) {
    std::fprintf(stderr, "epoch %3d  L1 %.4f  L2 %.4f  L3 %.4f  total %.4f  val_acc %.4f",
                 e.epoch, e.loss.l1, e.loss.l2, e.loss.l3, e.loss.total, e.val_acc_h1);
    if (e.val_acc_h2) std::fprintf(stderr, " / %.4f", *e.val_acc_h2);
    std::fprintf(stderr, "\n");
  });
  save_checkpoint(out / "checkpoint.bin", rec.best_params);
  write_training_log(out / "training_log.csv", rec.epochs);
  {
    std::ofstream os(out / "stability.csv");
    os << "epoch,val_acc_h1,val_acc_h2\n";
    LineSeries h1{"H1", {}, {}}, h2{"H2", {}, {}};
    for (const auto& e : rec.epochs) {
      os << e.epoch << ',' << e.val_acc_h1 << ',';
      if (e.val_acc_h2) os << *e.val_acc_h2;
      os << '\n';
      h1.x.push_back(e.epoch);
      h1.y.push_back(e.val_acc_h1);
      if (e.val_acc_h2) {
        h2.x.push_back(e.epoch);
        h2.y.push_back(*e.val_acc_h2);
      }
    }
    std::vector<LineSeries> series{h1};
    if (!h2.x.empty()) series.push_back(h2);
    const double last = std::max(2.0, static_cast<double>(rec.epochs.size()));
    write_svg(out / "stability.svg",
              line_chart_svg({"Validation accuracy", "Epoch", "Accuracy", 1, last, 0, 1, false},
                             series));
  }
  write_metrics_json(out / "metrics.json", rec);
  if (!rec.test.empty()) {
    write_rocs(out, rec.test);
    write_attention(out / "attention.csv", rec.best_params, c.train.model_mode(), data.test);
    print_metrics(rec.test);
  }
  std::printf("best epoch %d, best head H%d; artifacts in %s\n", rec.best_epoch, rec.best_head + 1,
              out.string().c_str());
}

void cmd_eval(const Globals& g, const Options& o) {
  const RunConfig c = resolve(g);
  if (o.checkpoint.empty()) throw InputError("--checkpoint is required");
  if (!fs::exists(o.checkpoint)) throw IoError("missing artifact " + o.checkpoint + " (run `gazemil train` first)");
  const DatasetManifest m = require_dataset(o.dataset);
  const fs::path out = out_dir(g);
  const DcamilParams params = load_checkpoint(o.checkpoint);
  RunConfig cc = c;
  cc.train.encoder = params.config.encoder;
  const BagSet data = load_data(cc, o, m, c.data.bag_size);
  const auto& bags = data.split(parse_split(o.split));
  const ModelMode mode = c.train.model_mode();
  const auto heads = evaluate(params, mode, bags);
  nlohmann::json j;
  j["split"] = o.split;
  j["bags"] = bags.size();
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto& x = heads[h];
    j["heads"]["H" + std::to_string(h + 1)] = {
        {"TP", x.counts.tp},    {"FP", x.counts.fp},       {"TN", x.counts.tn},
        {"FN", x.counts.fn},    {"accuracy", x.accuracy},  {"precision", x.precision},
        {"recall", x.recall},   {"f1", x.f1},
        {"auc", std::isnan(x.auc) ? nlohmann::json(nullptr) : nlohmann::json(x.auc)}};
  }
  std::ofstream(out / "metrics.json") << j.dump(2) << '\n';
  write_rocs(out, heads);
  write_attention(out / "attention.csv", params, mode, bags);
  print_metrics(heads);
}

void cmd_ablate(const Globals& g, const Options& o) {
  const RunConfig c = resolve(g);
  const DatasetManifest m = require_dataset(o.dataset);
  const fs::path out = out_dir(g);
  if (o.table != "strategy" && o.table != "module" && o.table != "both") {
    throw InputError("--table must be strategy, module or both");
  }
  const BagSet data = load_data(c, o, m, c.data.bag_size);
  const fs::path csv = out / "ablation.csv";
  bool append = false;
  std::printf("%-6s %-10s %9s %9s %9s %9s %9s\n", "table", "variant", "accuracy", "recall",
              "precision", "f1", "auc");
  auto run = [&](const std::string& name, const std::vector<AblationVariant>& grid) {
    const auto rows = run_ablation(data, c.train, grid, c.seeds, [&](const AblationRow& r) {
      std::printf("%-6s %-10s %9.4f %9.4f %9.4f %9.4f %9.4f\n", name.c_str(),
                  r.variant.name.c_str(), r.mean(&HeadMetrics::accuracy),
                  r.mean(&HeadMetrics::recall), r.mean(&HeadMetrics::precision),
                  r.mean(&HeadMetrics::f1), r.mean(&HeadMetrics::auc));
      std::fflush(stdout);
    });
    write_ablation_csv(csv, name, rows, append);
    append = true;
  };
  if (o.table != "module") run("strategy", strategy_grid());
  if (o.table != "strategy") run("module", module_grid());
}

struct MethodResult {
  double accuracy = 0, f1 = 0, auc = 0;
};

MethodResult mean_over_seeds(const BagSet& data, const RunConfig& c, int bag_size,
                             std::vector<RunSummary>* runs) {
  MethodResult r;
  for (std::uint64_t seed : c.seeds) {
    TrainConfig t = c.train.with_seed(seed);
    t.bag_size = bag_size;
    const RunSummary s = summarize(train(data, t), seed);
    const auto& m = s.test.at(static_cast<std::size_t>(s.best_head));
    r.accuracy += m.accuracy;
    r.f1 += m.f1;
    r.auc += m.auc;
    if (runs) runs->push_back(s);
  }
  const double n = static_cast<double>(c.seeds.size());
  return {r.accuracy / n, r.f1 / n, r.auc / n};
}

void cmd_sweep_k(const Globals& g, const Options& o) {
  const RunConfig c = resolve(g);
  const DatasetManifest m = require_dataset(o.dataset);
  const fs::path out = out_dir(g);
  const int windows = window_count(m, c.data.window);
  std::ofstream csv(out / "sweep_k.csv");
  if (!csv) throw IoError("cannot write " + (out / "sweep_k.csv").string());
  csv << "method,K,feasible,accuracy,f1,auc\n" << std::setprecision(10);
  std::printf("%-8s %4s %9s %9s %9s\n", "method", "K", "accuracy", "f1", "auc");
  for (const std::string method : {"gaze", "uniform"}) {
    for (int k : c.k_values) {
      if (k < 1 || k > windows) {
        csv << method << ',' << k << ",0,,,\n";
        std::printf("%-8s %4d infeasible: only %d windows of size %d\n", method.c_str(), k,
                    windows, c.data.window);
        continue;
      }
      Options oo = o;
      oo.bags.clear();
      oo.source = method;
      const BagSet data = load_data(c, oo, m, k);
      const MethodResult r = mean_over_seeds(data, c, k, nullptr);
      csv << method << ',' << k << ",1," << r.accuracy << ',' << r.f1 << ',' << r.auc << '\n';
      std::printf("%-8s %4d %9.4f %9.4f %9.4f\n", method.c_str(), k, r.accuracy, r.f1, r.auc);
      std::fflush(stdout);
    }
  }
}

void cmd_compare_gen(const Globals& g, const Options& o) {
  const RunConfig c = resolve(g);
  const DatasetManifest m = require_dataset(o.dataset);
  const fs::path out = out_dir(g);
  std::ofstream csv(out / "compare_gen.csv");
  if (!csv) throw IoError("cannot write " + (out / "compare_gen.csv").string());
  csv << "method,seed,accuracy,f1,auc\n" << std::setprecision(10);
  std::map<std::string, double> auc;
  for (const std::string method : {"gaze", "uniform"}) {
    Options oo = o;
    oo.bags.clear();
    oo.source = method;
    const BagSet data = load_data(c, oo, m, c.data.bag_size);
    std::vector<RunSummary> runs;
    const MethodResult r = mean_over_seeds(data, c, c.data.bag_size, &runs);
    for (const auto& s : runs) {
      const auto& x = s.test.at(static_cast<std::size_t>(s.best_head));
      csv << method << ',' << s.seed << ',' << x.accuracy << ',' << x.f1 << ',' << x.auc << '\n';
    }
    csv << method << ",mean," << r.accuracy << ',' << r.f1 << ',' << r.auc << '\n';
    auc[method] = r.auc;
    std::printf("%-8s accuracy %.4f f1 %.4f auc %.4f\n", method.c_str(), r.accuracy, r.f1, r.auc);
  }
  std::printf("gaze - uniform AUC: %+.4f\n", auc["gaze"] - auc["uniform"]);
}

RocCurve read_roc_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("missing artifact " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "fpr,tpr,threshold") throw IoError(path.string() + ": not a ROC CSV");
  RocCurve roc;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, t;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, t, ',');
    roc.points.push_back({std::stod(a), std::stod(b), std::stod(t)});
  }
  if (roc.points.size() < 2) throw IoError(path.string() + ": too few ROC points");
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto& p = roc.points[i - 1];
    const auto& q = roc.points[i];
    roc.auc += (q.fpr - p.fpr) * (q.tpr + p.tpr) / 2.0;
  }
  return roc;
}

void cmd_roc_plot(const Globals& g, const Options& o) {
  if (o.rocs.empty()) throw InputError("--roc NAME=PATH is required at least once");
  std::vector<std::string> names;
  std::vector<RocCurve> curves;
  for (const auto& spec : o.rocs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw InputError("--roc expects NAME=PATH, got '" + spec + "'");
    names.push_back(spec.substr(0, eq));
    curves.push_back(read_roc_csv(spec.substr(eq + 1)));
  }
  const fs::path target = o.output.empty() ? out_dir(g) / "roc.svg" : fs::path(o.output);
  write_svg(target, roc_svg(names, curves));
  std::printf("wrote %s (%zu curves)\n", target.string().c_str(), curves.size());
}

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaze-guided multiple instance learning toolkit"};
  app.require_subcommand(1);
  Globals g;
  Options o;
  app.add_option("--config", g.config, "Key-value run config file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "Output directory (created if absent)");
  app.add_option("--seed", g.seed, "Override the data seed and the training seed");
  app.add_flag("--paper-scale", g.paper_scale, "Paper-scale defaults instead of desk-scale");
  app.fallthrough();

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  auto* gaze = app.add_subcommand("gaze", "Render gaze maps from fixation CSVs");
  gaze->add_option("--dataset", o.dataset, "Dataset directory (re-render every map)");
  gaze->add_option("--fixations", o.fixations, "Single fixation CSV");
  gaze->add_option("--width", o.width, "Image width for --fixations");
  gaze->add_option("--height", o.height, "Image height for --fixations");
  gaze->add_option("--output", o.output, "Output PGM for --fixations");
  auto* bags = app.add_subcommand("bags", "Build the instance-bag cache");
  auto* trn = app.add_subcommand("train", "Train a model and evaluate it on the test split");
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint");
  auto* abl = app.add_subcommand("ablate", "Strategy and module ablations");
  auto* swk = app.add_subcommand("sweep-k", "Bag-size sweep for gaze and uniform bags");
  auto* cmp = app.add_subcommand("compare-gen", "Gaze-built versus uniform-grid bags");
  auto* roc = app.add_subcommand("roc-plot", "Render ROC CSVs as an SVG figure");
  for (auto* sub : {bags, trn, evl, abl, swk, cmp}) {
    sub->add_option("--dataset", o.dataset, "Dataset directory written by synth");
  }
  for (auto* sub : {bags, trn, evl, abl}) {
    sub->add_option("--source", o.source, "Instance source: gaze or uniform");
  }
  for (auto* sub : {trn, evl, abl}) sub->add_option("--bags", o.bags, "Bag cache directory");
  evl->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  evl->add_option("--split", o.split, "train, val or test");
  abl->add_option("--table", o.table, "strategy, module or both");
  roc->add_option("--roc", o.rocs, "NAME=PATH of a ROC CSV (repeatable)");
  roc->add_option("--output", o.output, "Output SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "gazemil: error: usage: %s\n", one_line(e.what()).c_str());
    return 2;
  }

  try {
    if (*synth) cmd_synth(g);
    if (*gaze) cmd_gaze(g, o);
    if (*bags) cmd_bags(g, o);
    if (*trn) cmd_train(g, o);
    if (*evl) cmd_eval(g, o);
    if (*abl) cmd_ablate(g, o);
    if (*swk) cmd_sweep_k(g, o);
    if (*cmp) cmd_compare_gen(g, o);
    if (*roc) cmd_roc_plot(g, o);
  } catch (const InputError& e) {
    std::fprintf(stderr, "gazemil: error: input: %s\n", one_line(e.what()).c_str());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "gazemil: error: io: %s\n", one_line(e.what()).c_str());
    return 3;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "gazemil: error: divergence: epoch %d: %s\n", e.epoch(),
                 one_line(e.what()).c_str());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "gazemil: error: internal: %s\n", one_line(e.what()).c_str());
    return 1;
  }
  return 0;
}
