#include "gazemil/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <utility>

#include "json.hpp"

namespace gazemil {

using Eigen::Index;
using nlohmann::json;

void StrategyFlags::validate() const {
  if (cl && !dn) throw InputError("CL requires DN: contrastive learning needs two branches");
  if (ca && !dn) throw InputError("CA requires DN: cross attention needs two branches");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InputError("epochs must be >= 1 (got " + std::to_string(epochs) + ")");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InputError("learning rate must be > 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("momentum must be in [0, 1)");
  if (batch_bags < 1) throw InputError("batch size must be >= 1 bag");
  if (bag_size < 1) throw InputError("bag size K must be >= 1");
  if (window < 2 || window % 2 != 0) throw InputError("window M must be even and >= 2");
  if (embed_dim < 1 || attn_dim < 1 || domain_hidden < 1) {
    throw InputError("layer widths must be positive");
  }
  if (seed_branch1 == seed_branch2) throw InputError("branch seeds must differ");
  weights.validate();
  if (weights.lambda_grl < 0.0) throw InputError("lambda_grl must be >= 0");
  flags.validate();
}

ModelMode TrainConfig::model_mode() const {
  return {flags.dn, flags.ca ? AttentionMode::cross : AttentionMode::independent};
}

DcamilConfig TrainConfig::model_config(int domains) const {
  DcamilConfig c;
  c.encoder = encoder;
  c.embed_dim = embed_dim;
  c.attn_dim = attn_dim;
  c.domains = domains;
  c.domain_hidden = domain_hidden;
  c.seed_encoder = seed_encoder;
  c.seed_branch1 = seed_branch1;
  c.seed_branch2 = seed_branch2;
  c.seed_domain = seed_domain;
  return c;
}

TrainConfig TrainConfig::with_seed(std::uint64_t seed) const {
  TrainConfig c = *this;
  c.seed_encoder = derive_seed(seed, {1});
  c.seed_branch1 = derive_seed(seed, {2});
  c.seed_branch2 = derive_seed(seed, {3});
  c.seed_domain = derive_seed(seed, {4});
  c.seed_order = derive_seed(seed, {5});
  return c;
}

TrainConfig TrainConfig::paper_scale() {
  TrainConfig c;
  c.epochs = 100;
  c.learning_rate = 1e-4;
  c.encoder.preset = EncoderPreset::resnet18;
  return c;
}

// ---------------------------------------------------------------------------
// Bags

Activation PreparedBag::activation() const {
  Activation a(size(), static_cast<int>(input.rows()), side, side);
  a.data = input.cast<double>();
  return a;
}

PreparedBag PreparedBag::permuted(std::span<const std::size_t> perm) const {
  if (perm.size() != positions.size()) throw InputError("permutation length differs from K");
  PreparedBag out = *this;
  const Index block = static_cast<Index>(side) * side;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out.input.middleCols(static_cast<Index>(i) * block, block) =
        input.middleCols(static_cast<Index>(perm[i]) * block, block);
    out.positions[i] = positions[perm[i]];
    if (instance_labels) (*out.instance_labels)[i] = (*instance_labels)[perm[i]];
  }
  return out;
}

PreparedBag prepare_bag(const InstanceBag& bag, const EncoderConfig& encoder) {
  bag.validate();
  const Activation a = prepare_patches(encoder, bag.instances);
  PreparedBag p;
  p.id = bag.bag_id;
  p.label = bag.label;
  p.domain = bag.domain;
  p.side = a.h;
  p.input = a.data.cast<float>();
  p.positions = bag.positions;
  p.instance_labels = bag.instance_labels;
  return p;
}

const std::vector<PreparedBag>& BagSet::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::val: return val;
    case Split::test: return test;
  }
  return test;
}

std::vector<PreparedBag>& BagSet::split(Split s) {
  return const_cast<std::vector<PreparedBag>&>(std::as_const(*this).split(s));
}

std::string to_string(InstanceSource s) { return s == InstanceSource::gaze ? "gaze" : "uniform"; }

InstanceSource parse_instance_source(const std::string& name) {
  if (name == "gaze") return InstanceSource::gaze;
  if (name == "uniform") return InstanceSource::uniform;
  throw InputError("unknown instance source '" + name + "' (expected gaze or uniform)");
}

namespace {

// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t id_hash(const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : id) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

}  // namespace

InstanceBag build_bag(const Image8& rgb, const GazeMap& gaze, const DatasetEntry& entry,
                      const BagRecipe& recipe, const std::vector<LesionSpec>* lesions) {
  if (rgb.width != gaze.width || rgb.height != gaze.height) {
    throw InputError("image " + entry.id + " and its gaze map differ in size");
  }
  std::vector<WindowScore> selected;
  if (recipe.source == InstanceSource::gaze) {
    const auto scores = score_windows(gaze, recipe.window);
    selected = select_top_k(scores, recipe.bag_size);
  } else {
    selected = select_uniform(rgb.width, rgb.height, recipe.window, recipe.bag_size,
                              derive_seed(recipe.seed, {id_hash(entry.id)}));
  }
  InstanceBag bag = crop_bag(rgb, selected, recipe.window, entry.label, entry.domain, entry.id);
  if (lesions != nullptr) {
    const auto discs = lesion_discs(*lesions);
    bag.instance_labels = label_instances(bag.positions, recipe.window, discs);
  }
  return bag;
}

std::vector<BagSet> synth_bag_sets(const DatasetConfig& config,
                                   std::span<const BagRecipe> recipes,
                                   const EncoderConfig& encoder) {
  const DatasetManifest plan = plan_dataset(config);
  std::vector<BagSet> sets(recipes.size());
  for (auto& s : sets) s.domains = config.domains;
  for (const auto& entry : plan.entries) {
    const SyntheticSample sample = make_sample(config, entry);
    for (std::size_t r = 0; r < recipes.size(); ++r) {
      const InstanceBag bag = build_bag(sample.generated.image.rgb, sample.gaze, entry,
                                        recipes[r], &sample.generated.lesions);
      sets[r].split(entry.split).push_back(prepare_bag(bag, encoder));
    }
  }
  return sets;
}

BagSet load_bag_set(const DatasetManifest& manifest, const BagRecipe& recipe,
                    const EncoderConfig& encoder, int domains) {
  BagSet set;
  set.domains = domains;
  std::map<std::string, std::vector<LesionSpec>> lesions;
  const bool labelled = std::filesystem::exists(manifest.root / "lesions.csv");
  if (labelled) lesions = read_lesions(manifest.root);
  for (const auto& entry : manifest.entries) {
    const auto image_path = manifest.root / entry.image;
    const auto gaze_path = manifest.root / entry.gaze;
    if (!std::filesystem::exists(image_path)) throw IoError("missing image " + image_path.string());
    if (!std::filesystem::exists(gaze_path)) {
      throw IoError("missing gaze map " + gaze_path.string() + " (run the gaze step first)");
    }
    const Image8 rgb = read_pnm(image_path);
    const GazeMap gaze = gaze_map_from_image(read_pnm(gaze_path));
    const auto it = lesions.find(entry.id);
    const std::vector<LesionSpec>* entry_lesions = nullptr;
    static const std::vector<LesionSpec> kNone;
    if (it != lesions.end()) {
      entry_lesions = &it->second;
    } else if (labelled) {
      entry_lesions = &kNone;
    }
    const InstanceBag bag = build_bag(rgb, gaze, entry, recipe, entry_lesions);
    set.split(entry.split).push_back(prepare_bag(bag, encoder));
  }
  return set;
}

BagSet load_cached_bag_set(const DatasetManifest& manifest, const BagCache& cache,
                           const EncoderConfig& encoder, int domains) {
  BagSet set;
  set.domains = domains;
  const auto ids = cache.bag_ids();
  for (const auto& entry : manifest.entries) {
    if (std::find(ids.begin(), ids.end(), entry.id) == ids.end()) {
      throw IoError("bag cache " + cache.root().string() + " has no bag " + entry.id +
                    " (run the bags step first)");
    }
    set.split(entry.split).push_back(prepare_bag(cache.load(entry.id), encoder));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Objective and optimizer

namespace {

void axpy(std::vector<TensorRef> dst, const std::vector<TensorRef>& src, double scale) {
  for (std::size_t t = 0; t < dst.size(); ++t) {
    for (std::size_t i = 0; i < dst[t].values.size(); ++i) dst[t].values[i] += scale * src[t].values[i];
  }
}

}  // namespace

LossParts evaluate_objective(const DcamilParams& params, const TrainConfig& config,
                             std::span<const PreparedBag* const> batch, DcamilParams* grad,
                             Warnings* warnings) {
  if (batch.empty()) throw InputError("objective over an empty batch");
  const ModelMode mode = config.model_mode();
  const LossWeights& w = config.weights;
  const std::size_t n = batch.size();

  std::vector<ForwardOutput> outs(n);
  std::vector<ForwardTape> tapes(grad ? n : 0);
  std::vector<Vector> p1(n), p2;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    outs[i] = forward_prepared(params, batch[i]->activation(), mode, grad ? &tapes[i] : nullptr);
    p1[i] = outs[i].p1;
    if (mode.dual) p2.push_back(outs[i].p2);
    labels[i] = batch[i]->label;
  }

  LossParts parts;
  std::vector<OutputGradients> up(n);
  const auto cls = classification_loss(p1, p2, labels, warnings);
  parts.l1 = cls.value;
  for (std::size_t i = 0; i < n; ++i) {
    up[i].d_p1 = w.alpha * cls.d_p1[i];
    if (mode.dual) up[i].d_p2 = w.alpha * cls.d_p2[i];
  }

  if (config.flags.cl) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = contrastive_loss(outs[i].h1, outs[i].h2, w.tau, warnings);
      parts.l2 += inv_n * c.value;
      up[i].d_h1 = (w.beta * inv_n) * c.d_h1;
      up[i].d_h2 = (w.beta * inv_n) * c.d_h2;
    }
  }

  if (config.flags.da) {
    std::vector<Matrix> features(n);
    std::vector<int> domains(n);
    for (std::size_t i = 0; i < n; ++i) {
      features[i] = outs[i].features;
      domains[i] = batch[i]->domain;
    }
    auto d = domain_loss(features, domains, params.domain, w.lambda_grl);
    parts.l3 = d.value;
    if (grad != nullptr) {
      axpy(grad->domain.tensors(""), d.d_head.tensors(""), w.gamma);
      for (std::size_t i = 0; i < n; ++i) up[i].d_features = w.gamma * d.d_features[i];
    }
  }

  parts.total = total_loss(parts.l1, parts.l2, parts.l3, w);
  if (grad != nullptr) {
    for (std::size_t i = 0; i < n; ++i) backward_bag(params, mode, outs[i], tapes[i], up[i], *grad);
  }
  return parts;
}

Sgd::Sgd(const DcamilParams& params, double learning_rate, double momentum)
    : lr_(learning_rate), momentum_(momentum), velocity_(params.zeros_like()) {}

void Sgd::step(DcamilParams& params, const DcamilParams& grad) {
  auto p = params.tensors();
  auto v = velocity_.tensors();
  const auto g = grad.tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t i = 0; i < p[t].values.size(); ++i) {
      double& vi = v[t].values[i];
      vi = momentum_ * vi + g[t].values[i];
      p[t].values[i] -= lr_ * vi;
    }
  }
}

// ---------------------------------------------------------------------------
// Training

std::vector<std::size_t> epoch_order(std::size_t bags, const TrainConfig& config, int epoch) {
  return draw_permutation(bags, derive_seed(config.seed_order, {0x0b5e, static_cast<std::uint64_t>(epoch)}));
}

PreparedBag training_view(const PreparedBag& bag, std::size_t index, const TrainConfig& config,
                          int epoch) {
  if (!config.flags.sa) return bag;
  const auto perm = draw_permutation(
      static_cast<std::size_t>(bag.size()),
      derive_seed(config.seed_order, {0x5a, static_cast<std::uint64_t>(epoch), index}));
  return bag.permuted(perm);
}

Predictions predict(const DcamilParams& params, ModelMode mode,
                    std::span<const PreparedBag> bags) {
  Predictions p;
  for (const auto& bag : bags) {
    const ForwardOutput out = forward_prepared(params, bag.activation(), mode);
    p.p1.push_back(out.p1(1));
    if (mode.dual) p.p2.push_back(out.p2(1));
    p.labels.push_back(bag.label);
  }
  return p;
}

std::vector<HeadMetrics> evaluate(const DcamilParams& params, ModelMode mode,
                                  std::span<const PreparedBag> bags) {
  if (bags.empty()) throw InputError("evaluate: empty split");
  const Predictions p = predict(params, mode, bags);
  std::vector<HeadMetrics> heads{head_metrics(p.p1, p.labels)};
  if (mode.dual) heads.push_back(head_metrics(p.p2, p.labels));
  return heads;
}

RunRecord train(const BagSet& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (data.train.empty()) throw InputError("train: training split is empty");
  if (data.val.empty()) throw InputError("train: validation split is empty");
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const auto& bag : *split) {
      if (bag.domain < 0 || bag.domain >= data.domains) {
        throw InputError("bag " + bag.id + " has domain " + std::to_string(bag.domain) +
                         " outside [0, " + std::to_string(data.domains) + ")");
      }
    }
  }

  const ModelMode mode = config.model_mode();
  RunRecord record;
  record.config = config;
  DcamilParams params = DcamilParams::make(config.model_config(data.domains));
  Sgd sgd(params, config.learning_rate, config.momentum);
  DcamilParams grad = params.zeros_like();
  Warnings warnings;
  double best_acc = -1.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = epoch_order(data.train.size(), config, epoch);
    EpochLog log;
    log.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_bags)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_bags));
      std::vector<PreparedBag> views;
      for (std::size_t i = start; i < end; ++i) {
        views.push_back(training_view(data.train[order[i]], order[i], config, epoch));
      }
      std::vector<const PreparedBag*> batch;
      for (const auto& v : views) batch.push_back(&v);

      auto refs = grad.tensors();
      zero_tensors(refs);
      const LossParts parts = evaluate_objective(params, config, batch, &grad, &warnings);
      if (!std::isfinite(parts.total)) {
        throw DivergenceError(epoch, "non-finite loss at epoch " + std::to_string(epoch));
      }
      sgd.step(params, grad);
      if (!params.all_finite()) {
        throw DivergenceError(epoch, "non-finite parameters at epoch " + std::to_string(epoch));
      }
      log.loss.l1 += parts.l1;
      log.loss.l2 += parts.l2;
      log.loss.l3 += parts.l3;
      log.loss.total += parts.total;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    log.loss.l1 *= inv;
    log.loss.l2 *= inv;
    log.loss.l3 *= inv;
    log.loss.total *= inv;

    const Predictions val = predict(params, mode, data.val);
    log.val_acc_h1 = accuracy(confusion(val.p1, val.labels));
    double acc = log.val_acc_h1;
    int head = 0;
    if (mode.dual) {
      log.val_acc_h2 = accuracy(confusion(val.p2, val.labels));
      if (*log.val_acc_h2 > acc) {
        acc = *log.val_acc_h2;
        head = 1;
      }
    }
    if (acc > best_acc) {
      best_acc = acc;
      record.best_epoch = epoch;
      record.best_head = head;
      record.best_params = params;
    }
    record.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }

  if (!data.test.empty()) record.test = evaluate(record.best_params, mode, data.test);
  record.warnings = warnings.messages();
  return record;
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationVariant> strategy_grid() {
  return {{"none", {false, false, false, true, true}},
          {"DN", {true, false, false, true, true}},
          {"DN+CL", {true, true, false, true, true}},
          {"DN+CL+CA", {true, true, true, true, true}}};
}

std::vector<AblationVariant> module_grid() {
  return {{"full", {true, true, true, true, true}},
          {"no-SA", {true, true, true, false, true}},
          {"no-DA", {true, true, true, true, false}},
          {"no-SA-DA", {true, true, true, false, false}}};
}

double AblationRow::mean(double HeadMetrics::*metric) const {
  if (runs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : runs) sum += r.test.at(static_cast<std::size_t>(r.best_head)).*metric;
  return sum / static_cast<double>(runs.size());
}

RunSummary summarize(const RunRecord& record, std::uint64_t seed) {
  return {seed, record.best_epoch, record.best_head, record.test};
}

std::vector<AblationRow> run_ablation(const BagSet& data, const TrainConfig& base,
                                      std::span<const AblationVariant> grid,
                                      std::span<const std::uint64_t> seeds,
                                      const std::function<void(const AblationRow&)>& on_row) {
  for (const auto& v : grid) v.flags.validate();
  std::vector<AblationRow> rows;
  for (const auto& v : grid) {
    AblationRow row{v, {}};
    for (std::uint64_t seed : seeds) {
      TrainConfig c = base.with_seed(seed);
      c.flags = v.flags;
      row.runs.push_back(summarize(train(data, c), seed));
    }
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::ofstream open_csv(const std::filesystem::path& path, bool append, const char* header) {
  const bool fresh = !append || !std::filesystem::exists(path);
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  if (fresh) os << header << '\n';
  return os;
}

}  // namespace

void write_ablation_csv(const std::filesystem::path& path, const std::string& table,
                        std::span<const AblationRow> rows, bool append) {
  auto os = open_csv(path, append,
                     "table,variant,DN,CL,CA,SA,DA,seed,head,accuracy,recall,precision,f1,auc");
  for (const auto& row : rows) {
    const auto& f = row.variant.flags;
    std::ostringstream prefix;
    prefix << table << ',' << row.variant.name << ',' << f.dn << ',' << f.cl << ',' << f.ca << ','
           << f.sa << ',' << f.da << ',';
    for (const auto& run : row.runs) {
      for (std::size_t h = 0; h < run.test.size(); ++h) {
        const auto& m = run.test[h];
        os << prefix.str() << run.seed << ",H" << h + 1 << ',' << fmt(m.accuracy) << ','
           << fmt(m.recall) << ',' << fmt(m.precision) << ',' << fmt(m.f1) << ',' << fmt(m.auc)
           << '\n';
      }
    }
    os << prefix.str() << "mean,best," << fmt(row.mean(&HeadMetrics::accuracy)) << ','
       << fmt(row.mean(&HeadMetrics::recall)) << ',' << fmt(row.mean(&HeadMetrics::precision))
       << ',' << fmt(row.mean(&HeadMetrics::f1)) << ',' << fmt(row.mean(&HeadMetrics::auc))
       << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Reports

std::vector<AttentionRow> attention_report(const DcamilParams& params, ModelMode mode,
                                           const PreparedBag& bag) {
  if (!bag.instance_labels) {
    throw InputError("attention_report: bag " + bag.id + " has no instance labels");
  }
  const ForwardOutput out = forward_prepared(params, bag.activation(), mode);
  std::vector<AttentionRow> rows;
  for (int k = 0; k < bag.size(); ++k) {
    AttentionRow r;
    r.instance = k;
    r.position = bag.positions[static_cast<std::size_t>(k)];
    r.att1 = out.att1(k);
    if (mode.dual) {
      r.att2 = out.att2(k);
      r.p2 = out.p2(1);
    }
    r.label = (*bag.instance_labels)[static_cast<std::size_t>(k)];
    r.p1 = out.p1(1);
    rows.push_back(r);
  }
  return rows;
}

void write_attention_csv(const std::filesystem::path& path, const std::string& bag_id,
                         std::span<const AttentionRow> rows, bool append) {
  auto os = open_csv(path, append, "bag_id,instance,row,col,att1,att2,y,p1,p2");
  for (const auto& r : rows) {
    os << bag_id << ',' << r.instance << ',' << r.position.row << ',' << r.position.col << ','
       << fmt(r.att1) << ',' << (r.att2 ? fmt(*r.att2) : "") << ',' << r.label << ','
       << fmt(r.p1) << ',' << (r.p2 ? fmt(*r.p2) : "") << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> epochs) {
  auto os = open_csv(path, false, "epoch,L1,L2,L3,total,val_acc_h1,val_acc_h2");
  for (const auto& e : epochs) {
    os << e.epoch << ',' << fmt(e.loss.l1) << ',' << fmt(e.loss.l2) << ',' << fmt(e.loss.l3)
       << ',' << fmt(e.loss.total) << ',' << fmt(e.val_acc_h1) << ','
       << (e.val_acc_h2 ? fmt(*e.val_acc_h2) : "") << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

namespace {

json metrics_json(const HeadMetrics& m) {
  json j{{"TP", m.counts.tp},     {"FP", m.counts.fp},     {"TN", m.counts.tn},
         {"FN", m.counts.fn},     {"accuracy", m.accuracy}, {"precision", m.precision},
         {"recall", m.recall},    {"f1", m.f1}};
  j["auc"] = std::isnan(m.auc) ? json(nullptr) : json(m.auc);
  return j;
}

}  // namespace

void write_metrics_json(const std::filesystem::path& path, const RunRecord& record) {
  json j;
  j["best_epoch"] = record.best_epoch;
  j["best_head"] = "H" + std::to_string(record.best_head + 1);
  j["epochs"] = record.config.epochs;
  j["heads"] = json::object();
  for (std::size_t h = 0; h < record.test.size(); ++h) {
    j["heads"]["H" + std::to_string(h + 1)] = metrics_json(record.test[h]);
  }
  j["warnings"] = record.warnings.size();
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace gazemil
