#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gazemil/bag_builder.hpp"
#include "gazemil/errors.hpp"
#include "gazemil/losses.hpp"
#include "gazemil/metrics.hpp"
#include "gazemil/model.hpp"
#include "gazemil/synthdata.hpp"

namespace gazemil {

/// Strategy switches: dual network, contrastive learning, cross attention,
/// sequence augmentation, domain adversarial training.
struct StrategyFlags {
  bool dn = true;
  bool cl = true;
  bool ca = true;
  bool sa = true;
  bool da = true;

  /// Throws InputError when CL or CA is requested without DN.
  void validate() const;
  bool operator==(const StrategyFlags&) const = default;
};

struct TrainConfig {
  int epochs = 30;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int batch_bags = 1;
  std::uint64_t seed_encoder = 1;
  std::uint64_t seed_branch1 = 2;
  std::uint64_t seed_branch2 = 3;
  std::uint64_t seed_domain = 4;
  std::uint64_t seed_order = 5;
  LossWeights weights;
  StrategyFlags flags;
  int bag_size = 10;  // K
  int window = 200;   // M
  EncoderConfig encoder;
  int embed_dim = 128;
  int attn_dim = 64;
  int domain_hidden = 64;

  void validate() const;
  ModelMode model_mode() const;
  DcamilConfig model_config(int domains) const;
  /// Every seed derived from one run seed.
  TrainConfig with_seed(std::uint64_t seed) const;
  /// 100 epochs, learning rate 1e-4, residual encoder.
  static TrainConfig paper_scale();
};

/// A bag after the encoder's fixed preprocessing, stored compactly.
/// `input` is channels x (K * side * side) in the Activation layout.
struct PreparedBag {
  std::string id;
  int label = 0;
  int domain = 0;
  int side = 0;
  Eigen::MatrixXf input;
  std::vector<WindowOrigin> positions;
  std::optional<std::vector<int>> instance_labels;

  int size() const { return static_cast<int>(positions.size()); }
  Activation activation() const;
  /// out[i] = in[perm[i]] for inputs, positions and instance labels.
  PreparedBag permuted(std::span<const std::size_t> perm) const;
  bool operator==(const PreparedBag&) const = default;
};

PreparedBag prepare_bag(const InstanceBag& bag, const EncoderConfig& encoder);

struct BagSet {
  std::vector<PreparedBag> train;
  std::vector<PreparedBag> val;
  std::vector<PreparedBag> test;
  int domains = 1;

  const std::vector<PreparedBag>& split(Split s) const;
  std::vector<PreparedBag>& split(Split s);
};

enum class InstanceSource {
  gaze,     // top-K windows of the gaze map
  uniform,  // K grid windows drawn uniformly, gaze ignored
};
std::string to_string(InstanceSource s);
InstanceSource parse_instance_source(const std::string& name);

struct BagRecipe {
  InstanceSource source = InstanceSource::gaze;
  int bag_size = 10;
  int window = 200;
  std::uint64_t seed = 0;  // uniform selection only
};

/// Bag of one image. Instance labels are attached when `lesions` is given.
InstanceBag build_bag(const Image8& rgb, const GazeMap& gaze, const DatasetEntry& entry,
                      const BagRecipe& recipe, const std::vector<LesionSpec>* lesions);

/// Generates the dataset in memory once and builds one BagSet per recipe.
std::vector<BagSet> synth_bag_sets(const DatasetConfig& config,
                                   std::span<const BagRecipe> recipes,
                                   const EncoderConfig& encoder);

/// Builds bags from a dataset written by gen_dataset.
BagSet load_bag_set(const DatasetManifest& manifest, const BagRecipe& recipe,
                    const EncoderConfig& encoder, int domains);

/// Bags from a bag cache, split according to the dataset manifest.
BagSet load_cached_bag_set(const DatasetManifest& manifest, const BagCache& cache,
                           const EncoderConfig& encoder, int domains);

struct LossParts {
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  double total = 0.0;
};

/// The training objective over one batch of bags. When `grad` is given the
/// parameter gradients are accumulated into it; the encoder receives the
/// domain gradient through the reversal.
LossParts evaluate_objective(const DcamilParams& params, const TrainConfig& config,
                             std::span<const PreparedBag* const> batch, DcamilParams* grad,
                             Warnings* warnings = nullptr);

/// Heavy-ball SGD: v = momentum * v + g; theta -= lr * v.
class Sgd {
 public:
  Sgd(const DcamilParams& params, double learning_rate, double momentum);
  void step(DcamilParams& params, const DcamilParams& grad);

 private:
  double lr_;
  double momentum_;
  DcamilParams velocity_;
};

/// Bag visiting order of one epoch (epochs are 1-based).
std::vector<std::size_t> epoch_order(std::size_t bags, const TrainConfig& config, int epoch);
/// The bag as presented in a given epoch; permuted when SA is on.
PreparedBag training_view(const PreparedBag& bag, std::size_t index, const TrainConfig& config,
                          int epoch);

struct EpochLog {
  int epoch = 0;
  LossParts loss;  // means over the epoch's training batches
  double val_acc_h1 = 0.0;
  std::optional<double> val_acc_h2;
};

struct RunRecord {
  TrainConfig config;
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  int best_head = 0;  // by validation accuracy at best_epoch
  DcamilParams best_params;
  std::vector<HeadMetrics> test;  // one entry per head
  std::vector<std::string> warnings;

  const HeadMetrics& best_test() const { return test.at(static_cast<std::size_t>(best_head)); }
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Throws DivergenceError on a non-finite loss or parameter.
RunRecord train(const BagSet& data, const TrainConfig& config,
                const EpochCallback& on_epoch = {});

struct Predictions {
  std::vector<double> p1;  // positive-class probability, head 1
  std::vector<double> p2;  // empty for a single-branch model
  std::vector<int> labels;
  int heads() const { return p2.empty() ? 1 : 2; }
};

Predictions predict(const DcamilParams& params, ModelMode mode,
                    std::span<const PreparedBag> bags);
/// Per-head metrics; throws InputError for an empty split.
std::vector<HeadMetrics> evaluate(const DcamilParams& params, ModelMode mode,
                                  std::span<const PreparedBag> bags);

struct AblationVariant {
  std::string name;
  StrategyFlags flags;
};
/// none / DN / DN+CL / DN+CL+CA, with SA and DA on.
std::vector<AblationVariant> strategy_grid();
/// full / without SA / without DA / without both, with DN, CL, CA on.
std::vector<AblationVariant> module_grid();

struct RunSummary {
  std::uint64_t seed = 0;
  int best_epoch = 0;
  int best_head = 0;
  std::vector<HeadMetrics> test;
};

struct AblationRow {
  AblationVariant variant;
  std::vector<RunSummary> runs;
  /// Mean of the selected head's metric over seeds.
  double mean(double HeadMetrics::*metric) const;
};

RunSummary summarize(const RunRecord& record, std::uint64_t seed);

std::vector<AblationRow> run_ablation(const BagSet& data, const TrainConfig& base,
                                      std::span<const AblationVariant> grid,
                                      std::span<const std::uint64_t> seeds,
                                      const std::function<void(const AblationRow&)>& on_row = {});

/// CSV: table,variant,DN,CL,CA,SA,DA,seed,head,accuracy,recall,precision,f1,auc.
/// Per-run rows use head H1/H2; a `mean` row per variant reports the
/// validation-selected head.
void write_ablation_csv(const std::filesystem::path& path, const std::string& table,
                        std::span<const AblationRow> rows, bool append = false);

struct AttentionRow {
  int instance = 0;
  WindowOrigin position;
  double att1 = 0.0;
  std::optional<double> att2;
  int label = 0;  // y_ik
  double p1 = 0.0;
  std::optional<double> p2;
};

/// Per-instance attention of one bag; throws InputError without instance labels.
std::vector<AttentionRow> attention_report(const DcamilParams& params, ModelMode mode,
                                           const PreparedBag& bag);
/// CSV: bag_id,instance,row,col,att1,att2,y,p1,p2.
void write_attention_csv(const std::filesystem::path& path, const std::string& bag_id,
                         std::span<const AttentionRow> rows, bool append = false);

/// epoch,L1,L2,L3,total,val_acc_h1,val_acc_h2 (val_acc_h2 empty without DN).
void write_training_log(const std::filesystem::path& path, std::span<const EpochLog> epochs);
void write_metrics_json(const std::filesystem::path& path, const RunRecord& record);

}  // namespace gazemil
