#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "gazemil/errors.hpp"
#include "gazemil/metrics.hpp"
#include "gazemil/rng.hpp"
#include "gazemil/train_eval.hpp"

namespace gazemil {
namespace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Metrics

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      den += 1.0;
      num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return num / den;
}

TEST(RocAuc, MatchesPairwiseOracleWithTies) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> level(0, 9), bit(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 30;
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = level(rng) / 10.0;
      y[static_cast<std::size_t>(i)] = i < 2 ? i : bit(rng);
    }
    EXPECT_NEAR(roc_auc(s, y).auc, pairwise_auc(s, y), 1e-12);
  }
}

TEST(RocAuc, HandExamples) {
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_NEAR(roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, y).auc, 0.75, 1e-15);
  EXPECT_EQ(roc_auc(std::vector<double>{0.1, 0.2, 0.3, 0.4}, y).auc, 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.4, 0.3, 0.2, 0.1}, y).auc, 0.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y).auc, 0.5);
}

TEST(RocAuc, CurveRunsFromOriginToOneMonotonically) {
  const std::vector<double> s{0.9, 0.1, 0.7, 0.7, 0.3, 0.6};
  const std::vector<int> y{1, 0, 0, 1, 1, 0};
  const RocCurve roc = roc_auc(s, y);
  ASSERT_GE(roc.points.size(), 2u);
  EXPECT_EQ(roc.points.front().fpr, 0.0);
  EXPECT_EQ(roc.points.front().tpr, 0.0);
  EXPECT_TRUE(std::isinf(roc.points.front().threshold));
  EXPECT_EQ(roc.points.back().fpr, 1.0);
  EXPECT_EQ(roc.points.back().tpr, 1.0);
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    EXPECT_GE(roc.points[i].fpr, roc.points[i - 1].fpr);
    EXPECT_GE(roc.points[i].tpr, roc.points[i - 1].tpr);
    EXPECT_LT(roc.points[i].threshold, roc.points[i - 1].threshold);
  }
}

TEST(RocAuc, SingleClassIsRejected) {
  EXPECT_THROW(roc_auc(std::vector<double>{0.2, 0.3}, std::vector<int>{1, 1}), InputError);
  const HeadMetrics m = head_metrics(std::vector<double>{0.2, 0.7}, std::vector<int>{0, 0});
  EXPECT_TRUE(std::isnan(m.auc));
  EXPECT_EQ(m.accuracy, 0.5);
}

TEST(Confusion, AllPredictedPositive) {
  const std::vector<double> s{0.9, 0.9, 0.5, 0.6};
  const std::vector<int> y{1, 0, 1, 0};
  const Confusion c = confusion(s, y);
  EXPECT_EQ(c.tp, 2);
  EXPECT_EQ(c.fp, 2);
  EXPECT_EQ(recall(c), 1.0);
  EXPECT_EQ(precision(c), 0.5);
  EXPECT_NEAR(f1_score(c), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(accuracy(c), 0.5);
}

TEST(Confusion, ZeroDenominatorsReportZero) {
  const Confusion c = confusion(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0});
  EXPECT_EQ(c.tn, 2);
  EXPECT_EQ(precision(c), 0.0);
  EXPECT_EQ(recall(c), 0.0);
  EXPECT_EQ(f1_score(c), 0.0);
  EXPECT_EQ(accuracy(c), 1.0);
  EXPECT_EQ(accuracy(Confusion{}), 0.0);
}

TEST(HeadMetrics, ConsistentOnRandomScores) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s;
    std::vector<int> y{0, 1};
    s = {u(rng), u(rng)};
    for (int i = 0; i < 20; ++i) {
      s.push_back(u(rng));
      y.push_back(u(rng) < 0.5);
    }
    const HeadMetrics m = head_metrics(s, y);
    EXPECT_EQ(m.counts.total(), static_cast<int>(s.size()));
    for (double v : {m.accuracy, m.precision, m.recall, m.f1, m.auc}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    if (m.precision + m.recall > 0) {
      EXPECT_NEAR(m.f1, 2 * m.precision * m.recall / (m.precision + m.recall), 1e-12);
    }
  }
  EXPECT_THROW(head_metrics(std::vector<double>{}, std::vector<int>{}), InputError);
}

TEST(RocCsv, HeaderAndEndpoints) {
  const RocCurve roc = roc_auc(std::vector<double>{0.1, 0.8, 0.4}, std::vector<int>{0, 1, 1});
  const fs::path path = fs::temp_directory_path() / "gazemil_test_roc.csv";
  write_roc_csv(path, roc);
  std::ifstream is(path);
  std::string header, first, line, last;
  std::getline(is, header);
  std::getline(is, first);
  while (std::getline(is, line)) last = line;
  EXPECT_EQ(header, "fpr,tpr,threshold");
  EXPECT_EQ(first.substr(0, 4), "0,0,");
  EXPECT_EQ(last.substr(0, 4), "1,1,");
  fs::remove(path);
}

// ---------------------------------------------------------------------------
// Configuration

TEST(StrategyFlags, ContrastAndCrossNeedDualNetwork) {
  EXPECT_THROW((StrategyFlags{false, true, false, true, true}.validate()), InputError);
  EXPECT_THROW((StrategyFlags{false, false, true, true, true}.validate()), InputError);
  EXPECT_NO_THROW((StrategyFlags{false, false, false, false, false}.validate()));
  EXPECT_NO_THROW((StrategyFlags{true, false, false, true, true}.validate()));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.weights.lambda_grl = -1.0;
  EXPECT_THROW(c.validate(), InputError);
}

TEST(TrainConfig, ModesFollowFlags) {
  TrainConfig c;
  EXPECT_TRUE(c.model_mode().dual);
  EXPECT_EQ(c.model_mode().attention, AttentionMode::cross);
  c.flags.ca = false;
  EXPECT_EQ(c.model_mode().attention, AttentionMode::independent);
  c.flags = {false, false, false, true, true};
  EXPECT_FALSE(c.model_mode().dual);
}

TEST(TrainConfig, WithSeedDerivesDistinctDeterministicSeeds) {
  const TrainConfig a = TrainConfig{}.with_seed(7), b = TrainConfig{}.with_seed(7);
  const TrainConfig c = TrainConfig{}.with_seed(8);
  const std::set<std::uint64_t> seeds{a.seed_encoder, a.seed_branch1, a.seed_branch2,
                                      a.seed_domain, a.seed_order};
  EXPECT_EQ(seeds.size(), 5u);
  EXPECT_EQ(a.seed_branch1, b.seed_branch1);
  EXPECT_EQ(a.seed_order, b.seed_order);
  EXPECT_NE(a.seed_encoder, c.seed_encoder);
}

TEST(TrainConfig, PaperScale) {
  const TrainConfig p = TrainConfig::paper_scale();
  EXPECT_EQ(p.epochs, 100);
  EXPECT_EQ(p.learning_rate, 1e-4);
  EXPECT_EQ(p.encoder.preset, EncoderPreset::resnet18);
}

// ---------------------------------------------------------------------------
// Objective and optimizer

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.encoder.output_dim = 8;
  c.encoder.small_channels = {2, 3, 4};
  c.encoder.input_pool = 8;
  c.embed_dim = 4;
  c.attn_dim = 3;
  c.domain_hidden = 5;
  c.bag_size = 3;
  c.window = 100;
  return c;
}

PreparedBag random_bag(const TrainConfig& c, int k, int label, int domain, std::uint64_t seed) {
  PreparedBag b;
  b.id = "bag" + std::to_string(seed);
  b.label = label;
  b.domain = domain;
  b.side = 224 / c.encoder.input_pool;
  b.input.resize(3, static_cast<Eigen::Index>(k) * b.side * b.side);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (Eigen::Index i = 0; i < b.input.size(); ++i) b.input.data()[i] = u(rng);
  for (int i = 0; i < k; ++i) b.positions.push_back({0, 50 * i});
  b.instance_labels = std::vector<int>(static_cast<std::size_t>(k), 0);
  if (label == 1) (*b.instance_labels)[0] = 1;
  return b;
}

// With a negative reversal strength the accumulated gradient is the true
// derivative of the reported total, so finite differences apply directly.
TEST(EvaluateObjective, GradientMatchesFiniteDifferencesOfTotal) {
  TrainConfig c = tiny_train_config();
  c.weights = {1.0, 0.3, 0.2, 0.5, -1.0};
  DcamilParams p = DcamilParams::make(c.model_config(3));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> jitter(0.0, 0.02);
  for (auto& t : p.tensors()) {
    for (double& v : t.values) v += jitter(rng);
  }
  const PreparedBag b0 = random_bag(c, 3, 1, 2, 10), b1 = random_bag(c, 3, 0, 0, 11);
  const std::vector<const PreparedBag*> batch{&b0, &b1};
  DcamilParams grad = p.zeros_like();
  const LossParts parts = evaluate_objective(p, c, batch, &grad);
  EXPECT_NEAR(parts.total, total_loss(parts.l1, parts.l2, parts.l3, c.weights), 1e-12);
  EXPECT_GT(parts.l2, 0.0);
  EXPECT_GT(parts.l3, 0.0);

  auto refs = p.tensors();
  auto grefs = grad.tensors();
  const double step = 1e-5;
  int checked = 0;
  for (std::size_t t = 0; t < refs.size(); ++t) {
    const std::size_t n = refs[t].values.size();
    for (std::size_t i = 0; i < n; i += std::max<std::size_t>(1, n / 6)) {
      double& v = refs[t].values[i];
      const double keep = v;
      v = keep + step;
      const double fp = evaluate_objective(p, c, batch, nullptr).total;
      v = keep - step;
      const double fm = evaluate_objective(p, c, batch, nullptr).total;
      v = keep;
      const double numeric = (fp - fm) / (2 * step);
      const double analytic = grefs[t].values[i];
      EXPECT_LT(std::abs(numeric - analytic) /
                    std::max(std::abs(numeric) + std::abs(analytic), 1e-6),
                1e-4)
          << refs[t].name << '[' << i << "] analytic " << analytic << " numeric " << numeric;
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}

Matrix encoder_grad(const DcamilParams& grad) {
  std::vector<double> v;
  for (const auto& t : grad.tensors()) {
    if (t.name.rfind("encoder", 0) == 0) v.insert(v.end(), t.values.begin(), t.values.end());
  }
  return Eigen::Map<Matrix>(v.data(), static_cast<Eigen::Index>(v.size()), 1);
}

TEST(EvaluateObjective, ReversalFlipsOnlyTheEncoderSideOfTheDomainGradient) {
  TrainConfig c = tiny_train_config();
  c.weights = {0.0, 0.0, 1.0, 0.5, 1.0};
  const DcamilParams p = DcamilParams::make(c.model_config(3));
  const PreparedBag b = random_bag(c, 3, 1, 1, 12);
  const std::vector<const PreparedBag*> batch{&b};
  DcamilParams g_pos = p.zeros_like(), g_neg = p.zeros_like();
  evaluate_objective(p, c, batch, &g_pos);
  c.weights.lambda_grl = -1.0;
  evaluate_objective(p, c, batch, &g_neg);
  const Matrix e_pos = encoder_grad(g_pos), e_neg = encoder_grad(g_neg);
  EXPECT_GT(e_pos.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT((e_pos + e_neg).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(g_pos.domain.w3, g_neg.domain.w3);
}

TEST(EvaluateObjective, EncoderReceivesTheSecondHead) {
  TrainConfig c = tiny_train_config();
  c.weights = {1.0, 0.0, 0.0, 0.5, 1.0};
  c.flags = {true, false, false, true, false};
  const DcamilParams p = DcamilParams::make(c.model_config(3));
  const PreparedBag b = random_bag(c, 3, 1, 0, 13);
  const std::vector<const PreparedBag*> batch{&b};
  DcamilParams dual = p.zeros_like(), single = p.zeros_like();
  evaluate_objective(p, c, batch, &dual);
  TrainConfig s = c;
  s.flags.dn = false;
  evaluate_objective(p, s, batch, &single);
  EXPECT_GT((encoder_grad(dual) - encoder_grad(single)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_GT(dual.branch[1].cls_w.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(single.branch[1].cls_w.cwiseAbs().maxCoeff(), 0.0);
}

TEST(EvaluateObjective, DisabledStrategiesContributeNothing) {
  TrainConfig c = tiny_train_config();
  c.flags = {true, false, true, true, false};
  const DcamilParams p = DcamilParams::make(c.model_config(3));
  const PreparedBag b = random_bag(c, 3, 0, 0, 14);
  const std::vector<const PreparedBag*> batch{&b};
  DcamilParams g = p.zeros_like();
  const LossParts parts = evaluate_objective(p, c, batch, &g);
  EXPECT_EQ(parts.l2, 0.0);
  EXPECT_EQ(parts.l3, 0.0);
  EXPECT_EQ(parts.total, c.weights.alpha * parts.l1);
  EXPECT_EQ(g.domain.w1.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Sgd, HeavyBallUpdate) {
  TrainConfig c = tiny_train_config();
  DcamilParams p = DcamilParams::make(c.model_config(2));
  const DcamilParams start = p;
  DcamilParams g = p.zeros_like();
  g.branch[0].cls_b(1) = 2.0;
  Sgd sgd(p, 0.1, 0.9);
  sgd.step(p, g);
  EXPECT_NEAR(p.branch[0].cls_b(1), start.branch[0].cls_b(1) - 0.2, 1e-15);
  sgd.step(p, g);
  // v = 0.9 * 2 + 2 = 3.8
  EXPECT_NEAR(p.branch[0].cls_b(1), start.branch[0].cls_b(1) - 0.2 - 0.38, 1e-15);
  EXPECT_EQ(p.branch[0].cls_b(0), start.branch[0].cls_b(0));
}

TEST(EpochOrder, DeterministicPermutationThatChangesPerEpoch) {
  const TrainConfig c;
  const auto a = epoch_order(50, c, 1);
  EXPECT_EQ(a, epoch_order(50, c, 1));
  EXPECT_NE(a, epoch_order(50, c, 2));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(TrainingView, SequenceAugmentationOnlyWhenEnabled) {
  TrainConfig c = tiny_train_config();
  const PreparedBag b = random_bag(c, 6, 1, 0, 15);
  c.flags.sa = false;
  EXPECT_EQ(training_view(b, 3, c, 1), b);
  c.flags.sa = true;
  std::set<std::vector<int>> orders;
  for (int epoch = 1; epoch <= 8; ++epoch) {
    const PreparedBag v = training_view(b, 3, c, epoch);
    EXPECT_EQ(v, training_view(b, 3, c, epoch));
    std::vector<int> cols;
    for (const auto& p : v.positions) cols.push_back(p.col);
    orders.insert(cols);
    auto sorted = cols;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, (std::vector<int>{0, 50, 100, 150, 200, 250}));
  }
  EXPECT_GE(orders.size(), 2u);
}

InstanceBag image_bag(int k) {
  InstanceBag bag;
  bag.bag_id = "img";
  bag.label = 1;
  bag.window = 100;
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int i = 0; i < k; ++i) {
    Image8 img(kPatchSize, kPatchSize, 3);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(byte(rng));
    bag.instances.emplace_back(std::move(img));
    bag.positions.push_back({10 * i, 20 * i});
  }
  bag.instance_labels = std::vector<int>(static_cast<std::size_t>(k), 0);
  (*bag.instance_labels)[1] = 1;
  return bag;
}

TEST(PreparedBag, PermutedCommutesWithSequenceAugment) {
  const EncoderConfig enc = tiny_train_config().encoder;
  const InstanceBag bag = image_bag(5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto perm = draw_permutation(5, seed);
    EXPECT_EQ(prepare_bag(sequence_augment(bag, seed), enc), prepare_bag(bag, enc).permuted(perm));
  }
}

// ---------------------------------------------------------------------------
// Training on a small synthetic problem

const std::vector<BagSet>& tiny_sets() {
  static const std::vector<BagSet> sets = [] {
    DatasetConfig d = dataset_preset("desk-dr");
    d.synth.width = d.synth.height = 320;
    d.synth.disc_radius = 22.0;
    d.sigma = 24.0;
    d.window = 80;
    d.bag_size = 4;
    d.train = {8, 8};
    d.val = {4, 4};
    d.test = {4, 4};
    d.domains = 2;
    const std::vector<BagRecipe> recipes{{InstanceSource::gaze, 4, 80, 0},
                                         {InstanceSource::uniform, 4, 80, 7}};
    return synth_bag_sets(d, recipes, tiny_train_config().encoder);
  }();
  return sets;
}

TrainConfig tiny_run_config(int epochs) {
  TrainConfig c = tiny_train_config();
  c.encoder.output_dim = 16;
  c.encoder.small_channels = {4, 8, 8};
  c.embed_dim = 16;
  c.attn_dim = 8;
  c.bag_size = 4;
  c.window = 80;
  c.epochs = epochs;
  return c;
}

TEST(SynthBagSets, ShapesAndLabels) {
  const BagSet& s = tiny_sets()[0];
  EXPECT_EQ(s.train.size(), 16u);
  EXPECT_EQ(s.val.size(), 8u);
  EXPECT_EQ(s.domains, 2);
  for (const auto& b : s.train) {
    EXPECT_EQ(b.size(), 4);
    ASSERT_TRUE(b.instance_labels.has_value());
    if (b.label == 0) {
      EXPECT_EQ(std::count(b.instance_labels->begin(), b.instance_labels->end(), 1), 0);
    }
  }
  EXPECT_NE(tiny_sets()[0].train[0].positions, tiny_sets()[1].train[0].positions);
}

TEST(SynthBagSets, DiskRoundTripBuildsIdenticalBags) {
  DatasetConfig d = dataset_preset("desk-dr");
  d.synth.width = d.synth.height = 320;
  d.synth.disc_radius = 22.0;
  d.sigma = 24.0;
  d.window = 80;
  d.bag_size = 4;
  d.train = {2, 2};
  d.val = {1, 1};
  d.test = {1, 1};
  d.domains = 2;
  const EncoderConfig enc = tiny_train_config().encoder;
  const std::vector<BagRecipe> recipes{{InstanceSource::gaze, 4, 80, 0},
                                       {InstanceSource::uniform, 4, 80, 7}};
  const auto memory = synth_bag_sets(d, recipes, enc);
  const fs::path out = fs::temp_directory_path() / "gazemil_test_roundtrip";
  fs::remove_all(out);
  gen_dataset(d, out);
  const DatasetManifest m = DatasetManifest::read(out / "manifest.csv");
  for (std::size_t r = 0; r < recipes.size(); ++r) {
    const BagSet disk = load_bag_set(m, recipes[r], enc, 2);
    EXPECT_EQ(disk.train, memory[r].train) << to_string(recipes[r].source);
    EXPECT_EQ(disk.test, memory[r].test) << to_string(recipes[r].source);
  }
  fs::remove_all(out);
}

TEST(Train, DeterministicAcrossRuns) {
  const TrainConfig c = tiny_run_config(2);
  const RunRecord a = train(tiny_sets()[0], c);
  const RunRecord b = train(tiny_sets()[0], c);
  ASSERT_EQ(a.epochs.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) {
    EXPECT_EQ(a.epochs[e].loss.total, b.epochs[e].loss.total);
    EXPECT_EQ(a.epochs[e].val_acc_h1, b.epochs[e].val_acc_h1);
  }
  EXPECT_EQ(a.best_epoch, b.best_epoch);
  EXPECT_EQ(a.best_test().auc, b.best_test().auc);
}

TEST(Train, BestEpochIsEarliestMaximumOfEitherHead) {
  const RunRecord r = train(tiny_sets()[0], tiny_run_config(6));
  double best = -1.0;
  int best_epoch = 0, best_head = 0;
  for (const auto& e : r.epochs) {
    const double h2 = e.val_acc_h2.value_or(-1.0);
    const double acc = std::max(e.val_acc_h1, h2);
    if (acc > best) {
      best = acc;
      best_epoch = e.epoch;
      best_head = h2 > e.val_acc_h1 ? 1 : 0;
    }
  }
  EXPECT_EQ(r.best_epoch, best_epoch);
  EXPECT_EQ(r.best_head, best_head);
  ASSERT_EQ(r.test.size(), 2u);
  // The stored best model reproduces the selection-time validation accuracy.
  const auto val = evaluate(r.best_params, r.config.model_mode(), tiny_sets()[0].val);
  EXPECT_EQ(val[static_cast<std::size_t>(r.best_head)].accuracy, best);
}

TEST(Train, ClassificationLossDecreases) {
  TrainConfig c = tiny_run_config(20);
  c.flags = {true, false, true, false, false};
  const RunRecord r = train(tiny_sets()[0], c);
  auto mean_l1 = [&](std::size_t from) {
    return (r.epochs[from].loss.l1 + r.epochs[from + 1].loss.l1 + r.epochs[from + 2].loss.l1) / 3;
  };
  EXPECT_LT(mean_l1(17), mean_l1(0) - 0.05);
}

TEST(Train, SingleBranchReportsOneHead) {
  TrainConfig c = tiny_run_config(1);
  c.flags = {false, false, false, true, true};
  const RunRecord r = train(tiny_sets()[0], c);
  EXPECT_FALSE(r.epochs[0].val_acc_h2.has_value());
  EXPECT_EQ(r.test.size(), 1u);
  EXPECT_EQ(r.best_head, 0);
}

TEST(Train, RejectsInvalidSetups) {
  TrainConfig c = tiny_run_config(0);
  EXPECT_THROW(train(tiny_sets()[0], c), InputError);
  c = tiny_run_config(1);
  c.flags = {false, true, false, true, true};
  EXPECT_THROW(train(tiny_sets()[0], c), InputError);
  BagSet empty_val = tiny_sets()[0];
  empty_val.val.clear();
  EXPECT_THROW(train(empty_val, tiny_run_config(1)), InputError);
  BagSet bad_domain = tiny_sets()[0];
  bad_domain.domains = 1;
  EXPECT_THROW(train(bad_domain, tiny_run_config(1)), InputError);
}

TEST(Train, DivergenceIsReported) {
  BagSet poisoned = tiny_sets()[0];
  poisoned.train[3].input(0, 5) = std::numeric_limits<float>::quiet_NaN();
  try {
    train(poisoned, tiny_run_config(3));
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.epoch(), 1);
  }
}

TEST(Evaluate, EmptySplitIsRejected) {
  const TrainConfig c = tiny_run_config(1);
  const DcamilParams p = DcamilParams::make(c.model_config(2));
  EXPECT_THROW(evaluate(p, c.model_mode(), std::vector<PreparedBag>{}), InputError);
}

TEST(Predict, PermutingABagLeavesPredictionsUnchanged) {
  const TrainConfig c = tiny_run_config(1);
  const DcamilParams p = DcamilParams::make(c.model_config(2));
  const PreparedBag& b = tiny_sets()[0].test[0];
  const std::vector<PreparedBag> one{b}, perm{b.permuted(draw_permutation(4, 3))};
  const Predictions x = predict(p, c.model_mode(), one), y = predict(p, c.model_mode(), perm);
  EXPECT_NEAR(x.p1[0], y.p1[0], 1e-5);
  EXPECT_NEAR(x.p2[0], y.p2[0], 1e-5);
}

// ---------------------------------------------------------------------------
// Reports

TEST(AttentionReport, RowsPerInstanceAndDegenerateBags) {
  const TrainConfig c = tiny_run_config(1);
  const DcamilParams p = DcamilParams::make(c.model_config(2));
  const PreparedBag& b = tiny_sets()[0].test.back();
  const auto rows = attention_report(p, c.model_mode(), b);
  ASSERT_EQ(rows.size(), 4u);
  double s1 = 0, s2 = 0;
  for (const auto& r : rows) {
    s1 += r.att1;
    s2 += r.att2.value();
  }
  EXPECT_NEAR(s1, 1.0, 1e-12);
  EXPECT_NEAR(s2, 1.0, 1e-12);

  const PreparedBag single = random_bag(c, 1, 1, 0, 20);
  const auto one = attention_report(p, c.model_mode(), single);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_NEAR(one[0].att1, 1.0, 1e-15);

  PreparedBag unlabeled = b;
  unlabeled.instance_labels.reset();
  EXPECT_THROW(attention_report(p, c.model_mode(), unlabeled), InputError);
}

TEST(AttentionReport, IdenticalInstancesGetUniformWeights) {
  const TrainConfig c = tiny_run_config(1);
  const DcamilParams p = DcamilParams::make(c.model_config(2));
  PreparedBag b = random_bag(c, 4, 0, 0, 21);
  const Eigen::Index block = static_cast<Eigen::Index>(b.side) * b.side;
  for (int i = 1; i < 4; ++i) b.input.middleCols(i * block, block) = b.input.leftCols(block);
  for (const auto& r : attention_report(p, c.model_mode(), b)) EXPECT_NEAR(r.att1, 0.25, 1e-9);
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream is(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) lines.push_back(line);
  return lines;
}

TEST(Reports, TrainingLogAndAblationCsv) {
  TrainConfig c = tiny_run_config(2);
  c.flags = {false, false, false, true, true};
  const RunRecord r = train(tiny_sets()[0], c);
  const fs::path dir = fs::temp_directory_path() / "gazemil_test_reports";
  fs::create_directories(dir);
  write_training_log(dir / "log.csv", r.epochs);
  const auto log = read_lines(dir / "log.csv");
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[0], "epoch,L1,L2,L3,total,val_acc_h1,val_acc_h2");
  EXPECT_EQ(log[1].back(), ',');

  AblationRow row{{"none", c.flags}, {summarize(r, 0), summarize(r, 1)}};
  EXPECT_EQ(row.mean(&HeadMetrics::auc), r.best_test().auc);
  const std::vector<AblationRow> rows{row};
  write_ablation_csv(dir / "ablation.csv", "strategy", rows);
  const auto csv = read_lines(dir / "ablation.csv");
  ASSERT_EQ(csv.size(), 4u);
  EXPECT_EQ(csv[0], "table,variant,DN,CL,CA,SA,DA,seed,head,accuracy,recall,precision,f1,auc");
  EXPECT_EQ(csv[1].substr(0, 24), "strategy,none,0,0,0,1,1,");
  EXPECT_NE(csv[3].find("mean"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Ablation, GridsMatchTheirDefinitions) {
  const auto s = strategy_grid();
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[0].flags, (StrategyFlags{false, false, false, true, true}));
  EXPECT_EQ(s[3].flags, (StrategyFlags{true, true, true, true, true}));
  const auto m = module_grid();
  ASSERT_EQ(m.size(), 4u);
  EXPECT_EQ(m[3].flags, (StrategyFlags{true, true, true, false, false}));
  for (const auto& v : s) EXPECT_NO_THROW(v.flags.validate());
}

}  // namespace
}  // namespace gazemil
