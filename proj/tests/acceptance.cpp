// Acceptance run: oracle, gradient and invariant suites plus directional
// replication on the desk-scale synthetic preset. Prints one PASS/FAIL line
// per criterion and exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gazemil/bag_builder.hpp"
#include "gazemil/gaze_render.hpp"
#include "gazemil/losses.hpp"
#include "gazemil/metrics.hpp"
#include "gazemil/model.hpp"
#include "gazemil/rng.hpp"
#include "gazemil/synthdata.hpp"
#include "gazemil/train_eval.hpp"

namespace {

using namespace gazemil;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  int id = 0;
  bool pass = false;
  std::string detail;
};

std::vector<Outcome> g_outcomes;

void report(int id, bool pass, const std::string& detail) {
  g_outcomes.push_back({id, pass, detail});
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

void info(const std::string& line) {
  std::printf("info: %s\n", line.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// ---------------------------------------------------------------------------
// 1. Window scoring and top-K selection against enumeration.

void criterion_window_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> size(16, 64);
    const int w = size(rng), h = size(rng);
    GazeMap map;
    map.width = w;
    map.height = h;
    map.values.resize(static_cast<std::size_t>(w) * h);
    if (trial % 2 == 0) {
      // Few levels: many tied windows.
      std::uniform_int_distribution<int> level(0, 2);
      for (auto& v : map.values) v = level(rng);
    } else {
      std::uniform_int_distribution<int> px(0, w - 1), py(0, h - 1);
      std::vector<FixationPoint> fix;
      for (int i = 0; i < 1 + trial % 7; ++i) fix.push_back({px(rng), py(rng)});
      map = render_quantized_levels(fix, w, h, {4.0 + trial % 5});
    }
    std::uniform_int_distribution<int> half(1, std::min(w, h) / 2);
    const int m = 2 * half(rng);

    // Enumeration: every origin on the half-window grid, integer sums.
    std::vector<WindowScore> all;
    for (int row = 0; row + m <= h; row += m / 2) {
      for (int col = 0; col + m <= w; col += m / 2) {
        std::int64_t sum = 0;
        for (int y = row; y < row + m; ++y) {
          for (int x = col; x < col + m; ++x) {
            sum += static_cast<std::int64_t>(map.values[static_cast<std::size_t>(y) * w + x]);
          }
        }
        all.push_back({row, col, static_cast<double>(sum) / (static_cast<double>(m) * m)});
      }
    }
    const auto scored = score_windows(map, m);
    if (scored != all) ++mismatches;

    std::uniform_int_distribution<int> kd(1, static_cast<int>(all.size()));
    const int k = kd(rng);
    // Repeated argmax under (score desc, row asc, col asc).
    std::vector<WindowScore> pool = all, expect;
    for (int i = 0; i < k; ++i) {
      auto best = pool.begin();
      for (auto it = pool.begin(); it != pool.end(); ++it) {
        if (it->score > best->score ||
            (it->score == best->score &&
             (it->row < best->row || (it->row == best->row && it->col < best->col)))) {
          best = it;
        }
      }
      expect.push_back(*best);
      pool.erase(best);
    }
    if (select_top_k(scored, k) != expect) ++mismatches;
  }
  const double s = seconds_since(t0);
  report(1, mismatches == 0 && s < 10.0,
         fmt("100 maps, %d mismatches, %.2f s (limit 10 s)", mismatches, s));
}

// ---------------------------------------------------------------------------
// 2. ROC AUC against the pairwise definition.

void criterion_auc_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 60;
    std::uniform_int_distribution<int> level(0, 4 + trial % 20), bit(0, 1);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      s[static_cast<std::size_t>(i)] = level(rng) / 8.0;
      y[static_cast<std::size_t>(i)] = i < 2 ? i : bit(rng);
    }
    std::int64_t twice = 0, pos = 0, neg = 0;
    for (int v : y) (v ? pos : neg) += 1;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (y[static_cast<std::size_t>(i)] != 1 || y[static_cast<std::size_t>(j)] != 0) continue;
        const double a = s[static_cast<std::size_t>(i)], b = s[static_cast<std::size_t>(j)];
        twice += a > b ? 2 : a == b ? 1 : 0;
      }
    }
    const double oracle = static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * neg);
    if (roc_auc(s, y).auc != oracle) ++mismatches;
  }
  const double sec = seconds_since(t0);
  report(2, mismatches == 0 && sec < 10.0,
         fmt("200 score sets with ties, %d mismatches, %.2f s (limit 10 s)", mismatches, sec));
}

// ---------------------------------------------------------------------------
// 3. Contrastive loss against term-by-term evaluation.

void criterion_contrastive_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  double worst = 0.0;
  int cases = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 2 + trial % 5;
    const int d = 1 + trial % 8;
    const double tau = 0.05 + 0.5 * (trial % 7);
    const Matrix h1 = random_matrix(k, d, rng), h2 = random_matrix(k, d, rng);
    auto cosine = [](const Matrix& a, const Matrix& b) {
      return (a * b.transpose())(0, 0) / (a.norm() * b.norm());
    };
    // 2K embeddings; the partner of row i of view 1 is row i of view 2.
    double oracle = 0.0;
    for (int view = 0; view < 2; ++view) {
      const Matrix& own = view == 0 ? h1 : h2;
      const Matrix& other = view == 0 ? h2 : h1;
      for (int i = 0; i < k; ++i) {
        const Matrix anchor = own.row(i);
        double denom = 0.0;
        for (int j = 0; j < k; ++j) {
          denom += std::exp(cosine(anchor, other.row(j)) / tau);
          if (j != i) denom += std::exp(cosine(anchor, own.row(j)) / tau);
        }
        oracle += 0.5 * -std::log(std::exp(cosine(anchor, other.row(i)) / tau) / denom);
      }
    }
    worst = std::max(worst, std::abs(contrastive_loss(h1, h2, tau).value - oracle));
    ++cases;
  }
  const double sec = seconds_since(t0);
  report(3, worst < 1e-10 && sec < 10.0,
         fmt("%d cases, K in [2,6], max |diff| %.2e (limit 1e-10), %.2f s", cases, worst, sec));
}

// ---------------------------------------------------------------------------
// 4. Gradient suite on a toy model.

TrainConfig toy_config() {
  TrainConfig c;
  c.encoder.output_dim = 8;  // Q
  c.encoder.small_channels = {2, 3, 4};
  c.encoder.input_pool = 8;
  c.embed_dim = 4;  // d
  c.attn_dim = 3;   // a
  c.domain_hidden = 5;
  c.bag_size = 3;
  return c;
}

PreparedBag toy_bag(const TrainConfig& c, int label, int domain, std::uint64_t seed) {
  const int k = 3;
  PreparedBag b;
  b.id = "toy" + std::to_string(seed);
  b.label = label;
  b.domain = domain;
  b.side = 224 / c.encoder.input_pool;
  b.input.resize(3, static_cast<Eigen::Index>(k) * b.side * b.side);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (Eigen::Index i = 0; i < b.input.size(); ++i) b.input.data()[i] = u(rng);
  for (int i = 0; i < k; ++i) b.positions.push_back({0, 100 * i});
  return b;
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  const double step = 1e-5;
  double worst = 0.0;
  long checked = 0;
  std::map<std::string, double> group_worst;
  for (const StrategyFlags flags : {StrategyFlags{true, true, true, true, true},
                                    StrategyFlags{true, true, false, true, true},
                                    StrategyFlags{false, false, false, true, true}}) {
    TrainConfig c = toy_config();
    c.flags = flags;
    // A negative reversal strength turns the accumulated gradient into the
    // plain derivative of the reported objective.
    c.weights = {1.0, 0.5, 0.3, 0.5, -1.0};
    DcamilParams p = DcamilParams::make(c.model_config(3));
    std::mt19937_64 rng(404);
    std::normal_distribution<double> jitter(0.0, 0.02);
    for (auto& t : p.tensors()) {
      for (double& v : t.values) v += jitter(rng);
    }
    const PreparedBag b0 = toy_bag(c, 1, 2, 1), b1 = toy_bag(c, 0, 0, 2);
    const std::vector<const PreparedBag*> batch{&b0, &b1};
    DcamilParams grad = p.zeros_like();
    evaluate_objective(p, c, batch, &grad);
    auto refs = p.tensors();
    auto grefs = grad.tensors();
    for (std::size_t t = 0; t < refs.size(); ++t) {
      const std::string group = refs[t].name.substr(0, refs[t].name.find('.'));
      for (std::size_t i = 0; i < refs[t].values.size(); ++i) {
        double& v = refs[t].values[i];
        const double keep = v;
        v = keep + step;
        const double fp = evaluate_objective(p, c, batch, nullptr).total;
        v = keep - step;
        const double fm = evaluate_objective(p, c, batch, nullptr).total;
        v = keep;
        const double numeric = (fp - fm) / (2 * step);
        const double analytic = grefs[t].values[i];
        const double rel = std::abs(numeric - analytic) /
                           std::max(std::abs(numeric) + std::abs(analytic), 1e-6);
        worst = std::max(worst, rel);
        group_worst[group] = std::max(group_worst[group], rel);
        ++checked;
      }
    }
  }
  const double sec = seconds_since(t0);
  std::string groups;
  for (const auto& [g, e] : group_worst) groups += fmt(" %s %.1e", g.c_str(), e);
  report(4, worst < 1e-4 && sec < 60.0,
         fmt("%ld parameters over 3 modes, max rel err %.2e (limit 1e-4), %.1f s;%s", checked,
             worst, sec, groups.c_str()));
}

// ---------------------------------------------------------------------------
// Desk-scale data and runs shared by criteria 5 to 9.

struct DeskData {
  BagSet gaze;
  BagSet uniform;
};

DeskData make_desk_data() {
  const DatasetConfig d = dataset_preset("desk-dr");
  const std::vector<BagRecipe> recipes{{InstanceSource::gaze, d.bag_size, d.window, 0},
                                       {InstanceSource::uniform, d.bag_size, d.window, 7}};
  auto sets = synth_bag_sets(d, recipes, EncoderConfig{});
  return {std::move(sets[0]), std::move(sets[1])};
}

struct TimedRun {
  RunRecord record;
  double seconds = 0.0;
};

TimedRun run_one(const BagSet& data, StrategyFlags flags, std::uint64_t seed) {
  TrainConfig c = TrainConfig{}.with_seed(seed);
  c.flags = flags;
  const auto t0 = Clock::now();
  TimedRun r{train(data, c), 0.0};
  r.seconds = seconds_since(t0);
  const auto& m = r.record.best_test();
  info(fmt("run flags %d%d%d%d%d seed %llu: best epoch %d H%d acc %.4f f1 %.4f auc %.4f (%.0f s)",
           flags.dn, flags.cl, flags.ca, flags.sa, flags.da,
           static_cast<unsigned long long>(seed), r.record.best_epoch, r.record.best_head + 1,
           m.accuracy, m.f1, m.auc, r.seconds));
  return r;
}

// ---------------------------------------------------------------------------
// 5. Invariants.

void criterion_invariants(const DeskData& data, const DcamilParams& trained) {
  const auto t0 = Clock::now();
  std::vector<std::string> failures;

  // Permutation invariance and attention normalization on the test split.
  double worst_perm = 0.0, worst_norm = 0.0;
  const DcamilParams fresh = DcamilParams::make(TrainConfig{}.model_config(data.gaze.domains));
  for (const DcamilParams* params : {&fresh, &trained}) {
    for (const ModelMode mode : {ModelMode{true, AttentionMode::cross},
                                 ModelMode{true, AttentionMode::independent},
                                 ModelMode{false, AttentionMode::cross}}) {
      for (std::size_t i = 0; i < data.gaze.test.size(); i += 3) {
        const PreparedBag& bag = data.gaze.test[i];
        const ForwardOutput a = forward_prepared(*params, bag.activation(), mode);
        const auto perm = draw_permutation(static_cast<std::size_t>(bag.size()), 9000 + i);
        const ForwardOutput b = forward_prepared(*params, bag.permuted(perm).activation(), mode);
        worst_perm = std::max(worst_perm, (a.p1 - b.p1).cwiseAbs().maxCoeff());
        worst_norm = std::max(worst_norm, std::abs(a.att1.sum() - 1.0));
        if (mode.dual) {
          worst_perm = std::max(worst_perm, (a.p2 - b.p2).cwiseAbs().maxCoeff());
          worst_norm = std::max(worst_norm, std::abs(a.att2.sum() - 1.0));
        }
      }
    }
  }
  if (!(worst_perm < 1e-5)) failures.push_back("permutation");
  if (!(worst_norm < 1e-6)) failures.push_back("attention normalization");

  // Bag labels agree with instance labels on 1000 fresh gaze bags.
  DatasetConfig d = dataset_preset("desk-dr");
  d.seed = 1000;
  d.train = {250, 250};
  d.val = {125, 125};
  d.test = {125, 125};
  int consistent = 0, bags = 0, pos_bags = 0, pos_instances = 0;
  for (const auto& e : plan_dataset(d).entries) {
    const SyntheticSample s = make_sample(d, e);
    const auto windows = select_top_k(score_windows(s.gaze, d.window), d.bag_size);
    std::vector<WindowOrigin> origins;
    for (const auto& w : windows) origins.push_back({w.row, w.col});
    const auto y = label_instances(origins, d.window, lesion_discs(s.generated.lesions), 0.25);
    const int positives = static_cast<int>(std::count(y.begin(), y.end(), 1));
    const int bag_label = positives > 0 ? 1 : 0;
    consistent += bag_label == e.label ? 1 : 0;
    ++bags;
    if (e.label == 1) {
      ++pos_bags;
      pos_instances += positives;
    }
  }
  if (consistent != bags) failures.push_back("bag labeling");

  // Gradient reversal: identity forward, negated and scaled backward; the
  // encoder sees the domain gradient with flipped sign, the head does not.
  bool grl_ok = true;
  {
    std::mt19937_64 rng(505);
    const Matrix x = random_matrix(3, 4, rng);
    grl_ok &= grad_reverse(x) == x;
    grl_ok &= (grad_reverse_backward(x, 0.7) + 0.7 * x).cwiseAbs().maxCoeff() < 1e-15;
    TrainConfig c = toy_config();
    c.weights = {0.0, 0.0, 1.0, 0.5, 1.0};
    const DcamilParams p = DcamilParams::make(c.model_config(3));
    const PreparedBag b = toy_bag(c, 1, 1, 3);
    const std::vector<const PreparedBag*> batch{&b};
    DcamilParams g_rev = p.zeros_like(), g_plain = p.zeros_like();
    evaluate_objective(p, c, batch, &g_rev);
    c.weights.lambda_grl = -1.0;
    evaluate_objective(p, c, batch, &g_plain);
    const auto e_rev = g_rev.encoder.tensors("e"), e_plain = g_plain.encoder.tensors("e");
    double enc_norm = 0.0;
    for (std::size_t t = 0; t < e_rev.size(); ++t) {
      for (std::size_t i = 0; i < e_rev[t].values.size(); ++i) {
        grl_ok &= std::abs(e_rev[t].values[i] + e_plain[t].values[i]) < 1e-12;
        enc_norm += std::abs(e_rev[t].values[i]);
      }
    }
    grl_ok &= enc_norm > 0.0;
    grl_ok &= g_rev.domain.w1 == g_plain.domain.w1;
  }
  if (!grl_ok) failures.push_back("gradient reversal");

  const double sec = seconds_since(t0);
  if (!(sec < 120.0)) failures.push_back("runtime");
  std::string failed;
  for (const auto& f : failures) failed += " " + f;
  report(5, failures.empty(),
         fmt("perm max diff %.1e (limit 1e-5), |sum att - 1| max %.1e (limit 1e-6), "
             "bag labels consistent %d/%d (%.2f positive instances per positive bag), "
             "reversal %s, %.0f s (limit 120 s)%s%s",
             worst_perm, worst_norm, consistent, bags,
             pos_bags ? static_cast<double>(pos_instances) / pos_bags : 0.0,
             grl_ok ? "ok" : "wrong", sec, failed.empty() ? "" : "; failed:", failed.c_str()));
}

double mean_of(const std::vector<TimedRun>& runs, double HeadMetrics::*metric) {
  double s = 0.0;
  for (const auto& r : runs) s += r.record.best_test().*metric;
  return s / static_cast<double>(runs.size());
}

double total_seconds(const std::vector<TimedRun>& runs) {
  double s = 0.0;
  for (const auto& r : runs) s += r.seconds;
  return s;
}

}  // namespace

int main() {
  const auto t_all = Clock::now();
  criterion_window_oracle();
  criterion_auc_oracle();
  criterion_contrastive_oracle();
  criterion_gradients();

  auto t0 = Clock::now();
  const DeskData data = make_desk_data();
  info(fmt("desk-dr bags: %zu/%zu/%zu (train/val/test), %d domains, built in %.0f s",
           data.gaze.train.size(), data.gaze.val.size(), data.gaze.test.size(), data.gaze.domains,
           seconds_since(t0)));

  {
    // An untrained model should sit near chance.
    const TrainConfig c;
    const DcamilParams p = DcamilParams::make(c.model_config(data.gaze.domains));
    const auto heads = evaluate(p, c.model_mode(), data.gaze.test);
    info(fmt("untrained full model test AUC H1 %.4f H2 %.4f", heads[0].auc, heads[1].auc));
  }

  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const StrategyFlags full{true, true, true, true, true};
  const StrategyFlags independent{true, true, false, true, true};
  const StrategyFlags dn_only{true, false, false, true, true};
  const StrategyFlags none{false, false, false, true, true};
  std::vector<TimedRun> r_full, r_indep, r_dn, r_none, r_uniform;
  for (std::uint64_t s : seeds) r_full.push_back(run_one(data.gaze, full, s));
  for (std::uint64_t s : seeds) r_indep.push_back(run_one(data.gaze, independent, s));
  for (std::uint64_t s : seeds) r_uniform.push_back(run_one(data.uniform, full, s));
  for (std::uint64_t s : seeds) r_none.push_back(run_one(data.gaze, none, s));
  for (std::uint64_t s : seeds) r_dn.push_back(run_one(data.gaze, dn_only, s));

  criterion_invariants(data, r_full[0].record.best_params);

  {
    const double a = mean_of(r_full, &HeadMetrics::auc);
    const double b = mean_of(r_indep, &HeadMetrics::auc);
    const double sec = total_seconds(r_full) + total_seconds(r_indep);
    report(6, a >= b + 0.02 && sec < 900.0,
           fmt("mean test AUC cross %.4f vs independent %.4f (margin %+.4f, need >= 0.02), "
               "%.0f s (limit 900 s)",
               a, b, a - b, sec));
  }
  {
    const double a = mean_of(r_full, &HeadMetrics::auc);
    const double b = mean_of(r_uniform, &HeadMetrics::auc);
    const double sec = total_seconds(r_full) + total_seconds(r_uniform);
    report(7, a >= b + 0.05 && sec < 900.0,
           fmt("mean test AUC gaze %.4f vs uniform %.4f (margin %+.4f, need >= 0.05), "
               "%.0f s (limit 900 s)",
               a, b, a - b, sec));
  }
  {
    bool ok = true;
    std::string per;
    for (std::size_t i = 0; i < r_full.size(); ++i) {
      const double auc = r_full[i].record.best_test().auc;
      ok &= auc >= 0.90 && r_full[i].seconds < 600.0;
      per += fmt(" seed %llu %.4f (%.0f s)", static_cast<unsigned long long>(seeds[i]), auc,
                 r_full[i].seconds);
    }
    report(8, ok, "full model test AUC >= 0.90 per seed:" + per);
  }
  {
    info("strategy table (mean over 3 seeds, validation-selected head):");
    info(fmt("  %-10s %9s %9s %9s %9s %9s", "variant", "accuracy", "recall", "precision", "f1",
             "auc"));
    const std::vector<std::pair<const char*, const std::vector<TimedRun>*>> rows{
        {"none", &r_none}, {"DN", &r_dn}, {"DN+CL", &r_indep}, {"DN+CL+CA", &r_full}};
    for (const auto& [name, runs] : rows) {
      info(fmt("  %-10s %9.4f %9.4f %9.4f %9.4f %9.4f", name, mean_of(*runs, &HeadMetrics::accuracy),
               mean_of(*runs, &HeadMetrics::recall), mean_of(*runs, &HeadMetrics::precision),
               mean_of(*runs, &HeadMetrics::f1), mean_of(*runs, &HeadMetrics::auc)));
    }
    const double a = mean_of(r_full, &HeadMetrics::f1);
    const double b = mean_of(r_none, &HeadMetrics::f1);
    report(9, a > b,
           fmt("mean test F1 full %.4f vs all-off %.4f (margin %+.4f, need > 0)", a, b, a - b));
  }

  {
    // Attention of the trained model concentrates on lesion windows.
    const RunRecord& rec = r_full[0].record;
    double on = 0.0, off = 0.0;
    int n_on = 0, n_off = 0;
    for (const auto& bag : data.gaze.test) {
      if (bag.label != 1) continue;
      for (const auto& row : attention_report(rec.best_params, rec.config.model_mode(), bag)) {
        const double a = rec.best_head == 0 ? row.att1 : row.att2.value_or(row.att1);
        (row.label ? on : off) += a;
        (row.label ? n_on : n_off) += 1;
      }
    }
    info(fmt("mean attention in positive test bags: lesion instances %.4f, others %.4f",
             n_on ? on / n_on : 0.0, n_off ? off / n_off : 0.0));
  }

  int failed = 0;
  std::printf("\nsummary (%.0f s):\n", seconds_since(t_all));
  std::sort(g_outcomes.begin(), g_outcomes.end(),
            [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
  for (const auto& o : g_outcomes) {
    std::printf("criterion %d: %s\n", o.id, o.pass ? "PASS" : "FAIL");
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
