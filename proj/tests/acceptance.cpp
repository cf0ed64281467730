// Acceptance suite: one PASS/FAIL line per criterion.
//
//   hfdtm_acceptance [--only 1,2,...] [--xfail 7,...]
//
// Criteria listed with --xfail still print FAIL when they fail but do not
// change the exit status.
// Criteria 6, 7 and 9 share one set of training runs on the 180-day default
// dataset and take tens of minutes on a single core.

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "hfdtm/evaluation.hpp"
#include "hfdtm/objective.hpp"
#include "hfdtm/synthgen.hpp"
#include "hfdtm/training.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace hfdtm;
using grad::Tape;
using grad::Tensor;
using testing::random_matrix;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
  bool warn_only = false;
};

// -- 1 ----------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto start = Clock::now();
  constexpr int kDraws = 20;
  double worst_op = 0.0, worst_model = 0.0;
  std::string worst_op_name;
  std::size_t entries = 0;

  using Build = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;
  struct OpCase {
    std::string name;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes;
    Build build;
  };
  const std::vector<std::size_t> cols = {3, 0, 3, 1};
  const std::vector<std::size_t> group = {0, 2};
  const std::vector<std::size_t> hours = {5, 17, 5};
  const std::vector<OpCase> ops = {
      {"matmul", {{3, 4}, {4, 2}, {3, 2}}, [](Tape& t, const auto& x) { return sum(t, mul(t, matmul(t, x[0], x[1]), x[2])); }},
      {"add", {{3, 4}, {3, 4}, {3, 4}}, [](Tape& t, const auto& x) { return sum(t, mul(t, add(t, x[0], x[1]), x[2])); }},
      {"sub", {{3, 4}, {3, 4}, {3, 4}}, [](Tape& t, const auto& x) { return sum(t, mul(t, sub(t, x[0], x[1]), x[2])); }},
      {"mul", {{3, 4}, {3, 4}, {3, 4}}, [](Tape& t, const auto& x) { return sum(t, mul(t, mul(t, x[0], x[1]), x[2])); }},
      {"add_row", {{3, 4}, {1, 4}, {3, 4}}, [](Tape& t, const auto& x) { return sum(t, mul(t, add_row(t, x[0], x[1]), x[2])); }},
      {"mul_row", {{3, 4}, {1, 4}, {3, 4}}, [](Tape& t, const auto& x) { return sum(t, mul(t, mul_row(t, x[0], x[1]), x[2])); }},
      {"scale", {{3, 4}, {3, 4}}, [](Tape& t, const auto& x) { return sum(t, mul(t, scale(t, x[0], -1.7), x[1])); }},
      {"concat_cols", {{3, 2}, {3, 3}, {3, 5}}, [](Tape& t, const auto& x) { return sum(t, mul(t, concat_cols(t, {x[0], x[1]}), x[2])); }},
      {"select_cols", {{3, 4}, {3, 4}}, [&](Tape& t, const auto& x) { return sum(t, mul(t, select_cols(t, x[0], cols), x[1])); }},
      {"slice_cols", {{3, 5}, {3, 2}}, [](Tape& t, const auto& x) { return sum(t, mul(t, slice_cols(t, x[0], 2, 2), x[1])); }},
      {"tanh", {{3, 4}, {3, 4}}, [](Tape& t, const auto& x) { return sum(t, mul(t, tanh(t, x[0]), x[1])); }},
      {"sigmoid", {{3, 4}, {3, 4}}, [](Tape& t, const auto& x) { return sum(t, mul(t, sigmoid(t, x[0]), x[1])); }},
      {"relu", {{3, 4}, {3, 4}}, [](Tape& t, const auto& x) { return sum(t, mul(t, relu(t, x[0]), x[1])); }},
      {"embedding_lookup", {{24, 4}, {1, 4}}, [](Tape& t, const auto& x) { return sum(t, mul(t, embedding_lookup(t, x[0], 7), x[1])); }},
      {"embedding_rows", {{24, 4}, {3, 4}}, [&](Tape& t, const auto& x) { return sum(t, mul(t, embedding_rows(t, x[0], hours), x[1])); }},
      {"sum_cols", {{3, 4}, {3, 1}}, [&](Tape& t, const auto& x) { return sum(t, mul(t, sum_cols(t, x[0], group), x[1])); }},
      {"sum", {{3, 4}}, [](Tape& t, const auto& x) { return sum(t, mul(t, x[0], x[0])); }},
      {"mean", {{3, 4}}, [](Tape& t, const auto& x) { return mean(t, mul(t, x[0], x[0])); }},
      {"mse", {{3, 4}, {3, 4}}, [](Tape& t, const auto& x) { return mse(t, x[0], x[1]); }},
  };

  std::mt19937_64 rng(20240101);
  for (int draw = 0; draw < kDraws; ++draw) {
    for (const auto& op : ops) {
      std::vector<Tensor> leaves;
      for (const auto& [r, c] : op.shapes) leaves.push_back(Tensor::parameter(random_matrix(rng, r, c)));
      const auto res = testing::check_gradients([&](Tape& t) { return op.build(t, leaves); }, leaves);
      entries += res.entries;
      if (res.max_rel_error > worst_op) {
        worst_op = res.max_rel_error;
        worst_op_name = op.name;
      }
    }

    // Composed model and loss, fresh parameters and inputs per draw.
    const auto topo = testing::small_topology(2, 3);
    ModelDims d;
    d.n_movements = topo.n_movements;
    d.n_corridor = topo.n_corridor();
    d.hidden = 5;
    d.embed_dim = 3;
    d.mlp_hidden = 4;
    const Model model(ModelKind::HfdTm, d, topo, 1000 + static_cast<std::uint64_t>(draw));
    const Batch batch = testing::random_batch(rng, 2, 3, topo.n_movements);
    std::vector<Tensor> leaves;
    for (const auto& p : model.parameters()) leaves.push_back(p.tensor);
    const auto res = testing::check_gradients(
        [&](Tape& t) {
          const auto out = model.forward(t, batch);
          return total_loss(t, out.y_hat, Tensor::constant(batch.target), topo, LossWeights{});
        },
        leaves);
    entries += res.entries;
    worst_model = std::max(worst_model, res.max_rel_error);
  }
  const double elapsed = seconds_since(start);
  Outcome o;
  o.pass = worst_op < 1e-4 && worst_model < 1e-3 && elapsed < 60.0;
  o.detail = fmt::format("{} draws, {} ops, {} entries; worst op rel err {:.2e} ({}), composed {:.2e}; {:.1f} s",
                         kDraws, ops.size(), entries, worst_op, worst_op_name, worst_model, elapsed);
  return o;
}

// -- 2 ----------------------------------------------------------------------

Outcome loss_identities() {
  std::mt19937_64 rng(2);
  bool ok = true;
  double worst_perm = 0.0, worst_lambda0 = 0.0;
  const auto topo = testing::small_topology(4, 5);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix y = random_matrix(rng, 6, 20);
    Matrix yh = y;
    // Permute mass within each group.
    for (const auto& g : topo.groups) {
      std::vector<std::size_t> perm = g;
      std::shuffle(perm.begin(), perm.end(), rng);
      for (std::size_t i = 0; i < g.size(); ++i) {
        yh.col(static_cast<Eigen::Index>(g[i])) = y.col(static_cast<Eigen::Index>(perm[i]));
      }
    }
    Tape tape;
    worst_perm = std::max(worst_perm, std::abs(conservation_loss(tape, Tensor::constant(yh), Tensor::constant(y), topo.groups).item()));
    const Tensor a = Tensor::constant(random_matrix(rng, 6, 20));
    const Tensor b = Tensor::constant(random_matrix(rng, 6, 20));
    worst_lambda0 = std::max(worst_lambda0, std::abs(total_loss(tape, a, b, topo, LossWeights{0.0, 0.0}).item() -
                                                     active_mse(tape, a, b, topo.active_idx).item()));
  }
  ok = ok && worst_perm < 1e-12 && worst_lambda0 == 0.0;

  // Two intersections, one row; hand-evaluated terms.
  CorridorTopology t;
  t.n_movements = 5;
  t.movement_ids = {"I1:NB:T", "I1:NB:L", "I1:EB:R", "I2:NB:T", "I2:SB:L"};
  t.corridor_idx = {0, 3};
  t.active_idx = {0, 1, 3, 4};
  t.groups = {{0, 1, 2}, {3, 4}};
  t.group_names = {"I1", "I2"};
  t.zero_mask = {1, 1, 0, 1, 1};
  t.validate();
  Matrix yh(1, 5), y(1, 5);
  yh << 3.0, 1.5, 0.0, 2.0, 0.25;
  y << 2.0, 2.0, 0.0, 4.0, 1.0;
  // active: (1 + 0.25 + 4 + 0.5625) / 4; corridor: (1 + 4) / 2; groups: (0.5^2 + 2.75^2) / 2
  const double active = (1.0 + 0.25 + 4.0 + 0.5625) / 4.0;
  const double corridor = (1.0 + 4.0) / 2.0;
  const double conservation = (0.25 + 7.5625) / 2.0;
  const double expected = active + 0.5 * corridor + 0.1 * conservation;
  Tape tape;
  const Tensor a = Tensor::constant(yh), b = Tensor::constant(y);
  const double terms[] = {active_mse(tape, a, b, t.active_idx).item(), corridor_mse(tape, a, b, t.corridor_idx).item(),
                          conservation_loss(tape, a, b, t.groups).item(), total_loss(tape, a, b, t, LossWeights{}).item()};
  const double oracle[] = {active, corridor, conservation, expected};
  double worst_term = 0.0;
  for (int i = 0; i < 4; ++i) worst_term = std::max(worst_term, std::abs(terms[i] - oracle[i]));
  ok = ok && worst_term < 1e-12;
  return {ok, fmt::format("permutation max {:.1e}; lambda=0 max diff {:.1e}; 2-group oracle max diff {:.1e}", worst_perm,
                          worst_lambda0, worst_term)};
}

// -- 3 ----------------------------------------------------------------------

Outcome structural_invariants() {
  std::mt19937_64 rng(3);
  const auto topo = testing::small_topology(3, 4);
  ModelDims d;
  d.n_movements = topo.n_movements;
  d.n_corridor = topo.n_corridor();
  d.hidden = 8;
  d.embed_dim = 4;
  d.mlp_hidden = 6;
  double worst_masked = 0.0;
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    for (ModelKind kind : {ModelKind::HfdTm, ModelKind::FlatHfdTm}) {
      const Model model(kind, d, topo, seed);
      const Batch b = testing::random_batch(rng, 8, 5, topo.n_movements);
      const Matrix y = model.predict(b);
      for (std::size_t i = 0; i < topo.n_movements; ++i) {
        if (topo.zero_mask[i] == 0.0) worst_masked = std::max(worst_masked, y.col(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff());
      }
    }
  }

  // Mask buffer before and after a short training run.
  SynthConfig sc;
  sc.days = 6;
  const auto ds = generate_corridor_data(sc);
  const auto data = prepare_data(ds.table, 8);
  TrainConfig tc;
  tc.window = 8;
  tc.max_epochs = 2;
  tc.hidden = 8;
  tc.embed_dim = 4;
  tc.mlp_hidden = 8;
  const Model fresh(ModelKind::HfdTm, dims_for(ds.topology, tc), ds.topology, tc.seed);
  const Matrix before = fresh.hfd_tm()->zero_mask.value();
  const TrainResult trained = train(ModelKind::HfdTm, data, ds.topology, tc);
  const bool mask_same = trained.model.hfd_tm()->zero_mask.value() == before;

  // Zeroed networks leave only the persistence path.
  auto p = init_hfd_tm_params(5, d, topo);
  for (Tensor t : {p.expand_w, p.expand_b, p.mlp_w1, p.mlp_b1, p.mlp_w2, p.mlp_b2, p.refine_w1, p.refine_b1,
                   p.refine_w2, p.refine_b2}) {
    t.mutable_value().setZero();
  }
  double worst_persist = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Batch b = testing::random_batch(rng, 4, 6, topo.n_movements);
    Tape tape;
    const Matrix y = hfd_tm_forward(tape, b, topo, p).y_hat.value();
    const Matrix expected = (0.3 * b.last_step()).array().rowwise() * p.zero_mask.value().row(0).array();
    worst_persist = std::max(worst_persist, (y - expected).cwiseAbs().maxCoeff());
  }
  const bool ok = worst_masked == 0.0 && mask_same && worst_persist == 0.0;
  return {ok, fmt::format("masked outputs max |y| {:.1e} over 50 models; mask unchanged by training: {}; "
                          "persistence path max diff {:.1e}",
                          worst_masked, mask_same ? "yes" : "no", worst_persist)};
}

// -- 4 ----------------------------------------------------------------------

Outcome variance_identity() {
  const auto start = Clock::now();
  SynthConfig sc;
  sc.days = 60;
  sc.seed = 11;
  const auto ds = generate_corridor_data(sc);
  const auto& topo = ds.topology;
  const auto stats = compute_flow_statistics(ds.table, topo, 20);
  const auto rows = static_cast<std::size_t>(ds.table.rows());
  std::vector<double> yc(rows, 0.0);
  for (std::size_t i : topo.corridor_idx) {
    for (std::size_t r = 0; r < rows; ++r) yc[r] += ds.table.counts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i));
  }
  const auto bins = equal_count_bins(yc, 20);
  double worst_identity = 0.0, worst_oracle = 0.0;
  for (std::size_t i = 0; i < topo.n_movements; ++i) {
    std::map<std::size_t, std::vector<long double>> members;
    long double mu = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const long double v = ds.table.counts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i));
      members[bins[r]].push_back(v);
      mu += v;
    }
    mu /= static_cast<long double>(rows);
    long double total = 0, within = 0, between = 0;
    for (const auto& [bin, vals] : members) {
      long double m = 0;
      for (auto v : vals) m += v;
      m /= static_cast<long double>(vals.size());
      long double var = 0;
      for (auto v : vals) {
        var += (v - m) * (v - m);
        total += (v - mu) * (v - mu);
      }
      const long double w = static_cast<long double>(vals.size()) / static_cast<long double>(rows);
      within += w * var / static_cast<long double>(vals.size());
      between += w * (m - mu) * (m - mu);
    }
    total /= static_cast<long double>(rows);
    const auto& dcmp = stats.decomposition[i];
    const double scale = std::max(static_cast<double>(total), 1e-300);
    if (total == 0) {
      worst_oracle = std::max({worst_oracle, std::abs(dcmp.total_var), std::abs(dcmp.expected_cond_var), std::abs(dcmp.var_cond_mean)});
      continue;
    }
    worst_identity = std::max(worst_identity, std::abs(dcmp.expected_cond_var + dcmp.var_cond_mean - dcmp.total_var) / scale);
    worst_oracle = std::max({worst_oracle, std::abs(dcmp.total_var - static_cast<double>(total)) / scale,
                             std::abs(dcmp.expected_cond_var - static_cast<double>(within)) / scale,
                             std::abs(dcmp.var_cond_mean - static_cast<double>(between)) / scale});
  }
  const double elapsed = seconds_since(start);
  return {worst_identity < 1e-9 && worst_oracle < 1e-9 && elapsed < 60.0,
          fmt::format("{} movements, 20 bins: identity max rel {:.1e}, brute-force max rel {:.1e}; {:.2f} s",
                      topo.n_movements, worst_identity, worst_oracle, elapsed)};
}

// -- 5 ----------------------------------------------------------------------

Outcome calibration() {
  const auto ds = generate_corridor_data(SynthConfig{});
  const auto s = compute_flow_statistics(ds.table, ds.topology);
  const auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  const bool ok = in(s.corridor_volume_share, 0.60, 0.70) && in(s.cv_corridor, 0.65, 0.95) &&
                  in(s.cv_turning, 1.04, 1.34) && in(s.mean_corr, 0.47, 0.67) && in(s.mean_r2, 0.25, 0.45);
  return {ok, fmt::format("share {:.4f} [0.60,0.70], CV corridor {:.4f} [0.65,0.95], CV turning {:.4f} [1.04,1.34], "
                          "corr {:.4f} [0.47,0.67], R2 {:.4f} [0.25,0.45]",
                          s.corridor_volume_share, s.cv_corridor, s.cv_turning, s.mean_corr, s.mean_r2)};
}

// -- 6, 7, 9 ----------------------------------------------------------------

struct Experiment {
  ReportTable comparison;
  ReportTable ablation;
  std::vector<RunRecord> runs;
  double comparison_seconds = 0.0;
  double max_hfdtm_seconds = 0.0;
};

Experiment run_experiment() {
  const auto ds = generate_corridor_data(SynthConfig{});
  const TrainConfig config;
  const auto data = prepare_data(ds.table, config.window);
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<ArmSpec> arms = comparison_arms();
  for (const auto& a : ablation_arms()) {
    if (std::none_of(arms.begin(), arms.end(), [&](const ArmSpec& b) { return b.id == a.id; })) arms.push_back(a);
  }
  Experiment e;
  e.runs = run_arms(arms, data, ds.topology, config, seeds, [](const std::string& line) {
    std::cout << "  " << line << std::endl;
  });
  const auto cmp = comparison_arms();
  const auto abl = ablation_arms();
  e.comparison = build_table("Baseline comparison", cmp, "HFD-TM", e.runs);
  e.ablation = build_table("Ablation study", abl, "HFD-TM", e.runs);
  for (const auto& r : e.runs) {
    const bool in_cmp = std::any_of(cmp.begin(), cmp.end(), [&](const ArmSpec& a) { return a.id == r.arm; });
    if (in_cmp) e.comparison_seconds += r.report.train_seconds;
    if (r.arm == "HFD-TM") e.max_hfdtm_seconds = std::max(e.max_hfdtm_seconds, r.report.train_seconds);
  }
  std::cout << table_to_text(e.comparison) << table_to_text(e.ablation);
  return e;
}

Outcome comparison_ordering(const Experiment& e) {
  const auto* h = e.comparison.mean_row("HFD-TM");
  const auto* g = e.comparison.mean_row("GRU");
  const auto* l = e.comparison.mean_row("LSTM");
  const bool order = h->mae < g->mae && h->mae < l->mae;
  const bool timing = e.max_hfdtm_seconds < 300.0 && e.comparison_seconds < 1800.0;
  return {order && timing,
          fmt::format("mean MAE HFD-TM {:.4f}, GRU {:.4f} ({:+.2f}%), LSTM {:.4f} ({:+.2f}%); slowest HFD-TM run "
                      "{:.0f} s (< 300), comparison training {:.0f} s (< 1800)",
                      h->mae, g->mae, g->delta_mae_pct, l->mae, l->delta_mae_pct, e.max_hfdtm_seconds,
                      e.comparison_seconds)};
}

Outcome ablation_ordering(const Experiment& e) {
  const auto* full = e.ablation.mean_row("HFD-TM");
  const auto* hier = e.ablation.mean_row("- Hierarchy");
  const auto* corr = e.ablation.mean_row("- Corridor Weight");
  const auto* cons = e.ablation.mean_row("- Conservation");
  const bool all_worse = hier->mae >= full->mae && corr->mae >= full->mae && cons->mae >= full->mae;
  const bool hier_largest = hier->mae >= corr->mae && hier->mae >= cons->mae;
  return {all_worse && hier_largest,
          fmt::format("full {:.4f}; -Hierarchy {:+.2f}%, -Corridor Weight {:+.2f}%, -Conservation {:+.2f}%",
                      full->mae, hier->delta_mae_pct, corr->delta_mae_pct, cons->delta_mae_pct)};
}

Outcome convergence(const Experiment& e) {
  std::size_t within = 0, total = 0;
  std::string epochs;
  for (const auto& r : e.runs) {
    if (r.arm != "HFD-TM") continue;
    ++total;
    if (r.history.best_epoch <= 60) ++within;
    epochs += (epochs.empty() ? "" : ", ") + std::to_string(r.history.best_epoch);
  }
  Outcome o{within >= 2, fmt::format("HFD-TM best epochs [{}]; {} of {} within 60", epochs, within, total), true};
  return o;
}

// -- 8 ----------------------------------------------------------------------

Outcome determinism() {
  SynthConfig sc;
  sc.days = 20;
  sc.seed = 4;
  const auto ds = generate_corridor_data(sc);
  const auto ds2 = generate_corridor_data(sc);
  const bool data_same = ds.table.counts == ds2.table.counts;
  TrainConfig c;
  c.max_epochs = 4;
  c.seed = 9;
  const auto data = prepare_data(ds.table, c.window);
  struct Run {
    std::string checkpoint, history, report;
  };
  std::vector<std::pair<ModelKind, std::array<Run, 2>>> runs;
  bool same = data_same;
  std::string detail;
  for (ModelKind kind : {ModelKind::HfdTm, ModelKind::Gru}) {
    std::array<Run, 2> pair;
    for (auto& run : pair) {
      const auto r = train(kind, data, ds.topology, c);
      const CheckpointMeta meta{c.seed, c.window, ds.topology.digest(), data.normalization.digest()};
      run.checkpoint = checkpoint_to_json(r.model, meta);
      run.history = history_to_json(r.history, false);
      MetricsReport rep = evaluate(r.model, data.test, data.normalization, ds.topology);
      rep.seed = c.seed;
      run.report = report_to_json(rep, false);
    }
    const bool k = pair[0].checkpoint == pair[1].checkpoint && pair[0].history == pair[1].history &&
                   pair[0].report == pair[1].report;
    same = same && k;
    detail += fmt::format("{}{}: checkpoint {} history {} report {}", detail.empty() ? "" : "; ", to_string(kind),
                          pair[0].checkpoint == pair[1].checkpoint ? "equal" : "DIFFERENT",
                          pair[0].history == pair[1].history ? "equal" : "DIFFERENT",
                          pair[0].report == pair[1].report ? "equal" : "DIFFERENT");
  }
  return {same, detail + (data_same ? "" : "; generated data DIFFERENT")};
}

// -- 10 ---------------------------------------------------------------------

Outcome metrics_oracle() {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> len(1, 400);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  double worst = 0.0;
  bool ordered = true;
  for (int v = 0; v < 1000; ++v) {
    const std::size_t n = len(rng);
    const double s = scale(rng);
    std::vector<double> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = s * std::abs(normal(rng));
      p[i] = t[i] + s * normal(rng);
    }
    long double a = 0, q = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const long double d = static_cast<long double>(t[i]) - static_cast<long double>(p[i]);
      a += d < 0 ? -d : d;
      q += d * d;
    }
    const double bm = static_cast<double>(a / n);
    const double br = static_cast<double>(std::sqrt(q / n));
    const double m = mae(p, t);
    const double r = rmse(p, t);
    worst = std::max({worst, std::abs(m - bm) / std::max(bm, 1e-300), std::abs(r - br) / std::max(br, 1e-300)});
    ordered = ordered && r >= m;
  }
  return {worst < 1e-12 && ordered,
          fmt::format("1000 residual vectors: max rel diff {:.1e}; RMSE >= MAE always: {}", worst, ordered ? "yes" : "no")};
}

std::set<int> parse_list(int argc, char** argv, const std::string& flag) {
  std::set<int> out;
  for (int i = 1; i + 1 < argc; ++i) {
    if (argv[i] == flag) {
      std::stringstream ss(argv[i + 1]);
      std::string item;
      while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::set<int> only = parse_list(argc, argv, "--only");
  const std::set<int> xfail = parse_list(argc, argv, "--xfail");
  const auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };
  const std::map<int, std::string> names = {
      {1, "gradient correctness"}, {2, "loss identities"},        {3, "structural invariants"},
      {4, "variance decomposition"}, {5, "generator calibration"}, {6, "baseline ordering"},
      {7, "ablation ordering"},     {8, "determinism"},            {9, "convergence budget"},
      {10, "metrics oracle"}};

  std::map<int, Outcome> results;
  const auto run = [&](int c, const std::function<Outcome()>& f) {
    if (!wanted(c)) return;
    try {
      results[c] = f();
    } catch (const std::exception& e) {
      results[c] = Outcome{false, std::string("exception: ") + e.what()};
    }
    const auto& o = results[c];
    const char* tag = o.pass ? "PASS" : (o.warn_only ? "WARN" : "FAIL");
    const bool expected = !o.pass && !o.warn_only && xfail.count(c) > 0;
    std::cout << fmt::format("[{}] criterion {:>2} {}: {}{}", tag, c, names.at(c), o.detail,
                             expected ? " (expected failure)" : "")
              << std::endl;
  };

  run(1, gradient_correctness);
  run(2, loss_identities);
  run(3, structural_invariants);
  run(4, variance_identity);
  run(5, calibration);
  run(8, determinism);
  run(10, metrics_oracle);
  if (wanted(6) || wanted(7) || wanted(9)) {
    std::optional<Experiment> e;
    std::string error;
    try {
      e = run_experiment();
    } catch (const std::exception& ex) {
      error = ex.what();
    }
    const auto guarded = [&](Outcome (*f)(const Experiment&)) {
      return [&, f] { return e ? f(*e) : Outcome{false, "experiment failed: " + error}; };
    };
    run(6, guarded(comparison_ordering));
    run(7, guarded(ablation_ordering));
    run(9, guarded(convergence));
  }

  int passed = 0, warned = 0, failed = 0, unexpected = 0;
  for (const auto& [c, o] : results) {
    if (o.pass) {
      ++passed;
      if (xfail.count(c)) std::cout << fmt::format("note: criterion {} passed although listed with --xfail", c) << std::endl;
    } else if (o.warn_only) {
      ++warned;
    } else {
      ++failed;
      if (!xfail.count(c)) ++unexpected;
    }
  }
  std::cout << fmt::format("{} passed, {} warned, {} failed ({} unexpected)", passed, warned, failed, unexpected)
            << std::endl;
  return unexpected == 0 ? 0 : 1;
}
