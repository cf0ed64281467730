#include "hfdtm/evaluation.hpp"

#include "hfdtm/errors.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

namespace hfdtm {

using json = nlohmann::json;

double mae(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) throw ValidationError("mae: length mismatch");
  if (predictions.empty()) throw ValidationError("mae: no values");
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) s += std::abs(targets[i] - predictions[i]);
  return s / static_cast<double>(predictions.size());
}

double rmse(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) throw ValidationError("rmse: length mismatch");
  if (predictions.empty()) throw ValidationError("rmse: no values");
  double s = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = targets[i] - predictions[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(predictions.size()));
}

Matrix predict_windows(const Model& model, const WindowSet& windows, std::size_t batch_size) {
  Matrix out(static_cast<Eigen::Index>(windows.size()), static_cast<Eigen::Index>(windows.n_movements()));
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, windows.size());
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        model.predict(windows.batch_range(start, end));
  }
  return out;
}

ErrorSummary active_errors(const Matrix& predictions_norm, const Matrix& targets_norm,
                           const NormalizationParams& normalization, std::span<const std::size_t> active) {
  if (predictions_norm.rows() != targets_norm.rows() || predictions_norm.cols() != targets_norm.cols()) {
    throw ValidationError("active_errors: prediction/target shape mismatch");
  }
  const Matrix pred = invert_normalization(predictions_norm, normalization);
  const Matrix target = invert_normalization(targets_norm, normalization);
  std::vector<double> p, t;
  p.reserve(static_cast<std::size_t>(pred.rows()) * active.size());
  t.reserve(p.capacity());
  ErrorSummary s;
  for (std::size_t c : active) {
    const auto col = static_cast<Eigen::Index>(c);
    double abs_sum = 0.0;
    for (Eigen::Index r = 0; r < pred.rows(); ++r) {
      p.push_back(pred(r, col));
      t.push_back(target(r, col));
      abs_sum += std::abs(target(r, col) - pred(r, col));
    }
    s.per_movement_mae.push_back(abs_sum / static_cast<double>(pred.rows()));
  }
  s.mae = mae(p, t);
  s.rmse = rmse(p, t);
  s.n = p.size();
  return s;
}

MetricsReport evaluate(const Model& model, const WindowSet& test, const NormalizationParams& normalization,
                       const CorridorTopology& topology) {
  if (test.size() == 0) throw ValidationError("evaluate: empty test set");
  const Matrix pred = predict_windows(model, test);
  const ErrorSummary e = active_errors(pred, test.targets(), normalization, topology.active_idx);
  MetricsReport r;
  r.model_id = to_string(model.kind());
  r.mae = e.mae;
  r.rmse = e.rmse;
  r.n = e.n;
  r.per_movement_mae = e.per_movement_mae;
  for (std::size_t i : topology.active_idx) {
    r.movement_ids.push_back(i < topology.movement_ids.size() ? topology.movement_ids[i] : std::to_string(i));
  }
  if (r.rmse + 1e-12 < r.mae) throw NumericError("evaluate: RMSE below MAE");
  return r;
}

MetricsReport evaluate_checkpoint(const LoadedCheckpoint& checkpoint, const PreparedData& data,
                                  const CorridorTopology& topology) {
  if (checkpoint.meta.topology_digest != topology.digest()) {
    throw ValidationError("evaluate: topology digest differs from the checkpoint's");
  }
  if (checkpoint.meta.normalization_digest != data.normalization.digest()) {
    throw ValidationError("evaluate: normalization digest differs from the checkpoint's (different training data?)");
  }
  if (checkpoint.meta.window != data.test.window()) throw ValidationError("evaluate: window length differs");
  MetricsReport r = evaluate(checkpoint.model, data.test, data.normalization, topology);
  r.seed = checkpoint.meta.seed;
  return r;
}

std::string report_to_json(const MetricsReport& report, bool include_timing) {
  json per = json::object();
  for (std::size_t i = 0; i < report.movement_ids.size(); ++i) per[report.movement_ids[i]] = report.per_movement_mae[i];
  json j = {{"model", report.model_id},
            {"mae", report.mae},
            {"rmse", report.rmse},
            {"seed", report.seed},
            {"config_digest", report.config_digest},
            {"n", report.n},
            {"units", "vehicles per 15-minute interval"},
            {"per_movement_mae", per}};
  if (include_timing) j["train_seconds"] = report.train_seconds;
  return j.dump(2);
}

std::string report_to_text(const MetricsReport& report) {
  std::string out = fmt::format("{:<14}{:>10}{:>10}", "Model", "MAE", "RMSE");
  if (report.train_seconds > 0) out += fmt::format("{:>12}", "Time (s)");
  out += fmt::format("\n{:<14}{:>10.4f}{:>10.4f}", report.model_id, report.mae, report.rmse);
  if (report.train_seconds > 0) out += fmt::format("{:>12.1f}", report.train_seconds);
  return out + fmt::format("\n(vehicles per 15-minute interval, {} active movements)\n", report.movement_ids.size());
}

void write_residual_csv(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "movement,mae\n";
  for (std::size_t i = 0; i < report.movement_ids.size(); ++i) {
    out << report.movement_ids[i] << ',' << fmt::format("{:.17g}", report.per_movement_mae[i]) << '\n';
  }
}

std::vector<ArmSpec> comparison_arms() {
  return {{"HFD-TM", ModelKind::HfdTm, Ablation::None},
          {"GRU", ModelKind::Gru, Ablation::None},
          {"LSTM", ModelKind::Lstm, Ablation::None}};
}

std::vector<ArmSpec> ablation_arms() {
  return {{"HFD-TM", ModelKind::HfdTm, Ablation::None},
          {"- Hierarchy", ModelKind::FlatHfdTm, Ablation::NoHierarchy},
          {"- Corridor Weight", ModelKind::HfdTm, Ablation::NoCorridorWeight},
          {"- Conservation", ModelKind::HfdTm, Ablation::NoConservation}};
}

std::vector<RunRecord> run_arms(std::span<const ArmSpec> arms, const PreparedData& data,
                                const CorridorTopology& topology, const TrainConfig& config,
                                std::span<const std::uint64_t> seeds, const ProgressFn& progress) {
  std::vector<RunRecord> runs;
  for (std::uint64_t seed : seeds) {
    for (const ArmSpec& arm : arms) {
      TrainConfig c = config;
      c.seed = seed;
      c.ablation = arm.ablation;
      TrainResult result = train(arm.kind, data, topology, c);
      RunRecord rec;
      rec.arm = arm.id;
      rec.seed = seed;
      rec.report = evaluate(result.model, data.test, data.normalization, topology);
      rec.report.model_id = arm.id;
      rec.report.seed = seed;
      rec.report.train_seconds = result.history.total_seconds;
      rec.report.config_digest = c.digest();
      rec.history = std::move(result.history);
      if (progress) {
        progress(fmt::format("{} seed {}: MAE {:.4f} RMSE {:.4f} best epoch {} of {} ({:.1f} s)", arm.id, seed,
                             rec.report.mae, rec.report.rmse, rec.history.best_epoch, rec.history.epochs.size(),
                             rec.history.total_seconds));
      }
      runs.push_back(std::move(rec));
    }
  }
  return runs;
}

double delta_percent(double other, double reference) { return (other - reference) / reference * 100.0; }

const TableRow* ReportTable::mean_row(const std::string& model) const {
  for (const auto& r : rows) {
    if (r.model == model && !r.seed) return &r;
  }
  return nullptr;
}

ReportTable build_table(const std::string& title, std::span<const ArmSpec> arms, const std::string& reference,
                        std::span<const RunRecord> runs) {
  ReportTable table;
  table.title = title;
  table.reference = reference;
  std::map<std::uint64_t, const RunRecord*> ref_by_seed;
  for (const auto& r : runs) {
    if (r.arm == reference) ref_by_seed[r.seed] = &r;
  }
  std::vector<std::uint64_t> seeds;
  for (const auto& r : runs) {
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
  }
  std::map<std::string, TableRow> means;
  std::map<std::string, std::size_t> counts;
  for (std::uint64_t seed : seeds) {
    for (const ArmSpec& arm : arms) {
      for (const auto& r : runs) {
        if (r.arm != arm.id || r.seed != seed) continue;
        TableRow row{arm.id, seed, r.report.mae, r.report.rmse, r.report.train_seconds, 0.0, 0.0};
        if (auto it = ref_by_seed.find(seed); it != ref_by_seed.end()) {
          row.delta_mae_pct = delta_percent(row.mae, it->second->report.mae);
          row.delta_rmse_pct = delta_percent(row.rmse, it->second->report.rmse);
        }
        table.rows.push_back(row);
        TableRow& m = means[arm.id];
        m.model = arm.id;
        m.mae += row.mae;
        m.rmse += row.rmse;
        m.seconds += row.seconds;
        ++counts[arm.id];
      }
    }
  }
  std::vector<TableRow> mean_rows;
  for (const ArmSpec& arm : arms) {
    auto it = means.find(arm.id);
    if (it == means.end()) continue;
    TableRow m = it->second;
    const double k = static_cast<double>(counts[arm.id]);
    m.mae /= k;
    m.rmse /= k;
    m.seconds /= k;
    mean_rows.push_back(m);
  }
  const TableRow* ref = nullptr;
  for (const auto& m : mean_rows) {
    if (m.model == reference) ref = &m;
  }
  for (auto& m : mean_rows) {
    if (ref) {
      m.delta_mae_pct = delta_percent(m.mae, ref->mae);
      m.delta_rmse_pct = delta_percent(m.rmse, ref->rmse);
    }
    table.rows.push_back(m);
  }
  return table;
}

ReportTable run_comparison(const PreparedData& data, const CorridorTopology& topology, const TrainConfig& config,
                           std::span<const std::uint64_t> seeds, const ProgressFn& progress) {
  const auto arms = comparison_arms();
  const auto runs = run_arms(arms, data, topology, config, seeds, progress);
  return build_table("Baseline comparison", arms, "HFD-TM", runs);
}

ReportTable run_ablation(const PreparedData& data, const CorridorTopology& topology, const TrainConfig& config,
                         std::span<const std::uint64_t> seeds, const ProgressFn& progress) {
  const auto arms = ablation_arms();
  const auto runs = run_arms(arms, data, topology, config, seeds, progress);
  return build_table("Ablation study", arms, "HFD-TM", runs);
}

std::string table_to_text(const ReportTable& table) {
  std::string out = table.title + " (vehicles per 15-minute interval; deltas vs " + table.reference + ")\n";
  out += fmt::format("{:<20}{:>6}{:>10}{:>10}{:>10}{:>10}{:>10}\n", "Model", "Seed", "MAE", "RMSE", "Time (s)",
                     "MAE d%", "RMSE d%");
  for (const auto& r : table.rows) {
    const bool is_ref = r.model == table.reference;
    out += fmt::format("{:<20}{:>6}{:>10.4f}{:>10.4f}{:>10.1f}{:>10}{:>10}\n", r.model,
                       r.seed ? std::to_string(*r.seed) : std::string("mean"), r.mae, r.rmse, r.seconds,
                       is_ref ? std::string("--") : fmt::format("{:+.2f}%", r.delta_mae_pct),
                       is_ref ? std::string("--") : fmt::format("{:+.2f}%", r.delta_rmse_pct));
  }
  return out;
}

std::string table_to_json(const ReportTable& table, bool include_timing) {
  json rows = json::array();
  for (const auto& r : table.rows) {
    json j = {{"model", r.model},
              {"seed", r.seed ? json(*r.seed) : json("mean")},
              {"mae", r.mae},
              {"rmse", r.rmse},
              {"delta_mae_pct", r.delta_mae_pct},
              {"delta_rmse_pct", r.delta_rmse_pct}};
    if (include_timing) j["train_seconds"] = r.seconds;
    rows.push_back(std::move(j));
  }
  return json{{"title", table.title}, {"reference", table.reference}, {"rows", rows}}.dump(2);
}

FlowStats analyze_dataset(const MovementTable& table, const CorridorTopology& topology, std::size_t n_bins) {
  check_table_matches(table, topology);
  return compute_flow_statistics(table, topology, n_bins);
}

}  // namespace hfdtm
