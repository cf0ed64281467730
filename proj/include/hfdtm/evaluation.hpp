#pragma once

// Test-set metrics in vehicle units, and the baseline-comparison and
// ablation tables built from repeated training runs.

#include "hfdtm/dataio.hpp"
#include "hfdtm/metrics.hpp"
#include "hfdtm/model.hpp"
#include "hfdtm/synthgen.hpp"
#include "hfdtm/training.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hfdtm {

struct MetricsReport {
  std::string model_id;
  double mae = 0.0;
  double rmse = 0.0;
  double train_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<std::string> movement_ids;   // active movements
  std::vector<double> per_movement_mae;    // aligned with movement_ids
  std::size_t n = 0;                       // residuals scored
};

/// Scores `model` on the test windows over the active movements.
MetricsReport evaluate(const Model& model, const WindowSet& test, const NormalizationParams& normalization,
                       const CorridorTopology& topology);

/// As evaluate(), but first checks the checkpoint's digests against the data.
MetricsReport evaluate_checkpoint(const LoadedCheckpoint& checkpoint, const PreparedData& data,
                                  const CorridorTopology& topology);

std::string report_to_json(const MetricsReport& report, bool include_timing = true);
std::string report_to_text(const MetricsReport& report);
void write_residual_csv(const MetricsReport& report, const std::filesystem::path& path);

/// One trained configuration of the experiment grid.
struct ArmSpec {
  std::string id;
  ModelKind kind = ModelKind::HfdTm;
  Ablation ablation = Ablation::None;
};

std::vector<ArmSpec> comparison_arms();  // hfdtm, gru, lstm
std::vector<ArmSpec> ablation_arms();    // full, -hierarchy, -corridor weight, -conservation

struct RunRecord {
  std::string arm;
  std::uint64_t seed = 0;
  MetricsReport report;
  TrainHistory history;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Trains every arm for every seed (seed overrides config.seed) and scores it on the test split.
std::vector<RunRecord> run_arms(std::span<const ArmSpec> arms, const PreparedData& data,
                                const CorridorTopology& topology, const TrainConfig& config,
                                std::span<const std::uint64_t> seeds, const ProgressFn& progress = {});

struct TableRow {
  std::string model;
  std::optional<std::uint64_t> seed;  // empty for the seed-mean row
  double mae = 0.0;
  double rmse = 0.0;
  double seconds = 0.0;
  double delta_mae_pct = 0.0;   // relative to the reference row of the same seed (or mean)
  double delta_rmse_pct = 0.0;
};

struct ReportTable {
  std::string title;
  std::string reference;
  std::vector<TableRow> rows;

  const TableRow* mean_row(const std::string& model) const;
};

/// Per-seed rows for every arm present in `runs`, then one mean row per arm.
ReportTable build_table(const std::string& title, std::span<const ArmSpec> arms, const std::string& reference,
                        std::span<const RunRecord> runs);

ReportTable run_comparison(const PreparedData& data, const CorridorTopology& topology, const TrainConfig& config,
                           std::span<const std::uint64_t> seeds, const ProgressFn& progress = {});
ReportTable run_ablation(const PreparedData& data, const CorridorTopology& topology, const TrainConfig& config,
                         std::span<const std::uint64_t> seeds, const ProgressFn& progress = {});

double delta_percent(double other, double reference);
std::string table_to_text(const ReportTable& table);
std::string table_to_json(const ReportTable& table, bool include_timing = true);

/// Flow statistics report for a table (see compute_flow_statistics).
FlowStats analyze_dataset(const MovementTable& table, const CorridorTopology& topology, std::size_t n_bins = 20);

}  // namespace hfdtm
