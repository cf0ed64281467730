#pragma once

// Synthetic corridor counts and the summary statistics used to calibrate
// them (volume share, coefficients of variation, dependence on the corridor
// total, and the binned law-of-total-variance decomposition).

#include "hfdtm/dataio.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace hfdtm {

enum class Approach { NB, SB, EB, WB };
enum class Turn { L, T, R };

struct MovementSpec {
  Approach approach = Approach::NB;
  Turn turn = Turn::T;
  double ratio = 0.0;  // share of the entering corridor flow; unused for corridor throughs
};

struct SynthConfig {
  std::size_t n_intersections = 6;
  std::size_t days = 180;
  std::uint64_t seed = 1;
  std::string start = "2024-01-01T00:00:00";

  // Diurnal profile, in units of the corridor base volume.
  double base_volume = 160.0;  // vehicles per interval at profile 1
  double am_peak = 1.0;
  double am_peak_hour = 8.0;
  double pm_peak = 1.15;
  double pm_peak_hour = 17.25;
  double peak_width_hours = 1.4;
  double midday = 0.45;
  double off_peak_floor = 0.10;
  double sb_factor = 0.9;  // southbound volume relative to northbound

  double corridor_noise = 0.25;     // lognormal sigma of corridor throughs
  double corridor_persistence = 0.8; // AR(1) coefficient of the log-noise
  double day_noise = 0.12;           // day-to-day lognormal sigma
  double turn_noise = 0.7;           // lognormal sigma of turning movements
  double turn_persistence = 0.5;     // AR(1) coefficient of the turning log-noise
  double turn_ratio_scale = 1.3;
  double local_demand = 1.0;         // Poisson mean added to every turn

  /// Movement layout repeated at every intersection; NB:T and SB:T must be present.
  std::vector<MovementSpec> layout = default_layout();
  /// (intersection index, approach) pairs with no physical approach; their movements are zero.
  std::vector<std::pair<std::size_t, Approach>> missing_approaches = {{1, Approach::WB}, {4, Approach::WB}};

  static std::vector<MovementSpec> default_layout();
  void validate() const;
  std::string to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static SynthConfig from_json(const std::string& text);
};

std::string movement_id(std::size_t intersection, Approach approach, Turn turn);

struct SynthDataset {
  MovementTable table;
  CorridorTopology topology;
};

/// Deterministic in (config, seed).
SynthDataset generate_corridor_data(const SynthConfig& config);

struct MovementDecomposition {
  std::size_t index = 0;
  double total_var = 0.0;
  double expected_cond_var = 0.0;
  double var_cond_mean = 0.0;
};

struct FlowStats {
  double corridor_volume_share = 0.0;
  double cv_corridor = 0.0;
  double cv_turning = 0.0;
  double mean_corr = 0.0;
  double mean_r2 = 0.0;
  std::size_t n_bins = 0;
  std::vector<MovementDecomposition> decomposition;  // one per movement column
  std::vector<std::string> warnings;
};

/// Statistics over active movements. Conditioning on the corridor total uses
/// equal-count bins (rank-based); all variances are population (1/n).
FlowStats compute_flow_statistics(const MovementTable& table, const CorridorTopology& topology,
                                  std::size_t n_bins = 20);

/// Bin of every row under equal-count binning of `values` into n_bins.
std::vector<std::size_t> equal_count_bins(std::span<const double> values, std::size_t n_bins);

std::string flow_stats_to_json(const FlowStats& stats, const CorridorTopology& topology);
std::string flow_stats_to_text(const FlowStats& stats);

}  // namespace hfdtm
