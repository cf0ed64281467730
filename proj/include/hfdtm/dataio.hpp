#pragma once

// Movement-count tables, corridor topology, chronological splits, min-max
// normalization and sliding-window sample construction.

#include "hfdtm/grad.hpp"

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace hfdtm {

using Matrix = grad::Matrix;
using TimePoint = std::chrono::sys_seconds;

inline constexpr std::chrono::seconds kInterval{15 * 60};
inline constexpr std::size_t kIntervalsPerDay = 96;
inline constexpr std::size_t kHoursPerDay = 24;

TimePoint parse_timestamp(const std::string& text);
std::string format_timestamp(TimePoint t);
/// Hour of day (UTC) in [0, 24).
std::size_t hour_of(TimePoint t);

/// Per-interval vehicle counts, one column per movement stream.
struct MovementTable {
  std::vector<TimePoint> timestamps;
  Matrix counts;  // rows = intervals, cols = movements
  std::vector<std::string> column_ids;

  std::size_t rows() const { return static_cast<std::size_t>(counts.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(counts.cols()); }

  /// Rows [begin, end) as a new table.
  MovementTable slice_rows(std::size_t begin, std::size_t end) const;
};

/// Checks uniform 15-minute spacing, non-negative finite counts and column
/// bookkeeping. Throws ValidationError naming the 1-based data row.
void validate_table(const MovementTable& table, bool require_non_negative = true);

MovementTable load_movement_csv(const std::filesystem::path& path);
void write_movement_csv(const MovementTable& table, const std::filesystem::path& path);

struct CorridorTopology {
  std::size_t n_movements = 0;
  std::vector<std::string> movement_ids;
  std::vector<std::size_t> corridor_idx;
  std::vector<std::size_t> active_idx;
  std::vector<std::vector<std::size_t>> groups;  // one per intersection
  std::vector<std::string> group_names;
  std::vector<double> zero_mask;  // 1 = feasible, 0 = structurally zero

  std::size_t n_corridor() const { return corridor_idx.size(); }
  std::size_t n_groups() const { return groups.size(); }
  bool is_corridor(std::size_t i) const;
  bool is_active(std::size_t i) const;

  void validate() const;
  /// Hash of the canonical JSON form; checkpoints carry it.
  std::string digest() const;
};

CorridorTopology parse_topology(const std::string& json_text);
CorridorTopology load_topology(const std::filesystem::path& path);
std::string topology_to_json(const CorridorTopology& topology);
void write_topology(const CorridorTopology& topology, const std::filesystem::path& path);
/// Throws unless the table's columns are exactly the topology's movements, in order.
void check_table_matches(const MovementTable& table, const CorridorTopology& topology);

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

struct Splits {
  MovementTable train;
  MovementTable val;
  MovementTable test;
};

/// Contiguous split at floor(M * train) and floor(M * (train + val)).
Splits chronological_split(const MovementTable& table, SplitFractions fractions = {});

struct NormalizationParams {
  std::vector<double> min;
  std::vector<double> max;

  std::size_t cols() const { return min.size(); }
  std::string digest() const;
};

NormalizationParams fit_normalization(const MovementTable& train);
/// (x - min) / (max - min) per column; constant columns map to 0. No clipping.
Matrix apply_normalization(const Matrix& values, const NormalizationParams& params);
MovementTable apply_normalization(const MovementTable& table, const NormalizationParams& params);
Matrix invert_normalization(const Matrix& values, const NormalizationParams& params);

/// One training instance: T rows preceding the target, the target row and
/// the target interval's hour.
struct WindowedSample {
  Matrix X;
  Eigen::RowVectorXd y;
  std::size_t hour = 0;
};

/// A mini-batch laid out for the recurrent models: one [B x N] matrix per
/// time step, the [B x N] targets and the B target hours.
struct Batch {
  std::vector<Matrix> steps;
  Matrix target;
  std::vector<std::size_t> hours;

  std::size_t size() const { return static_cast<std::size_t>(target.rows()); }
  /// The most recent observation of every window, [B x N].
  const Matrix& last_step() const { return steps.back(); }
};

/// Sliding windows over one (already normalized) split. Windows are
/// materialized lazily; sample i covers rows [i, i + T) with target row i + T.
class WindowSet {
 public:
  WindowSet() = default;
  WindowSet(MovementTable normalized, std::size_t window);

  std::size_t size() const { return table_.rows() - window_; }
  std::size_t window() const { return window_; }
  std::size_t n_movements() const { return table_.cols(); }
  const MovementTable& table() const { return table_; }

  WindowedSample operator[](std::size_t i) const;
  Batch batch(std::span<const std::size_t> indices) const;
  /// Contiguous samples [begin, end).
  Batch batch_range(std::size_t begin, std::size_t end) const;
  /// Targets of every window, [size x N].
  Matrix targets() const;

 private:
  MovementTable table_;
  std::size_t window_ = 0;
};

WindowSet make_windows(const MovementTable& normalized, std::size_t window);

/// Everything the trainers and evaluators consume, built from one raw table.
struct PreparedData {
  NormalizationParams normalization;
  WindowSet train;
  WindowSet val;
  WindowSet test;
};

PreparedData prepare_data(const MovementTable& raw, std::size_t window, SplitFractions fractions = {});

}  // namespace hfdtm
