#pragma once

#include "hfdtm/dataio.hpp"
#include "hfdtm/model.hpp"

#include <span>
#include <vector>

namespace hfdtm {

double mae(std::span<const double> predictions, std::span<const double> targets);
double rmse(std::span<const double> predictions, std::span<const double> targets);

/// Normalized predictions for every window of `windows`, [size x N].
Matrix predict_windows(const Model& model, const WindowSet& windows, std::size_t batch_size = 512);

struct ErrorSummary {
  double mae = 0.0;
  double rmse = 0.0;
  std::vector<double> per_movement_mae;  // aligned with `active`
  std::size_t n = 0;
};

/// Denormalizes both matrices and scores the active columns in vehicle units.
ErrorSummary active_errors(const Matrix& predictions_norm, const Matrix& targets_norm,
                           const NormalizationParams& normalization, std::span<const std::size_t> active);

}  // namespace hfdtm
