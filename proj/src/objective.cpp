#include "hfdtm/objective.hpp"

#include "hfdtm/errors.hpp"

namespace hfdtm {

namespace g = grad;

grad::Tensor active_mse(g::Tape& tape, const g::Tensor& y_hat, const g::Tensor& y,
                        std::span<const std::size_t> active) {
  if (active.empty()) throw ValidationError("active_mse: empty active set");
  return g::mse(tape, g::select_cols(tape, y_hat, active), g::select_cols(tape, y, active));
}

grad::Tensor corridor_mse(g::Tape& tape, const g::Tensor& y_hat, const g::Tensor& y,
                          std::span<const std::size_t> corridor) {
  if (corridor.empty()) throw ValidationError("corridor_mse: empty corridor set");
  return g::mse(tape, g::select_cols(tape, y_hat, corridor), g::select_cols(tape, y, corridor));
}

grad::Tensor conservation_loss(g::Tape& tape, const g::Tensor& y_hat, const g::Tensor& y,
                               std::span<const std::vector<std::size_t>> groups) {
  if (groups.empty()) throw ValidationError("conservation_loss: no groups");
  std::vector<g::Tensor> predicted, observed;
  for (const auto& group : groups) {
    if (group.empty()) throw ValidationError("conservation_loss: empty group");
    predicted.push_back(g::sum_cols(tape, y_hat, group));
    observed.push_back(g::sum_cols(tape, y, group));
  }
  // Mean over the [B x K] matrix equals the mean over K of per-group batch means.
  return g::mse(tape, g::concat_cols(tape, predicted), g::concat_cols(tape, observed));
}

grad::Tensor total_loss(g::Tape& tape, const g::Tensor& y_hat, const g::Tensor& y, const CorridorTopology& topology,
                        const LossWeights& weights, LossTerms terms) {
  if (y_hat.rows() != y.rows() || y_hat.cols() != y.cols() || y_hat.cols() != topology.n_movements) {
    throw ValidationError("total_loss: prediction " + g::shape_string(y_hat.shape()) + " vs target " +
                          g::shape_string(y.shape()) + " for " + std::to_string(topology.n_movements) +
                          " movements");
  }
  if (weights.lambda_corr < 0 || weights.lambda_cons < 0) throw ValidationError("loss weights must be non-negative");
  g::Tensor loss = active_mse(tape, y_hat, y, topology.active_idx);
  if (terms.corridor && weights.lambda_corr > 0) {
    loss = g::add(tape, loss, g::scale(tape, corridor_mse(tape, y_hat, y, topology.corridor_idx), weights.lambda_corr));
  }
  if (terms.conservation && weights.lambda_cons > 0) {
    loss = g::add(tape, loss, g::scale(tape, conservation_loss(tape, y_hat, y, topology.groups), weights.lambda_cons));
  }
  return loss;
}

}  // namespace hfdtm
