#pragma once

// Hierarchical training loss: MSE over active movements, an extra corridor
// MSE term and a per-intersection conservation penalty on group sums.

#include "hfdtm/dataio.hpp"
#include "hfdtm/grad.hpp"

#include <span>
#include <vector>

namespace hfdtm {

struct LossWeights {
  double lambda_corr = 0.5;
  double lambda_cons = 0.1;
};

/// Which terms enter the total; the ablation arms switch these off.
struct LossTerms {
  bool corridor = true;
  bool conservation = true;
};

grad::Tensor active_mse(grad::Tape& tape, const grad::Tensor& y_hat, const grad::Tensor& y,
                        std::span<const std::size_t> active);
grad::Tensor corridor_mse(grad::Tape& tape, const grad::Tensor& y_hat, const grad::Tensor& y,
                          std::span<const std::size_t> corridor);
/// (1/K) sum_k mean over the batch of (sum_{i in G_k} y_hat_i - sum_{i in G_k} y_i)^2.
grad::Tensor conservation_loss(grad::Tape& tape, const grad::Tensor& y_hat, const grad::Tensor& y,
                               std::span<const std::vector<std::size_t>> groups);

grad::Tensor total_loss(grad::Tape& tape, const grad::Tensor& y_hat, const grad::Tensor& y,
                        const CorridorTopology& topology, const LossWeights& weights, LossTerms terms = {});

}  // namespace hfdtm
