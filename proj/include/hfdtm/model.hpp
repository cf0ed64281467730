#pragma once

// Hierarchical turning-movement forecaster and the flat recurrent baselines.
//
// The hierarchical model predicts corridor throughs from the corridor
// channels of the window, expands them to every movement with a linear map
// plus an hour-conditioned MLP correction, adds a fixed share of the last
// observation, refines with a two-layer residual block and zeroes
// structurally infeasible movements.

#include "hfdtm/dataio.hpp"
#include "hfdtm/grad.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace hfdtm {

using grad::Tape;
using grad::Tensor;

enum class ModelKind {
  HfdTm,       // hierarchical model
  FlatHfdTm,   // same heads, but the recurrent encoder sees all movements and no corridor bottleneck
  Gru,         // flat GRU baseline
  Lstm,        // flat LSTM baseline
};

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct ModelDims {
  std::size_t n_movements = 0;
  std::size_t n_corridor = 0;
  std::size_t hidden = 64;      // recurrent state
  std::size_t embed_dim = 64;   // hour embedding
  std::size_t mlp_hidden = 64;  // ratio MLP hidden layer
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Fused-gate GRU cell: columns of the gate matrices are [reset | update | candidate].
struct GruCell {
  Tensor w_ih, w_hh, b_ih, b_hh;
};

/// Fused-gate LSTM cell: columns are [input | forget | cell | output].
struct LstmCell {
  Tensor w_ih, w_hh, b_ih, b_hh;
};

Tensor gru_step(Tape& tape, const GruCell& cell, const Tensor& x, const Tensor& h);
std::pair<Tensor, Tensor> lstm_step(Tape& tape, const LstmCell& cell, const Tensor& x, const Tensor& h,
                                    const Tensor& c);

struct HfdTmParams {
  static constexpr double kResidualWeight = 0.3;

  bool hierarchical = true;
  GruCell encoder;
  Tensor head_w, head_b;        // hidden -> corridor (hierarchical only)
  Tensor expand_w, expand_b;    // linear expansion, stored as [in x N]
  Tensor hour_embedding;        // [24 x E]
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Tensor refine_w1, refine_b1, refine_w2, refine_b2;
  Tensor zero_mask;             // [1 x N] constant buffer

  std::vector<NamedTensor> trainable() const;
};

struct BaselineParams {
  ModelKind kind = ModelKind::Gru;
  std::variant<GruCell, LstmCell> cell;
  Tensor head_w, head_b;

  std::vector<NamedTensor> trainable() const;
};

struct ForwardOutputs {
  Tensor y_hat;    // [B x N]
  Tensor y_hat_c;  // [B x N_c]; undefined for models without a corridor stage
};

/// Recurrent encoder over the corridor channels followed by the corridor head.
Tensor corridor_encode(Tape& tape, std::span<const Tensor> corridor_steps, const HfdTmParams& params);
/// Linear expansion plus hour-conditioned MLP correction.
Tensor turn_ratio_expand(Tape& tape, const Tensor& y_c, std::span<const std::size_t> hours,
                         const HfdTmParams& params);
/// Fixed residual from the last observation, residual refinement, zero mask.
Tensor refine_and_mask(Tape& tape, const Tensor& y_all, const Tensor& last_obs, const HfdTmParams& params);
ForwardOutputs hfd_tm_forward(Tape& tape, const Batch& batch, const CorridorTopology& topology,
                              const HfdTmParams& params);
Tensor baseline_forward(Tape& tape, const Batch& batch, const BaselineParams& params);

HfdTmParams init_hfd_tm_params(std::uint64_t seed, const ModelDims& dims, const CorridorTopology& topology,
                               bool hierarchical = true);
BaselineParams init_baseline_params(std::uint64_t seed, const ModelDims& dims, ModelKind kind);

/// A trainable forecaster of any kind, bound to its topology.
class Model {
 public:
  Model(ModelKind kind, const ModelDims& dims, const CorridorTopology& topology, std::uint64_t seed);

  ModelKind kind() const { return kind_; }
  const ModelDims& dims() const { return dims_; }
  const CorridorTopology& topology() const { return topology_; }
  bool has_zero_mask() const { return std::holds_alternative<HfdTmParams>(params_); }

  ForwardOutputs forward(Tape& tape, const Batch& batch) const;
  /// Forward without recording; returns normalized predictions [B x N].
  Matrix predict(const Batch& batch) const;

  std::vector<NamedTensor> parameters() const;
  /// Non-trainable state saved with the model (the zero mask).
  std::vector<NamedTensor> buffers() const;

  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);
  void zero_grad();

  const HfdTmParams* hfd_tm() const { return std::get_if<HfdTmParams>(&params_); }
  const BaselineParams* baseline() const { return std::get_if<BaselineParams>(&params_); }

 private:
  ModelKind kind_;
  ModelDims dims_;
  CorridorTopology topology_;
  std::variant<HfdTmParams, BaselineParams> params_;
};

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t window = 0;
  std::string topology_digest;
  std::string normalization_digest;
};

std::string checkpoint_to_json(const Model& model, const CheckpointMeta& meta);
void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::filesystem::path& path);

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
};

/// Rejects dimension or topology-digest mismatches against `topology`.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const CorridorTopology& topology);
LoadedCheckpoint checkpoint_from_json(const std::string& text, const CorridorTopology& topology);

}  // namespace hfdtm
