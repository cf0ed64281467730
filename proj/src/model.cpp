#include "hfdtm/model.hpp"

#include "hfdtm/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace hfdtm {

namespace g = grad;
using json = nlohmann::json;

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::HfdTm: return "hfdtm";
    case ModelKind::FlatHfdTm: return "hfdtm_flat";
    case ModelKind::Gru: return "gru";
    case ModelKind::Lstm: return "lstm";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "hfdtm") return ModelKind::HfdTm;
  if (name == "hfdtm_flat") return ModelKind::FlatHfdTm;
  if (name == "gru") return ModelKind::Gru;
  if (name == "lstm") return ModelKind::Lstm;
  throw ValidationError("unknown model kind '" + name + "' (expected hfdtm, hfdtm_flat, gru or lstm)");
}

namespace {

Tensor zeros(std::size_t rows, std::size_t cols) {
  return Tensor::constant(Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return g::add_row(tape, g::matmul(tape, x, w), b);
}

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  // U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = rows.
  Tensor weight(std::size_t rows, std::size_t cols) {
    return uniform(rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)));
  }
  Tensor uniform(std::size_t rows, std::size_t cols, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
    return Tensor::parameter(std::move(m));
  }
  static Tensor bias(std::size_t cols) { return Tensor::parameter(Matrix::Zero(1, static_cast<Eigen::Index>(cols))); }

  GruCell gru(std::size_t in, std::size_t hidden) {
    return {weight(in, 3 * hidden), weight(hidden, 3 * hidden), bias(3 * hidden), bias(3 * hidden)};
  }
  LstmCell lstm(std::size_t in, std::size_t hidden) {
    return {weight(in, 4 * hidden), weight(hidden, 4 * hidden), bias(4 * hidden), bias(4 * hidden)};
  }

 private:
  std::mt19937_64 rng_;
};

void check_dims(const ModelDims& dims) {
  if (dims.n_movements == 0 || dims.n_corridor == 0 || dims.hidden == 0 || dims.embed_dim == 0 ||
      dims.mlp_hidden == 0) {
    throw ValidationError("model dimensions must be positive");
  }
}

void check_batch(const Batch& batch, std::size_t n) {
  if (batch.steps.empty()) throw ValidationError("forward: batch has no time steps");
  for (const auto& s : batch.steps) {
    if (static_cast<std::size_t>(s.cols()) != n || s.rows() != batch.steps.front().rows()) {
      throw ValidationError("forward: batch step is " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()) +
                            ", expected " + std::to_string(batch.steps.front().rows()) + "x" + std::to_string(n));
    }
  }
  if (batch.hours.size() != static_cast<std::size_t>(batch.steps.front().rows())) {
    throw ValidationError("forward: hour count differs from batch size");
  }
}

void append_cell(std::vector<NamedTensor>& out, const std::string& prefix, const Tensor& w_ih, const Tensor& w_hh,
                 const Tensor& b_ih, const Tensor& b_hh) {
  out.push_back({prefix + ".w_ih", w_ih});
  out.push_back({prefix + ".w_hh", w_hh});
  out.push_back({prefix + ".b_ih", b_ih});
  out.push_back({prefix + ".b_hh", b_hh});
}

}  // namespace

Tensor gru_step(Tape& tape, const GruCell& cell, const Tensor& x, const Tensor& h) {
  const std::size_t hs = h.cols();
  if (cell.w_hh.rows() != hs || cell.w_hh.cols() != 3 * hs) {
    throw ValidationError("gru_step: hidden state width " + std::to_string(hs) + " does not match cell");
  }
  const Tensor gi = linear(tape, x, cell.w_ih, cell.b_ih);
  const Tensor gh = linear(tape, h, cell.w_hh, cell.b_hh);
  const Tensor r = g::sigmoid(tape, g::add(tape, g::slice_cols(tape, gi, 0, hs), g::slice_cols(tape, gh, 0, hs)));
  const Tensor z = g::sigmoid(tape, g::add(tape, g::slice_cols(tape, gi, hs, hs), g::slice_cols(tape, gh, hs, hs)));
  const Tensor n = g::tanh(
      tape, g::add(tape, g::slice_cols(tape, gi, 2 * hs, hs), g::mul(tape, r, g::slice_cols(tape, gh, 2 * hs, hs))));
  // (1 - z) * n + z * h
  return g::add(tape, n, g::mul(tape, z, g::sub(tape, h, n)));
}

std::pair<Tensor, Tensor> lstm_step(Tape& tape, const LstmCell& cell, const Tensor& x, const Tensor& h,
                                    const Tensor& c) {
  const std::size_t hs = h.cols();
  if (cell.w_hh.rows() != hs || cell.w_hh.cols() != 4 * hs) {
    throw ValidationError("lstm_step: hidden state width " + std::to_string(hs) + " does not match cell");
  }
  const Tensor gates = g::add(tape, linear(tape, x, cell.w_ih, cell.b_ih), linear(tape, h, cell.w_hh, cell.b_hh));
  const Tensor i = g::sigmoid(tape, g::slice_cols(tape, gates, 0, hs));
  const Tensor f = g::sigmoid(tape, g::slice_cols(tape, gates, hs, hs));
  const Tensor cand = g::tanh(tape, g::slice_cols(tape, gates, 2 * hs, hs));
  const Tensor o = g::sigmoid(tape, g::slice_cols(tape, gates, 3 * hs, hs));
  Tensor c_next = g::add(tape, g::mul(tape, f, c), g::mul(tape, i, cand));
  Tensor h_next = g::mul(tape, o, g::tanh(tape, c_next));
  return {std::move(h_next), std::move(c_next)};
}

std::vector<NamedTensor> HfdTmParams::trainable() const {
  std::vector<NamedTensor> out;
  append_cell(out, "encoder", encoder.w_ih, encoder.w_hh, encoder.b_ih, encoder.b_hh);
  if (hierarchical) {
    out.push_back({"corridor_head.w", head_w});
    out.push_back({"corridor_head.b", head_b});
  }
  out.push_back({"expand.w", expand_w});
  out.push_back({"expand.b", expand_b});
  out.push_back({"hour_embedding", hour_embedding});
  out.push_back({"mlp.w1", mlp_w1});
  out.push_back({"mlp.b1", mlp_b1});
  out.push_back({"mlp.w2", mlp_w2});
  out.push_back({"mlp.b2", mlp_b2});
  out.push_back({"refine.w1", refine_w1});
  out.push_back({"refine.b1", refine_b1});
  out.push_back({"refine.w2", refine_w2});
  out.push_back({"refine.b2", refine_b2});
  return out;
}

std::vector<NamedTensor> BaselineParams::trainable() const {
  std::vector<NamedTensor> out;
  std::visit([&](const auto& c) { append_cell(out, "encoder", c.w_ih, c.w_hh, c.b_ih, c.b_hh); }, cell);
  out.push_back({"head.w", head_w});
  out.push_back({"head.b", head_b});
  return out;
}

Tensor corridor_encode(Tape& tape, std::span<const Tensor> corridor_steps, const HfdTmParams& params) {
  if (corridor_steps.empty()) throw ValidationError("corridor_encode: empty window");
  const std::size_t in = params.encoder.w_ih.rows();
  const std::size_t hs = params.encoder.w_hh.rows();
  const std::size_t b = corridor_steps.front().rows();
  Tensor h = zeros(b, hs);
  for (const Tensor& x : corridor_steps) {
    if (x.cols() != in || x.rows() != b) {
      throw ValidationError("corridor_encode: step shape " + g::shape_string(x.shape()) + ", expected [" +
                            std::to_string(b) + "x" + std::to_string(in) + "]");
    }
    h = gru_step(tape, params.encoder, x, h);
  }
  if (!params.hierarchical) return h;
  return linear(tape, h, params.head_w, params.head_b);
}

Tensor turn_ratio_expand(Tape& tape, const Tensor& y_c, std::span<const std::size_t> hours,
                         const HfdTmParams& params) {
  if (hours.size() != y_c.rows()) throw ValidationError("turn_ratio_expand: hour count differs from batch size");
  for (std::size_t h : hours) {
    if (h >= kHoursPerDay) throw ValidationError("turn_ratio_expand: hour " + std::to_string(h) + " out of range");
  }
  const Tensor expanded = linear(tape, y_c, params.expand_w, params.expand_b);
  const Tensor e_h = g::embedding_rows(tape, params.hour_embedding, hours);
  const Tensor z = g::concat_cols(tape, {y_c, e_h});
  const Tensor hidden = g::relu(tape, linear(tape, z, params.mlp_w1, params.mlp_b1));
  const Tensor delta = linear(tape, hidden, params.mlp_w2, params.mlp_b2);
  return g::add(tape, expanded, delta);
}

Tensor refine_and_mask(Tape& tape, const Tensor& y_all, const Tensor& last_obs, const HfdTmParams& params) {
  const Tensor y_res = g::add(tape, y_all, g::scale(tape, last_obs, HfdTmParams::kResidualWeight));
  const Tensor hidden = g::relu(tape, linear(tape, y_res, params.refine_w1, params.refine_b1));
  const Tensor y_ref = g::add(tape, linear(tape, hidden, params.refine_w2, params.refine_b2), y_res);
  return g::mul_row(tape, y_ref, params.zero_mask);
}

ForwardOutputs hfd_tm_forward(Tape& tape, const Batch& batch, const CorridorTopology& topology,
                              const HfdTmParams& params) {
  check_batch(batch, topology.n_movements);
  std::vector<Tensor> steps;
  steps.reserve(batch.steps.size());
  for (const Matrix& s : batch.steps) {
    const Tensor x = Tensor::constant(s);
    steps.push_back(params.hierarchical ? g::select_cols(tape, x, topology.corridor_idx) : x);
  }
  ForwardOutputs out;
  const Tensor code = corridor_encode(tape, steps, params);
  if (params.hierarchical) out.y_hat_c = code;
  const Tensor y_all = turn_ratio_expand(tape, code, batch.hours, params);
  out.y_hat = refine_and_mask(tape, y_all, Tensor::constant(batch.last_step()), params);
  return out;
}

Tensor baseline_forward(Tape& tape, const Batch& batch, const BaselineParams& params) {
  if (batch.steps.empty()) throw ValidationError("baseline_forward: empty window");
  const std::size_t b = static_cast<std::size_t>(batch.steps.front().rows());
  const std::size_t in = std::visit([](const auto& c) { return c.w_ih.rows(); }, params.cell);
  const std::size_t hs = std::visit([](const auto& c) { return c.w_hh.rows(); }, params.cell);
  for (const Matrix& s : batch.steps) {
    if (static_cast<std::size_t>(s.cols()) != in || static_cast<std::size_t>(s.rows()) != b) {
      throw ValidationError("baseline_forward: step has " + std::to_string(s.cols()) + " movements, expected " +
                            std::to_string(in));
    }
  }
  Tensor h = zeros(b, hs);
  if (const auto* gru = std::get_if<GruCell>(&params.cell)) {
    for (const Matrix& s : batch.steps) h = gru_step(tape, *gru, Tensor::constant(s), h);
  } else {
    const auto& lstm = std::get<LstmCell>(params.cell);
    Tensor c = zeros(b, hs);
    for (const Matrix& s : batch.steps) std::tie(h, c) = lstm_step(tape, lstm, Tensor::constant(s), h, c);
  }
  return linear(tape, h, params.head_w, params.head_b);
}

HfdTmParams init_hfd_tm_params(std::uint64_t seed, const ModelDims& dims, const CorridorTopology& topology,
                               bool hierarchical) {
  check_dims(dims);
  if (dims.n_movements != topology.n_movements || dims.n_corridor != topology.n_corridor()) {
    throw ValidationError("model dimensions do not match the topology");
  }
  Initializer init(seed);
  const std::size_t n = dims.n_movements;
  const std::size_t code = hierarchical ? dims.n_corridor : dims.hidden;
  HfdTmParams p;
  p.hierarchical = hierarchical;
  p.encoder = init.gru(hierarchical ? dims.n_corridor : n, dims.hidden);
  if (hierarchical) {
    p.head_w = init.weight(dims.hidden, dims.n_corridor);
    p.head_b = Initializer::bias(dims.n_corridor);
  }
  p.expand_w = init.weight(code, n);
  p.expand_b = Initializer::bias(n);
  p.hour_embedding = init.uniform(kHoursPerDay, dims.embed_dim, 0.1);
  p.mlp_w1 = init.weight(code + dims.embed_dim, dims.mlp_hidden);
  p.mlp_b1 = Initializer::bias(dims.mlp_hidden);
  p.mlp_w2 = init.weight(dims.mlp_hidden, n);
  p.mlp_b2 = Initializer::bias(n);
  p.refine_w1 = init.weight(n, n);
  p.refine_b1 = Initializer::bias(n);
  p.refine_w2 = init.weight(n, n);
  p.refine_b2 = Initializer::bias(n);
  p.zero_mask = Tensor::constant(
      Eigen::Map<const Matrix>(topology.zero_mask.data(), 1, static_cast<Eigen::Index>(n)));
  return p;
}

BaselineParams init_baseline_params(std::uint64_t seed, const ModelDims& dims, ModelKind kind) {
  check_dims(dims);
  Initializer init(seed);
  BaselineParams p;
  p.kind = kind;
  if (kind == ModelKind::Gru) {
    p.cell = init.gru(dims.n_movements, dims.hidden);
  } else if (kind == ModelKind::Lstm) {
    p.cell = init.lstm(dims.n_movements, dims.hidden);
  } else {
    throw ValidationError("init_baseline_params: not a baseline kind");
  }
  p.head_w = init.weight(dims.hidden, dims.n_movements);
  p.head_b = Initializer::bias(dims.n_movements);
  return p;
}

Model::Model(ModelKind kind, const ModelDims& dims, const CorridorTopology& topology, std::uint64_t seed)
    : kind_(kind), dims_(dims), topology_(topology) {
  topology_.validate();
  switch (kind) {
    case ModelKind::HfdTm: params_ = init_hfd_tm_params(seed, dims, topology, true); break;
    case ModelKind::FlatHfdTm: params_ = init_hfd_tm_params(seed, dims, topology, false); break;
    default: params_ = init_baseline_params(seed, dims, kind); break;
  }
}

ForwardOutputs Model::forward(Tape& tape, const Batch& batch) const {
  if (const auto* p = hfd_tm()) return hfd_tm_forward(tape, batch, topology_, *p);
  check_batch(batch, dims_.n_movements);
  return {baseline_forward(tape, batch, *baseline()), Tensor()};
}

Matrix Model::predict(const Batch& batch) const {
  Tape tape;
  tape.set_recording(false);
  return forward(tape, batch).y_hat.value();
}

std::vector<NamedTensor> Model::parameters() const {
  return std::visit([](const auto& p) { return p.trainable(); }, params_);
}

std::vector<NamedTensor> Model::buffers() const {
  if (const auto* p = hfd_tm()) return {{"zero_mask", p->zero_mask}};
  return {};
}

std::vector<Matrix> Model::snapshot() const {
  std::vector<Matrix> out;
  for (const auto& p : parameters()) out.push_back(p.tensor.value());
  return out;
}

void Model::restore(const std::vector<Matrix>& values) {
  auto params = parameters();
  if (values.size() != params.size()) throw ValidationError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].rows() != params[i].tensor.value().rows() || values[i].cols() != params[i].tensor.value().cols()) {
      throw ValidationError("restore: shape mismatch for " + params[i].name);
    }
    params[i].tensor.mutable_value() = values[i];
  }
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

namespace {

json tensor_json(const Tensor& t) {
  const Matrix& v = t.value();
  return {{"shape", {v.rows(), v.cols()}}, {"values", std::vector<double>(v.data(), v.data() + v.size())}};
}

Matrix tensor_from_json(const json& j) {
  const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
  const auto values = j.at("values").get<std::vector<double>>();
  if (shape.size() != 2 || shape[0] * shape[1] != static_cast<Eigen::Index>(values.size())) {
    throw ValidationError("checkpoint: malformed tensor");
  }
  return Eigen::Map<const Matrix>(values.data(), shape[0], shape[1]);
}

}  // namespace

std::string checkpoint_to_json(const Model& model, const CheckpointMeta& meta) {
  json tensors = json::object();
  for (const auto& p : model.parameters()) tensors[p.name] = tensor_json(p.tensor);
  json buffers = json::object();
  for (const auto& b : model.buffers()) buffers[b.name] = tensor_json(b.tensor);
  const ModelDims& d = model.dims();
  json j = {{"format", "hfdtm-checkpoint"},
            {"version", 1},
            {"model", to_string(model.kind())},
            {"dims",
             {{"n_movements", d.n_movements},
              {"n_corridor", d.n_corridor},
              {"hidden", d.hidden},
              {"embed_dim", d.embed_dim},
              {"mlp_hidden", d.mlp_hidden}}},
            {"seed", meta.seed},
            {"window", meta.window},
            {"topology_digest", meta.topology_digest},
            {"normalization_digest", meta.normalization_digest},
            {"residual_weight", HfdTmParams::kResidualWeight},
            {"parameters", std::move(tensors)},
            {"buffers", std::move(buffers)}};
  return j.dump();
}

void save_checkpoint(const Model& model, const CheckpointMeta& meta, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(model, meta);
  if (!out) throw ValidationError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint checkpoint_from_json(const std::string& text, const CorridorTopology& topology) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "hfdtm-checkpoint") throw ValidationError("checkpoint: unknown format");
    CheckpointMeta meta;
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.window = j.at("window").get<std::size_t>();
    meta.topology_digest = j.at("topology_digest").get<std::string>();
    meta.normalization_digest = j.at("normalization_digest").get<std::string>();
    if (meta.topology_digest != topology.digest()) {
      throw ValidationError("checkpoint: topology digest mismatch (checkpoint was trained on a different topology)");
    }
    const auto& jd = j.at("dims");
    ModelDims dims;
    dims.n_movements = jd.at("n_movements").get<std::size_t>();
    dims.n_corridor = jd.at("n_corridor").get<std::size_t>();
    dims.hidden = jd.at("hidden").get<std::size_t>();
    dims.embed_dim = jd.at("embed_dim").get<std::size_t>();
    dims.mlp_hidden = jd.at("mlp_hidden").get<std::size_t>();
    if (dims.n_movements != topology.n_movements || dims.n_corridor != topology.n_corridor()) {
      throw ValidationError("checkpoint: dimension mismatch with topology");
    }
    Model model(model_kind_from_string(j.at("model").get<std::string>()), dims, topology, meta.seed);
    const auto& tensors = j.at("parameters");
    std::vector<Matrix> values;
    for (const auto& p : model.parameters()) {
      if (!tensors.contains(p.name)) throw ValidationError("checkpoint: missing parameter " + p.name);
      values.push_back(tensor_from_json(tensors.at(p.name)));
    }
    model.restore(values);
    return {std::move(model), std::move(meta)};
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const CorridorTopology& topology) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str(), topology);
}

}  // namespace hfdtm
