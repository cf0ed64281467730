#include "hfdtm/training.hpp"

#include "hfdtm/digest.hpp"
#include "hfdtm/errors.hpp"
#include "hfdtm/metrics.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace hfdtm {

using json = nlohmann::json;

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::NoHierarchy: return "no_hierarchy";
    case Ablation::NoCorridorWeight: return "no_corridor_weight";
    case Ablation::NoConservation: return "no_conservation";
  }
  return "unknown";
}

Ablation ablation_from_string(const std::string& name) {
  if (name == "none") return Ablation::None;
  if (name == "no_hierarchy") return Ablation::NoHierarchy;
  if (name == "no_corridor_weight") return Ablation::NoCorridorWeight;
  if (name == "no_conservation") return Ablation::NoConservation;
  throw ValidationError("unknown ablation flag '" + name +
                        "' (expected none, no_hierarchy, no_corridor_weight or no_conservation)");
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ValidationError("config: lr must be positive");
  if (weight_decay < 0) throw ValidationError("config: weight_decay must be non-negative");
  if (batch_size == 0) throw ValidationError("config: batch_size must be at least 1");
  if (max_epochs == 0) throw ValidationError("config: max_epochs must be at least 1");
  if (patience == 0) throw ValidationError("config: patience must be at least 1");
  if (scheduler.patience == 0) throw ValidationError("config: scheduler.patience must be at least 1");
  if (!(scheduler.factor > 0 && scheduler.factor < 1)) throw ValidationError("config: scheduler.factor must be in (0, 1)");
  if (scheduler.min_lr < 0) throw ValidationError("config: scheduler.min_lr must be non-negative");
  if (loss.lambda_corr < 0 || loss.lambda_cons < 0) throw ValidationError("config: loss weights must be non-negative");
  if (window == 0) throw ValidationError("config: window must be at least 1");
  if (hidden == 0 || embed_dim == 0 || mlp_hidden == 0) throw ValidationError("config: layer sizes must be positive");
}

std::string TrainConfig::to_json() const {
  json j = {{"lr", lr},
            {"weight_decay", weight_decay},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"scheduler", {{"factor", scheduler.factor}, {"patience", scheduler.patience}, {"min_lr", scheduler.min_lr}}},
            {"loss", {{"lambda_corr", loss.lambda_corr}, {"lambda_cons", loss.lambda_cons}}},
            {"window", window},
            {"seed", seed},
            {"ablation", to_string(ablation)},
            {"hidden", hidden},
            {"embed_dim", embed_dim},
            {"mlp_hidden", mlp_hidden}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  static const std::set<std::string> known = {"lr",   "weight_decay", "batch_size", "max_epochs", "patience",
                                              "scheduler", "loss",   "window",     "seed",       "ablation",
                                              "hidden",    "embed_dim", "mlp_hidden"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ValidationError("config: unknown key '" + key + "'");
  }
  try {
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    if (j.contains("scheduler")) {
      const auto& s = j["scheduler"];
      c.scheduler.factor = s.value("factor", c.scheduler.factor);
      c.scheduler.patience = s.value("patience", c.scheduler.patience);
      c.scheduler.min_lr = s.value("min_lr", c.scheduler.min_lr);
    }
    if (j.contains("loss")) {
      const auto& l = j["loss"];
      c.loss.lambda_corr = l.value("lambda_corr", c.loss.lambda_corr);
      c.loss.lambda_cons = l.value("lambda_cons", c.loss.lambda_cons);
    }
    c.window = j.value("window", c.window);
    c.seed = j.value("seed", c.seed);
    c.ablation = ablation_from_string(j.value("ablation", std::string("none")));
    c.hidden = j.value("hidden", c.hidden);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainConfig::digest() const { return sha256_hex(to_json()); }

Adam::Adam(std::vector<grad::Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.value().rows(), p.value().cols()));
    v_.push_back(Matrix::Zero(p.value().rows(), p.value().cols()));
  }
}

void Adam::step(double lr, double weight_decay) {
  for (const auto& p : params_) {
    if (!p.grad().allFinite()) throw NumericError("adam: non-finite gradient");
  }
  ++t_;
  const double t = static_cast<double>(t_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Matrix& theta = params_[i].mutable_value();
    const Matrix& g = params_[i].grad();
    if (weight_decay != 0.0) theta *= (1.0 - lr * weight_decay);
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    theta.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + config_.epsilon);
  }
}

ReduceOnPlateau::ReduceOnPlateau(double initial_lr, SchedulerConfig config)
    : config_(config), lr_(initial_lr), best_(std::numeric_limits<double>::infinity()) {}

double ReduceOnPlateau::step(double metric) {
  if (metric < best_) {
    best_ = metric;
    bad_epochs_ = 0;
  } else if (++bad_epochs_ > config_.patience) {
    lr_ = std::max(lr_ * config_.factor, config_.min_lr);
    bad_epochs_ = 0;
  }
  return lr_;
}

EarlyStopping::EarlyStopping(std::size_t patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience_ == 0) throw ValidationError("early stopping patience must be at least 1");
}

bool EarlyStopping::update(std::size_t epoch, double metric) {
  if (metric < best_) {
    best_ = metric;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

std::string history_to_json(const TrainHistory& history, bool include_timing) {
  json epochs = json::array();
  for (const auto& e : history.epochs) {
    json r = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_mae", e.val_mae}, {"lr", e.lr}};
    if (include_timing) r["seconds"] = e.seconds;
    epochs.push_back(std::move(r));
  }
  json j = {{"epochs", std::move(epochs)},
            {"best_epoch", history.best_epoch},
            {"best_val_mae", history.best_val_mae},
            {"early_stopped", history.early_stopped}};
  if (include_timing) j["total_seconds"] = history.total_seconds;
  return j.dump(2);
}

ModelDims dims_for(const CorridorTopology& topology, const TrainConfig& config) {
  ModelDims d;
  d.n_movements = topology.n_movements;
  d.n_corridor = topology.n_corridor();
  d.hidden = config.hidden;
  d.embed_dim = config.embed_dim;
  d.mlp_hidden = config.mlp_hidden;
  return d;
}

LossTerms loss_terms_for(Ablation ablation) {
  LossTerms t;
  if (ablation == Ablation::NoCorridorWeight) t.corridor = false;
  if (ablation == Ablation::NoConservation) t.conservation = false;
  return t;
}

TrainResult train(ModelKind kind, const PreparedData& data, const CorridorTopology& topology,
                  const TrainConfig& config) {
  config.validate();
  if (data.train.size() == 0 || data.val.size() == 0) throw ValidationError("train: empty train or validation set");
  if (data.train.n_movements() != topology.n_movements) throw ValidationError("train: data/topology width mismatch");
  if (kind == ModelKind::HfdTm && config.ablation == Ablation::NoHierarchy) kind = ModelKind::FlatHfdTm;

  const bool hierarchical_loss = kind == ModelKind::HfdTm || kind == ModelKind::FlatHfdTm;
  const LossTerms terms = loss_terms_for(config.ablation);

  Model model(kind, dims_for(topology, config), topology, config.seed);
  std::vector<grad::Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  Adam adam(std::move(params));
  ReduceOnPlateau scheduler(config.lr, config.scheduler);
  EarlyStopping stopper(config.patience);

  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32), 0x5eedu};
  std::mt19937_64 shuffle_rng(seq);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainHistory history;
  std::vector<Matrix> best = model.snapshot();
  const auto started = std::chrono::steady_clock::now();
  double lr = config.lr;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0, batch_index = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(start + config.batch_size, order.size());
      const Batch batch = data.train.batch(std::span<const std::size_t>(order).subspan(start, end - start));
      model.zero_grad();
      grad::Tape tape;
      const ForwardOutputs out = model.forward(tape, batch);
      const grad::Tensor target = grad::Tensor::constant(batch.target);
      const grad::Tensor loss = hierarchical_loss
                                    ? total_loss(tape, out.y_hat, target, topology, config.loss, terms)
                                    : active_mse(tape, out.y_hat, target, topology.active_idx);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError(fmt::format("train: non-finite loss at epoch {} batch {}", epoch, batch_index));
      }
      tape.backward(loss);
      adam.step(lr, config.weight_decay);
      loss_sum += value * static_cast<double>(batch.size());
      seen += batch.size();
    }

    const Matrix val_pred = predict_windows(model, data.val);
    const double val_mae =
        active_errors(val_pred, data.val.targets(), data.normalization, topology.active_idx).mae;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.val_mae = val_mae;
    rec.lr = lr;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    history.epochs.push_back(rec);

    if (stopper.update(epoch, val_mae)) best = model.snapshot();
    lr = scheduler.step(val_mae);
    if (stopper.should_stop()) {
      history.early_stopped = epoch < config.max_epochs;
      break;
    }
  }
  model.restore(best);
  history.best_epoch = stopper.best_epoch();
  history.best_val_mae = stopper.best();
  history.total_seconds = history.epochs.back().seconds;
  return {std::move(model), std::move(history)};
}

TrainResult run_ablation_arm(Ablation arm, const PreparedData& data, const CorridorTopology& topology,
                             const TrainConfig& config) {
  TrainConfig c = config;
  c.ablation = arm;
  return train(arm == Ablation::NoHierarchy ? ModelKind::FlatHfdTm : ModelKind::HfdTm, data, topology, c);
}

}  // namespace hfdtm
