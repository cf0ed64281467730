#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "hfdtm/errors.hpp"
#include "hfdtm/model.hpp"
#include "hfdtm/objective.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace hfdtm;
using hfdtm::testing::random_batch;
using hfdtm::testing::random_matrix;
using hfdtm::testing::small_topology;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

ModelDims small_dims(const CorridorTopology& t) {
  ModelDims d;
  d.n_movements = t.n_movements;
  d.n_corridor = t.n_corridor();
  d.hidden = 4;
  d.embed_dim = 3;
  d.mlp_hidden = 5;
  return d;
}

void zero_all(const std::vector<NamedTensor>& params) {
  for (auto p : params) p.tensor.mutable_value().setZero();
}

void set(Tensor t, std::initializer_list<double> values) {
  Matrix& m = t.mutable_value();
  REQUIRE(static_cast<std::size_t>(m.size()) == values.size());
  std::copy(values.begin(), values.end(), m.data());
}

}  // namespace

TEST_CASE("zero network encodes to zero") {
  const auto topo = small_topology(2, 3);
  auto p = init_hfd_tm_params(1, small_dims(topo), topo);
  zero_all(p.trainable());
  std::mt19937_64 rng(1);
  Tape tape;
  const std::vector<Tensor> steps = {Tensor::constant(random_matrix(rng, 3, 2))};
  const Tensor y_c = corridor_encode(tape, steps, p);
  CHECK(y_c.rows() == 3);
  CHECK(y_c.cols() == 2);
  CHECK(y_c.value().isZero());
}

TEST_CASE("scalar GRU encoder matches hand-evaluated gates") {
  CorridorTopology topo = small_topology(1, 2, false);
  ModelDims d = small_dims(topo);
  d.hidden = 1;
  auto p = init_hfd_tm_params(2, d, topo);
  // Gate order: reset, update, candidate.
  set(p.encoder.w_ih, {0.4, -0.3, 0.8});
  set(p.encoder.w_hh, {0.2, 0.5, -0.6});
  set(p.encoder.b_ih, {0.1, 0.0, -0.2});
  set(p.encoder.b_hh, {-0.05, 0.3, 0.15});
  set(p.head_w, {1.7});
  set(p.head_b, {0.25});

  const double xs[] = {0.5, -1.2};
  double h = 0.0;
  for (double x : xs) {
    const double r = sigmoid(0.4 * x + 0.1 + 0.2 * h - 0.05);
    const double z = sigmoid(-0.3 * x + 0.0 + 0.5 * h + 0.3);
    const double n = std::tanh(0.8 * x - 0.2 + r * (-0.6 * h + 0.15));
    h = (1.0 - z) * n + z * h;
  }
  const double expected = 1.7 * h + 0.25;

  Tape tape;
  std::vector<Tensor> steps;
  for (double x : xs) steps.push_back(Tensor::constant(Matrix::Constant(1, 1, x)));
  CHECK(corridor_encode(tape, steps, p).item() == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("linear-only expansion reproduces selected corridor entries") {
  const auto topo = small_topology(2, 2, false);  // N = 4, N_c = 2
  auto p = init_hfd_tm_params(3, small_dims(topo), topo);
  p.mlp_w1.mutable_value().setZero();
  p.mlp_w2.mutable_value().setZero();
  p.mlp_b2.mutable_value().setZero();
  Matrix sel = Matrix::Zero(2, 4);
  sel(0, 0) = 1;
  sel(1, 2) = 1;
  sel(1, 3) = 1;
  p.expand_w.mutable_value() = sel;
  Tape tape;
  Matrix yc(1, 2);
  yc << 3.5, -2.0;
  const std::vector<std::size_t> hours = {9};
  const Matrix out = turn_ratio_expand(tape, Tensor::constant(yc), hours, p).value();
  Matrix expected(1, 4);
  expected << 3.5, 0.0, -2.0, -2.0;
  CHECK(out == expected);
}

TEST_CASE("hour only enters through the correction branch") {
  const auto topo = small_topology(2, 3);
  const auto p = init_hfd_tm_params(4, small_dims(topo), topo);
  std::mt19937_64 rng(4);
  const Matrix yc = random_matrix(rng, 1, 2);
  const auto eval = [&](std::size_t hour, bool linear_only) {
    Tape tape;
    const std::vector<std::size_t> h = {hour};
    if (linear_only) {
      return Matrix((yc * p.expand_w.value()).rowwise() + p.expand_b.value().row(0));
    }
    return turn_ratio_expand(tape, Tensor::constant(yc), h, p).value();
  };
  const Matrix a = eval(3, false);
  const Matrix b = eval(18, false);
  CHECK((a - b).cwiseAbs().maxCoeff() > 0.0);
  // Subtracting the (hour-free) linear part leaves the hour-dependent MLP output.
  const Matrix lin = eval(0, true);
  CHECK(((a - lin) - (b - lin) - (a - b)).cwiseAbs().maxCoeff() < 1e-15);
  Tape tape;
  const std::vector<std::size_t> bad = {24};
  CHECK_THROWS_AS(turn_ratio_expand(tape, Tensor::constant(yc), bad, p), ValidationError);
}

TEST_CASE("expansion matches a direct re-evaluation") {
  const auto topo = small_topology(2, 2, false);  // N_c = 2, N = 4
  ModelDims d = small_dims(topo);
  d.embed_dim = 3;
  const auto p = init_hfd_tm_params(5, d, topo);
  std::mt19937_64 rng(5);
  const Matrix yc = random_matrix(rng, 3, 2);
  const std::vector<std::size_t> hours = {0, 13, 23};
  Tape tape;
  const Matrix got = turn_ratio_expand(tape, Tensor::constant(yc), hours, p).value();
  for (Eigen::Index b = 0; b < 3; ++b) {
    const Eigen::RowVectorXd y = yc.row(b);
    const Eigen::RowVectorXd e = p.hour_embedding.value().row(static_cast<Eigen::Index>(hours[static_cast<std::size_t>(b)]));
    Eigen::RowVectorXd z(5);
    z << y, e;
    const Eigen::RowVectorXd lin = y * p.expand_w.value() + p.expand_b.value().row(0);
    const Eigen::RowVectorXd hidden = (z * p.mlp_w1.value() + p.mlp_b1.value().row(0)).cwiseMax(0.0);
    const Eigen::RowVectorXd delta = hidden * p.mlp_w2.value() + p.mlp_b2.value().row(0);
    CHECK((got.row(b) - (lin + delta)).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("residual, refinement and mask") {
  const auto topo = small_topology(1, 2, false);
  auto p = init_hfd_tm_params(6, small_dims(topo), topo);
  p.refine_w1.mutable_value().setZero();
  p.refine_w2.mutable_value().setZero();
  Tape tape;
  Matrix all(1, 2), last(1, 2);
  all << 1.0, 2.0;
  last << 0.5, 1.0;
  const Matrix y = refine_and_mask(tape, Tensor::constant(all), Tensor::constant(last), p).value();
  CHECK(y(0, 0) == doctest::Approx(1.15).epsilon(1e-15));
  CHECK(y(0, 1) == doctest::Approx(2.3).epsilon(1e-15));
  CHECK(y == all + 0.3 * last);

  // y_ref = [3, 5, 2] with mask [1, 0, 1]
  const auto topo3 = small_topology(1, 3, true);
  auto p3 = init_hfd_tm_params(6, small_dims(topo3), topo3);
  p3.refine_w1.mutable_value().setZero();
  p3.refine_w2.mutable_value().setZero();
  std::swap(p3.zero_mask.mutable_value()(0, 1), p3.zero_mask.mutable_value()(0, 2));
  Matrix ref(1, 3);
  ref << 3, 5, 2;
  const Matrix masked = refine_and_mask(tape, Tensor::constant(ref), Tensor::constant(Matrix::Zero(1, 3)), p3).value();
  Matrix expected(1, 3);
  expected << 3, 0, 2;
  CHECK(masked == expected);
}

TEST_CASE("masked outputs are exactly zero") {
  const auto topo = small_topology(3, 4);
  std::mt19937_64 rng(7);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto p = init_hfd_tm_params(seed, small_dims(topo), topo);
    Tape tape;
    const Batch b = random_batch(rng, 4, 3, topo.n_movements);
    const Matrix y = hfd_tm_forward(tape, b, topo, p).y_hat.value();
    for (std::size_t i = 0; i < topo.n_movements; ++i) {
      if (topo.zero_mask[i] == 0.0) CHECK(y.col(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("persistence path under zeroed networks") {
  const auto topo = small_topology(2, 3);
  auto p = init_hfd_tm_params(8, small_dims(topo), topo);
  for (Tensor t : {p.expand_w, p.expand_b, p.mlp_w1, p.mlp_b1, p.mlp_w2, p.mlp_b2, p.refine_w1, p.refine_b1,
                   p.refine_w2, p.refine_b2}) {
    t.mutable_value().setZero();
  }
  std::mt19937_64 rng(8);
  const Batch b = random_batch(rng, 5, 4, topo.n_movements);
  Tape tape;
  const Matrix y = hfd_tm_forward(tape, b, topo, p).y_hat.value();
  const Matrix expected = (0.3 * b.last_step()).array().rowwise() * p.zero_mask.value().row(0).array();
  CHECK(y == expected);
}

TEST_CASE("forward composes the three stages") {
  const auto topo = small_topology(2, 3);
  const auto p = init_hfd_tm_params(9, small_dims(topo), topo);
  std::mt19937_64 rng(9);
  const Batch b = random_batch(rng, 1, 3, topo.n_movements);
  Tape tape;
  const ForwardOutputs out = hfd_tm_forward(tape, b, topo, p);

  Tape manual;
  std::vector<Tensor> steps;
  for (const Matrix& s : b.steps) {
    Matrix xc(1, static_cast<Eigen::Index>(topo.n_corridor()));
    for (std::size_t j = 0; j < topo.n_corridor(); ++j) xc(0, static_cast<Eigen::Index>(j)) = s(0, static_cast<Eigen::Index>(topo.corridor_idx[j]));
    steps.push_back(Tensor::constant(xc));
  }
  const Tensor yc = corridor_encode(manual, steps, p);
  const Tensor all = turn_ratio_expand(manual, yc, b.hours, p);
  const Tensor y = refine_and_mask(manual, all, Tensor::constant(b.last_step()), p);
  CHECK(out.y_hat.value() == y.value());
  CHECK(out.y_hat_c.value() == yc.value());

  Tape again;
  CHECK(hfd_tm_forward(again, b, topo, p).y_hat.value() == out.y_hat.value());
}

TEST_CASE("batch permutation permutes outputs") {
  const auto topo = small_topology(2, 3);
  const Model model(ModelKind::HfdTm, small_dims(topo), topo, 10);
  std::mt19937_64 rng(10);
  const Batch b = random_batch(rng, 4, 3, topo.n_movements);
  const std::vector<Eigen::Index> perm = {2, 0, 3, 1};
  Batch pb;
  for (const Matrix& s : b.steps) {
    Matrix m(4, s.cols());
    for (Eigen::Index i = 0; i < 4; ++i) m.row(i) = s.row(perm[static_cast<std::size_t>(i)]);
    pb.steps.push_back(m);
  }
  pb.target = b.target;
  for (Eigen::Index i = 0; i < 4; ++i) pb.hours.push_back(b.hours[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
  const Matrix y = model.predict(b);
  const Matrix py = model.predict(pb);
  for (Eigen::Index i = 0; i < 4; ++i) CHECK((py.row(i) - y.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("baselines") {
  const auto topo = small_topology(2, 3);
  for (ModelKind kind : {ModelKind::Gru, ModelKind::Lstm}) {
    auto p = init_baseline_params(11, small_dims(topo), kind);
    std::mt19937_64 rng(11);
    const Batch b = random_batch(rng, 3, 4, topo.n_movements);
    Tape tape;
    CHECK(baseline_forward(tape, b, p).value().rows() == 3);
    zero_all(p.trainable());
    CHECK(baseline_forward(tape, b, p).value().isZero());
  }
  ModelDims d;
  CHECK(d.hidden == 64);
  CHECK(d.embed_dim == 64);
}

TEST_CASE("scalar LSTM step matches hand-evaluated gates") {
  ModelDims d;
  d.n_movements = 1;
  d.n_corridor = 1;
  d.hidden = 1;
  auto p = init_baseline_params(12, d, ModelKind::Lstm);
  auto& cell = std::get<LstmCell>(p.cell);
  // Gate order: input, forget, cell, output.
  set(cell.w_ih, {0.3, -0.4, 0.9, 0.2});
  set(cell.w_hh, {0.1, 0.2, -0.3, 0.4});
  set(cell.b_ih, {0.05, 0.5, 0.0, -0.1});
  set(cell.b_hh, {0.0, 0.1, 0.2, 0.0});
  set(p.head_w, {-1.3});
  set(p.head_b, {0.4});
  const double x = 0.7;
  const double i = sigmoid(0.3 * x + 0.05);
  const double f = sigmoid(-0.4 * x + 0.5 + 0.1);
  const double g = std::tanh(0.9 * x + 0.2);
  const double o = sigmoid(0.2 * x - 0.1);
  const double c = f * 0.0 + i * g;
  const double h = o * std::tanh(c);
  Batch b;
  b.steps = {Matrix::Constant(1, 1, x)};
  b.target = Matrix::Zero(1, 1);
  b.hours = {0};
  Tape tape;
  CHECK(baseline_forward(tape, b, p).item() == doctest::Approx(-1.3 * h + 0.4).epsilon(1e-14));
}

TEST_CASE("parameter initialization") {
  const auto topo = small_topology(3, 4);
  const ModelDims d = small_dims(topo);
  const Model a(ModelKind::HfdTm, d, topo, 21);
  const Model b(ModelKind::HfdTm, d, topo, 21);
  const Model c(ModelKind::HfdTm, d, topo, 22);
  const auto sa = a.snapshot();
  const auto sb = b.snapshot();
  const auto sc = c.snapshot();
  CHECK(sa == sb);
  CHECK(sa != sc);
  for (const auto& p : a.parameters()) {
    const Matrix& v = p.tensor.value();
    CHECK(v.allFinite());
    const bool is_bias = p.name.find(".b") != std::string::npos && p.name.find(".w") == std::string::npos;
    if (is_bias) {
      CHECK(v.isZero());
    } else {
      CHECK(v.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(static_cast<double>(v.rows())));
    }
  }
  for (const auto& buf : a.buffers()) CHECK_FALSE(buf.tensor.requires_grad());
}

TEST_CASE("composed model and loss gradients match finite differences") {
  const auto topo = small_topology(2, 3);
  for (ModelKind kind : {ModelKind::HfdTm, ModelKind::FlatHfdTm, ModelKind::Gru, ModelKind::Lstm}) {
    const Model model(kind, small_dims(topo), topo, 13);
    std::mt19937_64 rng(13);
    const Batch b = random_batch(rng, 1, 3, topo.n_movements);
    std::vector<Tensor> leaves;
    for (const auto& p : model.parameters()) leaves.push_back(p.tensor);
    const auto r = hfdtm::testing::check_gradients(
        [&](Tape& t) {
          const auto out = model.forward(t, b);
          return total_loss(t, out.y_hat, Tensor::constant(b.target), topo, LossWeights{});
        },
        leaves);
    CAPTURE(to_string(kind));
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("checkpoint round trip and mismatch rejection") {
  hfdtm::testing::TempDir dir;
  const auto topo = small_topology(2, 3);
  const Model model(ModelKind::HfdTm, small_dims(topo), topo, 14);
  CheckpointMeta meta{14, 3, topo.digest(), "abc"};
  save_checkpoint(model, meta, dir.path() / "m.json");
  const auto loaded = load_checkpoint(dir.path() / "m.json", topo);
  CHECK(loaded.model.snapshot() == model.snapshot());
  CHECK(loaded.meta.normalization_digest == "abc");
  CHECK(loaded.model.kind() == ModelKind::HfdTm);
  CHECK(checkpoint_to_json(loaded.model, loaded.meta) == checkpoint_to_json(model, meta));

  const auto other = small_topology(2, 3, false);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "m.json", other), ValidationError);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "missing.json", topo), ValidationError);
}
