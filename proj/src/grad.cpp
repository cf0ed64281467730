#include "hfdtm/grad.hpp"

#include "hfdtm/errors.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace hfdtm::grad {

namespace detail {
void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}
}  // namespace detail

namespace {

using NodePtr = std::shared_ptr<detail::Node>;

Shape matrix_shape(Eigen::Index rows, Eigen::Index cols) {
  return {static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)};
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ValidationError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols()) {
    shape_error(op, a, b);
  }
}

bool wants_grad(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void check_columns(const char* op, const Tensor& a, std::span<const std::size_t> columns) {
  for (std::size_t c : columns) {
    if (c >= a.cols()) {
      throw ValidationError(std::string(op) + ": column " + std::to_string(c) + " out of range for " +
                            shape_string(a.shape()));
    }
  }
}

// Gradient of an output node, or nullptr when the node was not reached.
const Matrix* upstream(const NodePtr& out) { return out->grad.size() == 0 ? nullptr : &out->grad; }

}  // namespace

Tensor make_result(Tape& tape, Shape shape, Matrix value, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->origin = requires_grad ? &tape : nullptr;
  return Tensor(std::move(node));
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<detail::Node>();
  node->shape = matrix_shape(value.rows(), value.cols());
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
  auto node = std::make_shared<detail::Node>();
  node->shape = matrix_shape(value.rows(), value.cols());
  node->grad = Matrix::Zero(value.rows(), value.cols());
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  if (n != values.size()) {
    throw ValidationError("tensor: shape " + shape_string(shape) + " holds " + std::to_string(n) + " values, got " +
                          std::to_string(values.size()));
  }
  if (shape.size() > 2) throw ValidationError("tensor: at most two dimensions are supported");
  const Eigen::Index rows = shape.size() == 2 ? static_cast<Eigen::Index>(shape[0]) : 1;
  const Eigen::Index cols = static_cast<Eigen::Index>(n) / std::max<Eigen::Index>(rows, 1);
  Matrix m = Eigen::Map<const Matrix>(values.data(), rows, cols);
  Tensor t = requires_grad ? parameter(std::move(m)) : constant(std::move(m));
  t.node_->shape = std::move(shape);
  return t;
}

const Matrix& Tensor::grad() const {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

Matrix& Tensor::mutable_grad() {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols());
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad = Matrix::Zero(node_->value.rows(), node_->value.cols()); }

double Tensor::item() const {
  if (node_->value.size() != 1) throw ValidationError("item: tensor " + shape_string(shape()) + " is not a scalar");
  return node_->value(0, 0);
}

void Tape::record(std::function<void()> backward_rule) { ops_.push_back(std::move(backward_rule)); }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw ValidationError("backward: loss must be a scalar, got " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;
  if (loss.node()->origin != this) throw ValidationError("backward: loss was not produced on this tape");
  if (consumed_) throw ValidationError("backward: tape already consumed");
  consumed_ = true;
  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const bool rg = wants_grad(tape, {&a, &b});
  Matrix v = a.value() * b.value();
  Tensor out = make_result(tape, matrix_shape(v.rows(), v.cols()), std::move(v), rg);
  if (rg) {
    tape.record([a = a.shared(), b = b.shared(), o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      if (a->requires_grad) a->accumulate(*g * b->value.transpose());
      if (b->requires_grad) b->accumulate(a->value.transpose() * *g);
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor out = make_result(tape, a.shape(), a.value() + b.value(), rg);
  if (rg) {
    tape.record([a = a.shared(), b = b.shared(), o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      if (a->requires_grad) a->accumulate(*g);
      if (b->requires_grad) b->accumulate(*g);
    });
  }
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor out = make_result(tape, a.shape(), a.value() - b.value(), rg);
  if (rg) {
    tape.record([a = a.shared(), b = b.shared(), o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      if (a->requires_grad) a->accumulate(*g);
      if (b->requires_grad) b->accumulate(-*g);
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const bool rg = wants_grad(tape, {&a, &b});
  Tensor out = make_result(tape, a.shape(), a.value().cwiseProduct(b.value()), rg);
  if (rg) {
    tape.record([a = a.shared(), b = b.shared(), o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      if (a->requires_grad) a->accumulate(g->cwiseProduct(b->value));
      if (b->requires_grad) b->accumulate(g->cwiseProduct(a->value));
    });
  }
  return out;
}

Tensor add_row(Tape& tape, const Tensor& a, const Tensor& row) {
  if (row.value().rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a, row);
  const bool rg = wants_grad(tape, {&a, &row});
  Matrix v = a.value().rowwise() + row.value().row(0);
  Tensor out = make_result(tape, a.shape(), std::move(v), rg);
  if (rg) {
    tape.record([a = a.shared(), r = row.shared(), o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      if (a->requires_grad) a->accumulate(*g);
      if (r->requires_grad) r->accumulate(g->colwise().sum());
    });
  }
  return out;
}

Tensor mul_row(Tape& tape, const Tensor& a, const Tensor& row) {
  if (row.value().rows() != 1 || row.cols() != a.cols()) shape_error("mul_row", a, row);
  const bool rg = wants_grad(tape, {&a, &row});
  Matrix v = a.value().array().rowwise() * row.value().row(0).array();
  Tensor out = make_result(tape, a.shape(), std::move(v), rg);
  if (rg) {
    tape.record([a = a.shared(), r = row.shared(), o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      if (a->requires_grad) {
        Matrix ga = g->array().rowwise() * r->value.row(0).array();
        a->accumulate(ga);
      }
      if (r->requires_grad) r->accumulate(g->cwiseProduct(a->value).colwise().sum());
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  const bool rg = wants_grad(tape, {&a});
  Tensor out = make_result(tape, a.shape(), a.value() * factor, rg);
  if (rg) {
    tape.record([a = a.shared(), factor, o = out.shared()] {
      const Matrix* g = upstream(o);
      if (g) a->accumulate(*g * factor);
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().value().rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.value().rows() != rows) shape_error("concat_cols", parts.front(), p);
    cols += p.value().cols();
    rg = rg || p.requires_grad();
  }
  rg = rg && tape.recording();
  Matrix v(rows, cols);
  std::vector<NodePtr> nodes;
  Eigen::Index at = 0;
  for (const Tensor& p : parts) {
    v.middleCols(at, p.value().cols()) = p.value();
    at += p.value().cols();
    nodes.push_back(p.shared());
  }
  Tensor out = make_result(tape, matrix_shape(rows, cols), std::move(v), rg);
  if (rg) {
    tape.record([nodes = std::move(nodes), o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      Eigen::Index at = 0;
      for (const NodePtr& n : nodes) {
        const Eigen::Index c = n->value.cols();
        if (n->requires_grad) n->accumulate(g->middleCols(at, c));
        at += c;
      }
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, std::initializer_list<Tensor> parts) {
  return concat_cols(tape, std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor select_cols(Tape& tape, const Tensor& a, std::span<const std::size_t> columns) {
  check_columns("select_cols", a, columns);
  const bool rg = wants_grad(tape, {&a});
  Matrix v(a.value().rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    v.col(static_cast<Eigen::Index>(j)) = a.value().col(static_cast<Eigen::Index>(columns[j]));
  }
  Tensor out = make_result(tape, matrix_shape(v.rows(), v.cols()), std::move(v), rg);
  if (rg) {
    tape.record([a = a.shared(), cols = std::vector<std::size_t>(columns.begin(), columns.end()),
                 o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      Matrix ga = Matrix::Zero(a->value.rows(), a->value.cols());
      for (std::size_t j = 0; j < cols.size(); ++j) {
        ga.col(static_cast<Eigen::Index>(cols[j])) += g->col(static_cast<Eigen::Index>(j));
      }
      a->accumulate(ga);
    });
  }
  return out;
}

Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) {
    throw ValidationError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                          ") out of range for " + shape_string(a.shape()));
  }
  const bool rg = wants_grad(tape, {&a});
  const auto b = static_cast<Eigen::Index>(begin);
  const auto c = static_cast<Eigen::Index>(count);
  Matrix v = a.value().middleCols(b, c);
  Tensor out = make_result(tape, matrix_shape(v.rows(), v.cols()), std::move(v), rg);
  if (rg) {
    tape.record([a = a.shared(), b, c, o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      if (a->grad.size() == 0) a->grad = Matrix::Zero(a->value.rows(), a->value.cols());
      a->grad.middleCols(b, c) += *g;
    });
  }
  return out;
}

Tensor tanh(Tape& tape, const Tensor& a) {
  const bool rg = wants_grad(tape, {&a});
  Matrix v = a.value().array().tanh().matrix();
  Tensor out = make_result(tape, a.shape(), std::move(v), rg);
  if (rg) {
    tape.record([a = a.shared(), o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      Matrix ga = g->array() * (1.0 - o->value.array().square());
      a->accumulate(ga);
    });
  }
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& a) {
  const bool rg = wants_grad(tape, {&a});
  Matrix v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  Tensor out = make_result(tape, a.shape(), std::move(v), rg);
  if (rg) {
    tape.record([a = a.shared(), o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      Matrix ga = g->array() * o->value.array() * (1.0 - o->value.array());
      a->accumulate(ga);
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& a) {
  const bool rg = wants_grad(tape, {&a});
  Matrix v = a.value().cwiseMax(0.0);
  Tensor out = make_result(tape, a.shape(), std::move(v), rg);
  if (rg) {
    tape.record([a = a.shared(), o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      Matrix ga = (a->value.array() > 0.0).select(g->array(), 0.0);
      a->accumulate(ga);
    });
  }
  return out;
}

Tensor embedding_lookup(Tape& tape, const Tensor& table, std::size_t index) {
  Tensor out = embedding_rows(tape, table, std::span<const std::size_t>(&index, 1));
  out.node()->shape = {table.cols()};
  return out;
}

Tensor embedding_rows(Tape& tape, const Tensor& table, std::span<const std::size_t> indices) {
  for (std::size_t i : indices) {
    if (i >= table.rows()) {
      throw ValidationError("embedding: index " + std::to_string(i) + " out of range for table " +
                            shape_string(table.shape()));
    }
  }
  const bool rg = wants_grad(tape, {&table});
  Matrix v(static_cast<Eigen::Index>(indices.size()), table.value().cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    v.row(static_cast<Eigen::Index>(r)) = table.value().row(static_cast<Eigen::Index>(indices[r]));
  }
  Tensor out = make_result(tape, matrix_shape(v.rows(), v.cols()), std::move(v), rg);
  if (rg) {
    tape.record([t = table.shared(), idx = std::vector<std::size_t>(indices.begin(), indices.end()),
                 o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      if (t->grad.size() == 0) t->grad = Matrix::Zero(t->value.rows(), t->value.cols());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        t->grad.row(static_cast<Eigen::Index>(idx[r])) += g->row(static_cast<Eigen::Index>(r));
      }
    });
  }
  return out;
}

Tensor sum_cols(Tape& tape, const Tensor& a, std::span<const std::size_t> columns) {
  check_columns("sum_cols", a, columns);
  const bool rg = wants_grad(tape, {&a});
  Matrix v = Matrix::Zero(a.value().rows(), 1);
  for (std::size_t c : columns) v.col(0) += a.value().col(static_cast<Eigen::Index>(c));
  Tensor out = make_result(tape, matrix_shape(v.rows(), 1), std::move(v), rg);
  if (rg) {
    tape.record([a = a.shared(), cols = std::vector<std::size_t>(columns.begin(), columns.end()),
                 o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      Matrix ga = Matrix::Zero(a->value.rows(), a->value.cols());
      for (std::size_t c : cols) ga.col(static_cast<Eigen::Index>(c)) += g->col(0);
      a->accumulate(ga);
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& a) {
  const bool rg = wants_grad(tape, {&a});
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  Tensor out = make_result(tape, {}, std::move(v), rg);
  if (rg) {
    tape.record([a = a.shared(), o = out.shared()] {
      const Matrix* g = upstream(o);
      if (g) a->accumulate(Matrix::Constant(a->value.rows(), a->value.cols(), (*g)(0, 0)));
    });
  }
  return out;
}

Tensor mean(Tape& tape, const Tensor& a) {
  if (a.size() == 0) throw ValidationError("mean: empty tensor");
  const bool rg = wants_grad(tape, {&a});
  Matrix v(1, 1);
  v(0, 0) = a.value().mean();
  Tensor out = make_result(tape, {}, std::move(v), rg);
  if (rg) {
    tape.record([a = a.shared(), o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      const double n = static_cast<double>(a->value.size());
      a->accumulate(Matrix::Constant(a->value.rows(), a->value.cols(), (*g)(0, 0) / n));
    });
  }
  return out;
}

Tensor mse(Tape& tape, const Tensor& prediction, const Tensor& target) {
  require_same_shape("mse", prediction, target);
  if (prediction.size() == 0) throw ValidationError("mse: empty tensor");
  const bool rg = wants_grad(tape, {&prediction, &target});
  Matrix diff = prediction.value() - target.value();
  Matrix v(1, 1);
  v(0, 0) = diff.squaredNorm() / static_cast<double>(diff.size());
  Tensor out = make_result(tape, {}, std::move(v), rg);
  if (rg) {
    tape.record([p = prediction.shared(), t = target.shared(), diff = std::move(diff), o = out.shared()] {
      const Matrix* g = upstream(o);
      if (!g) return;
      const double k = 2.0 * (*g)(0, 0) / static_cast<double>(diff.size());
      if (p->requires_grad) p->accumulate(diff * k);
      if (t->requires_grad) t->accumulate(diff * -k);
    });
  }
  return out;
}

}  // namespace hfdtm::grad
