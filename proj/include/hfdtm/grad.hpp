#pragma once

// Minimal tape-based reverse-mode differentiation over dense row-major
// matrices. Only the operations the forecasting models and their loss need
// are provided; there is no general broadcasting.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hfdtm::grad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<std::size_t>;

class Tape;

namespace detail {
struct Node {
  Shape shape;
  Matrix value;
  Matrix grad;  // empty until first accumulation, or zeroed for leaves
  bool requires_grad = false;
  const Tape* origin = nullptr;  // tape that produced this node, null for leaves

  void accumulate(const Matrix& g);
};
}  // namespace detail

/// Shared handle to a node of the computation graph.
///
/// Copies alias the same storage. Values are 64-bit and stored as a
/// rows x cols matrix; a 1-D tensor of length n is a 1 x n row and a scalar
/// has an empty shape with a single value.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Matrix value);
  /// A trainable leaf. Its gradient accumulator starts at zero.
  static Tensor parameter(Matrix value);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return static_cast<std::size_t>(node_->value.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(node_->value.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  /// Gradient accumulator; a zero matrix of the value's shape if nothing was accumulated.
  const Matrix& grad() const;
  Matrix& mutable_grad();
  void zero_grad();

  /// The single value of a one-element tensor.
  double item() const;

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared() const noexcept { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Tape& tape, Shape shape, Matrix value, bool requires_grad);

  std::shared_ptr<detail::Node> node_;
};

std::string shape_string(const Shape& shape);

/// Ordered record of differentiable operations.
///
/// Operations are appended as they execute, so inputs always precede their
/// consumers. A tape is confined to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// When disabled, operations compute values but record nothing.
  void set_recording(bool on) noexcept { recording_ = on; }
  bool recording() const noexcept { return recording_; }

  std::size_t size() const noexcept { return ops_.size(); }
  void record(std::function<void()> backward_rule);

  /// Runs every recorded backward rule once, newest first. `loss` must be a
  /// one-element tensor produced on this tape (or a constant, in which case
  /// nothing is reachable and no gradient changes).
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> ops_;
  bool recording_ = true;
  bool consumed_ = false;
};

inline void backward(Tape& tape, const Tensor& loss) { tape.backward(loss); }

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
/// a [B x n] + row [1 x n] added to every row.
Tensor add_row(Tape& tape, const Tensor& a, const Tensor& row);
/// a [B x n] scaled columnwise by row [1 x n].
Tensor mul_row(Tape& tape, const Tensor& a, const Tensor& row);
Tensor scale(Tape& tape, const Tensor& a, double factor);
Tensor concat_cols(Tape& tape, std::span<const Tensor> parts);
Tensor concat_cols(Tape& tape, std::initializer_list<Tensor> parts);
/// Copy of the listed columns, in the listed order.
Tensor select_cols(Tape& tape, const Tensor& a, std::span<const std::size_t> columns);
/// Copy of the contiguous column range [begin, begin + count).
Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t begin, std::size_t count);
Tensor tanh(Tape& tape, const Tensor& a);
Tensor sigmoid(Tape& tape, const Tensor& a);
Tensor relu(Tape& tape, const Tensor& a);
/// Row `index` of table [V x H], shaped [H].
Tensor embedding_lookup(Tape& tape, const Tensor& table, std::size_t index);
/// Rows of table gathered into a [B x H] matrix.
Tensor embedding_rows(Tape& tape, const Tensor& table, std::span<const std::size_t> indices);
/// Per-row sum over a column index set: [B x n] -> [B x 1].
Tensor sum_cols(Tape& tape, const Tensor& a, std::span<const std::size_t> columns);
Tensor sum(Tape& tape, const Tensor& a);
Tensor mean(Tape& tape, const Tensor& a);
/// Mean of squared differences over all entries.
Tensor mse(Tape& tape, const Tensor& prediction, const Tensor& target);

}  // namespace hfdtm::grad
