#pragma once

#include "cudc/common.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cudc {

/// A trainable tensor: value, accumulated gradient, and Adam moment state.
/// Gradient and moments always match the value's shape; moments start at zero.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
  std::int64_t adam_step = 0;

  Parameter(std::string n, Matrix v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(Matrix::Zero(value.rows(), value.cols())),
        adam_m(Matrix::Zero(value.rows(), value.cols())),
        adam_v(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; values are owned by the tape.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  bool requires_grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Rebuilt per forward pass; single-threaded by contract.
/// Nodes are immutable once recorded; backward() walks them in reverse and
/// accumulates gradients into the Parameters registered via leaf().
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A value that does not participate in differentiation.
  Var constant(Matrix v);
  /// A leaf bound to a Parameter; backward() accumulates into p.grad.
  Var leaf(Parameter& p);

  /// Backpropagate from a scalar (1x1) loss. Rejects non-scalar input.
  void backward(const Var& loss);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  Matrix& grad_ref(int id);
  std::size_t size() const { return nodes_.size(); }

  // Recording primitive used by the op implementations.
  using BackpropFn = std::function<void(Tape&, int self_id)>;
  Var record(Matrix value, bool requires_grad, BackpropFn fn);

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // empty until first touched during backward
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackpropFn backprop;
  };
  std::vector<Node> nodes_;
  Var make_node(Node n);
};

// ---- differentiable ops -------------------------------------------------
// Free functions recording onto the operands' tape. Shapes are checked and
// violations raise Error(Shape).

Var matmul(const Var& a, const Var& b);
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(double c, const Var& a);
/// Elementwise product.
Var cmul(const Var& a, const Var& b);
/// Add a 1 x d row vector to every row of an n x d matrix.
Var add_row_broadcast(const Var& a, const Var& row);
Var relu(const Var& a);
Var tanh(const Var& a);
Var square(const Var& a);
/// Row-wise normalization to zero mean / unit variance (no affine part).
/// The variance is floored at kLayerNormEpsilon to guard degenerate rows.
Var layer_norm_rows(const Var& a);
/// Euclidean norm of every row: n x d -> n x 1.
Var rowwise_l2_norm(const Var& a);
Var sum_all(const Var& a);
Var mean_all(const Var& a);
/// Per-row softmax cross-entropy against integer class labels: n x c -> n x 1.
Var softmax_cross_entropy_rows(const Var& logits, const std::vector<int>& labels);
Var concat_cols(const std::vector<Var>& parts);

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Row-wise softmax of `logits` evaluated at the diagonal, i.e. for each row i
/// the probability assigned to column i. Computed with max subtraction.
Vector diag_softmax_probs(const Matrix& logits);

/// Throws Error(State) if any entry is NaN or infinite.
void assert_finite(const Matrix& m, const std::string& what);

}  // namespace cudc
