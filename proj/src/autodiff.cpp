#include "cudc/autodiff.hpp"

#include <cmath>
#include <utility>

namespace cudc {

const Matrix& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) fail(ErrorCategory::Shape, "scalar() on non-1x1 value");
  return v(0, 0);
}

Var Tape::make_node(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Matrix v) {
  Node n;
  n.value = std::move(v);
  n.requires_grad = false;
  return make_node(std::move(n));
}

Var Tape::leaf(Parameter& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  return make_node(std::move(n));
}

Var Tape::record(Matrix value, bool requires_grad, BackpropFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backprop = std::move(fn);
  return make_node(std::move(n));
}

Matrix& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) fail(ErrorCategory::State, "backward: loss from another tape");
  const Matrix& lv = value(loss.id());
  if (lv.rows() != 1 || lv.cols() != 1)
    fail(ErrorCategory::Shape, "backward: loss must be scalar (1x1)");
  grad_ref(loss.id()).setConstant(1.0);
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backprop) n.backprop(*this, id);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

namespace {

Tape& tape_of(const Var& a) {
  if (a.tape() == nullptr) fail(ErrorCategory::State, "op on default-constructed Var");
  return *a.tape();
}

void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) fail(ErrorCategory::State, "operands recorded on different tapes");
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    fail(ErrorCategory::Shape, std::string(op) + ": shape mismatch");
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  Tape& t = tape_of(a);
  if (a.cols() != b.rows()) fail(ErrorCategory::Shape, "matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return t.record(std::move(out), ga || gb, [ia, ib, ga, gb](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (ga) tp.grad_ref(ia).noalias() += g * tp.value(ib).transpose();
    if (gb) tp.grad_ref(ib).noalias() += tp.value(ia).transpose() * g;
  });
}

Var operator+(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "add");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return t.record(a.value() + b.value(), ga || gb, [ia, ib, ga, gb](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (ga) tp.grad_ref(ia) += g;
    if (gb) tp.grad_ref(ib) += g;
  });
}

Var operator-(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "sub");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return t.record(a.value() - b.value(), ga || gb, [ia, ib, ga, gb](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (ga) tp.grad_ref(ia) += g;
    if (gb) tp.grad_ref(ib) -= g;
  });
}

Var operator*(double c, const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const bool ga = a.requires_grad();
  return t.record(c * a.value(), ga, [ia, c](Tape& tp, int self) {
    tp.grad_ref(ia) += c * tp.grad_ref(self);
  });
}

Var cmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "cmul");
  Tape& t = tape_of(a);
  const int ia = a.id(), ib = b.id();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return t.record(a.value().cwiseProduct(b.value()), ga || gb,
                  [ia, ib, ga, gb](Tape& tp, int self) {
                    const Matrix& g = tp.grad_ref(self);
                    if (ga) tp.grad_ref(ia) += g.cwiseProduct(tp.value(ib));
                    if (gb) tp.grad_ref(ib) += g.cwiseProduct(tp.value(ia));
                  });
}

Var add_row_broadcast(const Var& a, const Var& row) {
  check_same_tape(a, row);
  Tape& t = tape_of(a);
  if (row.rows() != 1 || row.cols() != a.cols())
    fail(ErrorCategory::Shape, "add_row_broadcast: row must be 1 x cols(a)");
  Matrix out = a.value().rowwise() + row.value().row(0);
  const int ia = a.id(), ir = row.id();
  const bool ga = a.requires_grad(), gr = row.requires_grad();
  return t.record(std::move(out), ga || gr, [ia, ir, ga, gr](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (ga) tp.grad_ref(ia) += g;
    if (gr) tp.grad_ref(ir) += g.colwise().sum();
  });
}

Var relu(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const bool ga = a.requires_grad();
  return t.record(a.value().cwiseMax(0.0), ga, [ia](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    const Matrix& x = tp.value(ia);
    tp.grad_ref(ia).array() += g.array() * (x.array() > 0.0).cast<double>();
  });
}

Var tanh(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const bool ga = a.requires_grad();
  Matrix out = a.value().array().tanh();
  return t.record(std::move(out), ga, [ia](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    const Matrix& y = tp.value(self);
    tp.grad_ref(ia).array() += g.array() * (1.0 - y.array().square());
  });
}

Var square(const Var& a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  const bool ga = a.requires_grad();
  return t.record(a.value().array().square(), ga, [ia](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    tp.grad_ref(ia).array() += 2.0 * g.array() * tp.value(ia).array();
  });
}

Var layer_norm_rows(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  const auto n = x.rows();
  const auto d = x.cols();
  if (d < 1) fail(ErrorCategory::Shape, "layer_norm_rows: empty rows");
  Vector mu = x.rowwise().mean();
  Matrix centered = x.colwise() - mu;
  Vector var = centered.array().square().rowwise().mean();
  Vector denom = var.cwiseMax(kLayerNormEpsilon).cwiseSqrt();
  Matrix y = centered.array().colwise() / denom.array();
  const int ia = a.id();
  const bool ga = a.requires_grad();
  // capture per-row scale and whether the variance floor was active
  std::vector<bool> floored(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) floored[static_cast<std::size_t>(i)] = var(i) <= kLayerNormEpsilon;
  return t.record(std::move(y), ga, [ia, denom, floored, d](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    const Matrix& y = tp.value(self);
    Matrix& gx = tp.grad_ref(ia);
    const double inv_d = 1.0 / static_cast<double>(d);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double gmean = g.row(i).mean();
      if (floored[static_cast<std::size_t>(i)]) {
        gx.row(i).array() += (g.row(i).array() - gmean) / denom(i);
      } else {
        const double gy = (g.row(i).array() * y.row(i).array()).sum() * inv_d;
        gx.row(i).array() +=
            (g.row(i).array() - gmean - y.row(i).array() * gy) / denom(i);
      }
    }
  });
}

Var rowwise_l2_norm(const Var& a) {
  Tape& t = tape_of(a);
  Vector norms = a.value().rowwise().norm();
  const int ia = a.id();
  const bool ga = a.requires_grad();
  return t.record(Matrix(norms), ga, [ia, norms](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    const Matrix& x = tp.value(ia);
    Matrix& gx = tp.grad_ref(ia);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double denom = std::max(norms(i), 1e-12);
      gx.row(i) += (g(i, 0) / denom) * x.row(i);
    }
  });
}

Var sum_all(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const int ia = a.id();
  const bool ga = a.requires_grad();
  return t.record(std::move(out), ga, [ia](Tape& tp, int self) {
    tp.grad_ref(ia).array() += tp.grad_ref(self)(0, 0);
  });
}

Var mean_all(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().mean();
  const int ia = a.id();
  const bool ga = a.requires_grad();
  const double inv_n = 1.0 / static_cast<double>(a.value().size());
  return t.record(std::move(out), ga, [ia, inv_n](Tape& tp, int self) {
    tp.grad_ref(ia).array() += inv_n * tp.grad_ref(self)(0, 0);
  });
}

Var softmax_cross_entropy_rows(const Var& logits, const std::vector<int>& labels) {
  Tape& t = tape_of(logits);
  const Matrix& z = logits.value();
  const auto n = z.rows();
  const auto c = z.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n)
    fail(ErrorCategory::Shape, "softmax_cross_entropy_rows: one label per row required");
  for (int lbl : labels)
    if (lbl < 0 || lbl >= c) fail(ErrorCategory::Domain, "softmax_cross_entropy_rows: label out of range");
  Matrix losses(n, 1);
  Matrix probs(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = z.row(i).maxCoeff();
    Eigen::ArrayXd e = (z.row(i).array() - m).exp();
    const double s = e.sum();
    probs.row(i) = (e / s).matrix();
    losses(i, 0) = std::log(s) + m - z(i, labels[static_cast<std::size_t>(i)]);
  }
  const int iz = logits.id();
  const bool gz = logits.requires_grad();
  return t.record(std::move(losses), gz, [iz, probs, labels](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    Matrix& gx = tp.grad_ref(iz);
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      gx.row(i) += g(i, 0) * probs.row(i);
      gx(i, labels[static_cast<std::size_t>(i)]) -= g(i, 0);
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCategory::Shape, "concat_cols: no parts");
  Tape& t = tape_of(parts[0]);
  const auto n = parts[0].rows();
  Eigen::Index total = 0;
  bool any_grad = false;
  for (const Var& p : parts) {
    check_same_tape(parts[0], p);
    if (p.rows() != n) fail(ErrorCategory::Shape, "concat_cols: row counts differ");
    total += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  Matrix out(n, total);
  Eigen::Index off = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets, widths;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(off);
    widths.push_back(p.cols());
    off += p.cols();
  }
  return t.record(std::move(out), any_grad, [ids, offsets, widths](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (!tp.requires_grad(ids[j])) continue;
      tp.grad_ref(ids[j]) += g.middleCols(offsets[j], widths[j]);
    }
  });
}

Vector diag_softmax_probs(const Matrix& logits) {
  if (logits.rows() != logits.cols())
    fail(ErrorCategory::Shape, "diag_softmax_probs: square similarity matrix required");
  const auto n = logits.rows();
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
    out(i) = e(i) / e.sum();
  }
  return out;
}

void assert_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) fail(ErrorCategory::State, what + ": non-finite values");
}

const char* error_category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Io: return "io";
    case ErrorCategory::Shape: return "shape";
    case ErrorCategory::Domain: return "domain";
    case ErrorCategory::State: return "state";
  }
  return "unknown";
}

}  // namespace cudc
