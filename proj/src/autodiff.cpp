#include "amortsens/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "amortsens/errors.hpp"

namespace amortsens::ad {

Var Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), nullptr, nullptr});
  return {nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back({p.value, Matrix(), nullptr, record_ ? &p : nullptr});
  return {nodes_.size() - 1};
}

Var Tape::push(Matrix value, Backward backward) {
  nodes_.push_back({std::move(value), Matrix(), record_ ? std::move(backward) : nullptr, nullptr});
  return {nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  auto& buf = nodes_[id].grad;
  if (buf.size() == 0) {
    buf = g;
  } else {
    buf += g;
  }
}

void Tape::backward(Var out) {
  if (!record_) throw UsageError("backward() on a tape that does not record");
  auto& root = nodes_[out.id];
  if (root.value.size() != 1) throw UsageError("backward() needs a scalar output");
  root.grad = Matrix::Ones(1, 1);
  for (std::size_t i = out.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.grad.size() == 0) continue;
    if (node.backward) node.backward(*this, i);
    if (node.param != nullptr) {
      if (node.param->grad.size() == 0) node.param->grad = Matrix::Zero(node.value.rows(), node.value.cols());
      node.param->grad += node.grad;
    }
  }
}

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw UsageError(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.cols() != B.rows()) throw UsageError("matmul: inner dimensions differ");
  return t.push(A * B, [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    tp.accumulate(a.id, g * tp.node_value(b.id).transpose());
    tp.accumulate(b.id, tp.node_value(a.id).transpose() * g);
  });
}

Var add_row(Tape& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (B.rows() != 1 || B.cols() != A.cols()) throw UsageError("add_row: bias shape mismatch");
  Matrix out = A.rowwise() + B.row(0);
  return t.push(std::move(out), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, g.colwise().sum());
  });
}

Var add(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "add");
  return t.push(t.value(a) + t.value(b), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "sub");
  return t.push(t.value(a) - t.value(b), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, -g);
  });
}

Var mul(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "mul");
  return t.push(t.value(a).cwiseProduct(t.value(b)), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    tp.accumulate(a.id, g.cwiseProduct(tp.node_value(b.id)));
    tp.accumulate(b.id, g.cwiseProduct(tp.node_value(a.id)));
  });
}

Var scale(Tape& t, Var a, double c) {
  return t.push(t.value(a) * c, [a, c](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, tp.node_grad(self) * c);
  });
}

Var add_scalar(Tape& t, Var a, double c) {
  return t.push((t.value(a).array() + c).matrix(), [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, tp.node_grad(self));
  });
}

Var tanh(Tape& t, Var a) {
  Matrix y = t.value(a).array().tanh().matrix();
  return t.push(std::move(y), [a](Tape& tp, std::size_t self) {
    const auto& y = tp.node_value(self).array();
    tp.accumulate(a.id, (tp.node_grad(self).array() * (1.0 - y * y)).matrix());
  });
}

Var sigmoid(Tape& t, Var a) {
  Matrix y = (1.0 / (1.0 + (-t.value(a).array()).exp())).matrix();
  return t.push(std::move(y), [a](Tape& tp, std::size_t self) {
    const auto& y = tp.node_value(self).array();
    tp.accumulate(a.id, (tp.node_grad(self).array() * y * (1.0 - y)).matrix());
  });
}

Var silu(Tape& t, Var a) {
  const auto& x = t.value(a).array();
  Matrix y = (x / (1.0 + (-x).exp())).matrix();
  return t.push(std::move(y), [a](Tape& tp, std::size_t self) {
    const auto& x = tp.node_value(a.id).array();
    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-x).exp());
    tp.accumulate(a.id, (tp.node_grad(self).array() * (s * (1.0 + x * (1.0 - s)))).matrix());
  });
}

Var exp(Tape& t, Var a) {
  Matrix y = t.value(a).array().exp().matrix();
  return t.push(std::move(y), [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, tp.node_grad(self).cwiseProduct(tp.node_value(self)));
  });
}

Var square(Tape& t, Var a) {
  return t.push(t.value(a).array().square().matrix(), [a](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, (2.0 * tp.node_grad(self).array() * tp.node_value(a.id).array()).matrix());
  });
}

Var soft_clamp(Tape& t, Var a, double bound) {
  const double k = 2.0 * bound / std::numbers::pi;
  Matrix y = (k * (t.value(a).array() / bound).atan()).matrix();
  return t.push(std::move(y), [a, bound, k](Tape& tp, std::size_t self) {
    const auto u = tp.node_value(a.id).array() / bound;
    tp.accumulate(a.id, (tp.node_grad(self).array() * (k / bound) / (1.0 + u * u)).matrix());
  });
}

Var concat_cols(Tape& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.rows() != B.rows()) throw UsageError("concat_cols: row counts differ");
  Matrix out(A.rows(), A.cols() + B.cols());
  out.leftCols(A.cols()) = A;
  out.rightCols(B.cols()) = B;
  const Eigen::Index ca = A.cols();
  const Eigen::Index cb = B.cols();
  return t.push(std::move(out), [a, b, ca, cb](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    if (ca > 0) tp.accumulate(a.id, g.leftCols(ca));
    if (cb > 0) tp.accumulate(b.id, g.rightCols(cb));
  });
}

Var select_cols(Tape& t, Var a, const std::vector<int>& cols) {
  const auto& A = t.value(a);
  Matrix out(A.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] < 0 || cols[j] >= A.cols()) throw UsageError("select_cols: column out of range");
    out.col(static_cast<Eigen::Index>(j)) = A.col(cols[j]);
  }
  const Eigen::Index rows = A.rows();
  const Eigen::Index width = A.cols();
  return t.push(std::move(out), [a, cols, rows, width](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    Matrix ga = Matrix::Zero(rows, width);
    for (std::size_t j = 0; j < cols.size(); ++j) ga.col(cols[j]) += g.col(static_cast<Eigen::Index>(j));
    tp.accumulate(a.id, ga);
  });
}

Var slice_cols(Tape& t, Var a, int start, int count) {
  std::vector<int> cols(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) cols[static_cast<std::size_t>(j)] = start + j;
  return select_cols(t, a, cols);
}

Var merge_cols(Tape& t, Var a, const std::vector<int>& a_cols, Var b, const std::vector<int>& b_cols,
               int width) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (static_cast<std::size_t>(A.cols()) != a_cols.size() || static_cast<std::size_t>(B.cols()) != b_cols.size() ||
      (A.rows() != B.rows() && A.cols() > 0 && B.cols() > 0)) {
    throw UsageError("merge_cols: shape mismatch");
  }
  const Eigen::Index rows = A.cols() > 0 ? A.rows() : B.rows();
  Matrix out = Matrix::Zero(rows, width);
  for (std::size_t j = 0; j < a_cols.size(); ++j) out.col(a_cols[j]) = A.col(static_cast<Eigen::Index>(j));
  for (std::size_t j = 0; j < b_cols.size(); ++j) out.col(b_cols[j]) = B.col(static_cast<Eigen::Index>(j));
  return t.push(std::move(out), [a, b, a_cols, b_cols, rows](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    if (!a_cols.empty()) {
      Matrix ga(rows, static_cast<Eigen::Index>(a_cols.size()));
      for (std::size_t j = 0; j < a_cols.size(); ++j) ga.col(static_cast<Eigen::Index>(j)) = g.col(a_cols[j]);
      tp.accumulate(a.id, ga);
    }
    if (!b_cols.empty()) {
      Matrix gb(rows, static_cast<Eigen::Index>(b_cols.size()));
      for (std::size_t j = 0; j < b_cols.size(); ++j) gb.col(static_cast<Eigen::Index>(j)) = g.col(b_cols[j]);
      tp.accumulate(b.id, gb);
    }
  });
}

Var segment_mean(Tape& t, Var a, int group) {
  const auto& A = t.value(a);
  if (group < 1 || A.rows() % group != 0) throw UsageError("segment_mean: rows not divisible by group");
  const Eigen::Index n = A.rows() / group;
  Matrix out(n, A.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = A.middleRows(i * group, group).colwise().mean();
  return t.push(std::move(out), [a, group, n](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    Matrix ga(n * group, g.cols());
    const double w = 1.0 / group;
    for (Eigen::Index i = 0; i < n; ++i) ga.middleRows(i * group, group).rowwise() = g.row(i) * w;
    tp.accumulate(a.id, ga);
  });
}

Var row_sum(Tape& t, Var a) {
  const auto& A = t.value(a);
  Matrix out = A.rowwise().sum();
  const Eigen::Index cols = A.cols();
  return t.push(std::move(out), [a, cols](Tape& tp, std::size_t self) {
    const Matrix& g = tp.node_grad(self);
    tp.accumulate(a.id, g.replicate(1, cols));
  });
}

Var sum(Tape& t, Var a) {
  const auto& A = t.value(a);
  Matrix out(1, 1);
  out(0, 0) = A.sum();
  const Eigen::Index r = A.rows(), c = A.cols();
  return t.push(std::move(out), [a, r, c](Tape& tp, std::size_t self) {
    tp.accumulate(a.id, Matrix::Constant(r, c, tp.node_grad(self)(0, 0)));
  });
}

Var mean(Tape& t, Var a) {
  const auto& A = t.value(a);
  if (A.size() == 0) throw UsageError("mean of an empty matrix");
  return scale(t, sum(t, a), 1.0 / static_cast<double>(A.size()));
}

Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<int>& labels) {
  const auto& L = t.value(logits);
  if (static_cast<std::size_t>(L.rows()) != labels.size()) throw UsageError("cross entropy: label count mismatch");
  Matrix probs(L.rows(), L.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= L.cols()) throw UsageError("cross entropy: label out of range");
    const double m = L.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (L.row(i).array() - m).exp().matrix();
    const double z = e.sum();
    probs.row(i) = e / z;
    total += -(L(i, y) - m - std::log(z));
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(L.rows());
  return t.push(std::move(out), [logits, labels, probs](Tape& tp, std::size_t self) {
    const double g = tp.node_grad(self)(0, 0) / static_cast<double>(probs.rows());
    Matrix gl = probs;
    for (Eigen::Index i = 0; i < gl.rows(); ++i) gl(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    tp.accumulate(logits.id, gl * g);
  });
}

}  // namespace amortsens::ad
