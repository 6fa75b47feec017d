#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation as a node holding its value; inputs always
// precede outputs, so one reverse sweep over the node list propagates
// gradients. Rows are samples and columns are features throughout.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace amortsens::ad {

using Matrix = Eigen::MatrixXd;

/// Trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

/// Handle to a node on a tape.
struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  /// With record == false only values are computed (inference mode).
  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  Var constant(Matrix value);
  /// Leaf bound to a parameter; backward() adds into parameter.grad.
  Var parameter(Parameter& p);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() target w.r.t. v (zero-sized if unreached).
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and sweeps nodes in reverse.
  void backward(Var out);

  using Backward = std::function<void(Tape&, std::size_t self)>;
  /// Appends a node; `inputs` must already be on the tape.
  Var push(Matrix value, Backward backward);
  /// Adds g into the gradient buffer of node id.
  void accumulate(std::size_t id, const Matrix& g);
  Matrix& grad_buffer(std::size_t id) { return nodes_[id].grad; }
  const Matrix& node_grad(std::size_t id) const { return nodes_[id].grad; }
  const Matrix& node_value(std::size_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
  bool record_;
};

// Linear algebra
Var matmul(Tape& t, Var a, Var b);
/// a (n x k) + row vector b (1 x k) broadcast over rows.
Var add_row(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var add_scalar(Tape& t, Var a, double c);

// Elementwise nonlinearities
Var tanh(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
/// x * sigmoid(x)
Var silu(Tape& t, Var a);
Var exp(Tape& t, Var a);
Var square(Tape& t, Var a);
/// bound * (2/pi) * atan(x / bound): odd, smooth, |y| < bound.
Var soft_clamp(Tape& t, Var a, double bound);

// Shape
Var concat_cols(Tape& t, Var a, Var b);
/// Columns `cols` of a, in order.
Var select_cols(Tape& t, Var a, const std::vector<int>& cols);
/// Columns [start, start + count).
Var slice_cols(Tape& t, Var a, int start, int count);
/// Output with `width` columns: a's columns at a_cols, b's at b_cols.
Var merge_cols(Tape& t, Var a, const std::vector<int>& a_cols, Var b, const std::vector<int>& b_cols,
               int width);
/// Mean over consecutive groups of `group` rows.
Var segment_mean(Tape& t, Var a, int group);

// Reductions
Var row_sum(Tape& t, Var a);
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);

/// Mean over rows of -log softmax(logits)[label].
Var softmax_cross_entropy(Tape& t, Var logits, const std::vector<int>& labels);

}  // namespace amortsens::ad
