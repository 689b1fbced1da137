#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hiam::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape is.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode autodiff tape over dense double matrices. Nodes are
/// recorded in evaluation order; backward() walks them in reverse.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  /// Binds a named parameter without copying; `value` must outlive the tape.
  Var parameter(const std::string& name, const Matrix& value);

  /// Seeds d(scalar)/d(scalar) = 1 and propagates to every node.
  void backward(Var scalar);

  /// Gradient of a node after backward(); zeros if nothing reached it.
  Matrix grad(Var v) const;
  /// Gradients of all bound parameters keyed by name.
  std::map<std::string, Matrix> parameter_gradients() const;

  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  void clear();

  // Op-author interface.
  const Matrix& value(int id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.value;
  }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Gradient accumulator of `id`, zero-initialized on first use.
  Matrix& grad_ref(int id);
  const Matrix& upstream(int id) const { return nodes_[id].grad; }
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

 private:
  struct Node {
    Matrix value;
    const Matrix* borrowed = nullptr;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, int>> parameters_;
};

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
/// x + 1 * bias for a 1 x cols bias row.
Var add_row(Var x, Var bias);
/// alpha * x + beta elementwise.
Var affine(Var x, double alpha, double beta);
Var sigmoid(Var x);
Var tanh(Var x);
/// Parametric ReLU with a learnable 1x1 slope.
Var prelu(Var x, Var slope);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var x, Eigen::Index begin, Eigen::Index width);
/// Softmax along each row.
Var softmax_rows(Var x);
/// mean |pred - target| as a 1x1 node.
Var mean_abs_error(Var pred, Var target);
Var sum(Var x);

}  // namespace hiam::ad
