#include "hiam/autodiff.hpp"

#include <cmath>

#include "hiam/error.hpp"

namespace hiam::ad {

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::Dimension,
                std::string(op) + ": shape " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                    std::to_string(b.cols()));
  }
}

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape() || a.tape() == nullptr) {
    throw Error(ErrorKind::Config, "operands recorded on different tapes");
  }
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), nullptr, {}, false, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back({std::move(value), nullptr, {}, true, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(const std::string& name, const Matrix& value) {
  nodes_.push_back({Matrix(), &value, {}, true, {}});
  const int id = static_cast<int>(nodes_.size()) - 1;
  parameters_.emplace_back(name, id);
  return Var(this, id);
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw Error(ErrorKind::Config, "operand from a different tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back({std::move(value), nullptr, {}, needs, needs ? std::move(backward) : Backward{}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Matrix& Tape::grad_ref(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) {
    const Matrix& v = value(id);
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

void Tape::backward(Var scalar) {
  if (scalar.rows() != 1 || scalar.cols() != 1) {
    throw Error(ErrorKind::Dimension, "backward needs a 1x1 node");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[scalar.id()].requires_grad) return;
  grad_ref(scalar.id())(0, 0) = 1.0;
  for (int id = scalar.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() != 0) n.backward(*this, id);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() != 0) return n.grad;
  return Matrix::Zero(v.rows(), v.cols());
}

std::map<std::string, Matrix> Tape::parameter_gradients() const {
  std::map<std::string, Matrix> out;
  for (const auto& [name, id] : parameters_) {
    const Node& n = nodes_[id];
    const Matrix& v = value(id);
    const Matrix g = n.grad.size() != 0 ? n.grad : Matrix::Zero(v.rows(), v.cols());
    auto [it, inserted] = out.emplace(name, g);
    if (!inserted) it->second += g;
  }
  return out;
}

void Tape::clear() {
  nodes_.clear();
  parameters_.clear();
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::Dimension, "matmul: " + std::to_string(a.rows()) + "x" +
                                          std::to_string(a.cols()) + " * " +
                                          std::to_string(b.rows()) + "x" +
                                          std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  const int ia = a.id();
  const int ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.requires_grad(ia)) t.grad_ref(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_ref(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.cols()) throw Error(ErrorKind::Dimension, "matmul_nt: inner sizes differ");
  Matrix out(a.rows(), b.rows());
  out.noalias() = a.value() * b.value().transpose();
  const int ia = a.id();
  const int ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.requires_grad(ia)) t.grad_ref(ia).noalias() += g * t.value(ib);
    if (t.requires_grad(ib)) t.grad_ref(ib).noalias() += g.transpose() * t.value(ia);
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  const int ia = a.id();
  const int ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.requires_grad(ia)) t.grad_ref(ia) += g;
    if (t.requires_grad(ib)) t.grad_ref(ib) += g;
  });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  const int ia = a.id();
  const int ib = b.id();
  return a.tape()->record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.requires_grad(ia)) t.grad_ref(ia) += g;
    if (t.requires_grad(ib)) t.grad_ref(ib) -= g;
  });
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "hadamard");
  const int ia = a.id();
  const int ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.requires_grad(ia)) t.grad_ref(ia) += g.cwiseProduct(t.value(ib));
    if (t.requires_grad(ib)) t.grad_ref(ib) += g.cwiseProduct(t.value(ia));
  });
}

Var add_row(Var x, Var bias) {
  require_same_tape(x, bias);
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw Error(ErrorKind::Dimension, "add_row: bias must be 1x" + std::to_string(x.cols()));
  }
  Matrix out = x.value().rowwise() + bias.value().row(0);
  const int ix = x.id();
  const int ib = bias.id();
  return x.tape()->record(std::move(out), {x, bias}, [ix, ib](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.requires_grad(ix)) t.grad_ref(ix) += g;
    if (t.requires_grad(ib)) t.grad_ref(ib) += g.colwise().sum();
  });
}

Var affine(Var x, double alpha, double beta) {
  const int ix = x.id();
  Matrix out = (alpha * x.value().array() + beta).matrix();
  return x.tape()->record(std::move(out), {x}, [ix, alpha](Tape& t, int self) {
    t.grad_ref(ix) += alpha * t.upstream(self);
  });
}

Var sigmoid(Var x) {
  const int ix = x.id();
  Matrix out = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  return x.tape()->record(std::move(out), {x}, [ix](Tape& t, int self) {
    const auto y = t.value(self).array();
    t.grad_ref(ix).array() += t.upstream(self).array() * y * (1.0 - y);
  });
}

Var tanh(Var x) {
  const int ix = x.id();
  Matrix out = x.value().array().tanh().matrix();
  return x.tape()->record(std::move(out), {x}, [ix](Tape& t, int self) {
    const auto y = t.value(self).array();
    t.grad_ref(ix).array() += t.upstream(self).array() * (1.0 - y * y);
  });
}

Var prelu(Var x, Var slope) {
  require_same_tape(x, slope);
  if (slope.rows() != 1 || slope.cols() != 1) {
    throw Error(ErrorKind::Dimension, "prelu slope must be 1x1");
  }
  const double a = slope.value()(0, 0);
  Matrix out = x.value().unaryExpr([a](double v) { return v > 0.0 ? v : a * v; });
  const int ix = x.id();
  const int is = slope.id();
  return x.tape()->record(std::move(out), {x, slope}, [ix, is](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    const Matrix& in = t.value(ix);
    const double a = t.value(is)(0, 0);
    if (t.requires_grad(ix)) {
      t.grad_ref(ix).array() +=
          g.array() * in.array().unaryExpr([a](double v) { return v > 0.0 ? 1.0 : a; });
    }
    if (t.requires_grad(is)) {
      t.grad_ref(is)(0, 0) +=
          (g.array() * in.array().unaryExpr([](double v) { return v > 0.0 ? 0.0 : v; })).sum();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error(ErrorKind::Dimension, "concat of nothing");
  Tape* tape = parts.front().tape();
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.tape() != tape) throw Error(ErrorKind::Config, "operands recorded on different tapes");
    if (p.rows() != rows) throw Error(ErrorKind::Dimension, "concat: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(at);
    at += p.cols();
  }
  return tape->record(std::move(out), parts, [ids, offsets](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.requires_grad(ids[i])) continue;
      Matrix& dst = t.grad_ref(ids[i]);
      dst += g.middleCols(offsets[i], dst.cols());
    }
  });
}

Var slice_cols(Var x, Eigen::Index begin, Eigen::Index width) {
  if (begin < 0 || width < 0 || begin + width > x.cols()) {
    throw Error(ErrorKind::Dimension, "slice_cols out of range");
  }
  const int ix = x.id();
  return x.tape()->record(x.value().middleCols(begin, width), {x},
                          [ix, begin, width](Tape& t, int self) {
                            t.grad_ref(ix).middleCols(begin, width) += t.upstream(self);
                          });
}

Var softmax_rows(Var x) {
  const Matrix& in = x.value();
  Matrix out(in.rows(), in.cols());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double peak = in.row(r).maxCoeff();
    out.row(r) = (in.row(r).array() - peak).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  const int ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.upstream(self);
    const Eigen::VectorXd dots = (g.cwiseProduct(y)).rowwise().sum();
    t.grad_ref(ix).array() += y.array() * (g.colwise() - dots).array();
  });
}

Var mean_abs_error(Var pred, Var target) {
  require_same_tape(pred, target);
  require_same_shape(pred, target, "mean_abs_error");
  const double count = static_cast<double>(pred.value().size());
  Matrix out(1, 1);
  out(0, 0) = (pred.value() - target.value()).cwiseAbs().sum() / count;
  const int ip = pred.id();
  const int it = target.id();
  return pred.tape()->record(std::move(out), {pred, target}, [ip, it, count](Tape& t, int self) {
    const double g = t.upstream(self)(0, 0) / count;
    const Matrix sign = (t.value(ip) - t.value(it)).unaryExpr([](double v) {
      return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    });
    if (t.requires_grad(ip)) t.grad_ref(ip) += g * sign;
    if (t.requires_grad(it)) t.grad_ref(it) -= g * sign;
  });
}

Var sum(Var x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const int ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix](Tape& t, int self) {
    t.grad_ref(ix).array() += t.upstream(self)(0, 0);
  });
}

}  // namespace hiam::ad
