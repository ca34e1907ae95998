#pragma once

// Reverse-mode differentiation over dense double matrices.
//
// A Tape records every node in creation order, so parents always precede
// children and the node list is already a topological order. Vectors are
// represented as matrices; batched operands put one sample per row.

#include "episteer/core.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace episteer {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string name_, Matrix init)
      : name(std::move(name_)), value(std::move(init)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;

  friend class Tape;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf bound to a Parameter. Gradients reach `p.grad` on backward() only
  // while p.trainable is set; a frozen parameter never accumulates.
  Var param(Parameter& p);

  // Appends an op node. `fn` receives the node's upstream gradient and must
  // route it to the parents through accumulate().
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Matrix value, std::span<const Var> parents, BackwardFn fn);

  void backward(Var loss);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
  };

  void check_parent(Var v) const;

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

// Elementwise and linear-algebra ops. Shapes must match exactly; there is no
// implicit broadcasting except where the name says so (add_row, linear).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double c);
// c * a + offset, elementwise.
Var affine(Var a, double c, double offset);
// Adds a bias (rows×1 or 1×cols, cols == a.cols()) to every row of a.
Var add_row(Var a, Var bias);
Var matmul(Var a, Var b);
// a · bᵀ
Var matmul_nt(Var a, Var b);
// x · wᵀ + 1·biasᵀ. w is out×in, bias is out×1; x is n×in.
Var linear(Var x, Var w, Var bias);
Var sigmoid(Var a);
Var tanh(Var a);
// x for x > 0, slope·x otherwise.
Var leaky_relu(Var a, double slope);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, Index start, Index count);
Var gather_rows(Var a, std::span<const Index> rows);
Var sum(Var a);
Var mean(Var a);
// mean((a - b)^2) over all elements.
Var mse(Var a, Var b);
// (1/n) Σ_i w_i ‖a_i − b_i‖², rows are samples, n = a.rows().
Var weighted_row_sqdist(Var a, Var b, const Vector& weights);
// trace(hᵀ L h) for a constant square L.
Var trace_quadratic(Var h, const Matrix& laplacian);
// Same value; gradient stops here.
Var stop_gradient(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator-(Var a) { return scale(a, -1.0); }

}  // namespace episteer
