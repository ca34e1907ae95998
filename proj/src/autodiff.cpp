#include "episteer/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace episteer {

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows() == 1 && v.cols() == 1, "expected scalar, got " + shape_str(v.rows(), v.cols()));
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  if (!value.allFinite()) throw NumericError("non-finite constant");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (!p.value.allFinite()) throw NumericError("non-finite parameter " + p.name);
  if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = p.trainable;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_parent(Var v) const {
  if (v.tape_ != this) throw ValidationError("variable belongs to a different tape");
  if (v.id_ >= nodes_.size()) throw ValidationError("graph cycle: parent does not precede child");
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> parents, BackwardFn fn) {
  if (!value.allFinite()) throw NumericError("non-finite value produced by op");
  bool needs = false;
  for (const Var& p : parents) {
    check_parent(p);
    needs = needs || nodes_[p.id_].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  check_parent(loss);
  const Matrix& lv = nodes_[loss.id_].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ValidationError("backward requires a scalar loss, got " + shape_str(lv.rows(), lv.cols()));
  }
  for (Node& n : nodes_) n.has_grad = false;
  if (!nodes_[loss.id_].requires_grad) return;
  nodes_[loss.id_].grad = Matrix::Ones(1, 1);
  nodes_[loss.id_].has_grad = true;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.param != nullptr) {
      if (n.param->trainable) n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, n.grad);
    }
  }
}

namespace {

void same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                          shape_str(b.rows(), b.cols()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var hadamard(Var a, Var b) {
  same_shape(a, b, "hadamard");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var scale(Var a, double c) {
  const auto ia = a.id();
  return a.tape().record(a.value() * c, {a}, [ia, c](Tape& t, const Matrix& g) { t.accumulate(ia, g * c); });
}

Var affine(Var a, double c, double offset) {
  const auto ia = a.id();
  Matrix v = (a.value() * c).array() + offset;
  return a.tape().record(std::move(v), {a}, [ia, c](Tape& t, const Matrix& g) { t.accumulate(ia, g * c); });
}

Var add_row(Var a, Var bias) {
  const Matrix& b = bias.value();
  const bool column = b.cols() == 1 && b.rows() == a.cols();
  const bool row = b.rows() == 1 && b.cols() == a.cols();
  require(column || row, "add_row: bias " + shape_str(b.rows(), b.cols()) + " does not match " +
                             shape_str(a.rows(), a.cols()));
  Matrix v = a.value();
  if (column) {
    v.rowwise() += b.transpose().row(0);
  } else {
    v.rowwise() += b.row(0);
  }
  const auto ia = a.id(), ib = bias.id();
  return a.tape().record(std::move(v), {a, bias}, [ia, ib, column](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (column) {
      t.accumulate(ib, g.colwise().sum().transpose());
    } else {
      t.accumulate(ib, g.colwise().sum());
    }
  });
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: " + shape_str(a.rows(), a.cols()) + " * " + shape_str(b.rows(), b.cols()));
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  require(a.cols() == b.cols(),
          "matmul_nt: " + shape_str(a.rows(), a.cols()) + " * T" + shape_str(b.rows(), b.cols()));
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() * b.value().transpose(), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
    if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
  });
}

Var linear(Var x, Var w, Var bias) {
  require(x.cols() == w.cols(), "linear: input " + shape_str(x.rows(), x.cols()) + " vs weight " +
                                    shape_str(w.rows(), w.cols()));
  require(bias.rows() == w.rows() && bias.cols() == 1, "linear: bias must be out×1");
  Matrix v = x.value() * w.value().transpose();
  v.rowwise() += bias.value().col(0).transpose();
  const auto ix = x.id(), iw = w.id(), ib = bias.id();
  return x.tape().record(std::move(v), {x, w, bias}, [ix, iw, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ix)) t.accumulate(ix, g * t.value(iw));
    if (t.requires_grad(iw)) t.accumulate(iw, g.transpose() * t.value(ix));
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum().transpose());
  });
}

Var sigmoid(Var a) {
  Matrix v = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  const auto ia = a.id();
  const auto iv = a.tape().size();
  return a.tape().record(std::move(v), {a}, [ia, iv](Tape& t, const Matrix& g) {
    const Matrix& s = t.value(iv);
    t.accumulate(ia, g.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
  });
}

Var tanh(Var a) {
  Matrix v = a.value().array().tanh().matrix();
  const auto ia = a.id();
  const auto iv = a.tape().size();
  return a.tape().record(std::move(v), {a}, [ia, iv](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(iv);
    t.accumulate(ia, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var leaky_relu(Var a, double slope) {
  Matrix v = a.value().unaryExpr([slope](double x) { return x > 0 ? x : slope * x; });
  const auto ia = a.id();
  return a.tape().record(std::move(v), {a}, [ia, slope](Tape& t, const Matrix& g) {
    const Matrix d = t.value(ia).unaryExpr([slope](double x) { return x > 0 ? 1.0 : slope; });
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  std::vector<std::pair<std::size_t, Index>> slots;
  Index off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    slots.emplace_back(p.id(), off);
    off += p.cols();
  }
  return parts.front().tape().record(std::move(v), parts, [slots](Tape& t, const Matrix& g) {
    for (const auto& [id, start] : slots) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleCols(start, t.value(id).cols()));
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  std::vector<std::pair<std::size_t, Index>> slots;
  Index off = 0;
  for (const Var& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    slots.emplace_back(p.id(), off);
    off += p.rows();
  }
  return parts.front().tape().record(std::move(v), parts, [slots](Tape& t, const Matrix& g) {
    for (const auto& [id, start] : slots) {
      if (t.requires_grad(id)) t.accumulate(id, g.middleRows(start, t.value(id).rows()));
    }
  });
}

Var slice_rows(Var a, Index start, Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  const auto ia = a.id();
  const Index rows = a.rows(), cols = a.cols();
  return a.tape().record(a.value().middleRows(start, count), {a},
                         [ia, start, count, rows, cols](Tape& t, const Matrix& g) {
                           Matrix full = Matrix::Zero(rows, cols);
                           full.middleRows(start, count) = g;
                           t.accumulate(ia, full);
                         });
}

Var gather_rows(Var a, std::span<const Index> rows) {
  Matrix v(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows: index out of range");
    v.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  const auto ia = a.id();
  const Index nrows = a.rows(), cols = a.cols();
  std::vector<Index> idx(rows.begin(), rows.end());
  return a.tape().record(std::move(v), {a}, [ia, idx, nrows, cols](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(nrows, cols);
    for (std::size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(static_cast<Index>(i));
    t.accumulate(ia, full);
  });
}

Var sum(Var a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  const auto ia = a.id();
  const Index rows = a.rows(), cols = a.cols();
  return a.tape().record(std::move(v), {a}, [ia, rows, cols](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(rows, cols, g(0, 0)));
  });
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean of empty tensor");
  const double n = static_cast<double>(a.value().size());
  Matrix v(1, 1);
  v(0, 0) = a.value().sum() / n;
  const auto ia = a.id();
  const Index rows = a.rows(), cols = a.cols();
  return a.tape().record(std::move(v), {a}, [ia, rows, cols, n](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(rows, cols, g(0, 0) / n));
  });
}

Var mse(Var a, Var b) {
  same_shape(a, b, "mse");
  require(a.value().size() > 0, "mse of empty tensor");
  const double n = static_cast<double>(a.value().size());
  Matrix v(1, 1);
  v(0, 0) = (a.value() - b.value()).squaredNorm() / n;
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(v), {a, b}, [ia, ib, n](Tape& t, const Matrix& g) {
    Matrix d = (t.value(ia) - t.value(ib)) * (2.0 * g(0, 0) / n);
    t.accumulate(ia, d);
    t.accumulate(ib, -d);
  });
}

Var weighted_row_sqdist(Var a, Var b, const Vector& weights) {
  same_shape(a, b, "weighted_row_sqdist");
  require(weights.size() == a.rows(), "weighted_row_sqdist: one weight per row required");
  require(a.rows() > 0, "weighted_row_sqdist: empty batch");
  const double n = static_cast<double>(a.rows());
  const Matrix diff = a.value() - b.value();
  Matrix v(1, 1);
  v(0, 0) = weights.dot(diff.rowwise().squaredNorm()) / n;
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(v), {a, b}, [ia, ib, n, weights](Tape& t, const Matrix& g) {
    Matrix d = (t.value(ia) - t.value(ib));
    d = weights.asDiagonal() * d;
    d *= 2.0 * g(0, 0) / n;
    t.accumulate(ia, d);
    t.accumulate(ib, -d);
  });
}

Var trace_quadratic(Var h, const Matrix& laplacian) {
  require(laplacian.rows() == laplacian.cols() && laplacian.rows() == h.rows(),
          "trace_quadratic: Laplacian " + shape_str(laplacian.rows(), laplacian.cols()) + " vs H " +
              shape_str(h.rows(), h.cols()));
  Matrix v(1, 1);
  v(0, 0) = (h.value().transpose() * laplacian * h.value()).trace();
  const auto ih = h.id();
  const Matrix sym = laplacian + laplacian.transpose();
  return h.tape().record(std::move(v), {h}, [ih, sym](Tape& t, const Matrix& g) {
    t.accumulate(ih, (sym * t.value(ih)) * g(0, 0));
  });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

}  // namespace episteer
