#include "episteer/layers.hpp"

#include <algorithm>
#include <cmath>

namespace episteer {

Matrix glorot(Index rows, Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

Matrix gaussian(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

Affine::Affine(const std::string& name, Index in, Index out, Rng& rng)
    : weight(name + ".weight", glorot(out, in, rng)), bias(name + ".bias", Matrix::Zero(out, 1)) {}

void Affine::set_identity() {
  require(weight.value.rows() == weight.value.cols(), "identity init needs a square layer");
  weight.value.setIdentity();
  bias.value.setZero();
}

void Affine::set_zero() {
  weight.value.setZero();
  bias.value.setZero();
}

void set_trainable(std::span<Parameter* const> params, bool trainable) {
  for (Parameter* p : params) p->trainable = trainable;
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

Index parameter_count(std::span<Parameter* const> params) {
  Index n = 0;
  for (const Parameter* p : params) n += p->size();
  return n;
}

double max_abs_grad(std::span<Parameter* const> params) {
  double m = 0.0;
  for (const Parameter* p : params) {
    if (p->grad.size() > 0) m = std::max(m, p->grad.cwiseAbs().maxCoeff());
  }
  return m;
}

}  // namespace episteer
