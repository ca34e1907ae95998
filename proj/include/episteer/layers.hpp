#pragma once

#include "episteer/autodiff.hpp"

#include <random>
#include <string>
#include <vector>

namespace episteer {

using Rng = std::mt19937_64;

// Glorot-uniform matrix.
Matrix glorot(Index rows, Index cols, Rng& rng);
Matrix gaussian(Index rows, Index cols, double stddev, Rng& rng);

// y = x · Wᵀ + b, W is out×in.
struct Affine {
  Parameter weight;
  Parameter bias;

  Affine() = default;
  Affine(const std::string& name, Index in, Index out, Rng& rng);

  Index in_dim() const { return weight.value.cols(); }
  Index out_dim() const { return weight.value.rows(); }

  struct Bound {
    Var weight;
    Var bias;
    Var operator()(Var x) const { return linear(x, weight, bias); }
  };
  Bound bind(Tape& tape) { return {tape.param(weight), tape.param(bias)}; }

  // Plain evaluation for a single column vector.
  Vector apply(const Vector& x) const { return weight.value * x + bias.value.col(0); }

  void set_identity();
  void set_zero();
  std::vector<Parameter*> parameters() { return {&weight, &bias}; }
};

void set_trainable(std::span<Parameter* const> params, bool trainable);
void zero_grads(std::span<Parameter* const> params);
Index parameter_count(std::span<Parameter* const> params);
double max_abs_grad(std::span<Parameter* const> params);

}  // namespace episteer
