#pragma once

#include "episteer/layers.hpp"

namespace episteer {

// Gate layout follows the classic formulation:
//   z  = σ(Wz·x + Uz·h + bz)
//   r  = σ(Wr·x + Ur·h + br)
//   h̃ = tanh(Wh·x + Uh·(r⊙h) + bh)
//   h' = (1 − z)⊙h + z⊙h̃
struct GruWeights {
  Parameter wz, wr, wh;  // hidden × input
  Parameter uz, ur, uh;  // hidden × hidden
  Parameter bz, br, bh;  // hidden × 1

  GruWeights() = default;
  GruWeights(const std::string& name, Index input, Index hidden, Rng& rng);

  Index input_size() const { return wz.value.cols(); }
  Index hidden_size() const { return wz.value.rows(); }

  struct Bound {
    Var wz, wr, wh, uz, ur, uh, bz, br, bh;
  };
  Bound bind(Tape& tape);

  void set_zero();
  std::vector<Parameter*> parameters();
};

// One recurrence step for a batch: x is n×input, h is n×hidden.
Var gru_step(const GruWeights::Bound& w, Var x, Var h);

// Single-sample convenience wrapper.
Vector gru_cell(const Vector& x, const Vector& h, GruWeights& w);

}  // namespace episteer
