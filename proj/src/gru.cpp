#include "episteer/gru.hpp"

namespace episteer {

GruWeights::GruWeights(const std::string& name, Index input, Index hidden, Rng& rng)
    : wz(name + ".wz", glorot(hidden, input, rng)),
      wr(name + ".wr", glorot(hidden, input, rng)),
      wh(name + ".wh", glorot(hidden, input, rng)),
      uz(name + ".uz", glorot(hidden, hidden, rng)),
      ur(name + ".ur", glorot(hidden, hidden, rng)),
      uh(name + ".uh", glorot(hidden, hidden, rng)),
      bz(name + ".bz", Matrix::Zero(hidden, 1)),
      br(name + ".br", Matrix::Zero(hidden, 1)),
      bh(name + ".bh", Matrix::Zero(hidden, 1)) {}

GruWeights::Bound GruWeights::bind(Tape& tape) {
  return {tape.param(wz), tape.param(wr), tape.param(wh), tape.param(uz), tape.param(ur),
          tape.param(uh), tape.param(bz), tape.param(br), tape.param(bh)};
}

void GruWeights::set_zero() {
  for (Parameter* p : parameters()) p->value.setZero();
}

std::vector<Parameter*> GruWeights::parameters() { return {&wz, &wr, &wh, &uz, &ur, &uh, &bz, &br, &bh}; }

Var gru_step(const GruWeights::Bound& w, Var x, Var h) {
  require(x.cols() == w.wz.cols(), "gru_step: input has " + std::to_string(x.cols()) + " columns, expected " +
                                       std::to_string(w.wz.cols()));
  require(h.cols() == w.uz.cols() && h.rows() == x.rows(), "gru_step: hidden state shape mismatch");
  Var z = sigmoid(linear(x, w.wz, w.bz) + matmul_nt(h, w.uz));
  Var r = sigmoid(linear(x, w.wr, w.br) + matmul_nt(h, w.ur));
  Var cand = tanh(linear(x, w.wh, w.bh) + matmul_nt(hadamard(r, h), w.uh));
  // (1 − z)⊙h + z⊙h̃  ==  h + z⊙(h̃ − h)
  return h + hadamard(z, cand - h);
}

Vector gru_cell(const Vector& x, const Vector& h, GruWeights& w) {
  require(x.size() == w.input_size(), "gru_cell: input size mismatch");
  require(h.size() == w.hidden_size(), "gru_cell: hidden size mismatch");
  Tape tape;
  auto bound = w.bind(tape);
  Var out = gru_step(bound, tape.constant(x.transpose()), tape.constant(h.transpose()));
  return out.value().row(0).transpose();
}

}  // namespace episteer
