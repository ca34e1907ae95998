#include "episteer/optimizer.hpp"

#include <cmath>

namespace episteer {

void Adam::step(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    if (p->trainable && !p->grad.allFinite()) throw NumericError("non-finite gradient for " + p->name);
  }
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    MomentState& s = state_[p];
    if (s.step == 0) {
      s.m = Matrix::Zero(p->value.rows(), p->value.cols());
      s.v = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    ++s.step;
    s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * p->grad;
    s.v = cfg_.beta2 * s.v + (1.0 - cfg_.beta2) * p->grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.step));
    p->value.array() -= cfg_.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + cfg_.eps);
  }
}

const MomentState* Adam::state(const Parameter* p) const {
  auto it = state_.find(p);
  return it == state_.end() ? nullptr : &it->second;
}

}  // namespace episteer
