#pragma once

#include "episteer/autodiff.hpp"

#include <unordered_map>

namespace episteer {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct MomentState {
  Matrix m;
  Matrix v;
  long step = 0;
};

// Adam with bias-corrected moments. State is keyed by parameter address, so
// the optimizer must not outlive the parameters it steps.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one update to every trainable parameter from its current grad.
  // Throws NumericError on a non-finite gradient before touching anything.
  void step(std::span<Parameter* const> params);

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const MomentState* state(const Parameter* p) const;

 private:
  AdamConfig cfg_;
  std::unordered_map<const Parameter*, MomentState> state_;
};

}  // namespace episteer
