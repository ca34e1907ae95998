#pragma once

// Attentive distillation from the source model into the target path. Each
// overlap sample is weighted by how well the source predicted it; the
// imitation term pulls ŷ_t toward ŷ_s and the hint term pulls Ψ_t toward Ψ_s.

#include "episteer/autodiff.hpp"

#include <json.hpp>

namespace episteer {

struct KdConfig {
  double alpha = 1.0;
  double beta = 1.0;  // hint weight
  bool clamp_phi = true;
  double eta_floor = 1e-6;
  bool enabled = true;
  // Take ŷ_s from the joint-space source path instead of the source decoder.
  bool joint_source_prediction = false;
};

nlohmann::json to_json(const KdConfig& c);
KdConfig kd_config_from_json(const nlohmann::json& j, KdConfig base = {});

// Per-row squared error ‖ŷ_s − y‖².
Vector squared_errors(const Matrix& source_preds, const Matrix& truths);

// max(e_s) − min(e_s), floored at eta_floor. Needs at least two rows.
double compute_eta(const Matrix& source_preds, const Matrix& truths, double eta_floor);

double attention_weight(double squared_error, double eta, bool clamp);
Vector attention_weights(const Matrix& source_preds, const Matrix& truths, double eta, bool clamp);

struct KdTerms {
  Var total;
  Var imitation;  // α-weighted
  Var hint;       // β-weighted
  Vector phi;
};

// Source-side operands are detached before use.
KdTerms kd_loss(Var source_pred, Var target_pred, Var source_joint, Var target_joint, const Matrix& truths,
                const std::vector<bool>& in_overlap, double eta, const KdConfig& cfg);

}  // namespace episteer
