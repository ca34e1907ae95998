#include "episteer/kd.hpp"

#include <algorithm>

namespace episteer {

nlohmann::json to_json(const KdConfig& c) {
  return {{"alpha", c.alpha},         {"beta", c.beta},       {"clamp_phi", c.clamp_phi},
          {"eta_floor", c.eta_floor}, {"enabled", c.enabled}, {"joint_source_prediction", c.joint_source_prediction}};
}

KdConfig kd_config_from_json(const nlohmann::json& j, KdConfig c) {
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
  };
  get("alpha", c.alpha);
  get("beta", c.beta);
  get("clamp_phi", c.clamp_phi);
  get("eta_floor", c.eta_floor);
  get("enabled", c.enabled);
  get("joint_source_prediction", c.joint_source_prediction);
  require(c.alpha >= 0 && c.beta >= 0, "kd: alpha and beta must be >= 0");
  require(c.eta_floor > 0, "kd: eta_floor must be > 0");
  return c;
}

Vector squared_errors(const Matrix& source_preds, const Matrix& truths) {
  require(source_preds.rows() == truths.rows() && source_preds.cols() == truths.cols(),
          "kd: predictions " + shape_str(source_preds.rows(), source_preds.cols()) + " vs truths " +
              shape_str(truths.rows(), truths.cols()));
  return (source_preds - truths).rowwise().squaredNorm();
}

double compute_eta(const Matrix& source_preds, const Matrix& truths, double eta_floor) {
  require(source_preds.rows() >= 2, "compute_eta: need at least 2 overlap observations");
  const Vector e = squared_errors(source_preds, truths);
  return std::max(e.maxCoeff() - e.minCoeff(), eta_floor);
}

double attention_weight(double squared_error, double eta, bool clamp) {
  require(eta > 0, "attention_weight: eta must be > 0");
  const double phi = 1.0 - squared_error / eta;
  return clamp ? std::clamp(phi, 0.0, 1.0) : phi;
}

Vector attention_weights(const Matrix& source_preds, const Matrix& truths, double eta, bool clamp) {
  return squared_errors(source_preds, truths).unaryExpr([&](double e) { return attention_weight(e, eta, clamp); });
}

KdTerms kd_loss(Var source_pred, Var target_pred, Var source_joint, Var target_joint, const Matrix& truths,
                const std::vector<bool>& in_overlap, double eta, const KdConfig& cfg) {
  require(static_cast<Index>(in_overlap.size()) == truths.rows(), "kd_loss: one overlap flag per row required");
  for (std::size_t i = 0; i < in_overlap.size(); ++i) {
    if (!in_overlap[i]) throw ValidationError("kd_loss: sample " + std::to_string(i) + " is outside the overlap");
  }
  KdTerms out;
  out.phi = attention_weights(source_pred.value(), truths, eta, cfg.clamp_phi);
  out.imitation = weighted_row_sqdist(stop_gradient(source_pred), target_pred, cfg.alpha * out.phi);
  out.hint = weighted_row_sqdist(stop_gradient(source_joint), target_joint, cfg.beta * out.phi);
  out.total = out.imitation + out.hint;
  return out;
}

}  // namespace episteer
