#pragma once

// Joint latent space shared by the source and target representations.
//   Ψ_s = s(Ψ_raw), Ψ_t = t(h), ŷ = f2(tanh(f1(Ψ)))
// s′ and t′ reconstruct the projection inputs from the latents.

#include "episteer/layers.hpp"

#include <json.hpp>

namespace episteer {

struct HtlConfig {
  Index m_j = 16;
  Index m_a = 8;
  double noise_std = 0.1;
};

nlohmann::json to_json(const HtlConfig& c);
HtlConfig htl_config_from_json(const nlohmann::json& j, HtlConfig base = {});

enum class Side { source, target };

struct HtlHeads {
  Affine s;       // M_S → M_J
  Affine t;       // M_T → M_J
  Affine f1;      // M_J → M_A
  Affine f2;      // M_A → k
  Affine s_prime; // M_J → M_S
  Affine t_prime; // M_J → M_T
  double noise_std = 0.1;

  HtlHeads() = default;
  HtlHeads(Index m_s, Index m_t, int k, const HtlConfig& cfg, Rng& rng);

  std::vector<Parameter*> source_side();  // s, s′
  std::vector<Parameter*> target_side();  // t, t′, f1, f2
  std::vector<Parameter*> parameters();

  Vector project_source(const Vector& raw) const { return s.apply(raw); }
  Vector project_target(const Vector& h) const { return t.apply(h); }
  Vector shared_head(const Vector& psi) const;
};

Var shared_head(Tape& tape, HtlHeads& heads, Var psi);

// MSE(denoiser(project(input + noise)), input). The reconstruction target
// and the corrupted input are constants, so only the projection and the
// denoiser receive gradient.
Var denoise_loss(Tape& tape, HtlHeads& heads, const Matrix& input, Side which, Rng& rng);

}  // namespace episteer
