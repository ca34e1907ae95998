#include "episteer/htl.hpp"

namespace episteer {

nlohmann::json to_json(const HtlConfig& c) {
  return {{"m_j", c.m_j}, {"m_a", c.m_a}, {"noise_std", c.noise_std}};
}

HtlConfig htl_config_from_json(const nlohmann::json& j, HtlConfig c) {
  if (j.contains("m_j")) c.m_j = j.at("m_j").get<Index>();
  if (j.contains("m_a")) c.m_a = j.at("m_a").get<Index>();
  if (j.contains("noise_std")) c.noise_std = j.at("noise_std").get<double>();
  require(c.m_j >= 1 && c.m_a >= 1, "htl: m_j and m_a must be >= 1");
  require(c.noise_std >= 0, "htl: noise_std must be >= 0");
  return c;
}

HtlHeads::HtlHeads(Index m_s, Index m_t, int k, const HtlConfig& cfg, Rng& rng)
    : s("htl.s", m_s, cfg.m_j, rng),
      t("htl.t", m_t, cfg.m_j, rng),
      f1("htl.f1", cfg.m_j, cfg.m_a, rng),
      f2("htl.f2", cfg.m_a, k, rng),
      s_prime("htl.s_prime", cfg.m_j, m_s, rng),
      t_prime("htl.t_prime", cfg.m_j, m_t, rng),
      noise_std(cfg.noise_std) {}

std::vector<Parameter*> HtlHeads::source_side() { return {&s.weight, &s.bias, &s_prime.weight, &s_prime.bias}; }

std::vector<Parameter*> HtlHeads::target_side() {
  return {&t.weight, &t.bias, &t_prime.weight, &t_prime.bias, &f1.weight, &f1.bias, &f2.weight, &f2.bias};
}

std::vector<Parameter*> HtlHeads::parameters() {
  auto out = source_side();
  for (Parameter* p : target_side()) out.push_back(p);
  return out;
}

Vector HtlHeads::shared_head(const Vector& psi) const {
  const Vector a = f1.apply(psi).array().tanh();
  return f2.apply(a);
}

Var shared_head(Tape& tape, HtlHeads& heads, Var psi) {
  return heads.f2.bind(tape)(tanh(heads.f1.bind(tape)(psi)));
}

Var denoise_loss(Tape& tape, HtlHeads& heads, const Matrix& input, Side which, Rng& rng) {
  Affine& proj = which == Side::source ? heads.s : heads.t;
  Affine& recon = which == Side::source ? heads.s_prime : heads.t_prime;
  require(input.cols() == proj.in_dim(), "denoise_loss: input width " + std::to_string(input.cols()) +
                                             " != " + std::to_string(proj.in_dim()));
  Matrix noisy = input;
  if (heads.noise_std > 0) noisy += gaussian(input.rows(), input.cols(), heads.noise_std, rng);
  Var out = recon.bind(tape)(proj.bind(tape)(tape.constant(noisy)));
  return mse(out, tape.constant(input));
}

}  // namespace episteer
