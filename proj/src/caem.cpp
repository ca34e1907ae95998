#include "episteer/caem.hpp"

#include <algorithm>
#include <map>

namespace episteer {

namespace {
constexpr double kDecoderSlope = 0.01;
}  // namespace

nlohmann::json to_json(const CaemConfig& c) {
  return {{"h_r", c.h_r}, {"use_gru", c.use_gru}, {"use_region_embedding", c.use_region_embedding}};
}

CaemConfig caem_config_from_json(const nlohmann::json& j, CaemConfig c) {
  if (j.contains("h_r")) c.h_r = j.at("h_r").get<Index>();
  if (j.contains("use_gru")) c.use_gru = j.at("use_gru").get<bool>();
  if (j.contains("use_region_embedding")) c.use_region_embedding = j.at("use_region_embedding").get<bool>();
  require(c.h_r >= 1, "caem: h_r must be >= 1");
  return c;
}

RegionEmbedder::RegionEmbedder(Index num_regions, Index h_r, Rng& rng)
    : encoder("caem.region_encoder", num_regions, h_r, rng), decoder("caem.region_decoder", h_r, num_regions, rng) {}

std::vector<Parameter*> RegionEmbedder::parameters() {
  return {&encoder.weight, &encoder.bias, &decoder.weight, &decoder.bias};
}

RegionEmbedding region_embed(Tape& tape, RegionEmbedder& re, const Matrix& E) {
  require(E.cols() == re.num_regions(), "region_embed: expected " + std::to_string(re.num_regions()) +
                                            " columns, got " + std::to_string(E.cols()));
  for (Index i = 0; i < E.rows(); ++i) {
    Index ones = 0;
    for (Index j = 0; j < E.cols(); ++j) {
      const double v = E(i, j);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) throw ValidationError("region_embed: row " + std::to_string(i) + " is not one-hot");
  }
  Var e = tape.constant(E);
  RegionEmbedding out;
  out.embeddings = re.encoder.bind(tape)(e);
  out.recon_loss = mse(leaky_relu(re.decoder.bind(tape)(out.embeddings), kDecoderSlope), e);
  return out;
}

RegionEmbedding region_embed(Tape& tape, RegionEmbedder& re) {
  return region_embed(tape, re, Matrix::Identity(re.num_regions(), re.num_regions()));
}

CaemBatch make_caem_batch(std::span<const Matrix> windows, std::span<const Index> regions) {
  require(windows.size() == regions.size(), "caem batch: one region per window required");
  require(!windows.empty(), "caem batch: empty");
  const Index W = windows.front().rows(), l = windows.front().cols();
  CaemBatch b;
  b.regions.assign(regions.begin(), regions.end());
  b.steps.assign(static_cast<std::size_t>(W), Matrix(static_cast<Index>(windows.size()), l));
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i].rows() != W || windows[i].cols() != l) {
      throw ValidationError("ragged windows: window " + std::to_string(i) + " is " +
                            shape_str(windows[i].rows(), windows[i].cols()) + ", expected " + shape_str(W, l));
    }
    for (Index s = 0; s < W; ++s) b.steps[static_cast<std::size_t>(s)].row(static_cast<Index>(i)) = windows[i].row(s);
  }
  return b;
}

CaemModel::CaemModel(const CaemConfig& cfg, Index num_regions, Index num_signals, int window, int k, Rng& rng)
    : cfg_(cfg), num_signals_(num_signals), window_(window) {
  require(num_regions >= 1 && num_signals >= 1 && window >= 1 && k >= 1, "caem: invalid dimensions");
  embedder = RegionEmbedder(num_regions, cfg.h_r, rng);
  const Index extra = cfg.use_region_embedding ? cfg.h_r : 0;
  if (cfg.use_gru) {
    gru = GruWeights("caem.gru", num_signals + extra, cfg.h_r, rng);
  } else {
    feedforward = Affine("caem.feedforward", window * num_signals + extra, cfg.h_r, rng);
  }
  standalone_head = Affine("caem.standalone_head", cfg.h_r, k, rng);
}

std::vector<Parameter*> CaemModel::parameters() {
  std::vector<Parameter*> out;
  if (cfg_.use_region_embedding) out = embedder.parameters();
  if (cfg_.use_gru) {
    for (Parameter* p : gru.parameters()) out.push_back(p);
  } else {
    out.push_back(&feedforward.weight);
    out.push_back(&feedforward.bias);
  }
  return out;
}

Var caem_encode(Tape& tape, CaemModel& model, const CaemBatch& batch, Var region_embeddings) {
  require(batch.size() > 0, "caem_encode: empty batch");
  require(batch.window() == model.window(), "caem_encode: window length " + std::to_string(batch.window()) +
                                                 " != " + std::to_string(model.window()));
  for (const Matrix& s : batch.steps) {
    require(s.rows() == batch.size() && s.cols() == model.num_signals(), "ragged windows in caem batch");
  }
  const bool use_re = model.config().use_region_embedding;
  Var re_rows;
  if (use_re) {
    require(region_embeddings.valid(), "caem_encode: region embeddings required");
    re_rows = gather_rows(region_embeddings, batch.regions);
  }
  auto with_region = [&](Var x) {
    if (!use_re) return x;
    const Var parts[] = {x, re_rows};
    return concat_cols(parts);
  };
  if (!model.config().use_gru) {
    std::vector<Var> parts;
    for (const Matrix& s : batch.steps) parts.push_back(tape.constant(s));
    if (use_re) parts.push_back(re_rows);
    Var flat = parts.size() == 1 ? parts.front() : concat_cols(parts);
    return tanh(model.feedforward.bind(tape)(flat));
  }
  const auto w = model.gru.bind(tape);
  Var h = tape.constant(Matrix::Zero(batch.size(), model.hidden()));
  for (const Matrix& s : batch.steps) h = gru_step(w, with_region(tape.constant(s)), h);
  return h;
}

std::vector<std::vector<Index>> complete_region_groups(std::span<const Index> regions, std::span<const int> keys,
                                                       Index num_regions) {
  require(regions.size() == keys.size(), "region groups: one key per row required");
  std::map<int, std::vector<Index>> by_key;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    auto& slot = by_key[keys[i]];
    if (slot.empty()) slot.assign(static_cast<std::size_t>(num_regions), -1);
    const Index r = regions[i];
    require(r >= 0 && r < num_regions, "region groups: region out of range");
    slot[static_cast<std::size_t>(r)] = static_cast<Index>(i);
  }
  std::vector<std::vector<Index>> out;
  for (auto& [key, rows] : by_key) {
    if (std::find(rows.begin(), rows.end(), Index{-1}) == rows.end()) out.push_back(std::move(rows));
  }
  return out;
}

Var laplacian_term(Tape& tape, Var H, const std::vector<std::vector<Index>>& groups, const Matrix& laplacian) {
  if (groups.empty()) return tape.constant(Matrix::Zero(1, 1));
  Var total;
  for (const auto& g : groups) {
    Var term = trace_quadratic(gather_rows(H, g), laplacian);
    total = total.valid() ? total + term : term;
  }
  return scale(total, 1.0 / static_cast<double>(groups.size()));
}

}  // namespace episteer
