#pragma once

// Exogenous-signal target model. A linear autoencoder over one-hot region
// codes supplies a region embedding that is appended to every input step of
// a GRU; the final hidden state is the per-region representation.

#include "episteer/gru.hpp"

#include <json.hpp>

namespace episteer {

struct CaemConfig {
  Index h_r = 8;
  bool use_gru = true;  // false: single tanh layer over the flattened window
  bool use_region_embedding = true;
};

nlohmann::json to_json(const CaemConfig& c);
CaemConfig caem_config_from_json(const nlohmann::json& j, CaemConfig base = {});

struct RegionEmbedder {
  Affine encoder;  // |V| → h_r
  // h_r → |V| followed by a leaky ReLU. An affine decoder from h_r < |V|
  // dimensions cannot reconstruct |V| one-hot codes exactly; the kink lets
  // each output separate its own code from the rest.
  Affine decoder;

  RegionEmbedder() = default;
  RegionEmbedder(Index num_regions, Index h_r, Rng& rng);

  Index num_regions() const { return encoder.in_dim(); }
  std::vector<Parameter*> parameters();
};

struct RegionEmbedding {
  Var embeddings;  // |V| × h_r
  Var recon_loss;  // MSE(decoder(encoder(E)), E)
};

// E must be one-hot per row.
RegionEmbedding region_embed(Tape& tape, RegionEmbedder& re, const Matrix& E);
RegionEmbedding region_embed(Tape& tape, RegionEmbedder& re);

// Windows regrouped step-major: steps[s] is n × l, row i from window i.
struct CaemBatch {
  std::vector<Matrix> steps;
  std::vector<Index> regions;

  Index size() const { return static_cast<Index>(regions.size()); }
  Index window() const { return static_cast<Index>(steps.size()); }
};

CaemBatch make_caem_batch(std::span<const Matrix> windows, std::span<const Index> regions);

class CaemModel {
 public:
  CaemModel() = default;
  CaemModel(const CaemConfig& cfg, Index num_regions, Index num_signals, int window, int k, Rng& rng);

  const CaemConfig& config() const { return cfg_; }
  Index num_signals() const { return num_signals_; }
  int window() const { return window_; }
  Index hidden() const { return cfg_.h_r; }

  RegionEmbedder embedder;
  GruWeights gru;
  Affine feedforward;
  Affine standalone_head;  // h_r → k, used only by the standalone variant

  // Everything except the standalone head.
  std::vector<Parameter*> parameters();

 private:
  CaemConfig cfg_;
  Index num_signals_ = 0;
  int window_ = 0;
};

// H: one row per batch window. `region_embeddings` may be invalid when the
// model does not use them.
Var caem_encode(Tape& tape, CaemModel& model, const CaemBatch& batch, Var region_embeddings);

// Row indices of `regions` grouped by key, each group ordered by region index.
// Only groups covering every region once are returned.
std::vector<std::vector<Index>> complete_region_groups(std::span<const Index> regions, std::span<const int> keys,
                                                       Index num_regions);

// Mean over groups of trace(H_gᵀ L H_g); zero when there are no groups.
Var laplacian_term(Tape& tape, Var H, const std::vector<std::vector<Index>>& groups, const Matrix& laplacian);

}  // namespace episteer
