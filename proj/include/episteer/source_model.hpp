#pragma once

// Historical-season forecaster used as the transfer source.
//
// A GRU reads the observed prefix of a season; an embedding mapper turns that
// encoding into a guess of the full-season embedding learned by a season
// autoencoder. Their concatenation is the source representation, and a small
// feedforward decoder maps it to the next k incidences. The decoder can be
// detached without touching the representation path.

#include "episteer/gru.hpp"
#include "episteer/optimizer.hpp"
#include "episteer/panel.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>

namespace episteer {

struct SourceConfig {
  Index d_pe = 16;
  Index d_se = 16;
  Index decoder_hidden = 16;
  int k = 1;
  int season_weeks = 33;
  int season_start_week = 40;
  int pretrain_epochs = 300;
  double pretrain_lr = 5e-3;
  int finetune_epochs = 20;
  double finetune_lr_factor = 0.5;
  double lambda_season_recon = 1.0;
  double lambda_mapper = 1.0;
};

nlohmann::json to_json(const SourceConfig& c);
SourceConfig source_config_from_json(const nlohmann::json& j, SourceConfig base = {});

struct SeasonLayout {
  EpiWeek current_start;
  std::vector<EpiWeek> historical_starts;
  int season_weeks = 0;

  // Week-of-season index of w inside the current season.
  int current_offset(EpiWeek w) const { return weeks_between(current_start, w); }
};

// The current season is the one containing the contamination start;
// historical seasons are the complete seasons before it.
SeasonLayout season_layout(const WiliPanel& panel, int season_start_week, int season_weeks);

struct SourceOutput {
  Vector prediction;  // k
  Vector embedding;   // d_pe + d_se
};

class SourceModel {
 public:
  SourceModel() = default;
  SourceModel(const SourceConfig& cfg, std::uint64_t seed);

  const SourceConfig& config() const { return cfg_; }
  Index embedding_dim() const { return cfg_.d_pe + cfg_.d_se; }

  GruWeights partial_encoder;
  Affine season_encoder;
  Affine season_decoder;
  Affine mapper;
  Affine decoder_hidden;
  Affine decoder_out;
  double input_scale = 1.0;
  bool decoder_attached = true;
  bool trained = false;
  // Last week of the current season the model has been trained through.
  std::optional<EpiWeek> trained_through;

  std::vector<Parameter*> parameters();
  std::vector<Parameter*> representation_parameters();
  std::vector<Parameter*> decoder_parameters();
  void set_frozen(bool frozen);

  void save(const std::filesystem::path& path);
  static SourceModel load(const std::filesystem::path& path);

 private:
  SourceConfig cfg_;
};

// Tape-level batched forward. `sequences` is n × T (raw wILI); `picks` lists
// (row, prefix length) pairs. Returns stacked predictions (|picks| × k) and
// representations (|picks| × (d_pe + d_se)). Predictions are only produced
// while the decoder is attached.
struct SourceTapeOutput {
  Var prediction;
  Var embedding;
  Var partial;  // partial-encoder block of the representation
};
SourceTapeOutput source_forward_tape(Tape& tape, SourceModel& model, const Matrix& sequences,
                                     std::span<const std::pair<Index, Index>> picks);

// Single-prefix forward. Throws on an empty prefix.
SourceOutput source_forward(SourceModel& model, std::span<const double> prefix);

struct SourceTrainReport {
  std::vector<double> losses;  // one per epoch
};

// Fits the model on the historical seasons of `panel`.
SourceTrainReport pretrain_source(SourceModel& model, const WiliPanel& panel, int epochs, double lr);

// Warm-started fine-tune through current-season week `through` (inclusive),
// replaying historical seasons alongside the current-season windows.
SourceTrainReport incremental_retrain(SourceModel& model, const WiliPanel& panel, EpiWeek through);
SourceTrainReport incremental_retrain(SourceModel& model, const WiliPanel& panel, EpiWeek through, int epochs,
                                      double lr);

// Features for the current season: one row per (region, last observed week).
struct SourceFeatures {
  Matrix prediction;  // n × k
  Matrix embedding;   // n × M_S
};
SourceFeatures source_features(SourceModel& model, const WiliPanel& panel,
                               std::span<const std::pair<Index, EpiWeek>> requests);

// Current-season wILI rows (regions × weeks from season start to `through`).
Matrix current_season_matrix(const WiliPanel& panel, const SeasonLayout& layout, EpiWeek through);

}  // namespace episteer
