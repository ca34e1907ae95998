#include "episteer/source_model.hpp"

#include "episteer/checkpoint.hpp"

#include <algorithm>
#include <cmath>

namespace episteer {

nlohmann::json to_json(const SourceConfig& c) {
  return {{"d_pe", c.d_pe},
          {"d_se", c.d_se},
          {"decoder_hidden", c.decoder_hidden},
          {"k", c.k},
          {"season_weeks", c.season_weeks},
          {"season_start_week", c.season_start_week},
          {"pretrain_epochs", c.pretrain_epochs},
          {"pretrain_lr", c.pretrain_lr},
          {"finetune_epochs", c.finetune_epochs},
          {"finetune_lr_factor", c.finetune_lr_factor},
          {"lambda_season_recon", c.lambda_season_recon},
          {"lambda_mapper", c.lambda_mapper}};
}

SourceConfig source_config_from_json(const nlohmann::json& j, SourceConfig c) {
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
  };
  get("d_pe", c.d_pe);
  get("d_se", c.d_se);
  get("decoder_hidden", c.decoder_hidden);
  get("k", c.k);
  get("season_weeks", c.season_weeks);
  get("season_start_week", c.season_start_week);
  get("pretrain_epochs", c.pretrain_epochs);
  get("pretrain_lr", c.pretrain_lr);
  get("finetune_epochs", c.finetune_epochs);
  get("finetune_lr_factor", c.finetune_lr_factor);
  get("lambda_season_recon", c.lambda_season_recon);
  get("lambda_mapper", c.lambda_mapper);
  require(c.d_pe >= 1 && c.d_se >= 1 && c.decoder_hidden >= 1, "source: dimensions must be >= 1");
  require(c.k >= 1, "source: k must be >= 1");
  require(c.season_weeks > c.k, "source: season_weeks must exceed k");
  require(c.pretrain_epochs >= 0 && c.finetune_epochs >= 0, "source: epochs must be >= 0");
  require(c.pretrain_lr >= 0 && c.finetune_lr_factor >= 0, "source: learning rates must be >= 0");
  require(c.lambda_season_recon >= 0 && c.lambda_mapper >= 0, "source: loss weights must be >= 0");
  return c;
}

SeasonLayout season_layout(const WiliPanel& panel, int season_start_week, int season_weeks) {
  require(!panel.weeks.empty(), "empty wILI panel");
  const EpiWeek w = panel.contamination_start;
  SeasonLayout layout;
  layout.season_weeks = season_weeks;
  layout.current_start = w.week >= season_start_week ? EpiWeek{w.year, season_start_week}
                                                      : EpiWeek{w.year - 1, season_start_week};
  for (int y = panel.weeks.front().year; y < layout.current_start.year + 1; ++y) {
    const EpiWeek start{y, season_start_week};
    if (start < panel.weeks.front() || !(start < layout.current_start)) continue;
    if (start.plus(season_weeks - 1) > panel.weeks.back()) continue;
    layout.historical_starts.push_back(start);
  }
  return layout;
}

Matrix current_season_matrix(const WiliPanel& panel, const SeasonLayout& layout, EpiWeek through) {
  const auto first = panel.week_index(layout.current_start);
  const auto last = panel.week_index(through);
  if (!first || !last || *last < *first) {
    throw ValidationError("no current-season wILI through " + through.str());
  }
  return panel.values.middleRows(*first, *last - *first + 1).transpose();
}

SourceModel::SourceModel(const SourceConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  partial_encoder = GruWeights("source.partial_encoder", 1, cfg.d_pe, rng);
  season_encoder = Affine("source.season_encoder", cfg.season_weeks, cfg.d_se, rng);
  season_decoder = Affine("source.season_decoder", cfg.d_se, cfg.season_weeks, rng);
  mapper = Affine("source.mapper", cfg.d_pe, cfg.d_se, rng);
  decoder_hidden = Affine("source.decoder_hidden", cfg.d_pe + cfg.d_se, cfg.decoder_hidden, rng);
  decoder_out = Affine("source.decoder_out", cfg.decoder_hidden, cfg.k, rng);
  // Outputs are in units of input_scale; start at the mean level.
  decoder_out.bias.value.setOnes();
}

std::vector<Parameter*> SourceModel::representation_parameters() {
  auto out = partial_encoder.parameters();
  for (Affine* a : {&season_encoder, &season_decoder, &mapper}) {
    out.push_back(&a->weight);
    out.push_back(&a->bias);
  }
  return out;
}

std::vector<Parameter*> SourceModel::decoder_parameters() {
  return {&decoder_hidden.weight, &decoder_hidden.bias, &decoder_out.weight, &decoder_out.bias};
}

std::vector<Parameter*> SourceModel::parameters() {
  auto out = representation_parameters();
  for (Parameter* p : decoder_parameters()) out.push_back(p);
  return out;
}

void SourceModel::set_frozen(bool frozen) { set_trainable(parameters(), !frozen); }

void SourceModel::save(const std::filesystem::path& path) {
  nlohmann::json meta = {{"kind", "source_model"},
                         {"config", to_json(cfg_)},
                         {"input_scale", input_scale},
                         {"decoder_attached", decoder_attached},
                         {"trained", trained},
                         {"trained_through", trained_through ? trained_through->str() : std::string()}};
  save_checkpoint(path, parameters(), meta);
}

SourceModel SourceModel::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  const auto& meta = ckpt.metadata;
  if (meta.value("kind", std::string()) != "source_model") {
    throw ValidationError(path.string() + " is not a source-model checkpoint");
  }
  SourceModel model(source_config_from_json(meta.at("config")), 0);
  restore_parameters(ckpt, model.parameters());
  model.input_scale = meta.at("input_scale").get<double>();
  model.decoder_attached = meta.at("decoder_attached").get<bool>();
  model.trained = meta.at("trained").get<bool>();
  const auto through = meta.value("trained_through", std::string());
  if (!through.empty()) model.trained_through = EpiWeek::parse(through);
  return model;
}

SourceTapeOutput source_forward_tape(Tape& tape, SourceModel& model, const Matrix& sequences,
                                     std::span<const std::pair<Index, Index>> picks) {
  require(!picks.empty(), "source_forward: nothing to evaluate");
  Index steps = 0;
  for (const auto& [row, len] : picks) {
    require(row >= 0 && row < sequences.rows(), "source_forward: row out of range");
    require(len >= 1, "source_forward: empty prefix");
    require(len <= sequences.cols(), "source_forward: prefix longer than sequence");
    steps = std::max(steps, len);
  }
  const Index n = sequences.rows();
  const auto gru = model.partial_encoder.bind(tape);
  const Matrix scaled = sequences / model.input_scale;
  Var h = tape.constant(Matrix::Zero(n, model.config().d_pe));
  std::vector<Var> states;
  states.reserve(static_cast<std::size_t>(steps));
  for (Index p = 0; p < steps; ++p) {
    h = gru_step(gru, tape.constant(scaled.col(p)), h);
    states.push_back(h);
  }
  std::vector<Index> rows;
  rows.reserve(picks.size());
  for (const auto& [row, len] : picks) rows.push_back((len - 1) * n + row);
  Var stacked = states.size() == 1 ? states.front() : concat_rows(states);
  Var partial = gather_rows(stacked, rows);
  Var mapped = model.mapper.bind(tape)(partial);
  const Var parts[] = {partial, mapped};
  SourceTapeOutput out;
  out.partial = partial;
  out.embedding = concat_cols(parts);
  if (model.decoder_attached) {
    Var hidden = tanh(model.decoder_hidden.bind(tape)(out.embedding));
    out.prediction = scale(model.decoder_out.bind(tape)(hidden), model.input_scale);
  }
  return out;
}

SourceOutput source_forward(SourceModel& model, std::span<const double> prefix) {
  if (prefix.empty()) throw ValidationError("source_forward: empty prefix");
  Matrix seq(1, static_cast<Index>(prefix.size()));
  for (std::size_t i = 0; i < prefix.size(); ++i) seq(0, static_cast<Index>(i)) = prefix[i];
  Tape tape;
  const std::pair<Index, Index> pick{0, seq.cols()};
  auto out = source_forward_tape(tape, model, seq, std::span(&pick, 1));
  SourceOutput result;
  result.embedding = out.embedding.value().row(0).transpose();
  if (out.prediction.valid()) result.prediction = out.prediction.value().row(0).transpose();
  return result;
}

namespace {

struct SourceBatch {
  Matrix sequences;
  std::vector<std::pair<Index, Index>> picks;
  Matrix targets;  // |picks| × k, raw units
};

SourceBatch historical_batch(const WiliPanel& panel, const SeasonLayout& layout, int k) {
  SourceBatch b;
  const Index S = layout.season_weeks;
  const Index R = panel.num_regions();
  b.sequences.resize(static_cast<Index>(layout.historical_starts.size()) * R, S);
  Index row = 0;
  for (EpiWeek start : layout.historical_starts) {
    const Index first = *panel.week_index(start);
    for (Index r = 0; r < R; ++r, ++row) b.sequences.row(row) = panel.values.col(r).segment(first, S).transpose();
  }
  for (Index p = 1; p + k <= S; ++p)
    for (Index r = 0; r < b.sequences.rows(); ++r) b.picks.emplace_back(r, p);
  b.targets.resize(static_cast<Index>(b.picks.size()), k);
  for (std::size_t i = 0; i < b.picks.size(); ++i) {
    const auto [r, p] = b.picks[i];
    b.targets.row(static_cast<Index>(i)) = b.sequences.row(r).segment(p, k);
  }
  return b;
}

SourceBatch current_batch(const WiliPanel& panel, const SeasonLayout& layout, EpiWeek through, int k) {
  SourceBatch b;
  if (through < layout.current_start) return b;
  b.sequences = current_season_matrix(panel, layout, through);
  const Index len = b.sequences.cols();
  for (Index p = 1; p + k <= len; ++p)
    for (Index r = 0; r < b.sequences.rows(); ++r) b.picks.emplace_back(r, p);
  b.targets.resize(static_cast<Index>(b.picks.size()), k);
  for (std::size_t i = 0; i < b.picks.size(); ++i) {
    const auto [r, p] = b.picks[i];
    b.targets.row(static_cast<Index>(i)) = b.sequences.row(r).segment(p, k);
  }
  return b;
}

SourceTrainReport fit(SourceModel& model, const SourceBatch& hist, const SourceBatch* current, int epochs,
                      double lr) {
  const auto& cfg = model.config();
  const bool attached = model.decoder_attached;
  model.decoder_attached = true;
  auto params = model.parameters();
  Adam opt({.lr = lr});
  SourceTrainReport report;
  const double inv = 1.0 / model.input_scale;
  const Matrix curves_scaled = hist.sequences * inv;
  Matrix targets = hist.targets;
  if (current != nullptr && !current->picks.empty()) {
    targets.conservativeResize(targets.rows() + current->targets.rows(), Eigen::NoChange);
    targets.bottomRows(current->targets.rows()) = current->targets;
  }
  const Matrix targets_scaled = targets * inv;
  // The mapper learns to guess each pick's own full-season embedding.
  std::vector<Index> season_rows;
  season_rows.reserve(hist.picks.size());
  for (const auto& pick : hist.picks) season_rows.push_back(pick.first);

  for (int e = 0; e < epochs; ++e) {
    Tape tape;
    zero_grads(params);
    auto hout = source_forward_tape(tape, model, hist.sequences, hist.picks);
    Var pred = hout.prediction;
    if (current != nullptr && !current->picks.empty()) {
      auto cout = source_forward_tape(tape, model, current->sequences, current->picks);
      const Var preds[] = {hout.prediction, cout.prediction};
      pred = concat_rows(preds);
    }
    Var loss = mse(scale(pred, inv), tape.constant(targets_scaled));

    Var curves = tape.constant(curves_scaled);
    Var season_emb = tanh(model.season_encoder.bind(tape)(curves));
    if (cfg.lambda_season_recon > 0) {
      loss = loss + cfg.lambda_season_recon * mse(model.season_decoder.bind(tape)(season_emb), curves);
    }
    if (cfg.lambda_mapper > 0) {
      Var guess = model.mapper.bind(tape)(hout.partial);
      loss = loss + cfg.lambda_mapper * mse(guess, stop_gradient(gather_rows(season_emb, season_rows)));
    }
    report.losses.push_back(loss.scalar());
    tape.backward(loss);
    opt.step(params);
  }
  model.decoder_attached = attached;
  return report;
}

}  // namespace

SourceTrainReport pretrain_source(SourceModel& model, const WiliPanel& panel, int epochs, double lr) {
  require(epochs >= 0, "pretrain: epochs must be >= 0");
  require(lr >= 0, "pretrain: lr must be >= 0");
  panel.validate();
  const auto& cfg = model.config();
  const auto layout = season_layout(panel, cfg.season_start_week, cfg.season_weeks);
  if (layout.historical_starts.size() < 2) {
    throw ValidationError("pretrain: need at least 2 complete historical seasons, found " +
                          std::to_string(layout.historical_starts.size()));
  }
  const auto hist = historical_batch(panel, layout, cfg.k);
  const double level = hist.sequences.mean();
  model.input_scale = level > 1e-8 ? level : 1.0;
  auto report = fit(model, hist, nullptr, epochs, lr);
  model.trained = true;
  model.trained_through.reset();
  return report;
}

SourceTrainReport incremental_retrain(SourceModel& model, const WiliPanel& panel, EpiWeek through) {
  const auto& cfg = model.config();
  return incremental_retrain(model, panel, through, cfg.finetune_epochs, cfg.pretrain_lr * cfg.finetune_lr_factor);
}

SourceTrainReport incremental_retrain(SourceModel& model, const WiliPanel& panel, EpiWeek through, int epochs,
                                      double lr) {
  require(model.trained, "incremental_retrain: model has not been pretrained");
  require(epochs >= 0 && lr >= 0, "incremental_retrain: epochs and lr must be >= 0");
  if (!panel.week_index(through)) throw ValidationError("incremental_retrain: no wILI data for " + through.str());
  const auto& cfg = model.config();
  const auto layout = season_layout(panel, cfg.season_start_week, cfg.season_weeks);
  const auto current = current_batch(panel, layout, through, cfg.k);
  SourceTrainReport report;
  if (!current.picks.empty() && epochs > 0 && !layout.historical_starts.empty()) {
    const auto hist = historical_batch(panel, layout, cfg.k);
    report = fit(model, hist, &current, epochs, lr);
  }
  model.trained_through = through;
  return report;
}

SourceFeatures source_features(SourceModel& model, const WiliPanel& panel,
                               std::span<const std::pair<Index, EpiWeek>> requests) {
  require(!requests.empty(), "source_features: no requests");
  const auto& cfg = model.config();
  const auto layout = season_layout(panel, cfg.season_start_week, cfg.season_weeks);
  EpiWeek latest = requests.front().second;
  for (const auto& [r, w] : requests) {
    require(r >= 0 && r < panel.num_regions(), "source_features: region out of range");
    if (w < layout.current_start) {
      throw ValidationError("source_features: week " + w.str() + " precedes the current season");
    }
    latest = std::max(latest, w);
  }
  const Matrix seq = current_season_matrix(panel, layout, latest);
  std::vector<std::pair<Index, Index>> picks;
  picks.reserve(requests.size());
  for (const auto& [r, w] : requests) picks.emplace_back(r, layout.current_offset(w) + 1);
  Tape tape;
  auto out = source_forward_tape(tape, model, seq, picks);
  SourceFeatures f;
  f.embedding = out.embedding.value();
  if (out.prediction.valid()) f.prediction = out.prediction.value();
  return f;
}

}  // namespace episteer
