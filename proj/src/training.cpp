#include "episteer/training.hpp"

#include "episteer/checkpoint.hpp"

#include <algorithm>
#include <chrono>

namespace episteer {

std::string model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::cali_net:
      return "cali_net";
    case ModelKind::caem:
      return "caem";
    case ModelKind::source:
      return "source";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "cali_net") return ModelKind::cali_net;
  if (s == "caem") return ModelKind::caem;
  if (s == "source") return ModelKind::source;
  throw ValidationError("unknown model kind '" + std::string(s) + "' (expected cali_net, caem or source)");
}

void TrainConfig::validate() const {
  require(W >= 1, "W must be >= 1");
  require(k >= 1, "k must be >= 1");
  require(source.k == k, "source.k must equal k");
  require(phase_a_steps >= 1 || phase_b_steps >= 1, "alternation schedule is empty");
  require(phase_a_steps >= 0 && phase_b_steps >= 0, "phase step counts must be >= 0");
  require(rounds >= 0 && warm_rounds >= 0, "rounds must be >= 0");
  require(lr >= 0, "lr must be >= 0");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "Adam betas must lie in [0, 1)");
  require(eps > 0, "eps must be > 0");
  require(phase_b_lr_factor >= 0, "phase_b_lr_factor must be >= 0");
  require(lambda_re >= 0 && lambda_lap >= 0 && lambda_dn >= 0 && lambda_source_path >= 0,
          "loss weights must be >= 0");
  require(t1_first <= t1_last && t1_last < t2_first && t2_first <= t2_last, "T1 must precede T2");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"W", c.W},
          {"k", c.k},
          {"seed", c.seed},
          {"model", model_kind_name(c.model)},
          {"phase_a_steps", c.phase_a_steps},
          {"phase_b_steps", c.phase_b_steps},
          {"rounds", c.rounds},
          {"warm_rounds", c.warm_rounds},
          {"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"phase_b_lr_factor", c.phase_b_lr_factor},
          {"lambda_re", c.lambda_re},
          {"lambda_lap", c.lambda_lap},
          {"lambda_dn", c.lambda_dn},
          {"lambda_source_path", c.lambda_source_path},
          {"t1_first", c.t1_first},
          {"t1_last", c.t1_last},
          {"t2_first", c.t2_first},
          {"t2_last", c.t2_last},
          {"kd", to_json(c.kd)},
          {"caem", to_json(c.caem)},
          {"htl", to_json(c.htl)},
          {"source", to_json(c.source)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  require(j.is_object(), "training config must be a JSON object");
  try {
    auto get = [&](const char* key, auto& dst) {
      if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get("W", c.W);
    get("k", c.k);
    get("seed", c.seed);
    if (j.contains("model")) c.model = parse_model_kind(j.at("model").get<std::string>());
    get("phase_a_steps", c.phase_a_steps);
    get("phase_b_steps", c.phase_b_steps);
    get("rounds", c.rounds);
    get("warm_rounds", c.warm_rounds);
    get("lr", c.lr);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("eps", c.eps);
    get("phase_b_lr_factor", c.phase_b_lr_factor);
    get("lambda_re", c.lambda_re);
    get("lambda_lap", c.lambda_lap);
    get("lambda_dn", c.lambda_dn);
    get("lambda_source_path", c.lambda_source_path);
    get("t1_first", c.t1_first);
    get("t1_last", c.t1_last);
    get("t2_first", c.t2_first);
    get("t2_last", c.t2_last);
    if (j.contains("kd")) c.kd = kd_config_from_json(j.at("kd"), c.kd);
    if (j.contains("caem")) c.caem = caem_config_from_json(j.at("caem"), c.caem);
    if (j.contains("htl")) c.htl = htl_config_from_json(j.at("htl"), c.htl);
    if (j.contains("source")) c.source = source_config_from_json(j.at("source"), c.source);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("training config: ") + e.what());
  }
  // The horizon is configured once, at the top level.
  c.source.k = c.k;
  c.validate();
  return c;
}

std::vector<Parameter*> ModelBundle::joint_parameters() {
  std::vector<Parameter*> out;
  if (config.model == ModelKind::source) return out;
  out = caem.parameters();
  if (config.model == ModelKind::caem) {
    out.push_back(&caem.standalone_head.weight);
    out.push_back(&caem.standalone_head.bias);
  } else {
    for (Parameter* p : heads.parameters()) out.push_back(p);
  }
  return out;
}

std::vector<Parameter*> ModelBundle::parameters() {
  auto out = source.parameters();
  for (Parameter* p : joint_parameters()) out.push_back(p);
  return out;
}

Index ModelBundle::parameter_count() { return episteer::parameter_count(parameters()); }

void ModelBundle::save(const std::filesystem::path& path) {
  nlohmann::json meta = {
      {"kind", "bundle"},
      {"config", to_json(config)},
      {"regions", regions},
      {"signals", signals},
      {"output_initialized", output_initialized},
      {"source",
       {{"input_scale", source.input_scale},
        {"decoder_attached", source.decoder_attached},
        {"trained", source.trained},
        {"trained_through", source.trained_through ? source.trained_through->str() : std::string()}}}};
  save_checkpoint(path, parameters(), meta);
}

namespace {

ModelBundle empty_bundle(const TrainConfig& cfg, const std::vector<std::string>& regions,
                         const std::vector<std::string>& signals, SourceModel source) {
  cfg.validate();
  require(!regions.empty() && !signals.empty(), "bundle needs at least one region and one signal");
  ModelBundle b;
  b.config = cfg;
  b.regions = regions;
  b.signals = signals;
  b.source = std::move(source);
  Rng rng(cfg.seed);
  b.caem = CaemModel(cfg.caem, static_cast<Index>(regions.size()), static_cast<Index>(signals.size()), cfg.W, cfg.k,
                     rng);
  b.heads = HtlHeads(b.source.embedding_dim(), cfg.caem.h_r, cfg.k, cfg.htl, rng);
  return b;
}

}  // namespace

ModelBundle ModelBundle::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  const auto& meta = ckpt.metadata;
  if (meta.value("kind", std::string()) != "bundle") {
    throw ValidationError(path.string() + " is not a model bundle checkpoint");
  }
  const TrainConfig cfg = train_config_from_json(meta.at("config"));
  ModelBundle b = empty_bundle(cfg, meta.at("regions").get<std::vector<std::string>>(),
                               meta.at("signals").get<std::vector<std::string>>(), SourceModel(cfg.source, 0));
  restore_parameters(ckpt, b.parameters());
  b.output_initialized = meta.value("output_initialized", false);
  const auto& sm = meta.at("source");
  b.source.input_scale = sm.at("input_scale").get<double>();
  b.source.decoder_attached = sm.at("decoder_attached").get<bool>();
  b.source.trained = sm.at("trained").get<bool>();
  const auto through = sm.value("trained_through", std::string());
  if (!through.empty()) b.source.trained_through = EpiWeek::parse(through);
  b.source.set_frozen(true);
  return b;
}

ModelBundle build_cali_net(SourceModel source, const std::vector<std::string>& regions,
                           const std::vector<Signal>& signals, const TrainConfig& cfg) {
  if (!source.trained) throw ValidationError("build_cali_net: the source model has not been pretrained");
  require(source.config().k == cfg.k, "build_cali_net: source horizon " + std::to_string(source.config().k) +
                                          " != configured k " + std::to_string(cfg.k));
  std::vector<std::string> names;
  for (const auto& s : signals) names.push_back(s.qualified());
  source.decoder_attached = false;
  source.set_frozen(true);
  return empty_bundle(cfg, regions, names, std::move(source));
}

namespace {

// Runs the source forward with the decoder attached, restoring the flag.
SourceTapeOutput teacher_forward(Tape& tape, SourceModel& source, const Matrix& seq,
                                 std::span<const std::pair<Index, Index>> picks) {
  const bool attached = source.decoder_attached;
  source.decoder_attached = true;
  auto out = source_forward_tape(tape, source, seq, picks);
  source.decoder_attached = attached;
  return out;
}

Matrix rows_of(const Matrix& m, std::span<const Index> rows) { return m(rows, Eigen::all); }

}  // namespace

WeekData make_week_data(ModelBundle& bundle, const WiliPanel& wili, const ExogenousPanel& exo,
                        const RegionGraph& graph, EpiWeek as_of) {
  const TrainConfig& cfg = bundle.config;
  require(wili.regions == bundle.regions, "wILI regions do not match the model bundle");
  require(graph.vertices == wili.regions, "region graph vertices do not match the wILI regions");
  require(exo.num_signals() == static_cast<Index>(bundle.signals.size()),
          "exogenous panel has " + std::to_string(exo.num_signals()) + " signals, bundle expects " +
              std::to_string(bundle.signals.size()));
  const WiliPanel wili_t = wili.truncated(as_of);
  const ExogenousPanel exo_t = exo.truncated(as_of);
  WeekData d;
  d.as_of = as_of;
  const auto norm = FeatureNormalizer::fit(exo_t, as_of);
  d.windows = make_training_windows(exo_t, wili_t, cfg.W, cfg.k, as_of, norm);
  const Index n = d.size();

  std::vector<Matrix> inputs;
  std::vector<Index> regions;
  std::vector<int> keys;
  d.targets.resize(n, cfg.k);
  for (Index i = 0; i < n; ++i) {
    const auto& w = d.windows[static_cast<std::size_t>(i)];
    inputs.push_back(w.inputs);
    regions.push_back(w.region);
    keys.push_back(w.target_week.year * 100 + w.target_week.week);
    d.targets.row(i) = w.target.transpose();
    d.in_overlap.push_back(w.in_overlap);
    if (w.in_overlap) d.overlap_rows.push_back(i);
  }
  d.batch = make_caem_batch(inputs, regions);
  d.groups = complete_region_groups(regions, keys, wili.num_regions());
  d.laplacian = graph.laplacian;

  const auto& scfg = bundle.source.config();
  const auto layout = season_layout(wili_t, scfg.season_start_week, scfg.season_weeks);
  EpiWeek latest = d.windows.front().last_input_week;
  for (const auto& w : d.windows) {
    if (w.last_input_week < layout.current_start) {
      throw ValidationError("window ending " + w.last_input_week.str() + " precedes the current season start " +
                            layout.current_start.str());
    }
    latest = std::max(latest, w.last_input_week);
  }
  d.source_sequences = current_season_matrix(wili_t, layout, latest);
  for (const auto& w : d.windows) d.source_picks.emplace_back(w.region, layout.current_offset(w.last_input_week) + 1);
  Tape tape;
  auto out = teacher_forward(tape, bundle.source, d.source_sequences, d.source_picks);
  d.source_raw = out.embedding.value();
  d.source_pred = out.prediction.value();
  if (d.overlap_rows.size() >= 2) {
    d.eta = compute_eta(rows_of(d.source_pred, d.overlap_rows), rows_of(d.targets, d.overlap_rows),
                        cfg.kd.eta_floor);
  }
  return d;
}

std::vector<std::pair<std::string, double>> LossTerms::values() const {
  std::vector<std::pair<std::string, double>> out;
  auto add = [&](const char* name, const Var& v) {
    if (v.valid()) out.emplace_back(name, v.scalar());
  };
  add("target_mse", target_mse);
  add("region_recon", region_recon);
  add("laplacian", laplacian);
  add("kd_imitation", kd_imitation);
  add("kd_hint", kd_hint);
  add("denoise_source", denoise_source);
  add("denoise_target", denoise_target);
  add("source_path", source_path);
  add("total", total);
  return out;
}

namespace {

struct TargetPath {
  Var H;
  Var psi_t;
  Var prediction;
  RegionEmbedding re;
};

TargetPath target_path(Tape& tape, ModelBundle& bundle, const CaemBatch& batch) {
  TargetPath p;
  if (bundle.caem.config().use_region_embedding) p.re = region_embed(tape, bundle.caem.embedder);
  p.H = caem_encode(tape, bundle.caem, batch, p.re.embeddings);
  if (bundle.config.model == ModelKind::caem) {
    p.prediction = bundle.caem.standalone_head.bind(tape)(p.H);
  } else {
    p.psi_t = bundle.heads.t.bind(tape)(p.H);
    p.prediction = shared_head(tape, bundle.heads, p.psi_t);
  }
  return p;
}

Var weighted(Var total, double w, Var term) { return w == 1.0 ? total + term : total + w * term; }

// Phase-A params for the configured kind.
std::vector<Parameter*> target_side_parameters(ModelBundle& b) {
  auto out = b.caem.parameters();
  if (b.config.model == ModelKind::caem) {
    out.push_back(&b.caem.standalone_head.weight);
    out.push_back(&b.caem.standalone_head.bias);
  } else {
    for (Parameter* p : b.heads.target_side()) out.push_back(p);
  }
  return out;
}

}  // namespace

LossTerms total_loss(Tape& tape, ModelBundle& bundle, const WeekData& data, const TrainConfig& cfg, Rng& rng) {
  LossTerms t;
  t.kd_per_window = Vector::Zero(data.size());
  const Var y = tape.constant(data.targets);
  if (cfg.model == ModelKind::source) {
    t.target_mse = mse(tape.constant(data.source_pred), y);
    t.total = t.target_mse;
    return t;
  }
  auto path = target_path(tape, bundle, data.batch);
  t.target_mse = mse(path.prediction, y);
  Var total = t.target_mse;
  if (path.re.recon_loss.valid() && cfg.lambda_re > 0) {
    t.region_recon = path.re.recon_loss;
    total = weighted(total, cfg.lambda_re, t.region_recon);
  }
  if (cfg.lambda_lap > 0 && !data.groups.empty()) {
    t.laplacian = laplacian_term(tape, path.H, data.groups, data.laplacian);
    total = weighted(total, cfg.lambda_lap, t.laplacian);
  }
  if (cfg.model == ModelKind::caem) {
    t.total = total;
    return t;
  }

  auto& heads = bundle.heads;
  const auto& rows = data.overlap_rows;
  if (!rows.empty()) {
    const Matrix y_o = rows_of(data.targets, rows);
    Var psi_s = heads.s.bind(tape)(tape.constant(rows_of(data.source_raw, rows)));
    Var joint_pred = shared_head(tape, heads, psi_s);
    if (cfg.lambda_source_path > 0) {
      t.source_path = mse(joint_pred, tape.constant(y_o));
      total = weighted(total, cfg.lambda_source_path, t.source_path);
    }
    if (cfg.kd.enabled && rows.size() >= 2) {
      Var source_pred = cfg.kd.joint_source_prediction ? joint_pred : tape.constant(rows_of(data.source_pred, rows));
      const double eta = cfg.kd.joint_source_prediction
                             ? compute_eta(source_pred.value(), y_o, cfg.kd.eta_floor)
                             : data.eta;
      const std::vector<bool> flags(rows.size(), true);
      auto kd = kd_loss(source_pred, gather_rows(path.prediction, rows), psi_s, gather_rows(path.psi_t, rows), y_o,
                        flags, eta, cfg.kd);
      t.kd_imitation = kd.imitation;
      t.kd_hint = kd.hint;
      t.phi = kd.phi;
      total = total + kd.total;
      const double n = static_cast<double>(rows.size());
      const Matrix& yt = path.prediction.value();
      const Matrix& pt = path.psi_t.value();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const Index r = rows[i];
        const double im = (source_pred.value().row(static_cast<Index>(i)) - yt.row(r)).squaredNorm();
        const double hi = (psi_s.value().row(static_cast<Index>(i)) - pt.row(r)).squaredNorm();
        t.kd_per_window(r) = kd.phi(static_cast<Index>(i)) * (cfg.kd.alpha * im + cfg.kd.beta * hi) / n;
      }
    }
  }
  if (cfg.lambda_dn > 0) {
    t.denoise_source = denoise_loss(tape, heads, data.source_raw, Side::source, rng);
    t.denoise_target = denoise_loss(tape, heads, path.H.value(), Side::target, rng);
    total = weighted(total, cfg.lambda_dn, t.denoise_source + t.denoise_target);
  }
  t.total = total;
  return t;
}

Var source_side_loss(Tape& tape, ModelBundle& bundle, const WeekData& data, const TrainConfig& cfg, Rng& rng) {
  auto& heads = bundle.heads;
  Var total = tape.constant(Matrix::Zero(1, 1));
  const auto& rows = data.overlap_rows;
  if (!rows.empty() && cfg.lambda_source_path > 0) {
    Var psi_s = heads.s.bind(tape)(tape.constant(rows_of(data.source_raw, rows)));
    Var pred = shared_head(tape, heads, psi_s);
    total = weighted(total, cfg.lambda_source_path, mse(pred, tape.constant(rows_of(data.targets, rows))));
  }
  if (cfg.lambda_dn > 0) {
    total = weighted(total, cfg.lambda_dn, denoise_loss(tape, heads, data.source_raw, Side::source, rng));
  }
  return total;
}

double kd_unidirectionality_probe(ModelBundle& bundle, const WeekData& data, const TrainConfig& cfg) {
  if (cfg.model != ModelKind::cali_net || !cfg.kd.enabled || data.overlap_rows.size() < 2) return 0.0;
  std::vector<Parameter*> guarded = bundle.source.parameters();
  for (Parameter* p : bundle.heads.source_side()) guarded.push_back(p);
  std::vector<bool> saved;
  for (Parameter* p : guarded) saved.push_back(p->trainable);
  // Open every guarded parameter so that any leak would show up as gradient.
  set_trainable(guarded, true);
  auto all = bundle.parameters();
  zero_grads(all);

  Tape tape;
  const auto& rows = data.overlap_rows;
  auto src = teacher_forward(tape, bundle.source, data.source_sequences, data.source_picks);
  Var psi_s = bundle.heads.s.bind(tape)(gather_rows(src.embedding, rows));
  Var source_pred = cfg.kd.joint_source_prediction ? shared_head(tape, bundle.heads, psi_s)
                                                   : gather_rows(src.prediction, rows);
  auto path = target_path(tape, bundle, data.batch);
  const Matrix y_o = rows_of(data.targets, rows);
  const double eta = compute_eta(source_pred.value(), y_o, cfg.kd.eta_floor);
  const std::vector<bool> flags(rows.size(), true);
  auto kd = kd_loss(source_pred, gather_rows(path.prediction, rows), psi_s, gather_rows(path.psi_t, rows), y_o,
                    flags, eta, cfg.kd);
  tape.backward(kd.total);
  const double worst = max_abs_grad(guarded);

  for (std::size_t i = 0; i < guarded.size(); ++i) guarded[i]->trainable = saved[i];
  zero_grads(all);
  return worst;
}

TrainReport alternating_train(ModelBundle& bundle, const WeekData& data, const TrainConfig& cfg,
                              const TrainOptions& options) {
  OptimizerState opt(cfg);
  return alternating_train(bundle, data, cfg, opt, options);
}

TrainReport alternating_train(ModelBundle& bundle, const WeekData& data, const TrainConfig& cfg,
                              OptimizerState& opt, const TrainOptions& options) {
  TrainReport report;
  if (cfg.model == ModelKind::source) return report;
  const int rounds = options.rounds < 0 ? cfg.rounds : options.rounds;
  if (!bundle.output_initialized) {
    const Vector mean = data.targets.colwise().mean().transpose();
    bundle.heads.f2.bias.value = mean;
    bundle.caem.standalone_head.bias.value = mean;
    bundle.output_initialized = true;
  }
  auto joint = bundle.joint_parameters();
  auto phase_a = target_side_parameters(bundle);
  auto phase_b = bundle.heads.source_side();
  const bool has_phase_b = cfg.model == ModelKind::cali_net && cfg.phase_b_steps > 0;
  auto source_params = bundle.source.parameters();
  bundle.source.set_frozen(true);
  Rng rng(cfg.seed * 7919 + static_cast<std::uint64_t>(options.step_offset));
  long step = options.step_offset;

  for (int round = 0; round < rounds; ++round) {
    set_trainable(joint, false);
    set_trainable(phase_a, true);
    for (int i = 0; i < cfg.phase_a_steps; ++i, ++step) {
      if (options.audit) {
        report.audit_max_grad = std::max(report.audit_max_grad, kd_unidirectionality_probe(bundle, data, cfg));
        ++report.audits;
      }
      Tape tape;
      zero_grads(joint);
      zero_grads(source_params);
      auto terms = total_loss(tape, bundle, data, cfg, rng);
      tape.backward(terms.total);
      // The source and s/s′ are closed during phase A; any gradient there is a bug.
      if (max_abs_grad(source_params) != 0.0 || max_abs_grad(phase_b) != 0.0) {
        throw NumericError("phase A produced gradient on frozen source-side parameters");
      }
      opt.phase_a.step(phase_a);
      for (const auto& [name, value] : terms.values()) report.trace.push_back({step, name, value});
      report.totals.push_back(terms.total.scalar());
      ++report.steps;
    }
    if (!has_phase_b) continue;
    set_trainable(joint, false);
    set_trainable(phase_b, true);
    for (int i = 0; i < cfg.phase_b_steps; ++i, ++step) {
      Tape tape;
      zero_grads(joint);
      Var loss = source_side_loss(tape, bundle, data, cfg, rng);
      tape.backward(loss);
      opt.phase_b.step(phase_b);
      report.trace.push_back({step, "phase_b_total", loss.scalar()});
      ++report.steps;
    }
  }
  set_trainable(joint, true);
  zero_grads(joint);
  return report;
}

std::vector<ForecastRow> forecast(ModelBundle& bundle, const WiliPanel& wili, const ExogenousPanel& exo,
                                  EpiWeek as_of) {
  const TrainConfig& cfg = bundle.config;
  require(wili.regions == bundle.regions, "wILI regions do not match the model bundle");
  const WiliPanel wili_t = wili.truncated(as_of);
  const ExogenousPanel exo_t = exo.truncated(as_of);
  if (wili_t.weeks.empty() || wili_t.weeks.back() != as_of) {
    throw ValidationError("no wILI data for " + as_of.str());
  }
  const auto norm = FeatureNormalizer::fit(exo_t, as_of);
  const auto inputs = make_forecast_inputs(exo_t, wili_t, cfg.W, as_of, norm);
  if (inputs.empty()) throw ValidationError("no region has a complete exogenous window at " + as_of.str());

  std::vector<std::pair<Index, EpiWeek>> requests;
  std::vector<Matrix> windows;
  std::vector<Index> regions;
  for (const auto& in : inputs) {
    requests.emplace_back(in.region, as_of);
    windows.push_back(in.inputs);
    regions.push_back(in.region);
  }
  const auto& scfg = bundle.source.config();
  const auto layout = season_layout(wili_t, scfg.season_start_week, scfg.season_weeks);
  const Matrix seq = current_season_matrix(wili_t, layout, as_of);
  std::vector<std::pair<Index, Index>> picks;
  for (Index r : regions) picks.emplace_back(r, seq.cols());

  Tape tape;
  auto src = teacher_forward(tape, bundle.source, seq, picks);
  Matrix pred = src.prediction.value();
  if (cfg.model != ModelKind::source) {
    auto path = target_path(tape, bundle, make_caem_batch(windows, regions));
    pred = path.prediction.value();
  }
  std::vector<ForecastRow> out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (int h = 1; h <= cfg.k; ++h) {
      ForecastRow row;
      row.region = bundle.regions[static_cast<std::size_t>(regions[i])];
      row.as_of = as_of;
      row.target_week = as_of.plus(h);
      row.horizon = h;
      row.pred = pred(static_cast<Index>(i), h - 1);
      row.source_pred = src.prediction.value()(static_cast<Index>(i), h - 1);
      out.push_back(row);
    }
  }
  return out;
}

WeeklyResult weekly_protocol(ModelBundle& bundle, const WiliPanel& wili, const ExogenousPanel& exo,
                             const RegionGraph& graph, EpiWeek first, EpiWeek last, const WeeklyOptions& options) {
  require(first <= last, "weekly protocol: empty week range");
  const TrainConfig& cfg = bundle.config;
  WeeklyResult result;
  OptimizerState opt(cfg);
  long step = 0;
  bool first_week = true;
  for (EpiWeek as_of = first; as_of <= last; as_of = as_of.next()) {
    const auto started = std::chrono::steady_clock::now();
    if (options.hook) options.hook(as_of, false, bundle);
    const WiliPanel wili_t = wili.truncated(as_of);
    const ExogenousPanel exo_t = exo.truncated(as_of);
    if (wili_t.weeks.empty() || wili_t.weeks.back() != as_of) {
      throw ValidationError("data gap: no wILI for " + as_of.str());
    }
    if (exo_t.weeks.empty() || exo_t.weeks.back() != as_of) {
      throw ValidationError("data gap: no exogenous data for " + as_of.str());
    }
    result.leakage.push_back({as_of, "wili_panel", wili_t.weeks.back()});
    result.leakage.push_back({as_of, "exogenous_panel", exo_t.weeks.back()});

    bundle.source.set_frozen(false);
    incremental_retrain(bundle.source, wili_t, as_of);
    bundle.source.set_frozen(true);

    if (cfg.model != ModelKind::source) {
      const WeekData data = make_week_data(bundle, wili_t, exo_t, graph, as_of);
      for (const auto& w : data.windows) {
        result.leakage.push_back({as_of, "window_input", w.last_input_week});
        result.leakage.push_back({as_of, "window_target", w.target_week});
      }
      const auto& scfg = bundle.source.config();
      const auto layout = season_layout(wili_t, scfg.season_start_week, scfg.season_weeks);
      result.leakage.push_back(
          {as_of, "source_prefix", layout.current_start.plus(static_cast<int>(data.source_sequences.cols()) - 1)});

      TrainOptions topt;
      topt.rounds = first_week ? cfg.rounds : cfg.warm_rounds;
      topt.audit = options.audit;
      topt.step_offset = step;
      auto report = alternating_train(bundle, data, cfg, opt, topt);
      step += report.steps;
      result.audit_max_grad = std::max(result.audit_max_grad, report.audit_max_grad);
      result.audits += report.audits;
      for (auto& row : report.trace) result.trace.push_back(std::move(row));

      Tape tape;
      Rng rng(cfg.seed);
      auto terms = total_loss(tape, bundle, data, cfg, rng);
      for (Index i = 0; i < data.size(); ++i) {
        const auto& w = data.windows[static_cast<std::size_t>(i)];
        result.kd_log.push_back({as_of, w.target_week, bundle.regions[static_cast<std::size_t>(w.region)],
                                 w.in_overlap, terms.kd_per_window(i)});
      }
    }
    for (auto& row : forecast(bundle, wili_t, exo_t, as_of)) {
      result.leakage.push_back({as_of, "forecast_input", row.as_of});
      result.forecasts.push_back(std::move(row));
    }
    first_week = false;
    if (options.hook) options.hook(as_of, true, bundle);
    result.week_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
  }
  return result;
}

std::vector<LeakageEntry> leakage_violations(std::span<const LeakageEntry> log) {
  std::vector<LeakageEntry> out;
  for (const auto& e : log) {
    if (e.week > e.as_of) out.push_back(e);
  }
  return out;
}

}  // namespace episteer
