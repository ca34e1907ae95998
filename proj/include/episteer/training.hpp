#pragma once

// Joint model assembly, the combined objective, alternating optimization and
// the rolling weekly protocol.

#include "episteer/caem.hpp"
#include "episteer/htl.hpp"
#include "episteer/kd.hpp"
#include "episteer/region_graph.hpp"
#include "episteer/source_model.hpp"
#include "episteer/windows.hpp"

#include <functional>

namespace episteer {

enum class ModelKind {
  cali_net,  // full joint model
  caem,      // CAEM with its own linear head, no transfer
  source,    // source decoder forecasts only
};

std::string model_kind_name(ModelKind k);
ModelKind parse_model_kind(std::string_view s);

struct TrainConfig {
  int W = 4;
  int k = 1;
  std::uint64_t seed = 0;
  ModelKind model = ModelKind::cali_net;

  // Alternation: each round runs phase_a_steps then phase_b_steps full-batch
  // steps. The first protocol week uses `rounds`, later weeks `warm_rounds`.
  int phase_a_steps = 1;
  int phase_b_steps = 1;
  int rounds = 400;
  int warm_rounds = 100;

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Phase-B learning rate relative to lr. The source-side projection moves
  // the distillation target, so it is kept slower than the target side.
  double phase_b_lr_factor = 0.1;

  double lambda_re = 1.0;
  double lambda_lap = 0.1;
  double lambda_dn = 0.1;
  double lambda_source_path = 1.0;

  KdConfig kd;
  CaemConfig caem;
  HtlConfig htl;
  SourceConfig source;

  // Weeks of the contamination year making up the evaluation periods.
  int t1_first = 9, t1_last = 11;
  int t2_first = 12, t2_last = 15;

  void validate() const;
  AdamConfig adam() const { return {lr, beta1, beta2, eps}; }
};

// Nested JSON; missing keys keep their defaults.
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct ModelBundle {
  TrainConfig config;
  std::vector<std::string> regions;
  std::vector<std::string> signals;  // bucket-qualified
  SourceModel source;
  CaemModel caem;
  HtlHeads heads;
  // Output biases are set to the mean training target on first use.
  bool output_initialized = false;

  std::vector<Parameter*> joint_parameters();  // CAEM, region embedder, heads
  std::vector<Parameter*> parameters();        // joint + source
  Index parameter_count();

  void save(const std::filesystem::path& path);
  static ModelBundle load(const std::filesystem::path& path);
};

// Takes ownership of a pretrained source, detaches its decoder from the
// representation path and freezes it.
ModelBundle build_cali_net(SourceModel source, const std::vector<std::string>& regions,
                           const std::vector<Signal>& signals, const TrainConfig& cfg);

// Everything the objective needs for one as_of cut. Source-side features are
// constants computed once from the frozen source.
struct WeekData {
  EpiWeek as_of;
  std::vector<TrainingWindow> windows;
  CaemBatch batch;
  Matrix targets;               // n × k
  std::vector<bool> in_overlap;
  std::vector<Index> overlap_rows;
  std::vector<std::vector<Index>> groups;  // complete target-week groups
  Matrix laplacian;
  Matrix source_raw;            // n × M_S
  Matrix source_pred;           // n × k, source decoder
  double eta = 0.0;             // over the overlap set; 0 when it has < 2 rows

  // Current-season wILI rows and (row, prefix) picks reproducing source_raw,
  // so audits can rebuild the source forward on a tape.
  Matrix source_sequences;
  std::vector<std::pair<Index, Index>> source_picks;

  Index size() const { return static_cast<Index>(windows.size()); }
};

WeekData make_week_data(ModelBundle& bundle, const WiliPanel& wili, const ExogenousPanel& exo,
                        const RegionGraph& graph, EpiWeek as_of);

struct LossTerms {
  Var total;
  Var target_mse;
  Var region_recon;
  Var laplacian;
  Var kd_imitation;
  Var kd_hint;
  Var denoise_source;
  Var denoise_target;
  Var source_path;
  Vector kd_per_window;  // zero outside the overlap
  Vector phi;            // per overlap row

  // (term name, value) for every active term, total last.
  std::vector<std::pair<std::string, double>> values() const;
};

// The combined objective for the configured model kind. Inactive terms are
// left invalid.
LossTerms total_loss(Tape& tape, ModelBundle& bundle, const WeekData& data, const TrainConfig& cfg, Rng& rng);

// Phase-B objective: source-path prediction on overlap rows plus the s′
// denoiser. Never includes distillation.
Var source_side_loss(Tape& tape, ModelBundle& bundle, const WeekData& data, const TrainConfig& cfg, Rng& rng);

struct TraceRow {
  long step = 0;
  std::string term;
  double value = 0.0;
};

struct TrainReport {
  std::vector<TraceRow> trace;
  std::vector<double> totals;  // phase-A total loss per step
  long steps = 0;
  double audit_max_grad = 0.0;  // largest source/s/s′ gradient seen under KD
  long audits = 0;
};

struct TrainOptions {
  int rounds = -1;  // < 0: cfg.rounds
  // Every step, backpropagate a KD-only loss through a taped source forward
  // and require exactly zero gradient on the source, s and s′.
  bool audit = false;
  long step_offset = 0;
};

struct OptimizerState {
  Adam phase_a;
  Adam phase_b;
  explicit OptimizerState(const TrainConfig& cfg)
      : phase_a(cfg.adam()), phase_b({cfg.lr * cfg.phase_b_lr_factor, cfg.beta1, cfg.beta2, cfg.eps}) {}
};

TrainReport alternating_train(ModelBundle& bundle, const WeekData& data, const TrainConfig& cfg,
                              OptimizerState& opt, const TrainOptions& options = {});
TrainReport alternating_train(ModelBundle& bundle, const WeekData& data, const TrainConfig& cfg,
                              const TrainOptions& options = {});

// Gradient of the KD loss with the source forward on the tape. Returns the
// largest absolute gradient on source, s and s′ parameters.
double kd_unidirectionality_probe(ModelBundle& bundle, const WeekData& data, const TrainConfig& cfg);

struct ForecastRow {
  std::string region;
  EpiWeek as_of;
  EpiWeek target_week;
  int horizon = 1;
  double pred = 0.0;
  double source_pred = 0.0;
};

std::vector<ForecastRow> forecast(ModelBundle& bundle, const WiliPanel& wili, const ExogenousPanel& exo,
                                  EpiWeek as_of);

struct LeakageEntry {
  EpiWeek as_of;
  std::string what;
  EpiWeek week;
};

struct KdLogRow {
  EpiWeek as_of;
  EpiWeek target_week;
  std::string region;
  bool in_overlap = false;
  double contribution = 0.0;
};

struct WeeklyResult {
  std::vector<ForecastRow> forecasts;
  std::vector<TraceRow> trace;
  std::vector<LeakageEntry> leakage;
  std::vector<KdLogRow> kd_log;
  std::vector<double> week_seconds;
  double audit_max_grad = 0.0;
  long audits = 0;
};

struct WeeklyOptions {
  bool audit = false;
  // Called with the bundle at the start and end of each protocol week.
  std::function<void(EpiWeek as_of, bool end, ModelBundle&)> hook;
};

// Rolls as_of over [first, last]: source fine-tune, week data, warm-started
// alternating training, then k-ahead forecasts from data <= as_of.
WeeklyResult weekly_protocol(ModelBundle& bundle, const WiliPanel& wili, const ExogenousPanel& exo,
                             const RegionGraph& graph, EpiWeek first, EpiWeek last,
                             const WeeklyOptions& options = {});

// Entries whose week is newer than their as_of.
std::vector<LeakageEntry> leakage_violations(std::span<const LeakageEntry> log);

}  // namespace episteer
