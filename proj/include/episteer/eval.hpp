#pragma once

// Rolling-origin evaluation: RMSE tables over the T1/T2 periods, baselines,
// best-performer counts, ratio heatmaps and the ablation harness.

#include "episteer/training.hpp"

#include <json.hpp>

#include <map>
#include <optional>

namespace episteer {

// Throws on empty or mismatched inputs.
double rmse(std::span<const double> preds, std::span<const double> truths);

// Mean wILI over the historical seasons at target's week-of-season. Throws
// when no historical season covers that week.
double hist_baseline(const WiliPanel& panel, EpiWeek target, Index region, int season_start_week = 40,
                     int season_weeks = 33);

enum class Period { T1, T2 };
std::string period_name(Period p);

// T1/T2 membership of a target week, judged on the contamination year.
std::optional<Period> period_of(EpiWeek target, const TrainConfig& cfg, int year);

// as_of range whose k-ahead targets cover T1 ∪ T2.
std::pair<EpiWeek, EpiWeek> protocol_range(const TrainConfig& cfg, int year);

struct ReportEntry {
  std::string region;
  EpiWeek as_of;
  EpiWeek target_week;
  int horizon = 1;
  double pred = 0.0;
  double truth = 0.0;
};

struct RmseTable {
  std::vector<std::string> regions;
  Matrix values;            // regions × 3: T1, T2, T
  Vector aggregate;         // 3: over all regions' entries
  double at(std::string_view region, int column) const;
};

struct ForecastReport {
  std::string variant = "full";
  std::uint64_t seed = 0;
  std::string config_hash;
  int year = 0;  // contamination year the periods refer to
  std::vector<ReportEntry> entries;

  // Every entry must carry a truth; entries outside T1 ∪ T2 are ignored.
  RmseTable rmse_table(const TrainConfig& cfg) const;
};

// Joins forecasts with the observed wILI. Throws if a truth is missing.
ForecastReport make_report(std::span<const ForecastRow> forecasts, const WiliPanel& wili, std::string variant,
                           std::uint64_t seed, std::string config_hash, int year);

// Per model, the number of regions where its RMSE is within 1% of the best.
// Every model must list the same regions in the same order.
std::map<std::string, int> best_performer_count(const std::map<std::string, std::vector<double>>& rmse_by_model);

// clamp(1 − a/b, −1, 1); positive means A is better. b = 0 gives 0 when a = 0
// and −1 otherwise.
double ratio_cell(double a, double b);
Matrix ratio_heatmap(const Matrix& rmse_a, const Matrix& rmse_b);

// Region × target-week absolute error grid over T1 ∪ T2 for horizon 1 (the
// single-entry RMSE). Columns follow `weeks`.
Matrix error_grid(const ForecastReport& report, const std::vector<std::string>& regions,
                  const std::vector<EpiWeek>& weeks);

inline const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> v{"no_region_recon", "no_laplacian", "feedforward_instead_of_gru",
                                          "no_kd",           "drop_DS1",     "drop_DS2",
                                          "drop_DS3",        "drop_DS4",     "standalone_caem",
                                          "gru_only",        "source_only"};
  return v;
}

// Applies a variant to a config and exogenous panel. "full" is the identity.
// Throws on an unknown variant.
struct VariantSetup {
  TrainConfig config;
  ExogenousPanel exo;
};
VariantSetup apply_variant(std::string_view variant, const TrainConfig& cfg, const ExogenousPanel& exo);

struct EvalData {
  WiliPanel wili;
  ExogenousPanel exo;
  RegionGraph graph;
};

struct AblationResult {
  ForecastReport report;
  WeeklyResult weekly;
};

// Runs the weekly protocol over T1 ∪ T2 for one variant, starting from a
// copy of `pretrained`.
AblationResult ablation_run(std::string_view variant, const EvalData& data, const SourceModel& pretrained,
                            const TrainConfig& cfg, const WeeklyOptions& options = {});

// FNV-1a over the canonical JSON dump.
std::string config_hash(const nlohmann::json& j);

// CSV `region,epiweek,horizon,pred,truth,variant`; epiweek is the target week.
void write_report_csv(std::span<const ForecastReport> reports, const std::filesystem::path& path);
std::vector<ForecastReport> read_report_csv(const std::filesystem::path& path);

// RMSE tables per variant plus best-performer counts over T1, T2 and T.
nlohmann::json report_summary(std::span<const ForecastReport> reports, const TrainConfig& cfg);

void write_heatmap_csv(const Matrix& cells, const std::vector<std::string>& regions,
                       const std::vector<EpiWeek>& weeks, const std::filesystem::path& path);

}  // namespace episteer
