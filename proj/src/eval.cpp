#include "episteer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace episteer {

double rmse(std::span<const double> preds, std::span<const double> truths) {
  require(!preds.empty(), "rmse: empty input");
  require(preds.size() == truths.size(), "rmse: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - truths[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(preds.size()));
}

double hist_baseline(const WiliPanel& panel, EpiWeek target, Index region, int season_start_week,
                     int season_weeks) {
  require(region >= 0 && region < panel.num_regions(), "hist_baseline: region out of range");
  const auto layout = season_layout(panel, season_start_week, season_weeks);
  const int offset = weeks_between(layout.current_start, target);
  double acc = 0.0;
  int n = 0;
  if (offset >= 0 && offset < season_weeks) {
    for (EpiWeek start : layout.historical_starts) {
      const auto i = panel.week_index(start.plus(offset));
      if (!i) continue;
      acc += panel.values(*i, region);
      ++n;
    }
  }
  if (n == 0) throw ValidationError("hist_baseline: no historical season covers " + target.str());
  return acc / n;
}

std::string period_name(Period p) { return p == Period::T1 ? "T1" : "T2"; }

std::optional<Period> period_of(EpiWeek target, const TrainConfig& cfg, int year) {
  if (target.year != year) return std::nullopt;
  if (target.week >= cfg.t1_first && target.week <= cfg.t1_last) return Period::T1;
  if (target.week >= cfg.t2_first && target.week <= cfg.t2_last) return Period::T2;
  return std::nullopt;
}

std::pair<EpiWeek, EpiWeek> protocol_range(const TrainConfig& cfg, int year) {
  // Every horizon h in 1..k of every as_of in the range should land in T1 ∪ T2
  // for at least h = k; the first as_of reaches T1 with its longest horizon.
  return {EpiWeek{year, cfg.t1_first}.plus(-cfg.k), EpiWeek{year, cfg.t2_last}.plus(-1)};
}

double RmseTable::at(std::string_view region, int column) const {
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (regions[i] == region) return values(static_cast<Index>(i), column);
  }
  throw ValidationError("rmse table has no region '" + std::string(region) + "'");
}

RmseTable ForecastReport::rmse_table(const TrainConfig& cfg) const {
  std::vector<std::string> regions;
  for (const auto& e : entries) {
    if (std::find(regions.begin(), regions.end(), e.region) == regions.end()) regions.push_back(e.region);
  }
  regions = canonical_region_order(regions);
  const auto R = static_cast<Index>(regions.size());
  Matrix sse = Matrix::Zero(R, 3), count = Matrix::Zero(R, 3);
  for (const auto& e : entries) {
    require(std::isfinite(e.truth), "report entry for " + e.region + " " + e.target_week.str() + " has no truth");
    const auto p = period_of(e.target_week, cfg, year);
    if (!p) continue;
    const auto r = static_cast<Index>(std::find(regions.begin(), regions.end(), e.region) - regions.begin());
    const double d2 = (e.pred - e.truth) * (e.pred - e.truth);
    const int c = *p == Period::T1 ? 0 : 1;
    sse(r, c) += d2;
    count(r, c) += 1;
    sse(r, 2) += d2;
    count(r, 2) += 1;
  }
  RmseTable t;
  t.regions = regions;
  t.values = Matrix::Constant(R, 3, std::numeric_limits<double>::quiet_NaN());
  t.aggregate = Vector::Constant(3, std::numeric_limits<double>::quiet_NaN());
  for (Index r = 0; r < R; ++r) {
    for (int c = 0; c < 3; ++c) {
      if (count(r, c) > 0) t.values(r, c) = std::sqrt(sse(r, c) / count(r, c));
    }
  }
  for (int c = 0; c < 3; ++c) {
    const double n = count.col(c).sum();
    if (n > 0) t.aggregate(c) = std::sqrt(sse.col(c).sum() / n);
  }
  return t;
}

ForecastReport make_report(std::span<const ForecastRow> forecasts, const WiliPanel& wili, std::string variant,
                           std::uint64_t seed, std::string config_hash, int year) {
  ForecastReport rep;
  rep.variant = std::move(variant);
  rep.seed = seed;
  rep.config_hash = std::move(config_hash);
  rep.year = year;
  for (const auto& f : forecasts) {
    const auto i = wili.week_index(f.target_week);
    if (!i) throw ValidationError("no observed wILI for target week " + f.target_week.str());
    rep.entries.push_back(
        {f.region, f.as_of, f.target_week, f.horizon, f.pred, wili.values(*i, wili.region_index(f.region))});
  }
  return rep;
}

std::map<std::string, int> best_performer_count(const std::map<std::string, std::vector<double>>& rmse_by_model) {
  require(!rmse_by_model.empty(), "best_performer_count: no models");
  const std::size_t R = rmse_by_model.begin()->second.size();
  std::map<std::string, int> counts;
  for (const auto& [name, v] : rmse_by_model) {
    require(v.size() == R, "best_performer_count: model '" + name + "' covers a different region set");
    counts[name] = 0;
  }
  for (std::size_t r = 0; r < R; ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [name, v] : rmse_by_model) best = std::min(best, v[r]);
    for (const auto& [name, v] : rmse_by_model) {
      if (v[r] <= 1.01 * best) ++counts[name];
    }
  }
  return counts;
}

double ratio_cell(double a, double b) {
  if (b == 0.0) return a == 0.0 ? 0.0 : -1.0;
  return std::clamp(1.0 - a / b, -1.0, 1.0);
}

Matrix ratio_heatmap(const Matrix& rmse_a, const Matrix& rmse_b) {
  require(rmse_a.rows() == rmse_b.rows() && rmse_a.cols() == rmse_b.cols(), "ratio_heatmap: unmatched cells");
  Matrix out(rmse_a.rows(), rmse_a.cols());
  for (Index i = 0; i < out.rows(); ++i) {
    for (Index j = 0; j < out.cols(); ++j) out(i, j) = ratio_cell(rmse_a(i, j), rmse_b(i, j));
  }
  return out;
}

Matrix error_grid(const ForecastReport& report, const std::vector<std::string>& regions,
                  const std::vector<EpiWeek>& weeks) {
  Matrix g = Matrix::Constant(static_cast<Index>(regions.size()), static_cast<Index>(weeks.size()),
                              std::numeric_limits<double>::quiet_NaN());
  for (const auto& e : report.entries) {
    if (e.horizon != 1) continue;
    const auto r = std::find(regions.begin(), regions.end(), e.region);
    const auto w = std::find(weeks.begin(), weeks.end(), e.target_week);
    if (r == regions.end() || w == weeks.end()) continue;
    g(r - regions.begin(), w - weeks.begin()) = std::abs(e.pred - e.truth);
  }
  require(g.allFinite(), "error grid has cells without a forecast");
  return g;
}

VariantSetup apply_variant(std::string_view variant, const TrainConfig& cfg, const ExogenousPanel& exo) {
  VariantSetup v{cfg, exo};
  TrainConfig& c = v.config;
  auto drop = [&](Bucket b) {
    const Bucket bs[] = {b};
    v.exo = exo.without_buckets(bs);
  };
  if (variant == "full") {
  } else if (variant == "no_region_recon") {
    c.lambda_re = 0.0;
  } else if (variant == "no_laplacian") {
    c.lambda_lap = 0.0;
  } else if (variant == "feedforward_instead_of_gru") {
    c.caem.use_gru = false;
  } else if (variant == "no_kd") {
    c.kd.enabled = false;
  } else if (variant == "drop_DS1") {
    drop(Bucket::DS1);
  } else if (variant == "drop_DS2") {
    drop(Bucket::DS2);
  } else if (variant == "drop_DS3") {
    drop(Bucket::DS3);
  } else if (variant == "drop_DS4") {
    drop(Bucket::DS4);
  } else if (variant == "standalone_caem") {
    c.model = ModelKind::caem;
  } else if (variant == "gru_only") {
    c.model = ModelKind::caem;
    c.caem.use_region_embedding = false;
    c.lambda_re = 0.0;
    c.lambda_lap = 0.0;
  } else if (variant == "source_only") {
    c.model = ModelKind::source;
  } else {
    throw ValidationError("unknown ablation variant '" + std::string(variant) + "'");
  }
  require(v.exo.num_signals() > 0, "variant '" + std::string(variant) + "' leaves no exogenous signal");
  return v;
}

AblationResult ablation_run(std::string_view variant, const EvalData& data, const SourceModel& pretrained,
                            const TrainConfig& cfg, const WeeklyOptions& options) {
  auto setup = apply_variant(variant, cfg, data.exo);
  setup.config.validate();
  ModelBundle bundle = build_cali_net(pretrained, data.wili.regions, setup.exo.signals, setup.config);
  const int year = data.wili.contamination_start.year;
  const auto [first, last] = protocol_range(setup.config, year);
  AblationResult out;
  out.weekly = weekly_protocol(bundle, data.wili, setup.exo, data.graph, first, last, options);
  out.report = make_report(out.weekly.forecasts, data.wili, std::string(variant), cfg.seed,
                           config_hash(to_json(setup.config)), year);
  return out;
}

std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

void write_report_csv(std::span<const ForecastReport> reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "region,epiweek,horizon,pred,truth,variant\n";
  for (const auto& rep : reports) {
    for (const auto& e : rep.entries) {
      out << e.region << ',' << e.target_week.str() << ',' << e.horizon << ',' << format_double(e.pred) << ','
          << format_double(e.truth) << ',' << rep.variant << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<ForecastReport> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "region,epiweek,horizon,pred,truth,variant") {
    throw ValidationError(path.string() + ": expected header region,epiweek,horizon,pred,truth,variant");
  }
  std::vector<ForecastReport> reports;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 6) throw ValidationError(where + ": expected 6 fields");
    auto it = std::find_if(reports.begin(), reports.end(), [&](const auto& r) { return r.variant == f[5]; });
    if (it == reports.end()) {
      reports.emplace_back();
      reports.back().variant = f[5];
      it = reports.end() - 1;
    }
    ReportEntry e;
    e.region = f[0];
    e.target_week = EpiWeek::parse(f[1]);
    e.horizon = static_cast<int>(parse_double(f[2], where));
    require(e.horizon >= 1, where + ": horizon must be >= 1");
    e.as_of = e.target_week.plus(-e.horizon);
    e.pred = parse_double(f[3], where);
    e.truth = parse_double(f[4], where);
    it->year = e.target_week.year;
    it->entries.push_back(e);
  }
  return reports;
}

nlohmann::json report_summary(std::span<const ForecastReport> reports, const TrainConfig& cfg) {
  nlohmann::json j;
  j["variants"] = nlohmann::json::object();
  std::array<std::map<std::string, std::vector<double>>, 3> by_period;
  std::vector<std::string> regions;
  const char* names[] = {"T1", "T2", "T"};
  for (const auto& rep : reports) {
    const RmseTable t = rep.rmse_table(cfg);
    if (regions.empty()) regions = t.regions;
    require(t.regions == regions, "reports cover different regions");
    nlohmann::json v;
    v["seed"] = rep.seed;
    v["config_hash"] = rep.config_hash;
    for (int c = 0; c < 3; ++c) {
      nlohmann::json per;
      for (std::size_t r = 0; r < regions.size(); ++r) per[regions[r]] = t.values(static_cast<Index>(r), c);
      v["rmse"][names[c]] = per;
      v["aggregate"][names[c]] = t.aggregate(c);
      std::vector<double> col(t.values.col(c).data(), t.values.col(c).data() + t.values.rows());
      by_period[static_cast<std::size_t>(c)][rep.variant] = col;
    }
    j["variants"][rep.variant] = v;
  }
  if (!reports.empty()) {
    for (int c = 0; c < 3; ++c) j["best_performer_count"][names[c]] = best_performer_count(by_period[c]);
  }
  j["regions"] = regions;
  return j;
}

void write_heatmap_csv(const Matrix& cells, const std::vector<std::string>& regions,
                       const std::vector<EpiWeek>& weeks, const std::filesystem::path& path) {
  require(cells.rows() == static_cast<Index>(regions.size()) && cells.cols() == static_cast<Index>(weeks.size()),
          "heatmap shape does not match its labels");
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "region";
  for (const auto& w : weeks) out << ',' << w.str();
  out << '\n';
  for (std::size_t r = 0; r < regions.size(); ++r) {
    out << regions[r];
    for (Index c = 0; c < cells.cols(); ++c) out << ',' << format_double(cells(static_cast<Index>(r), c));
    out << '\n';
  }
}

}  // namespace episteer
