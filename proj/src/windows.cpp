#include "episteer/windows.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace episteer {

FeatureNormalizer FeatureNormalizer::fit(const ExogenousPanel& exo, EpiWeek as_of) {
  const Index l = exo.num_signals();
  Vector sum = Vector::Zero(l), sumsq = Vector::Zero(l);
  Eigen::VectorXi count = Eigen::VectorXi::Zero(l);
  for (const Matrix& m : exo.data) {
    for (Index i = 0; i < m.rows() && exo.weeks[static_cast<std::size_t>(i)] <= as_of; ++i) {
      for (Index j = 0; j < l; ++j) {
        const double v = m(i, j);
        if (std::isnan(v)) continue;
        sum(j) += v;
        sumsq(j) += v * v;
        ++count(j);
      }
    }
  }
  FeatureNormalizer n;
  n.mean = Vector::Zero(l);
  n.stddev = Vector::Ones(l);
  for (Index j = 0; j < l; ++j) {
    if (count(j) == 0) continue;
    const double mu = sum(j) / count(j);
    const double var = std::max(0.0, sumsq(j) / count(j) - mu * mu);
    n.mean(j) = mu;
    n.stddev(j) = var > 1e-16 ? std::sqrt(var) : 1.0;
  }
  return n;
}

RowVector FeatureNormalizer::apply(const RowVector& x) const {
  return (x - mean.transpose()).cwiseQuotient(stddev.transpose());
}

namespace {

struct RegionMap {
  std::vector<Index> exo_of_wili;
};

RegionMap map_regions(const ExogenousPanel& exo, const WiliPanel& wili) {
  require(exo.regions.size() == wili.regions.size(), "exogenous and wILI panels cover different regions");
  RegionMap m;
  for (const auto& r : wili.regions) m.exo_of_wili.push_back(exo.region_index(r));
  return m;
}

// Row for week index i with forward fill; nullopt if a cell stays missing.
std::optional<RowVector> filled_row(const Matrix& m, Index i) {
  RowVector row = m.row(i);
  for (Index j = 0; j < row.size(); ++j) {
    if (!std::isnan(row(j))) continue;
    for (Index back = 1; back <= kMaxForwardFill && i - back >= 0; ++back) {
      if (!std::isnan(m(i - back, j))) {
        row(j) = m(i - back, j);
        break;
      }
    }
    if (std::isnan(row(j))) return std::nullopt;
  }
  return row;
}

std::optional<Matrix> build_inputs(const ExogenousPanel& exo, Index exo_region, Index last_row, int W,
                                   const FeatureNormalizer& norm) {
  if (last_row - W + 1 < 0) return std::nullopt;
  Matrix x(W, exo.num_signals());
  for (int s = 0; s < W; ++s) {
    auto row = filled_row(exo.data[static_cast<std::size_t>(exo_region)], last_row - W + 1 + s);
    if (!row) return std::nullopt;
    x.row(s) = norm.apply(*row);
  }
  return x;
}

void check_window_args(const ExogenousPanel& exo, int W, int k, EpiWeek as_of) {
  require(W >= 1, "window length W must be >= 1");
  require(k >= 1, "horizon k must be >= 1");
  exo.validate();
  require(as_of >= exo.coverage_start(), "as_of " + as_of.str() + " precedes exogenous coverage start " +
                                             exo.coverage_start().str());
}

}  // namespace

std::vector<TrainingWindow> make_training_windows(const ExogenousPanel& exo, const WiliPanel& wili, int W, int k,
                                                  EpiWeek as_of) {
  check_window_args(exo, W, k, as_of);
  return make_training_windows(exo, wili, W, k, as_of, FeatureNormalizer::fit(exo, as_of));
}

std::vector<TrainingWindow> make_training_windows(const ExogenousPanel& exo, const WiliPanel& wili, int W, int k,
                                                  EpiWeek as_of, const FeatureNormalizer& norm) {
  check_window_args(exo, W, k, as_of);
  const auto regions = map_regions(exo, wili);
  std::vector<TrainingWindow> out;
  // Window with last input row i targets exo weeks i+1 … i+k.
  for (Index i = W - 1; i < exo.num_weeks(); ++i) {
    const EpiWeek last_input = exo.weeks[static_cast<std::size_t>(i)];
    const EpiWeek first_target = last_input.next();
    const EpiWeek target_week = last_input.plus(k);
    if (target_week > as_of) break;
    const auto wili_first = wili.week_index(first_target);
    const auto wili_last = wili.week_index(target_week);
    if (!wili_first || !wili_last) continue;
    for (Index r = 0; r < wili.num_regions(); ++r) {
      auto inputs = build_inputs(exo, regions.exo_of_wili[static_cast<std::size_t>(r)], i, W, norm);
      if (!inputs) continue;
      TrainingWindow w;
      w.region = r;
      w.inputs = std::move(*inputs);
      w.target = wili.values.col(r).segment(*wili_first, k);
      w.first_input_week = exo.weeks[static_cast<std::size_t>(i - W + 1)];
      w.last_input_week = last_input;
      w.first_target_week = first_target;
      w.target_week = target_week;
      w.in_overlap = target_week >= wili.contamination_start;
      out.push_back(std::move(w));
    }
  }
  if (out.empty()) {
    throw ValidationError("insufficient history: no training window with W=" + std::to_string(W) + ", k=" +
                          std::to_string(k) + " fits before " + as_of.str());
  }
  return out;
}

std::vector<ForecastInput> make_forecast_inputs(const ExogenousPanel& exo, const WiliPanel& wili, int W,
                                                EpiWeek as_of, const FeatureNormalizer& norm) {
  check_window_args(exo, W, 1, as_of);
  const auto regions = map_regions(exo, wili);
  const auto last = exo.week_index(as_of);
  if (!last) throw ValidationError("no exogenous data at " + as_of.str());
  std::vector<ForecastInput> out;
  for (Index r = 0; r < wili.num_regions(); ++r) {
    auto inputs = build_inputs(exo, regions.exo_of_wili[static_cast<std::size_t>(r)], *last, W, norm);
    if (!inputs) continue;
    out.push_back({r, std::move(*inputs), as_of.plus(-(W - 1)), as_of});
  }
  return out;
}

}  // namespace episteer
