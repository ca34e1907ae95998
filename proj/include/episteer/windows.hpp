#pragma once

#include "episteer/panel.hpp"

#include <vector>

namespace episteer {

// Per-signal z-scoring fitted on observed cells dated <= as_of.
struct FeatureNormalizer {
  Vector mean;
  Vector stddev;

  static FeatureNormalizer fit(const ExogenousPanel& exo, EpiWeek as_of);
  RowVector apply(const RowVector& x) const;
};

// Input weeks t−W … t−1, targets t … t+k−1. `target_week` is the last
// target week (t+k−1), the one the overlap rule is judged on.
struct TrainingWindow {
  Index region = 0;
  Matrix inputs;  // W × l, normalized
  Vector target;  // k
  EpiWeek first_input_week;
  EpiWeek last_input_week;
  EpiWeek first_target_week;
  EpiWeek target_week;
  bool in_overlap = false;
};

struct ForecastInput {
  Index region = 0;
  Matrix inputs;  // W × l, normalized
  EpiWeek first_input_week;
  EpiWeek last_input_week;
};

inline constexpr int kMaxForwardFill = 2;

// Every window whose inputs and targets are dated <= as_of. Missing exogenous
// cells are forward-filled up to kMaxForwardFill weeks; windows that still
// have gaps are dropped. Output is ordered by (target week, region), with
// regions in the wILI panel's order.
std::vector<TrainingWindow> make_training_windows(const ExogenousPanel& exo, const WiliPanel& wili, int W, int k,
                                                  EpiWeek as_of);
std::vector<TrainingWindow> make_training_windows(const ExogenousPanel& exo, const WiliPanel& wili, int W, int k,
                                                  EpiWeek as_of, const FeatureNormalizer& norm);

// One input window per region ending at as_of, for forecasting as_of+1 …
// as_of+k. Regions whose window cannot be filled are omitted.
std::vector<ForecastInput> make_forecast_inputs(const ExogenousPanel& exo, const WiliPanel& wili, int W,
                                                EpiWeek as_of, const FeatureNormalizer& norm);

}  // namespace episteer
