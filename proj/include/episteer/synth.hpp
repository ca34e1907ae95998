#pragma once

#include "episteer/panel.hpp"
#include "episteer/region_graph.hpp"

#include <cstdint>
#include <json.hpp>

namespace episteer {

// Synthetic stand-in for the surveillance feeds. Historical seasons are
// Gaussian bumps with per-season jitter; the current season is drawn the
// same way and, from `contamination_start`, gains an asymmetric bump
// (rise to `contamination_peak_week`, then decline). Exogenous signals are
// noisy, time-shifted transforms of three drivers: the contamination term,
// total wILI, or a COVID activity curve that starts with the contamination
// but peaks later, so case-type signals keep rising while wILI falls.
struct SynthConfig {
  std::vector<std::string> regions = default_regions();
  int n_seasons = 15;
  int season_start_week = 40;
  EpiWeek contamination_start{2020, 3};
  EpiWeek coverage_start{2019, 40};
  EpiWeek current_end{2020, 20};

  double uptrend_magnitude = 4.5;
  int contamination_peak_week = 11;  // week number in the contamination year
  double rise_width = 1.8;
  double decline_width = 2.0;
  int activity_peak_week = 16;
  double activity_width = 4.0;

  double baseline_min = 0.8, baseline_max = 1.6;
  double amplitude_min = 2.0, amplitude_max = 5.0;
  double peak_offset = 14.0;  // weeks after season start
  double width_min = 3.5, width_max = 5.0;
  double amplitude_jitter = 0.15;
  double peak_jitter = 1.5;
  double obs_noise = 0.05;
  double contamination_min = 0.5, contamination_max = 1.0;

  // Multiplies every bucket's noise level (DS1 0.1, DS2 0.5, DS3 0.8, DS4 1.0
  // in wILI units before the per-signal gain).
  double signal_noise = 1.0;
  double missing_rate = 0.0;

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct SynthData {
  WiliPanel wili;
  ExogenousPanel exo;
  RegionGraph graph;
  // Injected contamination term on the wILI week index (zero outside the
  // current season), weeks × regions.
  Matrix contamination;
  // Total driver values each signal was built from, on the exogenous week
  // index: one weeks × l matrix per region.
  std::vector<Matrix> signal_drivers;
};

SynthData synth_generate(std::uint64_t seed, const SynthConfig& cfg = {});

}  // namespace episteer
