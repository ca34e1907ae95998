#include "episteer/synth.hpp"

#include "episteer/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace episteer {

namespace {

enum class Driver { Contamination, Total, Activity };

struct SignalDef {
  const char* name;
  Bucket bucket;
  Driver driver;
  int lead;  // signal at week t reflects its driver at week t + lead
  double gain;
  double offset;
};

// Shaped after the four signal groups: line-list counts, testing, a
// crowdsourced fever reading and social media volume.
constexpr SignalDef kSignals[] = {
    {"confirmed_cases", Bucket::DS1, Driver::Activity, 1, 120.0, 5.0},
    {"icu_beds", Bucket::DS1, Driver::Activity, 0, 8.0, 1.0},
    {"hospitalizations", Bucket::DS1, Driver::Activity, 0, 30.0, 2.0},
    {"on_ventilation", Bucket::DS1, Driver::Activity, -1, 4.0, 0.5},
    {"recovered", Bucket::DS1, Driver::Activity, -2, 60.0, 0.0},
    {"deaths", Bucket::DS1, Driver::Activity, -2, 6.0, 0.0},
    {"hospitalization_rate", Bucket::DS1, Driver::Contamination, 1, 0.8, 0.1},
    {"ili_er_visits", Bucket::DS1, Driver::Total, 0, 2.5, 0.5},
    {"cli_er_visits", Bucket::DS1, Driver::Contamination, 0, 1.5, 0.2},
    {"people_tested", Bucket::DS2, Driver::Activity, 1, 400.0, 50.0},
    {"negative_cases", Bucket::DS2, Driver::Activity, 0, 300.0, 40.0},
    {"facilities_reporting", Bucket::DS2, Driver::Activity, 0, 3.0, 20.0},
    {"providers", Bucket::DS2, Driver::Contamination, 0, 5.0, 100.0},
    {"thermometer", Bucket::DS3, Driver::Total, 0, 1.2, 36.5},
    {"health_tweets", Bucket::DS4, Driver::Contamination, 0, 50.0, 200.0},
};

double bucket_noise(Bucket b) {
  switch (b) {
    case Bucket::DS1: return 0.1;
    case Bucket::DS2: return 0.5;
    case Bucket::DS3: return 0.8;
    case Bucket::DS4: return 1.0;
  }
  return 1.0;
}

struct RegionShape {
  double baseline;
  double amplitude;
  double peak;
  double width;
  double contamination;
};

double bump(double x, double center, double width) {
  const double d = (x - center) / width;
  return std::exp(-0.5 * d * d);
}

}  // namespace

void SynthConfig::validate() const {
  require(!regions.empty(), "synth: no regions");
  require(std::find(regions.begin(), regions.end(), std::string(kNational)) != regions.end(),
          "synth: region list must include the national region");
  require(n_seasons >= 1, "synth: n_seasons must be >= 1");
  require(season_start_week >= 1 && season_start_week <= 52, "synth: bad season_start_week");
  require(is_valid(contamination_start) && is_valid(coverage_start) && is_valid(current_end),
          "synth: invalid epiweek in config");
  require(coverage_start <= current_end && contamination_start <= current_end, "synth: empty current season");
  require(uptrend_magnitude >= 0.0, "synth: uptrend_magnitude must be >= 0");
  require(rise_width > 0.0 && decline_width > 0.0 && activity_width > 0.0, "synth: widths must be positive");
  require(signal_noise >= 0.0 && obs_noise >= 0.0 && amplitude_jitter >= 0.0 && peak_jitter >= 0.0,
          "synth: noise levels must be >= 0");
  require(missing_rate >= 0.0 && missing_rate < 1.0, "synth: missing_rate must be in [0, 1)");
}

nlohmann::json to_json(const SynthConfig& c) {
  return {{"regions", c.regions},
          {"n_seasons", c.n_seasons},
          {"season_start_week", c.season_start_week},
          {"contamination_start", c.contamination_start.str()},
          {"coverage_start", c.coverage_start.str()},
          {"current_end", c.current_end.str()},
          {"uptrend_magnitude", c.uptrend_magnitude},
          {"contamination_peak_week", c.contamination_peak_week},
          {"rise_width", c.rise_width},
          {"decline_width", c.decline_width},
          {"activity_peak_week", c.activity_peak_week},
          {"activity_width", c.activity_width},
          {"peak_offset", c.peak_offset},
          {"amplitude_jitter", c.amplitude_jitter},
          {"peak_jitter", c.peak_jitter},
          {"obs_noise", c.obs_noise},
          {"signal_noise", c.signal_noise},
          {"missing_rate", c.missing_rate}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  auto week = [&](const char* key, EpiWeek& dst) {
    if (j.contains(key)) dst = EpiWeek::parse(j.at(key).get<std::string>());
  };
  if (j.contains("regions")) c.regions = j.at("regions").get<std::vector<std::string>>();
  if (j.contains("n_seasons")) c.n_seasons = j.at("n_seasons").get<int>();
  if (j.contains("season_start_week")) c.season_start_week = j.at("season_start_week").get<int>();
  week("contamination_start", c.contamination_start);
  week("coverage_start", c.coverage_start);
  week("current_end", c.current_end);
  for (auto [key, dst] : {std::pair{"uptrend_magnitude", &c.uptrend_magnitude},
                          std::pair{"rise_width", &c.rise_width},
                          std::pair{"decline_width", &c.decline_width},
                          std::pair{"activity_width", &c.activity_width},
                          std::pair{"peak_offset", &c.peak_offset},
                          std::pair{"amplitude_jitter", &c.amplitude_jitter},
                          std::pair{"peak_jitter", &c.peak_jitter},
                          std::pair{"obs_noise", &c.obs_noise},
                          std::pair{"signal_noise", &c.signal_noise},
                          std::pair{"missing_rate", &c.missing_rate}}) {
    if (j.contains(key)) *dst = j.at(key).get<double>();
  }
  if (j.contains("activity_peak_week")) c.activity_peak_week = j.at("activity_peak_week").get<int>();
  if (j.contains("contamination_peak_week")) c.contamination_peak_week = j.at("contamination_peak_week").get<int>();
  c.validate();
  return c;
}

SynthData synth_generate(std::uint64_t seed, const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unif(rng); };

  const int cy = cfg.contamination_start.year;
  const EpiWeek current_start =
      cfg.contamination_start.week >= cfg.season_start_week ? EpiWeek{cy, cfg.season_start_week}
                                                            : EpiWeek{cy - 1, cfg.season_start_week};
  std::vector<EpiWeek> season_starts;
  for (int s = 0; s < cfg.n_seasons; ++s) {
    season_starts.push_back({current_start.year - cfg.n_seasons + s, cfg.season_start_week});
  }
  season_starts.push_back(current_start);

  const auto nreg = cfg.regions.size();
  std::vector<std::size_t> members;  // regions averaged into the national series
  std::size_t nat = 0;
  for (std::size_t r = 0; r < nreg; ++r) {
    if (cfg.regions[r] == kNational) {
      nat = r;
    } else {
      members.push_back(r);
    }
  }
  const bool nat_is_mean = !members.empty();

  std::vector<RegionShape> shapes(nreg);
  for (std::size_t r = 0; r < nreg; ++r) {
    shapes[r] = {uniform(cfg.baseline_min, cfg.baseline_max), uniform(cfg.amplitude_min, cfg.amplitude_max),
                 cfg.peak_offset + uniform(-1.5, 1.5), uniform(cfg.width_min, cfg.width_max),
                 uniform(cfg.contamination_min, cfg.contamination_max)};
  }

  const EpiWeek peak_week{cy, cfg.contamination_peak_week};
  auto contamination_at = [&](std::size_t r, EpiWeek t) {
    if (t < cfg.contamination_start || t < current_start) return 0.0;
    const double d = weeks_between(peak_week, t);
    const double g = d < 0 ? bump(d, 0.0, cfg.rise_width) : bump(d, 0.0, cfg.decline_width);
    return cfg.uptrend_magnitude * shapes[r].contamination * g;
  };
  const EpiWeek activity_peak{cy, cfg.activity_peak_week};
  auto activity_at = [&](std::size_t r, EpiWeek t) {
    if (t < cfg.contamination_start || t < current_start) return 0.0;
    const double d = weeks_between(activity_peak, t);
    return cfg.uptrend_magnitude * shapes[r].contamination * bump(d, 0.0, cfg.activity_width);
  };
  // Per-season amplitude factor and peak shift, the current season included.
  std::vector<double> amp_factor(season_starts.size()), shift(season_starts.size());
  for (std::size_t s = 0; s < season_starts.size(); ++s) {
    amp_factor[s] = 1.0 + cfg.amplitude_jitter * normal(rng);
    shift[s] = cfg.peak_jitter * normal(rng);
  }
  auto typical_at = [&](std::size_t r, EpiWeek t) {
    const double wos = weeks_between(current_start, t);
    const auto& sh = shapes[r];
    return sh.baseline + sh.amplitude * amp_factor.back() * bump(wos, sh.peak + shift.back(), sh.width);
  };

  SynthData out;
  WiliPanel& wili = out.wili;
  wili.regions = cfg.regions;
  wili.contamination_start = cfg.contamination_start;
  for (EpiWeek w = season_starts.front(); w <= cfg.current_end; w = w.next()) wili.weeks.push_back(w);
  wili.values = Matrix::Zero(wili.num_weeks(), static_cast<Index>(nreg));
  out.contamination = Matrix::Zero(wili.num_weeks(), static_cast<Index>(nreg));

  for (std::size_t s = 0; s < season_starts.size(); ++s) {
    const bool current = s + 1 == season_starts.size();
    const EpiWeek start = season_starts[s];
    const EpiWeek end = current ? cfg.current_end : season_starts[s + 1].prev();
    for (EpiWeek w = start; w <= end; w = w.next()) {
      const Index i = *wili.week_index(w);
      const double wos = weeks_between(start, w);
      for (std::size_t r = 0; r < nreg; ++r) {
        if (nat_is_mean && r == nat) continue;
        const auto& sh = shapes[r];
        double v = sh.baseline + sh.amplitude * amp_factor[s] * bump(wos, sh.peak + shift[s], sh.width) +
                   cfg.obs_noise * normal(rng);
        if (current) {
          const double c = contamination_at(r, w);
          out.contamination(i, static_cast<Index>(r)) = c;
          v += c;
        }
        wili.values(i, static_cast<Index>(r)) = std::max(0.0, v);
      }
    }
  }
  if (nat_is_mean) {
    for (Index i = 0; i < wili.num_weeks(); ++i) {
      double v = 0.0, c = 0.0;
      for (std::size_t r : members) {
        v += wili.values(i, static_cast<Index>(r));
        c += out.contamination(i, static_cast<Index>(r));
      }
      wili.values(i, static_cast<Index>(nat)) = v / static_cast<double>(members.size());
      out.contamination(i, static_cast<Index>(nat)) = c / static_cast<double>(members.size());
    }
  }

  // Noise-free drivers for the signals; national is the mean of its members.
  auto driver_at = [&](std::size_t r, Driver d, EpiWeek t) {
    auto one = [&](std::size_t q) {
      switch (d) {
        case Driver::Contamination: return contamination_at(q, t);
        case Driver::Activity: return activity_at(q, t);
        case Driver::Total: break;
      }
      return typical_at(q, t) + contamination_at(q, t);
    };
    if (!(nat_is_mean && r == nat)) return one(r);
    double acc = 0.0;
    for (std::size_t q : members) acc += one(q);
    return acc / static_cast<double>(members.size());
  };

  ExogenousPanel& exo = out.exo;
  exo.regions = cfg.regions;
  for (const auto& def : kSignals) exo.signals.push_back({def.name, def.bucket});
  for (EpiWeek w = cfg.coverage_start; w <= cfg.current_end; w = w.next()) exo.weeks.push_back(w);
  const Index l = exo.num_signals();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t r = 0; r < nreg; ++r) {
    Matrix m(exo.num_weeks(), l), drivers(exo.num_weeks(), l);
    for (Index i = 0; i < exo.num_weeks(); ++i) {
      const EpiWeek w = exo.weeks[static_cast<std::size_t>(i)];
      for (Index j = 0; j < l; ++j) {
        const auto& def = kSignals[j];
        const double d = driver_at(r, def.driver, w.plus(def.lead));
        drivers(i, j) = d;
        const double noise = cfg.signal_noise * bucket_noise(def.bucket) * normal(rng);
        m(i, j) = def.gain * (d + noise) + def.offset;
        if (cfg.missing_rate > 0.0 && unif(rng) < cfg.missing_rate) m(i, j) = nan;
      }
    }
    exo.data.push_back(std::move(m));
    out.signal_drivers.push_back(std::move(drivers));
  }

  out.graph = build_region_graph(cfg.regions, [&] {
    std::vector<Edge> edges;
    for (const auto& e : default_hhs_edges()) {
      const bool has_u = std::find(cfg.regions.begin(), cfg.regions.end(), e.first) != cfg.regions.end();
      const bool has_v = std::find(cfg.regions.begin(), cfg.regions.end(), e.second) != cfg.regions.end();
      if (has_u && has_v) edges.push_back(e);
    }
    return edges;
  }());
  return out;
}

}  // namespace episteer
