// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any fails. Pass criterion numbers to run a subset.

#include "episteer/eval.hpp"
#include "episteer/optimizer.hpp"
#include "episteer/synth.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <set>

using namespace episteer;
using episteer::testing::gradient_check;
using episteer::testing::random_matrix;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- shared synthetic experiment -------------------------------------------

struct Experiment {
  SynthData data;
  EvalData eval;
  SourceModel source;
  TrainConfig cfg;
  double pretrain_seconds = 0.0;
  std::map<std::string, AblationResult> runs;

  explicit Experiment(std::uint64_t seed) : data(synth_generate(seed)) {
    eval = {data.wili, data.exo, data.graph};
    cfg.seed = seed;
    source = SourceModel(cfg.source, seed);
    const auto t0 = Clock::now();
    pretrain_source(source, data.wili.truncated(data.wili.contamination_start.prev()), cfg.source.pretrain_epochs,
                    cfg.source.pretrain_lr);
    pretrain_seconds = seconds_since(t0);
  }

  const AblationResult& run(const std::string& variant, const WeeklyOptions& options = {}) {
    auto it = runs.find(variant);
    if (it == runs.end()) it = runs.emplace(variant, ablation_run(variant, eval, source, cfg, options)).first;
    return it->second;
  }

  RmseTable table(const std::string& variant) { return run(variant).report.rmse_table(cfg); }
};

Experiment& main_experiment() {
  static std::unique_ptr<Experiment> e;
  if (!e) e = std::make_unique<Experiment>(0);
  return *e;
}

// The full model is always run first with the per-step unidirectionality
// audit switched on, so every later criterion sees the audited run.
const AblationResult& audited_full() {
  WeeklyOptions o;
  o.audit = true;
  return main_experiment().run("full", o);
}

// Source-only forecasts on the same protocol, from the `source_only` variant.
RmseTable source_table() { return main_experiment().table("source_only"); }

// ---- 1: gradient suite ------------------------------------------------------

Outcome gradient_suite() {
  constexpr int kInstances = 20;
  constexpr double kTol = 1e-4;
  std::map<std::string, double> worst;
  std::map<std::string, int> count;
  auto record = [&](const std::string& term, double err) {
    worst[term] = std::max(worst[term], err);
    ++count[term];
  };
  const RegionGraph g = build_region_graph(default_regions(), default_hhs_edges());
  for (int i = 0; i < kInstances; ++i) {
    Rng rng(1000 + static_cast<std::uint64_t>(i));
    const Index n = 2 + i % 5, c = 1 + i % 3;
    {
      Parameter a("a", random_matrix(n, c, rng));
      const Matrix y = random_matrix(n, c, rng);
      std::vector<Parameter*> ps{&a};
      record("mse", gradient_check(ps, [&](Tape& t) { return mse(t.param(a), t.constant(y)); }));
    }
    {
      RegionEmbedder re(4 + i % 4, 2 + i % 3, rng);
      auto ps = re.parameters();
      record("region_recon", gradient_check(ps, [&](Tape& t) { return region_embed(t, re).recon_loss; }));
    }
    {
      Parameter h("h", random_matrix(11, c + 1, rng));
      std::vector<Parameter*> ps{&h};
      record("laplacian", gradient_check(ps, [&](Tape& t) { return trace_quadratic(t.param(h), g.laplacian); }));
    }
    {
      const Matrix ys = random_matrix(n, c, rng), ps_ = random_matrix(n, 4, rng), y = random_matrix(n, c, rng);
      Parameter yt("yt", random_matrix(n, c, rng)), pt("pt", random_matrix(n, 4, rng));
      const double eta = compute_eta(ys, y, 1e-6);
      const std::vector<bool> overlap(static_cast<std::size_t>(n), true);
      std::vector<Parameter*> params{&yt, &pt};
      for (const auto& [name, alpha, beta] : {std::tuple{"kd_imitation", 1.0, 0.0}, {"kd_hint", 0.0, 1.0}}) {
        KdConfig cfg;
        cfg.alpha = alpha;
        cfg.beta = beta;
        cfg.clamp_phi = i % 2 == 0;
        record(name, gradient_check(params, [&](Tape& t) {
                 return kd_loss(t.constant(ys), t.param(yt), t.constant(ps_), t.param(pt), y, overlap, eta, cfg).total;
               }));
      }
    }
    {
      HtlHeads heads(3 + i % 3, 2 + i % 4, 1, {4, 3, 0.1}, rng);
      const Matrix src = random_matrix(n, heads.s.weight.value.cols(), rng);
      const Matrix tgt = random_matrix(n, heads.t.weight.value.cols(), rng);
      auto ps = heads.parameters();
      const std::uint64_t noise_seed = 77 + static_cast<std::uint64_t>(i);
      record("denoise", gradient_check(ps, [&](Tape& t) {
               Rng noise(noise_seed);
               return denoise_loss(t, heads, src, Side::source, noise) + denoise_loss(t, heads, tgt, Side::target, noise);
             }));
    }
  }
  bool ok = true;
  std::string detail;
  for (const auto& [term, err] : worst) {
    ok = ok && err < kTol && count[term] >= kInstances;
    detail += fmt("%s %.1e (n=%d) ", term.c_str(), err, count[term]);
  }
  return {ok, detail};
}

// ---- 2: formula oracles -----------------------------------------------------

Outcome formula_oracles() {
  constexpr double kTol = 1e-12;
  Rng rng(2024);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::map<std::string, double> worst;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
  const RegionGraph g = build_region_graph(default_regions(), default_hhs_edges());
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 2 + trial % 9, k = 1 + trial % 3;
    const Matrix p = random_matrix(n, k, rng), y = random_matrix(n, k, rng);

    std::vector<double> errs;
    for (Index i = 0; i < n; ++i) {
      double e = 0.0;
      for (Index c = 0; c < k; ++c) e += (p(i, c) - y(i, c)) * (p(i, c) - y(i, c));
      errs.push_back(e);
    }
    double lo = errs[0], hi = errs[0];
    for (double e : errs) lo = std::min(lo, e), hi = std::max(hi, e);
    const double eta = std::max(hi - lo, 1e-6);
    worst["compute_eta"] = std::max(worst["compute_eta"], rel(compute_eta(p, y, 1e-6), eta));

    const double e = u(rng), et = 0.1 + u(rng);
    const bool clamp = trial % 2 == 0;
    double phi = 1.0 - e / et;
    if (clamp) phi = phi < 0.0 ? 0.0 : (phi > 1.0 ? 1.0 : phi);
    worst["attention_weight"] = std::max(worst["attention_weight"], rel(attention_weight(e, et, clamp), phi));

    {
      const Matrix yt = random_matrix(n, k, rng), ps = random_matrix(n, 5, rng), pt = random_matrix(n, 5, rng);
      KdConfig cfg;
      cfg.alpha = u(rng);
      cfg.beta = u(rng);
      cfg.clamp_phi = clamp;
      double im = 0.0, hint = 0.0;
      for (Index i = 0; i < n; ++i) {
        double w = 1.0 - errs[static_cast<std::size_t>(i)] / eta;
        if (clamp) w = w < 0.0 ? 0.0 : (w > 1.0 ? 1.0 : w);
        double a = 0.0, b = 0.0;
        for (Index c = 0; c < k; ++c) a += (p(i, c) - yt(i, c)) * (p(i, c) - yt(i, c));
        for (Index c = 0; c < 5; ++c) b += (ps(i, c) - pt(i, c)) * (ps(i, c) - pt(i, c));
        im += w * a;
        hint += w * b;
      }
      const double oracle = (cfg.alpha * im + cfg.beta * hint) / static_cast<double>(n);
      Tape t;
      const std::vector<bool> overlap(static_cast<std::size_t>(n), true);
      const double got =
          kd_loss(t.constant(p), t.constant(yt), t.constant(ps), t.constant(pt), y, overlap, eta, cfg).total.scalar();
      worst["kd_loss"] = std::max(worst["kd_loss"], rel(got, oracle));
    }
    {
      const Matrix H = random_matrix(11, k + 1, rng, 3.0);
      double oracle = 0.0;
      for (Index a = 0; a < 11; ++a)
        for (Index b = a + 1; b < 11; ++b)
          if (g.adjacency(a, b) != 0.0)
            for (Index c = 0; c < H.cols(); ++c) {
              const double d = H(a, c) / std::sqrt(g.degree(a)) - H(b, c) / std::sqrt(g.degree(b));
              oracle += g.adjacency(a, b) * d * d;
            }
      worst["laplacian_penalty"] = std::max(worst["laplacian_penalty"], rel(laplacian_penalty(H, g.laplacian), oracle));
    }
    {
      std::vector<double> a(static_cast<std::size_t>(n)), b(a.size());
      double acc = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = p(static_cast<Index>(i), 0);
        b[i] = y(static_cast<Index>(i), 0);
        acc += (a[i] - b[i]) * (a[i] - b[i]);
      }
      worst["rmse"] = std::max(worst["rmse"], rel(rmse(a, b), std::sqrt(acc / static_cast<double>(a.size()))));
    }
    {
      Matrix ra(n, 4), rb(n, 4);
      for (Index i = 0; i < ra.size(); ++i) {
        ra.data()[i] = u(rng);
        rb.data()[i] = trial % 10 == 0 && i == 0 ? 0.0 : u(rng);
      }
      const Matrix h = ratio_heatmap(ra, rb);
      double w = 0.0;
      for (Index i = 0; i < ra.size(); ++i) {
        const double a = ra.data()[i], b = rb.data()[i];
        double cell = b == 0.0 ? (a == 0.0 ? 0.0 : -1.0) : 1.0 - a / b;
        cell = cell < -1.0 ? -1.0 : (cell > 1.0 ? 1.0 : cell);
        w = std::max(w, rel(h.data()[i], cell));
      }
      worst["ratio_heatmap"] = std::max(worst["ratio_heatmap"], w);
    }
  }
  bool ok = true;
  std::string detail;
  for (const auto& [name, err] : worst) {
    ok = ok && err <= kTol;
    detail += fmt("%s %.1e ", name.c_str(), err);
  }
  return {ok, detail};
}

// ---- 3: unidirectionality ---------------------------------------------------

Outcome unidirectionality() {
  const auto& full = audited_full();
  const auto& w = full.weekly;
  const bool ok = w.audits > 0 && w.audit_max_grad == 0.0;
  return {ok, fmt("%ld audited steps, max |grad| on source, s, s' = %g", w.audits, w.audit_max_grad)};
}

// ---- 4: Laplacian invariants ------------------------------------------------

Outcome laplacian_invariants() {
  const RegionGraph g = build_region_graph(default_regions(), default_hhs_edges());
  Rng rng(4);
  double min_pen = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 1000; ++i) {
    min_pen = std::min(min_pen, laplacian_penalty(random_matrix(11, 1 + i % 6, rng, 5.0), g.laplacian));
  }
  double null_pen = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Matrix H = g.degree.cwiseSqrt() * random_matrix(1, 1 + i % 6, rng, 5.0);
    null_pen = std::max(null_pen, std::abs(laplacian_penalty(H, g.laplacian)));
  }
  const double nat_degree = g.degree(g.index_of("nat"));
  const bool ok = min_pen >= -1e-12 && null_pen <= 1e-12 && nat_degree == 10.0;
  return {ok, fmt("min penalty %.2e, |penalty| on sqrt-degree rows %.2e, national degree %g", min_pen, null_pen,
                  nat_degree)};
}

// ---- 5, 6: transfer on the default synthetic season --------------------------

Outcome positive_transfer() {
  const auto t0 = Clock::now();
  audited_full();
  Experiment& e = main_experiment();
  const RmseTable cali = e.table("full"), src = source_table();
  int wins = 0;
  for (const auto& r : cali.regions) wins += cali.at(r, 0) < src.at(r, 0);
  const double ratio = cali.aggregate(0) / src.aggregate(0);
  const double secs = seconds_since(t0) + e.pretrain_seconds;
  const bool ok = wins >= 9 && ratio <= 0.8 && secs < 600.0;
  return {ok, fmt("T1 RMSE CALI-Net %.3f vs source-only %.3f (ratio %.3f, need <= 0.8), lower in %d/11 regions (need "
                  ">= 9), %.0f s",
                  cali.aggregate(0), src.aggregate(0), ratio, wins, secs)};
}

Outcome negative_transfer() {
  audited_full();
  Experiment& e = main_experiment();
  const RmseTable cali = e.table("full"), caem = e.table("standalone_caem"), src = source_table();
  int ties = 0;
  for (const auto& r : cali.regions) ties += cali.at(r, 1) <= 1.01 * src.at(r, 1);
  const bool ok = cali.aggregate(1) <= caem.aggregate(1) && ties >= 6;
  return {ok, fmt("T2 RMSE CALI-Net %.3f vs standalone CAEM %.3f, beats or ties source-only in %d/11 regions (need "
                  ">= 6)",
                  cali.aggregate(1), caem.aggregate(1), ties)};
}

// ---- 7: data ablation -------------------------------------------------------

Outcome data_ablation() {
  int ok_seeds = 0;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::unique_ptr<Experiment> own;
    Experiment* e = nullptr;
    if (seed == 0) {
      e = &main_experiment();
    } else {
      own = std::make_unique<Experiment>(seed);
      e = own.get();
    }
    const double d1 = e->table("drop_DS1").aggregate(2);
    const double d3 = e->table("drop_DS3").aggregate(2);
    const double d4 = e->table("drop_DS4").aggregate(2);
    const bool ok = d1 > d3 && d1 > d4;
    ok_seeds += ok;
    detail += fmt("seed %llu DS1 %.3f DS3 %.3f DS4 %.3f; ", static_cast<unsigned long long>(seed), d1, d3, d4);
  }
  return {ok_seeds == 3, fmt("%d/3 seeds: ", ok_seeds) + detail};
}

// ---- 8: KD ablation harness -------------------------------------------------

Outcome kd_harness(const std::filesystem::path& out_dir) {
  const auto& full = audited_full();
  Experiment& e = main_experiment();
  const auto& no_kd = e.run("no_kd");
  const int year = e.data.wili.contamination_start.year;
  std::vector<EpiWeek> weeks;
  for (int w = e.cfg.t1_first; w <= e.cfg.t2_last; ++w) weeks.push_back({year, w});
  const auto& regions = e.data.wili.regions;
  const Matrix cells =
      ratio_heatmap(error_grid(full.report, regions, weeks), error_grid(no_kd.report, regions, weeks));
  const auto path = out_dir / "acceptance_heatmap_kd.csv";
  write_heatmap_csv(cells, regions, weeks, path);
  const bool bounded = cells.allFinite() && cells.minCoeff() >= -1.0 && cells.maxCoeff() <= 1.0;

  const EpiWeek start = e.data.wili.contamination_start;
  long before = 0, before_nonzero = 0, outside_nonzero = 0, inside_nonzero = 0;
  for (const auto& r : full.weekly.kd_log) {
    if (r.target_week < start) {
      ++before;
      before_nonzero += r.contribution != 0.0 || r.in_overlap;
    }
    if (!r.in_overlap) outside_nonzero += r.contribution != 0.0;
    if (r.in_overlap) inside_nonzero += r.contribution != 0.0;
  }
  const bool ok = bounded && before > 0 && before_nonzero == 0 && outside_nonzero == 0 && inside_nonzero > 0;
  return {ok, fmt("%ldx%ld heatmap in [%.3f, %.3f] -> %s; %ld logged windows before contamination, %ld with KD; %ld "
                  "non-overlap windows with KD; %ld overlap windows with KD",
                  cells.rows(), cells.cols(), cells.minCoeff(), cells.maxCoeff(), path.filename().c_str(), before,
                  before_nonzero, outside_nonzero, inside_nonzero)};
}

// ---- 9: leakage audit -------------------------------------------------------

Outcome leakage_audit() {
  const auto& full = audited_full();
  const auto violations = leakage_violations(full.weekly.leakage);
  const bool ok = !full.weekly.leakage.empty() && violations.empty();
  return {ok, fmt("%zu data references logged, %zu newer than their as_of", full.weekly.leakage.size(),
                  violations.size())};
}

// ---- 10: overfit sanity -----------------------------------------------------

// Training MSE of the CALI-Net prediction path after 2000 phase-A steps.
struct FitResult {
  long windows = 0, steps = 0, first_below = -1;
  double best = std::numeric_limits<double>::infinity();
};

FitResult fit_small_panel(const TrainConfig& cfg) {
  SynthConfig sc;
  sc.regions = {"nat", "hhs1"};
  sc.n_seasons = 4;
  const SynthData d = synth_generate(10, sc);
  // 30 weeks of exogenous coverage end at as_of.
  const EpiWeek as_of = sc.coverage_start.plus(29);
  SourceModel source(cfg.source, 10);
  pretrain_source(source, d.wili.truncated(d.wili.contamination_start.prev()), cfg.source.pretrain_epochs,
                  cfg.source.pretrain_lr);
  incremental_retrain(source, d.wili.truncated(as_of), as_of);
  ModelBundle bundle = build_cali_net(source, d.wili.regions, d.exo.signals, cfg);
  const WeekData data = make_week_data(bundle, d.wili, d.exo, d.graph, as_of);
  TrainOptions o;
  o.rounds = 2000 / cfg.phase_a_steps;
  const TrainReport rep = alternating_train(bundle, data, cfg, o);
  FitResult f;
  f.windows = data.size();
  for (const auto& r : rep.trace) {
    if (r.term != "target_mse") continue;
    ++f.steps;
    f.best = std::min(f.best, r.value);
    if (f.first_below < 0 && r.value < 1e-3) f.first_below = f.steps;
  }
  return f;
}

// Capacity is measured on the prediction path alone. KD, region
// reconstruction, Laplacian, denoising and source-path terms pull the optimum
// away from zero training error, so they are switched off here; the full
// objective's plateau is reported alongside.
Outcome overfit() {
  TrainConfig cfg;
  cfg.seed = 10;
  TrainConfig bare = cfg;
  bare.kd.enabled = false;
  bare.lambda_re = bare.lambda_lap = bare.lambda_dn = bare.lambda_source_path = 0.0;
  const FitResult b = fit_small_panel(bare);
  const FitResult full = fit_small_panel(cfg);
  const bool ok = b.first_below > 0 && b.first_below <= 2000;
  return {ok, fmt("%ld windows, %ld phase-A steps, prediction path min MSE %.2e, first below 1e-3 at step %ld; "
                  "full objective min MSE %.2e",
                  b.windows, b.steps, b.best, b.first_below, full.best)};
}

// ---- 11: performance envelope -----------------------------------------------

Outcome performance() {
  const auto& full = audited_full();
  const auto& s = full.weekly.week_seconds;
  double worst = 0.0, total = 0.0;
  for (double x : s) worst = std::max(worst, x), total += x;
  const bool ok = !s.empty() && worst < 300.0;
  return {ok, fmt("slowest weekly task %.1f s (audit on), %zu weeks in %.1f s", worst, s.size(), total)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::filesystem::path out_dir = std::filesystem::current_path();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"formula oracles", formula_oracles},
      {"unidirectionality", unidirectionality},
      {"Laplacian invariants", laplacian_invariants},
      {"positive transfer (T1)", positive_transfer},
      {"negative-transfer prevention (T2)", negative_transfer},
      {"data ablation", data_ablation},
      {"KD ablation harness", [&] { return kd_harness(out_dir); }},
      {"leakage audit", leakage_audit},
      {"overfit sanity", overfit},
      {"performance envelope", performance},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
