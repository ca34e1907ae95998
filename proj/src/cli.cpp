#include "episteer/cli.hpp"

#include "episteer/eval.hpp"
#include "episteer/synth.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#ifndef EPISTEER_VERSION
#define EPISTEER_VERSION "dev"
#endif

namespace episteer {

namespace fs = std::filesystem;

void write_forecasts_csv(std::span<const ForecastRow> rows, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "region,as_of,target_week,horizon,pred,source_pred\n";
  for (const auto& r : rows) {
    out << r.region << ',' << r.as_of.str() << ',' << r.target_week.str() << ',' << r.horizon << ','
        << format_double(r.pred) << ',' << format_double(r.source_pred) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<ForecastRow> read_forecasts_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "region,as_of,target_week,horizon,pred,source_pred") {
    throw ValidationError(path.string() + ": expected header region,as_of,target_week,horizon,pred,source_pred");
  }
  std::vector<ForecastRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 6) throw ValidationError(where + ": expected 6 fields");
    ForecastRow r;
    r.region = f[0];
    r.as_of = EpiWeek::parse(f[1]);
    r.target_week = EpiWeek::parse(f[2]);
    r.horizon = static_cast<int>(parse_double(f[3], where));
    r.pred = parse_double(f[4], where);
    r.source_pred = parse_double(f[5], where);
    rows.push_back(r);
  }
  return rows;
}

nlohmann::json flatten_json(const nlohmann::json& j) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [k, v] : j.items()) {
    if (v.is_object()) {
      const nlohmann::json inner = flatten_json(v);
      for (const auto& [k2, v2] : inner.items()) out[k + "." + k2] = v2;
    } else {
      out[k] = v;
    }
  }
  return out;
}

nlohmann::json unflatten_json(const nlohmann::json& flat) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [k, v] : flat.items()) {
    nlohmann::json* node = &out;
    std::size_t start = 0;
    for (std::size_t dot = k.find('.'); dot != std::string::npos; dot = k.find('.', start)) {
      node = &(*node)[k.substr(start, dot - start)];
      start = dot + 1;
    }
    (*node)[k.substr(start)] = v;
  }
  return out;
}

namespace {

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json_file(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ValidationError(what + " not found: " + p.string());
}

void prepare_out(const fs::path& dir) {
  require(!dir.empty(), "--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError("cannot create output directory " + dir.string());
}

// A flag value is read as JSON when it parses to a scalar, else as a string.
nlohmann::json flag_value(const std::string& text) {
  try {
    auto v = nlohmann::json::parse(text);
    if (v.is_primitive()) return v;
  } catch (const nlohmann::json::exception&) {
  }
  return text;
}

// Training-config flags mirror TrainConfig keys; nested keys use dots.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "TrainConfig JSON; flags override its values");
    const nlohmann::json defaults = flatten_json(to_json(TrainConfig{}));
    for (const auto& [key, v] : defaults.items()) {
      values[key];
      app->add_option("--" + key, values[key], "default " + v.dump());
    }
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = train_config_from_json(read_json_file(config_path));
    nlohmann::json flat = nlohmann::json::object();
    bool seed_flag = false;
    for (const auto& [key, text] : values) {
      if (text.empty()) continue;
      flat[key] = flag_value(text);
      seed_flag = seed_flag || key == "seed";
    }
    if (!seed_flag && config_path.empty()) {
      if (const char* env = std::getenv("EPISTEER_SEED"); env && *env) flat["seed"] = flag_value(env);
    }
    try {
      cfg = train_config_from_json(unflatten_json(flat), cfg);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("bad config flag: ") + e.what());
    }
    cfg.validate();
    return cfg;
  }
};

struct Inputs {
  std::string wili;
  std::string exogenous;
  std::string graph;
  std::string contamination_start = "202003";

  void attach(CLI::App* app, bool exo) {
    app->add_option("--wili", wili, "wILI CSV (epiweek,region,wili)")->required();
    if (exo) {
      app->add_option("--exogenous", exogenous, "exogenous CSV (epiweek,region,name,value)")->required();
      app->add_option("--graph", graph, "edge list; the built-in HHS borders when omitted");
    }
    app->add_option("--contamination_start", contamination_start, "first contaminated epiweek (YYYYWW)");
  }

  WiliPanel load_wili_panel() const {
    require_file(wili, "wILI file");
    return load_wili(wili, EpiWeek::parse(contamination_start));
  }
  ExogenousPanel load_exo_panel() const {
    require_file(exogenous, "exogenous file");
    return load_exogenous(exogenous);
  }
  RegionGraph load_graph(const std::vector<std::string>& regions) const {
    if (graph.empty()) {
      std::vector<Edge> edges;
      for (const auto& e : default_hhs_edges()) {
        const bool u = std::find(regions.begin(), regions.end(), e.first) != regions.end();
        const bool v = std::find(regions.begin(), regions.end(), e.second) != regions.end();
        if (u && v) edges.push_back(e);
      }
      return build_region_graph(regions, edges);
    }
    require_file(graph, "graph file");
    return build_region_graph(regions, read_edge_list(graph));
  }
};

void write_manifest(const fs::path& out, const std::string& command, std::uint64_t seed,
                    const nlohmann::json& config, const std::vector<std::string>& args) {
  write_json_file({{"command", command},
                   {"version", EPISTEER_VERSION},
                   {"seed", seed},
                   {"config_hash", config_hash(config)},
                   {"config", config},
                   {"args", args}},
                  out / "manifest.json");
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("EPISTEER_SEED"); env && *env) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ValidationError("EPISTEER_SEED is not an unsigned integer: " + std::string(env));
    }
  }
  return 0;
}

void write_trace_csv(std::span<const TraceRow> trace, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "step,term,value\n";
  for (const auto& r : trace) out << r.step << ',' << r.term << ',' << format_double(r.value) << '\n';
}

void write_kd_log_csv(std::span<const KdLogRow> log, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "as_of,target_week,region,in_overlap,kd_contribution\n";
  for (const auto& r : log) {
    out << r.as_of.str() << ',' << r.target_week.str() << ',' << r.region << ',' << (r.in_overlap ? 1 : 0) << ','
        << format_double(r.contribution) << '\n';
  }
}

void write_leakage_csv(std::span<const LeakageEntry> log, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "as_of,what,week\n";
  for (const auto& e : log) out << e.as_of.str() << ',' << e.what << ',' << e.week.str() << '\n';
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"episteer: transfer-learning epidemic forecaster"};
  app.set_version_flag("--version", EPISTEER_VERSION);
  app.require_subcommand(1);
  std::vector<std::string> args(argv, argv + argc);

  std::string out_dir;
  std::optional<std::uint64_t> seed_flag;

  auto* synth = app.add_subcommand("synth", "generate a synthetic contaminated season");
  std::string synth_config;
  synth->add_option("--seed", seed_flag, "generator seed (EPISTEER_SEED when omitted)");
  synth->add_option("--synth_config", synth_config, "generator JSON");
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* pretrain = app.add_subcommand("pretrain", "fit the source model on historical seasons");
  Inputs pre_in;
  ConfigFlags pre_cfg;
  pre_in.attach(pretrain, false);
  pre_cfg.attach(pretrain);
  pretrain->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "run the weekly protocol and save the final bundle");
  Inputs train_in;
  ConfigFlags train_cfg;
  std::string source_ckpt, first_week, last_week;
  train_in.attach(train, true);
  train_cfg.attach(train);
  train->add_option("--source", source_ckpt, "source checkpoint from `pretrain`")->required();
  train->add_option("--first", first_week, "first as_of week (default: start of T1 minus k)");
  train->add_option("--last", last_week, "last as_of week (default: end of T2 minus 1)");
  train->add_option("--out", out_dir, "output directory")->required();

  auto* fcast = app.add_subcommand("forecast", "k-ahead forecasts for one as_of week from a bundle");
  Inputs fc_in;
  std::string bundle_path, as_of;
  fc_in.attach(fcast, true);
  fcast->add_option("--bundle", bundle_path, "bundle checkpoint from `train`")->required();
  fcast->add_option("--as_of", as_of, "forecast origin (YYYYWW)")->required();
  fcast->add_option("--out", out_dir, "output directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "score forecasts against observed wILI");
  Inputs ev_in;
  ConfigFlags ev_cfg;
  std::string forecasts_path, variant = "full";
  ev_in.attach(evaluate, false);
  ev_cfg.attach(evaluate);
  evaluate->add_option("--forecasts", forecasts_path, "forecasts CSV from `train` or `forecast`")->required();
  evaluate->add_option("--variant", variant, "variant tag for the report");
  evaluate->add_option("--out", out_dir, "output directory")->required();

  auto* ablate = app.add_subcommand("ablate", "run the full model and ablation variants");
  Inputs ab_in;
  ConfigFlags ab_cfg;
  std::string variants = "all";
  ab_in.attach(ablate, true);
  ab_cfg.attach(ablate);
  ablate->add_option("--source", source_ckpt, "source checkpoint from `pretrain`")->required();
  ablate->add_option("--variants", variants, "comma-separated variants, or `all`");
  ablate->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const fs::path out = out_dir;
    if (synth->parsed()) {
      SynthConfig sc;
      if (!synth_config.empty()) sc = synth_config_from_json(read_json_file(synth_config));
      const std::uint64_t seed = resolve_seed(seed_flag);
      prepare_out(out);
      const SynthData d = synth_generate(seed, sc);
      save_wili(d.wili, out / "wili.csv");
      save_exogenous(d.exo, out / "exogenous.csv");
      // National edges are implied by the graph builder and rejected in files.
      std::vector<Edge> borders;
      for (const auto& e : d.graph.edges) {
        if (e.first != kNational && e.second != kNational) borders.push_back(e);
      }
      write_edge_list(borders, out / "edges.txt");
      write_json_file(to_json(sc), out / "synth_config.json");
      write_manifest(out, "synth", seed, to_json(sc), args);
    } else if (pretrain->parsed()) {
      const TrainConfig cfg = pre_cfg.resolve();
      const WiliPanel wili = pre_in.load_wili_panel();
      prepare_out(out);
      SourceModel model(cfg.source, cfg.seed);
      const auto rep = pretrain_source(model, wili.truncated(wili.contamination_start.prev()),
                                       cfg.source.pretrain_epochs, cfg.source.pretrain_lr);
      model.save(out / "source.ckpt");
      std::ofstream losses(out / "pretrain_loss.csv");
      losses << "epoch,loss\n";
      for (std::size_t i = 0; i < rep.losses.size(); ++i) losses << i << ',' << format_double(rep.losses[i]) << '\n';
      write_manifest(out, "pretrain", cfg.seed, to_json(cfg), args);
      std::cout << "pretrained source: final loss " << format_double(rep.losses.empty() ? 0.0 : rep.losses.back())
                << " -> " << (out / "source.ckpt").string() << '\n';
    } else if (train->parsed()) {
      TrainConfig cfg = train_cfg.resolve();
      require_file(source_ckpt, "source checkpoint (run `episteer pretrain` first)");
      const WiliPanel wili = train_in.load_wili_panel();
      const ExogenousPanel exo = train_in.load_exo_panel();
      const RegionGraph graph = train_in.load_graph(wili.regions);
      SourceModel source = SourceModel::load(source_ckpt);
      cfg.source = source.config();
      cfg.validate();
      auto [first, last] = protocol_range(cfg, wili.contamination_start.year);
      if (!first_week.empty()) first = EpiWeek::parse(first_week);
      if (!last_week.empty()) last = EpiWeek::parse(last_week);
      prepare_out(out);
      ModelBundle bundle = build_cali_net(std::move(source), wili.regions, exo.signals, cfg);
      const WeeklyResult res = weekly_protocol(bundle, wili, exo, graph, first, last);
      bundle.save(out / "bundle.ckpt");
      write_forecasts_csv(res.forecasts, out / "forecasts.csv");
      write_trace_csv(res.trace, out / "trace.csv");
      write_kd_log_csv(res.kd_log, out / "kd_log.csv");
      write_leakage_csv(res.leakage, out / "leakage.csv");
      write_manifest(out, "train", cfg.seed, to_json(cfg), args);
      double total = 0.0;
      for (double s : res.week_seconds) total += s;
      std::cout << "trained " << res.week_seconds.size() << " weeks in " << format_double(total) << " s, "
                << res.forecasts.size() << " forecasts\n";
    } else if (fcast->parsed()) {
      require_file(bundle_path, "bundle checkpoint (run `episteer train` first)");
      ModelBundle bundle = ModelBundle::load(bundle_path);
      const WiliPanel wili = fc_in.load_wili_panel();
      const ExogenousPanel exo = fc_in.load_exo_panel();
      prepare_out(out);
      const auto rows = forecast(bundle, wili, exo, EpiWeek::parse(as_of));
      write_forecasts_csv(rows, out / "forecasts.csv");
      write_manifest(out, "forecast", bundle.config.seed, to_json(bundle.config), args);
    } else if (evaluate->parsed()) {
      const TrainConfig cfg = ev_cfg.resolve();
      require_file(forecasts_path, "forecasts file");
      const WiliPanel wili = ev_in.load_wili_panel();
      const auto rows = read_forecasts_csv(forecasts_path);
      prepare_out(out);
      const std::vector<ForecastReport> reports{
          make_report(rows, wili, variant, cfg.seed, config_hash(to_json(cfg)), wili.contamination_start.year)};
      write_report_csv(reports, out / "report.csv");
      const auto summary = report_summary(reports, cfg);
      write_json_file(summary, out / "summary.json");
      write_manifest(out, "evaluate", cfg.seed, to_json(cfg), args);
      const auto& agg = summary["variants"][variant]["aggregate"];
      std::cout << "RMSE T1 " << agg["T1"].dump() << " T2 " << agg["T2"].dump() << " T " << agg["T"].dump() << '\n';
    } else if (ablate->parsed()) {
      TrainConfig cfg = ab_cfg.resolve();
      require_file(source_ckpt, "source checkpoint (run `episteer pretrain` first)");
      EvalData data{ab_in.load_wili_panel(), ab_in.load_exo_panel(), {}};
      data.graph = ab_in.load_graph(data.wili.regions);
      const SourceModel source = SourceModel::load(source_ckpt);
      cfg.source = source.config();
      cfg.validate();
      std::vector<std::string> list{"full"};
      for (const auto& v : variants == "all" ? ablation_variants() : split_list(variants)) {
        apply_variant(v, cfg, data.exo);  // reject unknown names before any training
        if (v != "full") list.push_back(v);
      }
      prepare_out(out);
      std::vector<ForecastReport> reports;
      for (const auto& v : list) {
        reports.push_back(ablation_run(v, data, source, cfg).report);
        std::cout << "variant " << v << " done\n";
      }
      write_report_csv(reports, out / "report.csv");
      write_json_file(report_summary(reports, cfg), out / "summary.json");
      const auto no_kd = std::find_if(reports.begin(), reports.end(), [](const auto& r) { return r.variant == "no_kd"; });
      if (no_kd != reports.end()) {
        const int year = data.wili.contamination_start.year;
        std::vector<EpiWeek> weeks;
        for (int w = cfg.t1_first; w <= cfg.t2_last; ++w) weeks.push_back({year, w});
        const auto& regions = data.wili.regions;
        write_heatmap_csv(ratio_heatmap(error_grid(reports.front(), regions, weeks), error_grid(*no_kd, regions, weeks)),
                          regions, weeks, out / "heatmap_kd.csv");
      }
      write_manifest(out, "ablate", cfg.seed, to_json(cfg), args);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace episteer
