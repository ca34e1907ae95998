#include "episteer/region_graph.hpp"
#include "episteer/synth.hpp"
#include "episteer/windows.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace episteer;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("episteer_" + name); }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

double pearson(const Vector& a, const Vector& b) {
  const Vector da = a.array() - a.mean(), db = b.array() - b.mean();
  return da.dot(db) / std::sqrt(da.squaredNorm() * db.squaredNorm());
}

// Largest eigenvalue magnitude by power iteration, then the smallest via a
// shifted iteration on (c·I − L).
std::pair<double, double> eigen_range_power(const Matrix& L) {
  auto dominant = [](const Matrix& M) {
    Vector v = Vector::Ones(M.rows()) + Vector::LinSpaced(M.rows(), 0.0, 0.1);
    double lambda = 0.0;
    for (int it = 0; it < 20000; ++it) {
      Vector w = M * v;
      const double n = w.norm();
      if (n == 0.0) return 0.0;
      lambda = v.dot(w) / v.squaredNorm();
      v = w / n;
    }
    return lambda;
  };
  const double top = dominant(L);
  const double c = top + 1.0;
  const double bottom = c - dominant(c * Matrix::Identity(L.rows(), L.cols()) - L);
  return {bottom, top};
}

}  // namespace

TEST(EpiWeek, ParseFormatAndOrder) {
  EXPECT_EQ(EpiWeek::parse("202009").str(), "202009");
  EXPECT_LT(EpiWeek::parse("201952"), EpiWeek::parse("202001"));
  EXPECT_THROW(EpiWeek::parse("2020w09"), ValidationError);
  EXPECT_THROW(EpiWeek::parse("202054"), ValidationError);
}

TEST(EpiWeek, YearRollover) {
  EXPECT_EQ((EpiWeek{2019, 52}.next()), (EpiWeek{2020, 1}));
  EXPECT_EQ((EpiWeek{2020, 52}.next()), (EpiWeek{2020, 53}));
  EXPECT_EQ((EpiWeek{2020, 53}.next()), (EpiWeek{2021, 1}));
  EXPECT_EQ((EpiWeek{2021, 1}.prev()), (EpiWeek{2020, 53}));
  EXPECT_EQ(weeks_in_year(2020), 53);
  EXPECT_EQ(weeks_between(EpiWeek{2019, 40}, EpiWeek{2020, 9}), 21);
  EXPECT_EQ((EpiWeek{2019, 40}.plus(21)), (EpiWeek{2020, 9}));
}

TEST(Wili, ParsesSingleRow) {
  const auto p = temp_file("one.csv");
  write_text(p, "epiweek,region,wili\n202009,nat,5.2\n");
  const WiliPanel w = load_wili(p, {2020, 3});
  EXPECT_DOUBLE_EQ(w.at({2020, 9}, w.region_index("nat")), 5.2);
  fs::remove(p);
}

TEST(Wili, MissingRegionWeekNamesIt) {
  const auto p = temp_file("gap.csv");
  write_text(p, "epiweek,region,wili\n202009,hhs6,1\n202009,hhs7,1\n202010,hhs6,1\n");
  try {
    load_wili(p, {2020, 3});
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("hhs7"), std::string::npos) << msg;
    EXPECT_NE(msg.find("202010"), std::string::npos) << msg;
  }
  fs::remove(p);
}

TEST(Wili, RejectsNegativeAndMalformed) {
  const auto p = temp_file("bad.csv");
  write_text(p, "epiweek,region,wili\n202009,nat,-1\n");
  EXPECT_THROW(load_wili(p, {2020, 3}), ValidationError);
  write_text(p, "epiweek,region,wili\n2020-09,nat,1\n");
  EXPECT_THROW(load_wili(p, {2020, 3}), ValidationError);
  fs::remove(p);
}

TEST(Wili, SyntheticRoundTripIsLossless) {
  const SynthData d = synth_generate(3);
  ASSERT_GE(d.wili.num_weeks(), 15 * 52);
  ASSERT_EQ(d.wili.num_regions(), 11);
  const auto p = temp_file("rt_wili.csv");
  save_wili(d.wili, p);
  const WiliPanel back = load_wili(p, d.wili.contamination_start);
  EXPECT_EQ(back.regions, d.wili.regions);
  EXPECT_EQ(back.weeks, d.wili.weeks);
  EXPECT_EQ((back.values - d.wili.values).cwiseAbs().maxCoeff(), 0.0);
  fs::remove(p);
}

TEST(Exogenous, RoundTripKeepsMissingCells) {
  SynthConfig cfg;
  cfg.missing_rate = 0.05;
  const SynthData d = synth_generate(4, cfg);
  const auto p = temp_file("rt_exo.csv");
  save_exogenous(d.exo, p);
  const ExogenousPanel back = load_exogenous(p);
  ASSERT_EQ(back.num_signals(), d.exo.num_signals());
  for (Index s = 0; s < back.num_signals(); ++s) {
    EXPECT_EQ(back.signals[static_cast<std::size_t>(s)].qualified(), d.exo.signals[static_cast<std::size_t>(s)].qualified());
  }
  for (std::size_t r = 0; r < back.data.size(); ++r) {
    const Matrix& a = back.data[r];
    const Matrix& b = d.exo.data[d.exo.region_index(back.regions[r])];
    for (Index i = 0; i < a.size(); ++i) {
      if (std::isnan(b.data()[i])) {
        EXPECT_TRUE(std::isnan(a.data()[i]));
      } else {
        EXPECT_EQ(a.data()[i], b.data()[i]);
      }
    }
  }
  fs::remove(p);
}

TEST(Exogenous, DropBucketRemovesExactlyItsColumns) {
  const SynthData d = synth_generate(5);
  Index ds1 = 0;
  for (const auto& s : d.exo.signals) ds1 += s.bucket == Bucket::DS1;
  const Bucket drop[] = {Bucket::DS1};
  const ExogenousPanel e = d.exo.without_buckets(drop);
  EXPECT_EQ(e.num_signals(), d.exo.num_signals() - ds1);
  for (const auto& s : e.signals) EXPECT_NE(s.bucket, Bucket::DS1);
  EXPECT_EQ(e.data.front().cols(), e.num_signals());
}

TEST(Graph, EmptyBorderListGivesStar) {
  const RegionGraph g = build_region_graph(default_regions(), {});
  EXPECT_DOUBLE_EQ(g.degree(g.index_of("nat")), 10.0);
  for (int i = 1; i <= 10; ++i) EXPECT_DOUBLE_EQ(g.degree(g.index_of("hhs" + std::to_string(i))), 1.0);
  Vector v = g.degree.cwiseSqrt();
  EXPECT_NEAR(v.dot(g.laplacian * v), 0.0, 1e-12);
}

TEST(Graph, DefaultGraphNationalDegree) {
  const RegionGraph g = build_region_graph(default_regions(), default_hhs_edges());
  EXPECT_DOUBLE_EQ(g.degree(g.index_of("nat")), 10.0);
}

TEST(Graph, RejectsBadEdges) {
  const auto& v = default_regions();
  EXPECT_THROW(build_region_graph(v, {{"hhs1", "hhs1"}}), ValidationError);
  EXPECT_THROW(build_region_graph(v, {{"hhs1", "hhs2"}, {"hhs2", "hhs1"}}), ValidationError);
  EXPECT_THROW(build_region_graph(v, {{"hhs1", "hhs11"}}), ValidationError);
  EXPECT_THROW(build_region_graph(v, {{"nat", "hhs1"}}), ValidationError);
}

TEST(Graph, EdgeFileRoundTrip) {
  const auto p = temp_file("edges.txt");
  write_edge_list(default_hhs_edges(), p);
  EXPECT_EQ(read_edge_list(p), default_hhs_edges());
  fs::remove(p);
}

TEST(Graph, ShippedEdgeFileMatchesBuiltIn) {
  const fs::path shipped = fs::path(EPISTEER_SOURCE_DIR) / "data" / "hhs_edges.txt";
  EXPECT_EQ(read_edge_list(shipped), default_hhs_edges());
}

TEST(GraphProperty, LaplacianSpectrumWithinZeroTwo) {
  Rng rng(7);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Edge> edges;
    for (int i = 1; i <= 10; ++i)
      for (int j = i + 1; j <= 10; ++j)
        if (coin(rng)) edges.push_back({"hhs" + std::to_string(i), "hhs" + std::to_string(j)});
    const RegionGraph g = build_region_graph(default_regions(), edges);
    const auto [lo, hi] = eigen_range_power(g.laplacian);
    EXPECT_GE(lo, -1e-6);
    EXPECT_LE(hi, 2.0 + 1e-6);
  }
}

TEST(GraphProperty, LaplacianIsPsd) {
  Rng rng(8);
  const RegionGraph g = build_region_graph(default_regions(), default_hhs_edges());
  for (int i = 0; i < 100; ++i) {
    const Vector v = episteer::testing::random_matrix(11, 1, rng);
    EXPECT_GE(v.dot(g.laplacian * v), -1e-12);
  }
}

namespace {

// Tiny hand-built panels: coverage from 2020w04, flat values.
std::pair<WiliPanel, ExogenousPanel> small_panels(EpiWeek first, int weeks) {
  WiliPanel w;
  w.regions = default_regions();
  w.contamination_start = {2020, 8};
  ExogenousPanel e;
  e.regions = default_regions();
  e.signals = {{"a", Bucket::DS1}, {"b", Bucket::DS2}};
  EpiWeek t = first;
  for (int i = 0; i < weeks; ++i, t = t.next()) {
    w.weeks.push_back(t);
    e.weeks.push_back(t);
  }
  w.values = Matrix::Constant(weeks, 11, 2.0);
  for (int r = 0; r < 11; ++r) e.data.push_back(Matrix::Random(weeks, 2));
  return {w, e};
}

}  // namespace

TEST(Windows, FirstTargetFollowsCoverage) {
  auto [w, e] = small_panels({2020, 4}, 12);
  const auto wins = make_training_windows(e, w, 3, 1, {2020, 15});
  EXPECT_EQ(wins.front().first_target_week, (EpiWeek{2020, 7}));
  EXPECT_EQ(wins.front().first_input_week, (EpiWeek{2020, 4}));
  EXPECT_EQ(wins.front().inputs.rows(), 3);
}

TEST(Windows, NoTargetBeyondAsOf) {
  auto [w, e] = small_panels({2020, 1}, 20);
  for (int k = 1; k <= 3; ++k) {
    for (const auto& win : make_training_windows(e, w, 4, k, {2020, 12})) {
      EXPECT_LE(win.target_week, (EpiWeek{2020, 12}));
      EXPECT_LE(win.last_input_week, (EpiWeek{2020, 12}));
    }
  }
}

TEST(Windows, InsufficientHistoryIsAnError) {
  auto [w, e] = small_panels({2020, 4}, 12);
  EXPECT_THROW(make_training_windows(e, w, 3, 1, {2020, 6}), ValidationError);
}

TEST(Windows, CountOnFullSyntheticPanel) {
  const SynthData d = synth_generate(6);
  const int W = 4;
  for (int k = 1; k <= 2; ++k) {
    const auto wins = make_training_windows(d.exo, d.wili, W, k, d.exo.weeks.back());
    const auto expected = (static_cast<long>(d.exo.num_weeks()) - W - k + 1) * 11;
    EXPECT_EQ(static_cast<long>(wins.size()), expected);
  }
}

TEST(Windows, OverlapFlagExhaustive) {
  const SynthData d = synth_generate(7);
  for (const auto& win : make_training_windows(d.exo, d.wili, 4, 2, d.exo.weeks.back())) {
    EXPECT_EQ(win.in_overlap, win.target_week >= d.wili.contamination_start);
  }
}

TEST(Windows, ForwardFillUpToTwoWeeks) {
  auto [w, e] = small_panels({2020, 1}, 12);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  e.data[0](5, 0) = nan;
  e.data[0](6, 0) = nan;
  const auto wins2 = make_training_windows(e, w, 4, 1, {2020, 12});
  e.data[0](7, 0) = nan;
  const auto wins3 = make_training_windows(e, w, 4, 1, {2020, 12});
  // A three-week gap drops every window of region 0 that touches week index 7.
  EXPECT_EQ(wins2.size() - wins3.size(), 4u);
}

TEST(Windows, NormalizerIgnoresFutureData) {
  auto [w, e] = small_panels({2020, 1}, 12);
  const auto before = FeatureNormalizer::fit(e, {2020, 8});
  for (auto& m : e.data) m.bottomRows(4).setConstant(1e6);
  const auto after = FeatureNormalizer::fit(e, {2020, 8});
  EXPECT_EQ((before.mean - after.mean).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ((before.stddev - after.stddev).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Synth, Deterministic) {
  const SynthData a = synth_generate(11), b = synth_generate(11);
  EXPECT_EQ((a.wili.values - b.wili.values).cwiseAbs().maxCoeff(), 0.0);
  for (std::size_t r = 0; r < a.exo.data.size(); ++r) {
    EXPECT_TRUE(a.exo.data[r].cwiseEqual(b.exo.data[r]).all());
  }
}

TEST(Synth, NoUptrendStaysInHistoricalEnvelope) {
  SynthConfig cfg;
  cfg.uptrend_magnitude = 0.0;
  const SynthData d = synth_generate(12, cfg);
  const EpiWeek cur{2019, 40};
  const int len = weeks_between(cur, cfg.current_end) + 1;
  for (Index r = 0; r < d.wili.num_regions(); ++r) {
    // Mean historical curve and each season's deviation from it.
    Matrix seasons(cfg.n_seasons, len);
    for (int s = 0; s < cfg.n_seasons; ++s) {
      const EpiWeek start{cur.year - cfg.n_seasons + s, 40};
      for (int i = 0; i < len; ++i) seasons(s, i) = d.wili.at(start.plus(i), r);
    }
    const RowVector mean = seasons.colwise().mean();
    double hist_mad = 0.0;
    for (int s = 0; s < cfg.n_seasons; ++s) hist_mad += (seasons.row(s) - mean).cwiseAbs().mean();
    hist_mad /= cfg.n_seasons;
    double cur_mad = 0.0;
    for (int i = 0; i < len; ++i) cur_mad += std::abs(d.wili.at(cur.plus(i), r) - mean(i));
    cur_mad /= len;
    EXPECT_LT(cur_mad, hist_mad) << d.wili.regions[static_cast<std::size_t>(r)];
  }
}

TEST(Synth, Ds1SignalTracksContamination) {
  const SynthData d = synth_generate(13);
  Index sig = -1;
  for (Index s = 0; s < d.exo.num_signals(); ++s) {
    if (d.exo.signals[static_cast<std::size_t>(s)].qualified() == "DS1.cli_er_visits") sig = s;
  }
  ASSERT_GE(sig, 0);
  for (std::size_t r = 0; r < d.exo.regions.size(); ++r) {
    const Index wr = d.wili.region_index(d.exo.regions[r]);
    Vector a(d.exo.num_weeks()), b(d.exo.num_weeks());
    for (Index i = 0; i < d.exo.num_weeks(); ++i) {
      a(i) = d.exo.data[r](i, sig);
      b(i) = d.contamination(*d.wili.week_index(d.exo.weeks[static_cast<std::size_t>(i)]), wr);
    }
    EXPECT_GT(pearson(a, b), 0.8) << d.exo.regions[r];
  }
}

TEST(Synth, BucketNames) {
  EXPECT_EQ(bucket_name(Bucket::DS1), "DS1");
  EXPECT_EQ(parse_bucket("DS4"), Bucket::DS4);
  EXPECT_THROW(parse_bucket("DS5"), ValidationError);
  EXPECT_EQ(Signal::parse("DS2.google_trends").bucket, Bucket::DS2);
}
