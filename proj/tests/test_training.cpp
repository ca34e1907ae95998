#include "episteer/synth.hpp"
#include "episteer/training.hpp"
#include "test_util.hpp"

#include <chrono>
#include <filesystem>

using namespace episteer;

namespace {

std::vector<Matrix> values_of(std::span<Parameter* const> ps) {
  std::vector<Matrix> out;
  for (const Parameter* p : ps) out.push_back(p->value);
  return out;
}

bool same_values(std::span<Parameter* const> ps, const std::vector<Matrix>& before) {
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (!(ps[i]->value.array() == before[i].array()).all()) return false;
  return true;
}

double scalar(const Var& v) { return v.value()(0, 0); }

// Default synthetic panel and a source pretrained on pre-contamination data.
class TrainingFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new SynthData(synth_generate(0));
    source_ = new SourceModel(SourceConfig{}, 0);
    const auto& sc = source_->config();
    pretrain_source(*source_, data_->wili.truncated(data_->wili.contamination_start.prev()), sc.pretrain_epochs,
                    sc.pretrain_lr);
  }
  static void TearDownTestSuite() {
    delete source_;
    delete data_;
  }

  static EpiWeek as_of() { return data_->wili.contamination_start.plus(3); }

  ModelBundle bundle(const TrainConfig& cfg) const {
    return build_cali_net(*source_, data_->wili.regions, data_->exo.signals, cfg);
  }

  WeekData week(ModelBundle& b) const {
    SourceModel& s = b.source;
    incremental_retrain(s, data_->wili.truncated(as_of()), as_of());
    return make_week_data(b, data_->wili, data_->exo, data_->graph, as_of());
  }

  static SynthData* data_;
  static SourceModel* source_;
};

SynthData* TrainingFixture::data_ = nullptr;
SourceModel* TrainingFixture::source_ = nullptr;

Index affine_count(Index in, Index out) { return in * out + out; }
Index gru_count(Index in, Index hidden) { return 3 * (hidden * in + hidden * hidden + hidden); }

}  // namespace

TEST(TrainConfigTest, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.kd.alpha = 0.25;
  c.caem.h_r = 12;
  c.lambda_lap = 0.5;
  const TrainConfig back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  c.lambda_re = -1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  TrainConfig empty;
  empty.phase_a_steps = 0;
  empty.phase_b_steps = 0;
  EXPECT_THROW(empty.validate(), ValidationError);
}

TEST(BuildCaliNet, RejectsUntrainedSource) {
  const SynthData d = synth_generate(1);
  EXPECT_THROW(build_cali_net(SourceModel(SourceConfig{}, 1), d.wili.regions, d.exo.signals, TrainConfig{}),
               ValidationError);
}

TEST_F(TrainingFixture, BuildDetachesAndFreezesSource) {
  ModelBundle b = bundle(TrainConfig{});
  EXPECT_FALSE(b.source.decoder_attached);
  for (Parameter* p : b.source.parameters()) EXPECT_FALSE(p->trainable) << p->name;
}

TEST_F(TrainingFixture, ParameterCountMatchesClosedForm) {
  TrainConfig cfg;
  ModelBundle b = bundle(cfg);
  const auto& sc = b.source.config();
  const Index M_S = sc.d_pe + sc.d_se, V = 11, l = data_->exo.num_signals(), h = cfg.caem.h_r;
  const Index source = gru_count(1, sc.d_pe) + affine_count(sc.season_weeks, sc.d_se) +
                       affine_count(sc.d_se, sc.season_weeks) + affine_count(sc.d_pe, sc.d_se) +
                       affine_count(M_S, sc.decoder_hidden) + affine_count(sc.decoder_hidden, cfg.k);
  const Index caem = affine_count(V, h) + affine_count(h, V) + gru_count(l + h, h);
  const Index heads = affine_count(M_S, cfg.htl.m_j) + affine_count(h, cfg.htl.m_j) +
                      affine_count(cfg.htl.m_j, cfg.htl.m_a) + affine_count(cfg.htl.m_a, cfg.k) +
                      affine_count(cfg.htl.m_j, M_S) + affine_count(cfg.htl.m_j, h);
  EXPECT_EQ(b.parameter_count(), source + caem + heads);
}

TEST_F(TrainingFixture, BundleCheckpointRoundTrip) {
  TrainConfig cfg;
  cfg.rounds = 3;
  ModelBundle b = bundle(cfg);
  const WeekData d = week(b);
  alternating_train(b, d, cfg);
  const auto path = std::filesystem::temp_directory_path() / "episteer_bundle.ckpt";
  b.save(path);
  ModelBundle back = ModelBundle::load(path);
  EXPECT_EQ(to_json(back.config), to_json(b.config));
  EXPECT_EQ(back.regions, b.regions);
  const auto a = b.parameters(), c = back.parameters();
  ASSERT_EQ(a.size(), c.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE((a[i]->value.array() == c[i]->value.array()).all());
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".json");
}

TEST_F(TrainingFixture, JointBackwardLeavesSourceGradZero) {
  TrainConfig cfg;
  ModelBundle b = bundle(cfg);
  const WeekData d = week(b);
  auto all = b.parameters();
  zero_grads(all);
  Tape t;
  Rng rng(1);
  t.backward(total_loss(t, b, d, cfg, rng).total);
  EXPECT_EQ(max_abs_grad(b.source.parameters()), 0.0);
  EXPECT_GT(max_abs_grad(b.heads.target_side()), 0.0);
}

TEST_F(TrainingFixture, TotalEqualsSumOfIndependentTerms) {
  TrainConfig cfg;
  cfg.htl.noise_std = 0.0;
  cfg.lambda_re = 0.7;
  cfg.lambda_lap = 0.3;
  cfg.lambda_dn = 0.2;
  cfg.lambda_source_path = 0.9;
  cfg.kd.alpha = 1.3;
  cfg.kd.beta = 0.6;
  ModelBundle b = bundle(cfg);
  const WeekData d = week(b);
  ASSERT_GE(d.overlap_rows.size(), 2u);
  ASSERT_FALSE(d.groups.empty());
  Tape t;
  Rng rng(2);
  const LossTerms terms = total_loss(t, b, d, cfg, rng);

  // Each module loss recomputed on its own tape.
  Tape u;
  RegionEmbedding re = region_embed(u, b.caem.embedder);
  const Matrix H = caem_encode(u, b.caem, d.batch, re.embeddings).value();
  const Matrix psi_t = b.heads.t.bind(u)(u.constant(H)).value();
  const Matrix yt = shared_head(u, b.heads, u.constant(psi_t)).value();
  const double target_mse = (yt - d.targets).squaredNorm() / static_cast<double>(d.targets.size());
  double lap = 0.0;
  for (const auto& g : d.groups) {
    Matrix Hg(static_cast<Index>(g.size()), H.cols());
    for (std::size_t i = 0; i < g.size(); ++i) Hg.row(static_cast<Index>(i)) = H.row(g[i]);
    lap += laplacian_penalty(Hg, d.laplacian);
  }
  lap /= static_cast<double>(d.groups.size());
  const Index no = static_cast<Index>(d.overlap_rows.size());
  Matrix raw_o(no, d.source_raw.cols()), ys_o(no, d.targets.cols()), y_o(no, d.targets.cols());
  Matrix yt_o(no, yt.cols()), pt_o(no, psi_t.cols());
  for (Index i = 0; i < no; ++i) {
    const Index r = d.overlap_rows[static_cast<std::size_t>(i)];
    raw_o.row(i) = d.source_raw.row(r);
    ys_o.row(i) = d.source_pred.row(r);
    y_o.row(i) = d.targets.row(r);
    yt_o.row(i) = yt.row(r);
    pt_o.row(i) = psi_t.row(r);
  }
  const Matrix ps_o = b.heads.s.bind(u)(u.constant(raw_o)).value();
  const Matrix yj_o = shared_head(u, b.heads, u.constant(ps_o)).value();
  const double source_path = (yj_o - y_o).squaredNorm() / static_cast<double>(y_o.size());
  const std::vector<bool> flags(static_cast<std::size_t>(no), true);
  const KdTerms kd = kd_loss(u.constant(ys_o), u.constant(yt_o), u.constant(ps_o), u.constant(pt_o), y_o, flags,
                             d.eta, cfg.kd);
  Rng unused(3);
  const double dn = scalar(denoise_loss(u, b.heads, d.source_raw, Side::source, unused)) +
                    scalar(denoise_loss(u, b.heads, H, Side::target, unused));

  EXPECT_NEAR(scalar(terms.target_mse), target_mse, 1e-12);
  EXPECT_NEAR(scalar(terms.laplacian), lap, 1e-12);
  EXPECT_NEAR(scalar(terms.source_path), source_path, 1e-12);
  const double oracle = target_mse + cfg.lambda_re * scalar(re.recon_loss) + cfg.lambda_lap * lap +
                        scalar(kd.total) + cfg.lambda_dn * dn + cfg.lambda_source_path * source_path;
  EXPECT_NEAR(scalar(terms.total), oracle, 1e-12);
}

TEST_F(TrainingFixture, AllWeightsOffPerfectPredictorIsZero) {
  TrainConfig cfg;
  cfg.lambda_re = cfg.lambda_lap = cfg.lambda_dn = cfg.lambda_source_path = 0.0;
  cfg.kd.alpha = 0.0;
  cfg.kd.beta = 0.0;
  ModelBundle b = bundle(cfg);
  WeekData d = week(b);
  Rng rng(4);
  // Make the targets equal the model's own predictions.
  Tape u;
  RegionEmbedding re = region_embed(u, b.caem.embedder);
  Var H = caem_encode(u, b.caem, d.batch, re.embeddings);
  d.targets = shared_head(u, b.heads, b.heads.t.bind(u)(H)).value();
  Tape t;
  EXPECT_EQ(scalar(total_loss(t, b, d, cfg, rng).total), 0.0);
}

TEST_F(TrainingFixture, OnlyLaplacianTermIsolated) {
  TrainConfig cfg;
  cfg.lambda_re = cfg.lambda_dn = cfg.lambda_source_path = 0.0;
  cfg.kd.enabled = false;
  cfg.lambda_lap = 0.4;
  ModelBundle b = bundle(cfg);
  const WeekData d = week(b);
  Tape t;
  Rng rng(5);
  const LossTerms terms = total_loss(t, b, d, cfg, rng);
  Tape u;
  const Matrix H = caem_encode(u, b.caem, d.batch, region_embed(u, b.caem.embedder).embeddings).value();
  double lap = 0.0;
  for (const auto& g : d.groups) {
    Matrix Hg(static_cast<Index>(g.size()), H.cols());
    for (std::size_t i = 0; i < g.size(); ++i) Hg.row(static_cast<Index>(i)) = H.row(g[i]);
    lap += laplacian_penalty(Hg, d.laplacian);
  }
  lap /= static_cast<double>(d.groups.size());
  EXPECT_NEAR(scalar(terms.total) - scalar(terms.target_mse), 0.4 * lap, 1e-12);
  EXPECT_FALSE(terms.kd_imitation.valid());
  EXPECT_FALSE(terms.denoise_source.valid());
}

TEST_F(TrainingFixture, KdOnlyTouchesOverlapRows) {
  TrainConfig cfg;
  ModelBundle b = bundle(cfg);
  const WeekData d = week(b);
  Tape t;
  Rng rng(6);
  const LossTerms terms = total_loss(t, b, d, cfg, rng);
  for (Index i = 0; i < d.size(); ++i) {
    if (!d.in_overlap[static_cast<std::size_t>(i)]) {
      EXPECT_EQ(terms.kd_per_window(i), 0.0);
    }
  }
  EXPECT_NEAR(terms.kd_per_window.sum(), scalar(terms.kd_imitation) + scalar(terms.kd_hint), 1e-12);
}

TEST_F(TrainingFixture, NoPhaseBLeavesSourceProjectionAtInit) {
  TrainConfig cfg;
  cfg.phase_b_steps = 0;
  cfg.rounds = 20;
  ModelBundle b = bundle(cfg);
  const WeekData d = week(b);
  const auto side = b.heads.source_side();
  const auto before = values_of(side);
  alternating_train(b, d, cfg);
  EXPECT_TRUE(same_values(side, before));
}

TEST_F(TrainingFixture, ZeroLearningRateGivesConstantTrace) {
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.htl.noise_std = 0.0;
  cfg.rounds = 10;
  ModelBundle b = bundle(cfg);
  const WeekData d = week(b);
  const TrainReport rep = alternating_train(b, d, cfg);
  ASSERT_EQ(rep.totals.size(), 10u);
  for (double v : rep.totals) EXPECT_EQ(v, rep.totals.front());
}

TEST_F(TrainingFixture, PhasesKeepKdAwayFromSourceSide) {
  TrainConfig cfg;
  cfg.rounds = 15;
  ModelBundle b = bundle(cfg);
  const WeekData d = week(b);
  const auto src = values_of(b.source.parameters());
  const TrainReport rep = alternating_train(b, d, cfg, {.rounds = -1, .audit = true});
  EXPECT_EQ(rep.audits, 15);
  EXPECT_EQ(rep.audit_max_grad, 0.0);
  EXPECT_TRUE(same_values(b.source.parameters(), src));
  // Phase B alone: its objective has no distillation term, so it is the
  // same whether distillation is on or off.
  TrainConfig off = cfg;
  off.kd.enabled = false;
  Tape t1, t2;
  Rng r1(7), r2(7);
  EXPECT_EQ(scalar(source_side_loss(t1, b, d, cfg, r1)), scalar(source_side_loss(t2, b, d, off, r2)));
}

TEST_F(TrainingFixture, DefaultsReduceLossBelowThirtyPercent) {
  TrainConfig cfg;
  ModelBundle b = bundle(cfg);
  const WeekData d = week(b);
  const TrainReport rep = alternating_train(b, d, cfg);
  ASSERT_FALSE(rep.totals.empty());
  EXPECT_LT(rep.totals.back(), 0.3 * rep.totals.front()) << rep.totals.front() << " -> " << rep.totals.back();
}

TEST_F(TrainingFixture, DeterministicTrace) {
  TrainConfig cfg;
  cfg.rounds = 10;
  auto run = [&] {
    ModelBundle b = bundle(cfg);
    const WeekData d = week(b);
    return alternating_train(b, d, cfg).totals;
  };
  EXPECT_EQ(run(), run());
}

TEST_F(TrainingFixture, ForecastIgnoresFutureData) {
  TrainConfig cfg;
  cfg.rounds = 5;
  ModelBundle b = bundle(cfg);
  const WeekData d = week(b);
  alternating_train(b, d, cfg);
  const auto full = forecast(b, data_->wili, data_->exo, as_of());
  const auto cut = forecast(b, data_->wili.truncated(as_of()), data_->exo.truncated(as_of()), as_of());
  ASSERT_EQ(full.size(), 11u);
  ASSERT_EQ(full.size(), cut.size());
  for (std::size_t i = 0; i < full.size(); ++i) {
    EXPECT_EQ(full[i].pred, cut[i].pred);
    EXPECT_EQ(full[i].target_week, as_of().next());
  }
}

TEST_F(TrainingFixture, WeeklyProtocolWarmStartsAndAudits) {
  TrainConfig cfg;
  cfg.rounds = 5;
  cfg.warm_rounds = 3;
  ModelBundle b = build_cali_net(*source_, data_->wili.regions, data_->exo.signals, cfg);
  std::vector<std::vector<Matrix>> starts, ends;
  WeeklyOptions opt;
  opt.audit = true;
  opt.hook = [&](EpiWeek, bool end, ModelBundle& m) {
    (end ? ends : starts).push_back(values_of(m.joint_parameters()));
  };
  const EpiWeek first = data_->wili.contamination_start.plus(1), last = first.plus(2);
  const WeeklyResult res = weekly_protocol(b, data_->wili, data_->exo, data_->graph, first, last, opt);
  ASSERT_EQ(starts.size(), 3u);
  for (std::size_t w = 1; w < starts.size(); ++w) {
    ASSERT_EQ(starts[w].size(), ends[w - 1].size());
    for (std::size_t i = 0; i < starts[w].size(); ++i) EXPECT_TRUE((starts[w][i].array() == ends[w - 1][i].array()).all());
  }
  EXPECT_EQ(res.forecasts.size(), 33u);
  EXPECT_TRUE(leakage_violations(res.leakage).empty());
  EXPECT_GT(res.audits, 0);
  EXPECT_EQ(res.audit_max_grad, 0.0);
  for (const auto& row : res.kd_log) {
    if (!row.in_overlap) {
      EXPECT_EQ(row.contribution, 0.0);
    }
  }
}

TEST_F(TrainingFixture, WeeklyProtocolRejectsDataGap) {
  TrainConfig cfg;
  cfg.rounds = 1;
  ModelBundle b = bundle(cfg);
  const EpiWeek past_end = data_->wili.weeks.back().next();
  EXPECT_THROW(weekly_protocol(b, data_->wili, data_->exo, data_->graph, past_end, past_end), ValidationError);
}
