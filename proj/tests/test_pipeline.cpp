#include <gtest/gtest.h>

#include <fstream>
#include <regex>

#include "freqadapt/pipeline.hpp"
#include "test_support.hpp"

using namespace freqadapt;
using testing_support::TempDir;

namespace {

std::string file_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RunConfig tiny_config() {
  RunConfig c = RunConfig::desk();
  c.model.encoder.widths = {4, 4, 6, 6};
  c.model.head_hidden = {8, 6};
  c.model.attention_kernel = 3;
  c.warmup_epochs = 1;
  c.pretrain_epochs = 2;
  c.adapt_epochs = 6;
  c.dymix.patience = 1;
  c.eval_batch = 5;
  return c;
}

// Small source/target pair shared by every test in this file.
class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("pipeline");
    GenerateOptions o;
    o.n_per_class = 8;
    o.dims = {16, 16};
    o.seed = 2;
    generate_dataset(DomainSpec::source_default(), ClassSpec{}, o, dir_->path() / "source");
    generate_dataset(DomainSpec::target_default(), ClassSpec{}, o, dir_->path() / "target");
    source_ = new Dataset(load_dataset(dir_->path() / "source"));
    target_ = new Dataset(load_dataset(dir_->path() / "target"));
    pretrained_ = new nn::Model(pretrain_stage(tiny_config(), *source_).model);
  }
  static void TearDownTestSuite() {
    delete pretrained_;
    delete source_;
    delete target_;
    delete dir_;
  }
  static TempDir* dir_;
  static Dataset* source_;
  static Dataset* target_;
  static nn::Model* pretrained_;
};
TempDir* PipelineTest::dir_ = nullptr;
Dataset* PipelineTest::source_ = nullptr;
Dataset* PipelineTest::target_ = nullptr;
nn::Model* PipelineTest::pretrained_ = nullptr;

}  // namespace

TEST(RunConfigTest, ValidationAndMethodNames) {
  RunConfig c = RunConfig::desk();
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig::desk();
  c.lambda_att = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig::desk();
  c.dymix.tau = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  for (const auto& n : method_names()) EXPECT_EQ(to_string(parse_method(n)), n);
  EXPECT_THROW(parse_method("dymixx"), ConfigError);
  EXPECT_THROW(parse_baseline("oracle"), ConfigError);
}

TEST(Batching, CoversEveryIndexAndFoldsSingletons) {
  Rng rng(1);
  for (std::size_t n : {2u, 5u, 9u, 16u}) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const auto b = detail::make_batches(idx, 4, rng);
    std::vector<std::size_t> seen;
    for (const auto& x : b) {
      EXPECT_GE(x.size(), 2u);
      seen.insert(seen.end(), x.begin(), x.end());
    }
    std::sort(seen.begin(), seen.end());
    EXPECT_EQ(seen, idx);
  }
}

TEST(MixPair, EveryMethodKeepsShapeAndDegenerateCasesHold) {
  const Volume xs = testing_support::random_volume({8, 8}, 1, 0, 1), xt = testing_support::random_volume({8, 8}, 2, 0, 1);
  const RunConfig cfg = RunConfig::desk();
  Rng rng(3);
  for (const auto& n : method_names()) EXPECT_EQ(mix_pair(parse_method(n), xs, xt, 0.5, 0.3, cfg, rng).dims(), xs.dims());
  EXPECT_LE(testing_support::max_abs_diff(mix_pair(Method::dymix, xs, xt, 0.5, 1.0, cfg, rng), xt), 1e-9);
  EXPECT_EQ(mix_pair(Method::mixup, xs, xt, 0.5, 0.0, cfg, rng), xs);
}

TEST(Guard, LockedLabelsThrowAndCount) {
  Dataset d;
  d.manifest.entries = {{"a", 1, Domain::target, Split::train}};
  d.volumes = {Volume::zeros({2, 2})};
  GuardedDataset open(d, false), locked(d, true);
  EXPECT_EQ(open.label(0), 1);
  EXPECT_THROW(locked.label(0), LabelAccessError);
  EXPECT_EQ(locked.denied_reads(), 1u);
  EXPECT_EQ(locked.volume(0), d.volumes[0]);
}

TEST_F(PipelineTest, ZeroEpochPretrainWritesHeaderOnly) {
  TempDir out("zero_epoch");
  RunConfig c = tiny_config();
  c.warmup_epochs = 0;
  c.pretrain_epochs = 0;
  const auto r = pretrain_stage(c, *source_, StageIo{out / "m.tsv", {}, false, -1});
  EXPECT_EQ(r.epochs_completed, 0);
  EXPECT_EQ(file_text(out / "m.tsv"), "# stage=pretrain seed=1\n");
}

TEST_F(PipelineTest, PretrainMetricStreamIsDeterministic) {
  TempDir out("pre_det");
  const auto a = pretrain_stage(tiny_config(), *source_, StageIo{out / "a.tsv", {}, false, -1});
  const auto b = pretrain_stage(tiny_config(), *source_, StageIo{out / "b.tsv", {}, false, -1});
  EXPECT_EQ(file_text(out / "a.tsv"), file_text(out / "b.tsv"));
  EXPECT_EQ(nn::Model(a.model).checksum(), nn::Model(b.model).checksum());
  const std::string text = file_text(out / "a.tsv");
  EXPECT_NE(text.find("event=warmup"), std::string::npos);
  EXPECT_NE(text.find("event=adversarial"), std::string::npos);
  EXPECT_NE(text.find("l_int="), std::string::npos);
}

TEST_F(PipelineTest, AdaptResumeReproducesTheMetricStream) {
  TempDir out("resume");
  const RunConfig c = tiny_config();
  const GuardedDataset tgt(*target_, true);
  const auto full = adapt_stage(c, *source_, tgt, *pretrained_, Method::dymix, StageIo{out / "full.tsv", {}, false, -1});

  StageIo first{out / "part.tsv", out / "ck", false, 3};
  const auto part = adapt_stage(c, *source_, tgt, *pretrained_, Method::dymix, first);
  EXPECT_TRUE(part.interrupted);
  EXPECT_EQ(part.epochs_completed, 3);
  StageIo rest{out / "part.tsv", out / "ck", true, -1};
  auto resumed = adapt_stage(c, *source_, tgt, *pretrained_, Method::dymix, rest);
  EXPECT_EQ(resumed.epochs_completed, 6);
  EXPECT_EQ(file_text(out / "full.tsv"), file_text(out / "part.tsv"));
  EXPECT_EQ(nn::Model(full.model).checksum(), resumed.model.checksum());
  EXPECT_EQ(tgt.denied_reads(), 0u);
}

TEST_F(PipelineTest, PretrainResumeReproducesTheMetricStream) {
  TempDir out("pre_resume");
  const RunConfig c = tiny_config();
  pretrain_stage(c, *source_, StageIo{out / "full.tsv", {}, false, -1});
  pretrain_stage(c, *source_, StageIo{out / "part.tsv", out / "ck", false, 1});
  pretrain_stage(c, *source_, StageIo{out / "part.tsv", out / "ck", true, -1});
  EXPECT_EQ(file_text(out / "full.tsv"), file_text(out / "part.tsv"));
}

TEST_F(PipelineTest, ProbesLeaveTheModelUntouchedAndReplayThroughTheScheduler) {
  TempDir out("probes");
  RunConfig c = tiny_config();
  c.adapt_epochs = 10;
  ProbeAudit audit;
  const GuardedDataset tgt(*target_, true);
  const auto r = adapt_stage(c, *source_, tgt, *pretrained_, Method::dymix, StageIo{out / "m.tsv", {}, false, -1}, &audit);
  EXPECT_GT(audit.probes, 0u);
  EXPECT_EQ(audit.checksum_mismatches, 0u);

  // Feed the logged scores and probe outcomes back into a fresh scheduler;
  // it must reproduce every logged beta.
  DyMixScheduler sched(c.dymix);
  const std::regex probe_re(R"(probe\(plus=([^:]+):([^,]+),minus=([^:]+):([^)]+)\)->(.+))");
  ASSERT_EQ(r.records.size(), 10u);
  for (const auto& rec : r.records) {
    ASSERT_TRUE(rec.beta);
    EXPECT_EQ(*rec.beta, sched.beta()) << rec.str();
    const auto d = sched.step(rec.val_auc);
    std::smatch m;
    const bool logged_probe = std::regex_match(rec.event, m, probe_re);
    ASSERT_EQ(logged_probe, std::holds_alternative<ProbeRequested>(d)) << rec.str();
    if (logged_probe) sched.resolve_probe(std::stod(m[2]), std::stod(m[4]));
  }
}

TEST_F(PipelineTest, BaselinesUseFixedRegionAndNeverReadTargetLabels) {
  RunConfig c = tiny_config();
  c.adapt_epochs = 2;
  for (Method m : {Method::mixup, Method::cutout, Method::cutmix, Method::apr, Method::fda}) {
    const GuardedDataset tgt(*target_, true);
    const auto r = adapt_stage(c, *source_, tgt, *pretrained_, m);
    for (const auto& rec : r.records) {
      EXPECT_EQ(rec.event, "fixed");
      EXPECT_EQ(*rec.beta, 1.0);
    }
    EXPECT_EQ(tgt.denied_reads(), 0u);
  }
  EXPECT_THROW(run_baseline(c, Baseline::mixup, *source_, *target_, nullptr), ConfigError);
}

TEST_F(PipelineTest, EvaluateModelMatchesManualForwardPass) {
  nn::Model m = *pretrained_;
  const auto idx = target_->indices(Split::test);
  const auto report = evaluate_model(m, *target_, Split::test, EncoderChoice::source);
  std::vector<const Volume*> vols;
  std::vector<int> labels;
  for (auto i : idx) {
    vols.push_back(&target_->volumes[i]);
    labels.push_back(target_->manifest.entries[i].label);
  }
  EXPECT_EQ(report.auc, auc(predict_scores(m, EncoderChoice::source, vols), labels));
  for (std::size_t k = 0; k < 3; ++k) {
    nn::FeatureCache fc;
    nn::HeadCache hc;
    const nn::ForwardContext ctx{};
    const nn::Tensor p = nn::pooled_features(m.enc_src, m.attention, nn::stack_volumes({vols[k]}), ctx, fc);
    const double manual = nn::positive_probability(m.classifier.forward(p, ctx, hc))[0];
    EXPECT_NEAR(predict_scores(m, EncoderChoice::source, vols)[k], manual, 1e-12);
  }
}

TEST_F(PipelineTest, EmptyOrSingleClassSplitsAreRejected) {
  Dataset d = *source_;
  for (auto& e : d.manifest.entries)
    if (e.split == Split::test) e.split = Split::val;
  nn::Model m = *pretrained_;
  EXPECT_THROW(evaluate_model(m, d, Split::test, EncoderChoice::source), ValueError);
  for (auto& e : d.manifest.entries)
    if (e.split == Split::val && e.label == 1) e.split = Split::train;
  EXPECT_THROW(pretrain_stage(tiny_config(), d), ValueError);
}

TEST_F(PipelineTest, ModelCheckpointRoundTrip) {
  TempDir out("model_ck");
  nn::Model m = *pretrained_;
  nn::save_checkpoint(model_checkpoint(m, "pretrain"), out / "p.fqck");
  nn::Model back = model_from_checkpoint(nn::load_checkpoint(out / "p.fqck"));
  EXPECT_EQ(back.checksum(), m.checksum());
  EXPECT_EQ(back.config.encoder.widths, m.config.encoder.widths);
  EXPECT_EQ(back.config.dropout, m.config.dropout);
}
