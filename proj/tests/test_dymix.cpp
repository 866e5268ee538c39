#include <gtest/gtest.h>

#include "freqadapt/dymix.hpp"
#include "freqadapt/rng.hpp"
#include "scheduler_scripts.hpp"

using namespace freqadapt;

TEST(DyMix, DefaultsAndUnits) {
  DyMixScheduler d(DyMixConfig{});
  EXPECT_EQ(d.beta(), 1.0);
  EXPECT_EQ(d.best_score(), 0.0);
  EXPECT_EQ(d.num_bad_epochs(), 0);
  EXPECT_EQ(d.config().tau, 0.05);
  EXPECT_EQ(d.config().patience, 5);
  EXPECT_EQ(d.config().min_region, 0.1);
  DyMixScheduler e(DyMixConfig{0.1, 5, 0.1, 1.0, 0.5});
  EXPECT_EQ(e.beta_units(), 5);
  EXPECT_EQ(e.beta(), 0.5);
}

TEST(DyMix, InvalidConfigsNameTheBound) {
  auto msg = [](DyMixConfig c) {
    try {
      DyMixScheduler d(c);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(msg({0.05, 5, 0.6, 1.0, 0.5}).find("min_region"), std::string::npos);
  EXPECT_NE(msg({0.0, 5, 0.1, 1.0, 1.0}).find("tau"), std::string::npos);
  EXPECT_NE(msg({0.05, 0, 0.1, 1.0, 1.0}).find("patience"), std::string::npos);
  EXPECT_NE(msg({0.05, 5, 0.1, 1.2, 1.0}).find("max_region"), std::string::npos);
  EXPECT_NE(msg({0.05, 5, 0.12, 1.0, 1.0}).find("multiples of tau"), std::string::npos);
}

TEST(DyMix, ScriptedTrajectories) {
  const auto scripts = scheduler_scripts::all();
  ASSERT_EQ(scripts.size(), 10u);
  for (const auto& s : scripts) EXPECT_EQ(scheduler_scripts::replay(s), "") << s.name;
}

TEST(DyMix, ProtocolErrors) {
  DyMixScheduler d(DyMixConfig{0.05, 1, 0.1, 1.0, 1.0});
  EXPECT_THROW(d.resolve_probe(0.5, 0.5), ProtocolError);
  d.step(0.0);
  d.step(0.0);
  ASSERT_TRUE(d.probe_pending());
  EXPECT_THROW(d.step(0.5), ProtocolError);
  EXPECT_THROW(d.step(1.5), ValueError);
  EXPECT_THROW(d.step(-0.1), ValueError);
}

TEST(DyMix, StepLeavesBetaUnchanged) {
  DyMixScheduler d(DyMixConfig{0.05, 1, 0.1, 1.0, 0.5});
  for (double s : {0.2, 0.1, 0.1}) {
    d.step(s);
    EXPECT_EQ(d.beta_units(), 10);
  }
}

TEST(DyMix, RandomSequencesRespectInvariantsAndReplayExactly) {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    const int patience = 1 + static_cast<int>(rng.below(4));
    const DyMixConfig cfg{0.05, patience, 0.1, 1.0, 0.05 * static_cast<double>(2 + rng.below(19))};
    std::vector<double> scores, evals;
    for (int i = 0; i < 60; ++i) scores.push_back(std::round(rng.uniform() * 10) / 10);
    for (int i = 0; i < 120; ++i) evals.push_back(std::round(rng.uniform() * 4) / 4);

    auto run = [&](std::vector<std::int64_t>& betas) {
      DyMixScheduler d(cfg);
      std::size_t e = 0;
      double best = 0.0;
      int since_probe = patience + 1;
      for (double s : scores) {
        const auto dec = d.step(s);
        EXPECT_GE(d.best_score(), best);
        best = d.best_score();
        ++since_probe;
        if (std::holds_alternative<ProbeRequested>(dec)) {
          EXPECT_GE(since_probe, patience + 1);
          since_probe = 0;
          d.resolve_probe(evals[e], evals[e + 1]);
          e += 2;
        }
        EXPECT_LE(d.num_bad_epochs(), patience);
        EXPECT_GE(d.beta(), cfg.min_region);
        EXPECT_LE(d.beta(), cfg.max_region);
        betas.push_back(d.beta_units());
      }
    };
    std::vector<std::int64_t> a, b;
    run(a);
    run(b);
    EXPECT_EQ(a, b);
  }
}

TEST(DyMix, LongWalksAccumulateNoDrift) {
  // Forty alternating probes return beta to exactly its start.
  DyMixScheduler d(DyMixConfig{0.05, 1, 0.1, 1.0, 0.5});
  d.step(0.9);
  for (int i = 0; i < 40; ++i) {
    d.step(0.1);
    ASSERT_TRUE(std::holds_alternative<ProbeRequested>(d.step(0.1)));
    d.resolve_probe(i % 2 ? 0.0 : 1.0, 0.5);
  }
  EXPECT_EQ(d.beta(), 0.5);
}

TEST(DyMix, RestoredStateContinuesIdentically) {
  const DyMixConfig cfg{0.05, 2, 0.1, 1.0, 1.0};
  DyMixScheduler a(cfg);
  for (double s : {0.3, 0.2, 0.2}) a.step(s);
  DyMixScheduler b(cfg, a.state());
  EXPECT_EQ(a.state(), b.state());
  for (double s : {0.2, 0.1, 0.5, 0.4, 0.4, 0.4}) {
    const auto da = a.step(s);
    EXPECT_EQ(da, b.step(s));
    if (std::holds_alternative<ProbeRequested>(da)) {
      EXPECT_EQ(a.resolve_probe(0.6, 0.7), b.resolve_probe(0.6, 0.7));
    }
    EXPECT_EQ(a.state(), b.state());
  }
  EXPECT_EQ(a.beta_units(), 18);
  DyMixState bad = a.state();
  bad.beta_units = 40;
  EXPECT_THROW(DyMixScheduler(cfg, bad), ConfigError);
}
