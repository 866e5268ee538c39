#include <gtest/gtest.h>

#include <fstream>

#include "freqadapt/config.hpp"
#include "test_support.hpp"

using namespace freqadapt;

TEST(Config, GrammarSectionsCommentsAndOverrides) {
  AppConfig c;
  apply_config_text(c,
                    "# comment\n"
                    "; another\n"
                    "\n"
                    "[run]\n"
                    "  seed = 7  \n"
                    "lr=0.002\n"
                    "use_intensity = false\n"
                    "[ dymix ]\n"
                    "patience = 3\n"
                    "[data]\n"
                    "dims = 16x16x16\n"
                    "[run]\n"
                    "seed = 9\n");
  EXPECT_EQ(c.run.seed, 9u);
  EXPECT_EQ(c.run.adam.lr, 0.002);
  EXPECT_FALSE(c.run.use_intensity);
  EXPECT_EQ(c.run.dymix.patience, 3);
  EXPECT_EQ(c.data.dims, (Dims{16, 16, 16}));
  set_config_value(c, "target.gamma", "3.5");
  EXPECT_EQ(c.target.gamma, 3.5);
}

TEST(Config, ErrorsNameTheLineAndKey) {
  auto message = [](const std::string& text) {
    AppConfig c;
    try {
      apply_config_text(c, text, "f.cfg");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("[run]\nsed = 1\n").find("f.cfg:2: unknown config key 'run.sed'"), std::string::npos);
  EXPECT_NE(message("[run\n").find("malformed section"), std::string::npos);
  EXPECT_NE(message("[run]\nseed\n").find("expected key = value"), std::string::npos);
  EXPECT_NE(message("[run]\nlr = fast\n").find("run.lr"), std::string::npos);
  EXPECT_NE(message("[run]\nbatch_size = -2\n").find(">= 0"), std::string::npos);
  EXPECT_NE(message("[run]\nuse_intensity = maybe\n").find("use_intensity"), std::string::npos);
  EXPECT_NE(message("[model]\nprofile = huge\n").find("desk or paper"), std::string::npos);
  AppConfig c;
  EXPECT_THROW(set_config_value(c, "nope.key", "1"), ConfigError);
}

TEST(Config, TextRoundTripReproducesEveryKey) {
  AppConfig a;
  apply_config_text(a, "[run]\nseed=5\nlr=0.1\n[model]\nwidths=3,5\n[source]\ngamma=0.3\n[data]\nsplit_val=0.3\n");
  const std::string text = config_to_text(a);
  AppConfig b;
  apply_config_text(b, text);
  EXPECT_EQ(config_to_text(b), text);
  EXPECT_EQ(b.run.model.encoder.widths, (std::vector<std::size_t>{3, 5}));
  EXPECT_EQ(b.run.adam.lr, 0.1);
  EXPECT_EQ(b.source.gamma, 0.3);
  // Reals survive exactly.
  AppConfig c;
  set_config_value(c, "run.lambda_att", "0.1");
  AppConfig d;
  apply_config_text(d, config_to_text(c));
  EXPECT_EQ(d.run.lambda_att, 0.1);
}

TEST(Config, PaperProfileAndValidation) {
  AppConfig c;
  apply_config_text(c, "[model]\nrank = 3\nprofile = paper\n[data]\ndims=16x16x16\n");
  EXPECT_EQ(c.run.model.encoder.widths.size(), 10u);
  EXPECT_EQ(c.run.model.spatial_rank, 3u);
  EXPECT_NO_THROW(validate_config(c));
  c.data.dims = {32, 32};
  EXPECT_THROW(validate_config(c), ConfigError);
  AppConfig d;
  d.run.dymix.min_region = 0.12;
  EXPECT_THROW(validate_config(d), ConfigError);
  AppConfig e;
  e.target.gamma = -1;
  EXPECT_THROW(validate_config(e), ValueError);
}

TEST(Config, FileLoading) {
  testing_support::TempDir dir("config");
  { std::ofstream(dir / "a.cfg") << "[run]\nadapt_epochs = 3\n"; }
  AppConfig c;
  load_config_file(c, dir / "a.cfg");
  EXPECT_EQ(c.run.adapt_epochs, 3);
  EXPECT_THROW(load_config_file(c, dir / "missing.cfg"), IoError);
}
