#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mixrec/config.hpp"

using namespace mixrec;

TEST(RunConfig, DefaultsMatchLibraryDefaults) {
  const RunConfig c;
  const auto m = c.model();
  const auto t = c.train();
  EXPECT_EQ(m.dim, ModelConfig{}.dim);
  EXPECT_EQ(m.hyperedges, ModelConfig{}.hyperedges);
  EXPECT_EQ(m.layers, ModelConfig{}.layers);
  EXPECT_EQ(t.lambda1, TrainConfig{}.lambda1);
  EXPECT_EQ(t.lambda2, TrainConfig{}.lambda2);
  EXPECT_EQ(t.keep_prob, TrainConfig{}.keep_prob);
  EXPECT_EQ(t.batch_size, TrainConfig{}.batch_size);
  EXPECT_EQ(c.get_sizes("cutoffs"), (std::vector<std::size_t>{5, 10, 20}));
}

TEST(RunConfig, UnknownKeyIsRejected) {
  RunConfig c;
  EXPECT_THROW(c.set("learning_rate", "0.1"), ConfigError);
  EXPECT_THROW(c.get("nope"), ConfigError);
}

TEST(RunConfig, BadValuesAreRejected) {
  RunConfig c;
  EXPECT_THROW(c.set("dim", "-3"), ConfigError);
  EXPECT_THROW(c.set("dim", "3.5"), ConfigError);
  EXPECT_THROW(c.set("lr", "fast"), ConfigError);
  EXPECT_THROW(c.set("optimizer", "rmsprop"), ConfigError);
  EXPECT_THROW(c.set("ablate", "no_everything"), ConfigError);
  EXPECT_THROW(c.set("cutoffs", "10,0"), ConfigError);
}

TEST(RunConfig, HashIgnoresOrderAndSpelling) {
  RunConfig a, b;
  a.set("lambda1", "1e-3");
  a.set("ablate", "no_meta,no_intents");
  b.set("ablate", " no_intents , no_meta ");
  b.set("lambda1", "0.001");
  EXPECT_EQ(a.config_hash(), b.config_hash());
  b.set("dim", "64");
  EXPECT_NE(a.config_hash(), b.config_hash());
}

TEST(RunConfig, HashIgnoresRunPlumbing) {
  RunConfig a, b;
  b.set("threads", "8");
  b.set("out", "/tmp/somewhere");
  EXPECT_EQ(a.config_hash(), b.config_hash());
  b.set("epochs", "5");
  EXPECT_NE(a.config_hash(), b.config_hash());
  EXPECT_EQ(a.checkpoint_hash(), b.checkpoint_hash());
}

TEST(RunConfig, FileThenEnvThenOverride) {
  const auto path = std::filesystem::temp_directory_path() / "mixrec_config_test.cfg";
  {
    std::ofstream out(path);
    out << "# comment\n dim = 16\nlr=0.01  # trailing\n\nepochs=3\n";
  }
  RunConfig c;
  c.load_file(path);
  EXPECT_EQ(c.get_int("dim"), 16);
  EXPECT_EQ(c.get_real("lr"), 0.01);
  std::string e1 = "MIXREC_DIM=24", e2 = "PATH=/bin", e3 = "MIXREC_EPOCHS=7";
  char* env[] = {e1.data(), e2.data(), e3.data(), nullptr};
  c.apply_env(env);
  EXPECT_EQ(c.get_int("dim"), 24);
  c.set("epochs", "9");
  EXPECT_EQ(c.get_int("epochs"), 9);
  EXPECT_TRUE(c.is_set("lr"));
  EXPECT_FALSE(c.is_set("seed"));
  std::filesystem::remove(path);
}

TEST(RunConfig, FileErrorsCarryLineNumbers) {
  const auto path = std::filesystem::temp_directory_path() / "mixrec_config_bad.cfg";
  {
    std::ofstream out(path);
    out << "dim=8\nbogus=1\n";
  }
  RunConfig c;
  try {
    c.load_file(path);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  std::string bad_env = "MIXREC_NOT_A_KEY=1";
  char* env[] = {bad_env.data(), nullptr};
  EXPECT_THROW(c.apply_env(env), ConfigError);
  std::filesystem::remove(path);
}

TEST(RunConfig, TypedViews) {
  RunConfig c;
  c.set("ablate", "no_graph_cl");
  c.set("incidence", "softmax");
  c.set("optimizer", "sgd");
  c.set("synth_funnel", "1, 0.5");
  c.set("synth_behaviors", "2");
  const auto m = c.model();
  EXPECT_TRUE(m.ablation.no_graph_cl);
  EXPECT_FALSE(m.ablation.no_meta);
  EXPECT_EQ(m.incidence, IncidenceMode::RowSoftmax);
  EXPECT_EQ(c.train().optimizer, Optimizer::Sgd);
  EXPECT_EQ(c.synth().funnel_probs, (std::vector<double>{1.0, 0.5}));
  EXPECT_EQ(c.to_json().at("config_hash"), c.config_hash());
}
