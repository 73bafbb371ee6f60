#include <cstdlib>

#include <gtest/gtest.h>

#include "prccf/app.hpp"
#include "prccf/config.hpp"
#include "prccf/errors.hpp"
#include "support.hpp"

using namespace prccf;
using namespace prccf::config;

// Published training setup, frozen here independently of the library table.
TEST(Config, FrozenPublishedConstants) {
  ResolvedConfig c;
  const std::vector<std::pair<std::string, double>> frozen = {
      {"model.max_encoder_length", 512}, {"model.max_decoder_length", 50}, {"training.lr", 1.5e-5},
      {"training.batch_size", 8},        {"training.eval_batch_size", 16}, {"training.epochs", 10},
      {"generation.top_k", 10},          {"generation.top_p", 0.9},        {"generation.repetition_penalty", 1.03},
      {"retriever.pairs", 5},            {"training.adam_beta1", 0.9},     {"training.adam_beta2", 0.999},
      {"split.validation", 0.1},         {"split.test", 0.1},              {"generation.max_new_tokens", 50}};
  for (const auto& [key, value] : frozen) {
    EXPECT_DOUBLE_EQ(c.value(key).get<double>(), value) << key;
    EXPECT_EQ(c.provenance(key), Provenance::kPublished) << key;
  }
  EXPECT_EQ(c.provenance("retriever.alpha"), Provenance::kRepoDefault);

  const auto cfg = ResolvedConfig().build();
  EXPECT_DOUBLE_EQ(cfg.training.lr, 1.5e-5);
  EXPECT_EQ(cfg.training.batch_size, 8);
  EXPECT_EQ(cfg.training.eval_batch_size, 16);
  EXPECT_EQ(cfg.generation.top_k, 10);
  EXPECT_DOUBLE_EQ(cfg.generation.top_p, 0.9);
  EXPECT_DOUBLE_EQ(cfg.generation.repetition_penalty, 1.03);
  EXPECT_EQ(cfg.retriever.pairs, 5);
  EXPECT_EQ(cfg.max_context_tokens, 512u);
  EXPECT_EQ(cfg.max_response_tokens, 50u);
}

TEST(Config, FileThenOverridesWithProvenance) {
  auto c = resolve(prccf::testing::fixture("config.json"), {"training.lr=0.01", "eval.split=validation"});
  EXPECT_EQ(c.provenance("seed"), Provenance::kFile);
  EXPECT_EQ(c.provenance("training.lr"), Provenance::kOverride);
  EXPECT_DOUBLE_EQ(c.value("training.lr").get<double>(), 0.01);
  EXPECT_EQ(c.value("eval.split").get<std::string>(), "validation");
  const auto cfg = c.build();
  EXPECT_EQ(cfg.seed, 7u);
  EXPECT_EQ(cfg.paths.corpus, prccf::testing::fixture("synthetic_dialogues.jsonl"));
  EXPECT_EQ(cfg.init_seed(), 8u);
  EXPECT_EQ(cfg.sampling_seed(), 10u);

  const auto dump = c.dump();
  EXPECT_NE(dump.find("training.lr = 0.01  # override (default: published)"), std::string::npos);
  EXPECT_NE(dump.find("generation.top_k = 10  # published"), std::string::npos);
  EXPECT_NE(dump.find("retriever.alpha = 0.7  # repo-default"), std::string::npos);
}

TEST(Config, EveryViolationIsListed) {
  auto c = resolve({}, {"training.lr=-1", "generation.top_p=2", "no.such.key=1", "model.heads=5"});
  try {
    c.build();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const char* key : {"training.lr", "generation.top_p", "no.such.key", "model.heads"})
      EXPECT_NE(msg.find(key), std::string::npos) << key << "\n" << msg;
  }
  EXPECT_THROW(resolve({}, {"ablation.use_pr=false"}).build(), ConfigError);
  EXPECT_THROW(resolve({}, {"training.epochs=\"ten\""}).build(), ConfigError);
}

TEST(Config, EnvironmentMovesArtifactRootOnly) {
  ::setenv("PRCCF_ARTIFACT_ROOT", "/tmp/prccf_env_root", 1);
  auto c = resolve({}, {});
  ::unsetenv("PRCCF_ARTIFACT_ROOT");
  EXPECT_EQ(c.build().paths.artifact_root, "/tmp/prccf_env_root");
}

TEST(Config, FingerprintIgnoresPathsOnly) {
  auto a = resolve({}, {"paths.artifact_root=/x"});
  auto b = resolve({}, {"paths.artifact_root=/y"});
  auto c = resolve({}, {"seed=1"});
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(Config, MissingArtifactNamesProducer) {
  auto root = prccf::testing::scratch_dir("missing");
  auto cfg = prccf::testing::fixture_config(root).build();
  std::ostringstream sink;
  try {
    app::cmd_index(cfg, sink);
    FAIL() << "expected MissingArtifact";
  } catch (const MissingArtifact& e) {
    EXPECT_EQ(e.producer(), "ingest");
    EXPECT_EQ(app::exit_code_for(e), 3);
  }
  EXPECT_EQ(app::exit_code_for(ConfigError("x")), 2);
  EXPECT_EQ(app::exit_code_for(NumericError("s", "x")), 4);
  EXPECT_EQ(app::exit_code_for(LoadError("x")), 1);
}
