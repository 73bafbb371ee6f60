#include <gtest/gtest.h>

#include "prccf/errors.hpp"
#include "prccf/model.hpp"
#include "support.hpp"

using namespace prccf;
using namespace prccf::model;
namespace oracle = prccf::testing::oracle;

namespace {

corpus::Utterance utt(corpus::Speaker sp, std::string text) {
  corpus::Utterance u;
  u.speaker = sp;
  u.text = std::move(text);
  if (sp == corpus::Speaker::kSupporter) u.strategy = corpus::StrategyLabel{2, "Reflection of feelings"};
  return u;
}

text::Vocabulary small_vocab() {
  std::vector<std::string> texts = {"a b c d e f g h"};
  return text::Vocabulary::build(texts, 100);
}

double mean_loss(const PrccfModel& m, std::span<const PreparedSample> samples) {
  double total = 0;
  for (const auto& s : samples) total += m.forward(s).loss.item();
  return total / static_cast<double>(samples.size());
}

// One fixture with two training samples, shared by the gradient tests.
class TwoSampleFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new prccf::testing::FixtureSamples(
        prccf::testing::fixture_samples(prccf::testing::scratch_dir("model_fd"), "train", 2));
  }
  static void TearDownTestSuite() {
    delete data_;
    data_ = nullptr;
  }
  static BackboneConfig small() {
    BackboneConfig b;
    b.hidden = 16;
    b.heads = 2;
    b.encoder_layers = 1;
    b.decoder_layers = 1;
    return b;
  }
  static prccf::testing::FixtureSamples* data_;
};
prccf::testing::FixtureSamples* TwoSampleFixture::data_ = nullptr;

}  // namespace

TEST(Model, TokenizeContextLayout) {
  const auto vocab = small_vocab();
  std::vector<corpus::Utterance> ctx = {utt(corpus::Speaker::kSeeker, "a b c"),
                                        utt(corpus::Speaker::kSupporter, "d e f")};
  auto t = tokenize_context(ctx, 0, vocab);
  const std::vector<int> want = {text::special::kSeeker, vocab.id("a"), vocab.id("b"), vocab.id("c"),
                                 text::special::kSupporter, text::strategy_token(2), vocab.id("d"), vocab.id("e"),
                                 vocab.id("f")};
  EXPECT_EQ(t.ids, want);
  EXPECT_EQ(t.layout, (cognition::TokenLayout{0, 0, 0, 0, 1, 1, 1, 1, 1}));
  EXPECT_EQ(t.layout.size(), t.ids.size());
}

TEST(Model, TokenizeContextDropsOldestWhole) {
  const auto vocab = small_vocab();
  std::vector<corpus::Utterance> ctx = {utt(corpus::Speaker::kSeeker, "a b c"), utt(corpus::Speaker::kSeeker, "d e"),
                                        utt(corpus::Speaker::kSeeker, "f g h")};
  auto t = tokenize_context(ctx, 2, vocab, 7);
  EXPECT_EQ(t.dropped_utterances, 1u);
  EXPECT_EQ(t.ids.size(), 7u);
  EXPECT_EQ(t.ids.front(), text::special::kSeeker);
  // Layout keeps the original utterance indices.
  EXPECT_EQ(t.current_index, 2);
  EXPECT_EQ(t.layout.front(), 1);
  EXPECT_EQ(t.layout.back(), 2);

  auto tail = tokenize_context(ctx, 2, vocab, 3);
  EXPECT_EQ(tail.ids, (std::vector<int>{text::special::kSeeker, vocab.id("g"), vocab.id("h")}));

  EXPECT_THROW(tokenize_context({}, 0, vocab), ContractViolation);
}

TEST(Model, ApplyAblation) {
  PipelineConfig cfg;
  auto p = apply_ablation(fusion::AblationFlags::without_persona_sim(), cfg);
  EXPECT_EQ(p.retriever.beta, 0.0);
  EXPECT_EQ(p.retriever.alpha, cfg.retriever.alpha);
  EXPECT_EQ(p.knowledge_k, cfg.knowledge_k);
  EXPECT_THROW(apply_ablation({false, true, true, true, true}, cfg), ContractViolation);
}

TEST(Model, PreparedSampleFollowsFlags) {
  auto root = prccf::testing::scratch_dir("model_flags");
  auto full = prccf::testing::fixture_samples(root, "validation", 3);
  for (const auto& s : full.samples) {
    EXPECT_FALSE(s.demonstrations.empty());
    EXPECT_EQ(s.knowledge_ids.size(), 4u);
    EXPECT_EQ(s.mask.size(), static_cast<Eigen::Index>(s.context.ids.size()));
    EXPECT_EQ(s.target_ids.front(), text::strategy_token(s.gold_strategy));
    EXPECT_EQ(s.target_ids.back(), text::special::kEos);
    EXPECT_LE(s.target_ids.size(), 50u);
  }
  auto no_causal = prccf::testing::fixture_samples(root, "validation", 3, fusion::AblationFlags::without_causal());
  for (const auto& s : no_causal.samples) EXPECT_TRUE((s.mask.matrix.array() == 1).all());
  auto no_pr = prccf::testing::fixture_samples(root, "validation", 3, fusion::AblationFlags::without_pr());
  for (const auto& s : no_pr.samples) {
    EXPECT_TRUE(s.demonstrations.empty());
    EXPECT_FALSE(s.prompt.has_value());
  }
}

TEST_F(TwoSampleFixture, GradientReachesFusionAndRefinement) {
  PrccfModel m(small(), 3);
  nn::Adam opt(m.parameters());
  std::vector<const PreparedSample*> batch;
  for (const auto& s : data_->samples) batch.push_back(&s);
  auto r = train_step(m, batch, opt, 1e-3);
  EXPECT_TRUE(std::isfinite(r.loss));
  const auto& w = m.fusion_layer().weights();
  ASSERT_TRUE(w.has_grad());
  for (int i = 0; i < 5; ++i) EXPECT_NE(w.grad()(0, i), 0.0) << "w" << i;
  int refinement = 0;
  for (const auto& p : m.parameters().all()) {
    if (p.stage != "refinement") continue;
    ++refinement;
    ASSERT_TRUE(p.tensor.has_grad()) << p.name;
    EXPECT_GT(p.tensor.grad().cwiseAbs().sum(), 0.0) << p.name;
  }
  EXPECT_GT(refinement, 0);
  EXPECT_GT(r.delta.at("refinement"), 0.0);
}

TEST_F(TwoSampleFixture, FusionWeightGradientMatchesFiniteDifferences) {
  PrccfModel m(small(), 4);
  nn::Rng rng(4);
  auto& w = m.fusion_layer().weights();
  for (int i = 0; i < 5; ++i) w.mutable_value()(0, i) = rng.normal(0, 0.5);
  m.parameters().zero_grad();
  for (const auto& s : data_->samples) nn::scale(m.forward(s).loss, 0.5).backward();
  const nn::Matrix analytic = w.grad();
  nn::NoGradGuard guard;
  for (int i = 0; i < 5; ++i) {
    const double w0 = w.value()(0, i);
    auto f = [&](double v) {
      w.mutable_value()(0, i) = v;
      const double l = mean_loss(m, data_->samples);
      w.mutable_value()(0, i) = w0;
      return l;
    };
    const double numeric = oracle::central_difference(f, w0, 1e-5);
    EXPECT_LT(oracle::relative_error(analytic(0, i), numeric), 1e-3) << "w" << i << " " << analytic(0, i) << " vs "
                                                                     << numeric;
  }
}

TEST_F(TwoSampleFixture, GateInputGradientMatchesFiniteDifferences) {
  PrccfModel m(small(), 5);
  for (const auto& s : data_->samples) {
    const nn::Matrix h = m.gate_input(s);
    auto p = nn::Tensor::parameter(h);
    m.loss_from_gate_input(s, p).backward();
    const nn::Matrix analytic = p.grad();
    EXPECT_NEAR(m.loss_from_gate_input(s, nn::Tensor(h)).item(), m.forward(s).loss.item(), 1e-9);
    nn::NoGradGuard guard;
    const nn::Index stride = std::max<nn::Index>(1, h.size() / 25);
    for (nn::Index i = 0; i < h.size(); i += stride) {
      auto f = [&](double v) {
        nn::Matrix x = h;
        x.data()[i] = v;
        return m.loss_from_gate_input(s, nn::Tensor(x)).item();
      };
      const double numeric = oracle::central_difference(f, h.data()[i], 1e-5);
      EXPECT_LT(oracle::relative_error(analytic.data()[i], numeric), 1e-3) << i;
    }
  }
}

TEST_F(TwoSampleFixture, GenerationIsSeededAndBounded) {
  PrccfModel m(small(), 6);
  const auto& s = data_->samples.front();
  const auto reg = corpus::StrategyRegistry::esconv_default();
  fusion::GenerationConfig cfg;
  cfg.max_new_tokens = 12;
  cfg.top_k = 50;
  cfg.top_p = 1.0;
  auto a = m.generate(s, cfg, data_->vocab(), reg);
  auto b = m.generate(s, cfg, data_->vocab(), reg);
  EXPECT_EQ(a.text, b.text);
  EXPECT_LE(a.token_ids.size(), 12u);
  EXPECT_EQ(a.ranked_strategies.size(), 8u);
  EXPECT_NEAR(std::accumulate(a.strategy_probs.begin(), a.strategy_probs.end(), 0.0), 1.0, 1e-9);
  EXPECT_EQ(a.strategy.id, a.ranked_strategies.front());

  fusion::GenerationConfig greedy;
  greedy.top_k = 1;
  greedy.top_p = 1.0;
  greedy.seed = 1;
  auto g1 = m.generate(s, greedy, data_->vocab(), reg);
  greedy.seed = 999;
  auto g2 = m.generate(s, greedy, data_->vocab(), reg);
  EXPECT_EQ(g1.token_ids, g2.token_ids);
  EXPECT_LE(g1.token_ids.size(), 50u);
}

TEST_F(TwoSampleFixture, SameSeedSameParameters) {
  PrccfModel a(small(), 7), b(small(), 7);
  EXPECT_EQ(a.forward(data_->samples[0]).loss.item(), b.forward(data_->samples[0]).loss.item());
  EXPECT_EQ(a.fusion_layer().lambda(fusion::AblationFlags::full()).value()(0, 0), 0.2);
}

TEST_F(TwoSampleFixture, CheckpointRoundTrip) {
  PrccfModel m(small(), 8);
  auto dir = prccf::testing::scratch_dir("ckpt");
  CheckpointInfo info;
  info.backbone = small();
  info.registry_hash = data_->ws->registry().hash();
  m.fusion_layer().weights().mutable_value()(0, 2) = 0.75;
  save_checkpoint(dir, m, data_->vocab(), info);
  auto loaded = load_checkpoint(dir, data_->ws->registry());
  EXPECT_EQ(loaded.model->forward(data_->samples[0]).loss.item(), m.forward(data_->samples[0]).loss.item());
  EXPECT_EQ(loaded.vocab.fingerprint(), data_->vocab().fingerprint());

  corpus::StrategyRegistry other({"a", "b", "c", "d", "e", "f", "g", "Others"});
  EXPECT_ANY_THROW(load_checkpoint(dir, other));
}

TEST(Model, TrainLogLineRoundTrip) {
  TrainLogRecord r{3, 1, 2.5, 12.0, 1e-3, {{"refinement", 1e-5}, {"fusion", 2e-4}}};
  auto back = parse_log_line(to_json_line(r));
  EXPECT_EQ(back.step, 3);
  EXPECT_EQ(back.epoch, 1);
  EXPECT_DOUBLE_EQ(back.loss, 2.5);
  EXPECT_DOUBLE_EQ(back.delta.at("refinement"), 1e-5);
}

TEST(Model, EmptyBatchIsRejected) {
  BackboneConfig b;
  b.hidden = 8;
  b.heads = 2;
  PrccfModel m(b, 1);
  nn::Adam opt(m.parameters());
  std::vector<const PreparedSample*> none;
  EXPECT_THROW(train_step(m, none, opt, 1e-3), ContractViolation);
}
