#include <random>

#include <gtest/gtest.h>

#include "prccf/errors.hpp"
#include "prccf/evalkit.hpp"
#include "support.hpp"

using namespace prccf;
using namespace prccf::evalkit;
namespace oracle = prccf::testing::oracle;

namespace {

using Strings = std::vector<std::string>;

model::PreparedSample sample_with_response(std::size_t response_tokens) {
  model::PreparedSample s;
  s.target_ids.assign(response_tokens + 1, 20);
  s.target_ids.front() = text::strategy_token(0);
  return s;
}

class PerfectScorer : public TokenScorer {
 public:
  std::vector<double> response_token_nll(const model::PreparedSample& s) const override {
    return std::vector<double>(s.target_ids.size() - 1, 0.0);
  }
};

MetricReport report_with(double acc, double ppl, double b1) {
  MetricReport r;
  r.acc = acc;
  r.ppl = ppl;
  r.bleu = {b1, 1, 1, 1};
  r.distinct = {5, 5};
  r.rouge_l = 10;
  r.f1 = 10;
  return r;
}

}  // namespace

TEST(Evalkit, BleuOracles) {
  Strings same = {"the cat sat", "a dog ran home"};
  for (int n = 1; n <= 4; ++n) EXPECT_NEAR(bleu_n(Strings{"a b c d e"}, Strings{"a b c d e"}, n), 100.0, 1e-9);
  EXPECT_NEAR(bleu_n(same, same, 2), 100.0, 1e-9);
  EXPECT_EQ(bleu_n(Strings{"x y z"}, Strings{"a b c"}, 1), 0.0);
  // BP = exp(1 - 4/3), unigram precision 3/3.
  EXPECT_NEAR(bleu_n(Strings{"the cat sat"}, Strings{"the cat sat down"}, 1), 100.0 * std::exp(1.0 - 4.0 / 3.0), 1e-9);
  EXPECT_NEAR(bleu_n(Strings{"the cat sat"}, Strings{"the cat sat down"}, 1), 71.65, 0.01);
  EXPECT_THROW(bleu_n(Strings{"a"}, Strings{}, 1), ContractViolation);
  EXPECT_THROW(bleu_n(Strings{"a"}, Strings{"a"}, 5), ContractViolation);
}

TEST(Evalkit, BleuClipsRepeatedWords) {
  // "the the the" vs "the cat": clipped unigram precision 1/3, BP = 1.
  EXPECT_NEAR(bleu_n(Strings{"the the the"}, Strings{"the cat"}, 1), 100.0 / 3.0, 1e-9);
}

TEST(Evalkit, DistinctOracles) {
  EXPECT_NEAR(distinct_n(Strings{"a a a"}, 1), 33.33, 0.01);
  EXPECT_NEAR(distinct_n(Strings{"a b c"}, 1), 100.0, 1e-9);
  EXPECT_THROW(distinct_n(Strings{}, 1), ContractViolation);

  std::mt19937 rng(5);
  Strings hyps;
  for (int i = 0; i < 50; ++i) {
    std::string s;
    const int len = 1 + static_cast<int>(rng() % 8);
    for (int j = 0; j < len; ++j) s += (j ? " w" : "w") + std::to_string(rng() % 12);
    hyps.push_back(s);
  }
  for (int n = 1; n <= 2; ++n) {
    const double d = distinct_n(hyps, n);
    EXPECT_NEAR(d, oracle::distinct(hyps, n), 1e-9);
    EXPECT_LE(d, 100.0);
  }
}

TEST(Evalkit, RougeOracles) {
  EXPECT_NEAR(rouge_l(Strings{"a b c"}, Strings{"a b c"}), 100.0, 1e-9);
  EXPECT_EQ(rouge_l(Strings{"a b"}, Strings{"c d"}), 0.0);
  const double p = 3.0 / 4, r = 1.0;
  EXPECT_NEAR(rouge_l(Strings{"a b c d"}, Strings{"a c d"}), 100 * 2 * p * r / (p + r), 1e-9);
  EXPECT_NEAR(rouge_l(Strings{"a b c d"}, Strings{"a c d"}), 85.71, 0.01);
  EXPECT_THROW(rouge_l(Strings{"a"}, Strings{}), ContractViolation);
  const Strings x = {"a", "b", "c", "d"}, y = {"a", "c", "d"};
  EXPECT_EQ(lcs_length(x, y), 3u);
}

TEST(Evalkit, TokenF1) {
  // overlap {a, b} = 2; P = 2/3, R = 2/2.
  EXPECT_NEAR(token_f1(Strings{"a b c"}, Strings{"b a"}), 100 * 2 * (2.0 / 3) / (2.0 / 3 + 1), 1e-9);
}

TEST(Evalkit, PerplexityOracles) {
  std::vector<model::PreparedSample> samples = {sample_with_response(5), sample_with_response(9)};
  auto uniform = perplexity(UniformScorer(200), samples);
  EXPECT_NEAR(uniform.ppl, 200.0, 0.5);
  EXPECT_EQ(uniform.token_count, 14u);
  EXPECT_NEAR(perplexity(PerfectScorer(), samples).ppl, 1.0, 1e-12);

  // Log replay: exp of the mean of every logged value.
  double sum = 0;
  std::size_t n = 0;
  for (const auto& row : uniform.token_nll)
    for (double v : row) {
      sum += v;
      ++n;
    }
  EXPECT_NEAR(perplexity_from_log(uniform.token_nll), std::exp(sum / static_cast<double>(n)), 1e-9);
}

TEST(Evalkit, StrategyAccuracy) {
  std::vector<std::vector<int>> rank2;
  std::vector<int> golds;
  for (int g = 0; g < 8; ++g) {
    std::vector<int> r = {(g + 1) % 8, g};
    for (int k = 0; k < 8; ++k)
      if (k != g && k != (g + 1) % 8) r.push_back(k);
    rank2.push_back(r);
    golds.push_back(g);
  }
  EXPECT_EQ(strategy_accuracy(rank2, golds, 1), 0.0);
  EXPECT_EQ(strategy_accuracy(rank2, golds, 2), 100.0);
  EXPECT_EQ(strategy_accuracy(rank2, golds, 8), 100.0);

  std::mt19937 rng(3);
  std::vector<std::vector<int>> rankings;
  std::vector<int> gs;
  for (int i = 0; i < 40; ++i) {
    std::vector<int> r(8);
    std::iota(r.begin(), r.end(), 0);
    std::shuffle(r.begin(), r.end(), rng);
    rankings.push_back(r);
    gs.push_back(static_cast<int>(rng() % 8));
  }
  double prev = 0;
  for (int n = 1; n <= 8; ++n) {
    int hits = 0;
    for (std::size_t i = 0; i < rankings.size(); ++i)
      for (int k = 0; k < n; ++k) hits += rankings[i][static_cast<std::size_t>(k)] == gs[i];
    const double acc = strategy_accuracy(rankings, gs, n);
    EXPECT_NEAR(acc, 100.0 * hits / 40.0, 1e-9);
    EXPECT_GE(acc, prev);
    prev = acc;
  }
  std::vector<std::vector<int>> bad = {{0, 0, 1, 2, 3, 4, 5, 6}};
  std::vector<int> one = {0};
  EXPECT_THROW(strategy_accuracy(bad, one, 1), ContractViolation);
}

TEST(Evalkit, StageIntervals) {
  EXPECT_EQ(stage_interval(1, 6), 1);
  EXPECT_EQ(stage_interval(3, 6), 3);
  EXPECT_EQ(stage_interval(5, 6), 5);
  EXPECT_EQ(stage_interval(6, 6), 5);
  EXPECT_EQ(stage_interval(0, 10), 0);
}

TEST(Evalkit, StageDistributionMatchesBinning) {
  const auto reg = corpus::StrategyRegistry::esconv_default();
  auto recs = corpus::load_corpus(prccf::testing::fixture("synthetic_dialogues.jsonl"), corpus::CorpusFormat::kCanonical,
                                  reg)
                  .records;
  std::array<std::array<double, 8>, 6> counts{};
  for (const auto& d : recs) {
    const auto n = d.utterances.size();
    for (std::size_t p = 0; p < n; ++p) {
      if (d.utterances[p].speaker != corpus::Speaker::kSupporter) continue;
      const auto bin = std::min<std::size_t>(5, 6 * p / n);
      counts[bin][static_cast<std::size_t>(d.utterances[p].strategy->id)] += 1;
    }
  }
  auto dist = stage_distribution(recs);
  for (std::size_t b = 0; b < 6; ++b) {
    double total = 0;
    for (double c : counts[b]) total += c;
    double sum = 0;
    for (std::size_t s = 0; s < 8; ++s) {
      EXPECT_NEAR(dist.frequency[b][s], total > 0 ? counts[b][s] / total : 0.0, 1e-12);
      sum += dist.frequency[b][s];
    }
    if (total > 0) {
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
  EXPECT_FALSE(format_stage_distribution(dist, reg).empty());
}

TEST(Evalkit, SweepNormalisation) {
  std::vector<int> pairs = {1, 3, 5};
  std::vector<MetricReport> reports = {report_with(10, 20, 4), report_with(30, 10, 2), report_with(20, 15, 3)};
  auto rep = build_sweep_report(pairs, reports);
  const auto names = sweep_metric_names();
  const auto col = [&](const std::string& n) {
    return static_cast<std::size_t>(std::find(names.begin(), names.end(), n) - names.begin());
  };
  EXPECT_EQ(rep.normalized[0][col("ACC")], 0.0);
  EXPECT_EQ(rep.normalized[1][col("ACC")], 1.0);
  EXPECT_EQ(rep.normalized[1][col("PPL^-1")], 1.0);  // lowest PPL
  EXPECT_EQ(rep.normalized[0][col("PPL^-1")], 0.0);
  EXPECT_EQ(rep.normalized[0][col("B-2")], 0.5);  // constant column
  for (const auto& row : rep.normalized)
    for (double v : row) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  EXPECT_EQ(rep.best, 1u);
  EXPECT_THROW(build_sweep_report(std::vector<int>{5}, std::vector<MetricReport>{reports[0]}), ContractViolation);

  auto same = build_sweep_report(std::vector<int>{1, 2}, std::vector<MetricReport>{reports[0], reports[0]});
  for (const auto& row : same.normalized)
    for (double v : row) EXPECT_EQ(v, 0.5);

  int calls = 0;
  auto swept = pairs_sweep(pairs, [&](int p) {
    ++calls;
    return reports[static_cast<std::size_t>(p / 2)];
  });
  EXPECT_EQ(calls, 3);
  EXPECT_EQ(swept.best, 1u);
  EXPECT_FALSE(format_sweep_report(swept).empty());
}

TEST(Evalkit, UpdateDynamicsAggregation) {
  std::vector<model::TrainLogRecord> log = {
      {1, 1, 0, 0, 0, {{"refinement", 4.0}}}, {2, 1, 0, 0, 0, {{"refinement", 2.0}}},
      {3, 2, 0, 0, 0, {{"refinement", 1.0}}}, {4, 2, 0, 0, 0, {{"refinement", 0.0}}},
      {5, 3, 0, 0, 0, {{"refinement", 0.0}}}};
  auto d = update_dynamics(log);
  ASSERT_EQ(d.series.size(), 3u);
  EXPECT_DOUBLE_EQ(d.series[0].mean_delta, 3.0);
  EXPECT_DOUBLE_EQ(d.series[1].mean_delta, 0.5);
  EXPECT_EQ(d.zero_epochs, (std::vector<int>{3}));
  EXPECT_THROW(require_nonzero(d), ReportError);
  EXPECT_THROW(update_dynamics(log, "missing"), ReportError);
  EXPECT_FALSE(format_update_dynamics(d).empty());
}

TEST(Evalkit, ReportIsDeterministicAndBounded) {
  Predictions p;
  p.hypotheses = {"i hear you", "that sounds hard"};
  p.references = {"i hear you friend", "that is hard"};
  p.rankings = {{0, 1, 2, 3, 4, 5, 6, 7}, {1, 0, 2, 3, 4, 5, 6, 7}};
  p.golds = {0, 0};
  auto a = compute_report(p, 12.0);
  auto b = compute_report(p, 12.0);
  EXPECT_EQ(a.bleu, b.bleu);
  EXPECT_EQ(a.acc, 50.0);
  EXPECT_EQ(a.top_n[1], 100.0);
  EXPECT_NO_THROW(a.validate());
  std::vector<std::string> names = {"PRCCF"};
  std::vector<MetricReport> reps = {a};
  auto table = format_metric_table(names, reps);
  EXPECT_NE(table.find("ACC(%)"), std::string::npos);
  EXPECT_NE(table.find("PRCCF"), std::string::npos);
}
