#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "prccf/corpus.hpp"
#include "prccf/model.hpp"

namespace prccf::evalkit {

// Metric tokenization: lowercase, whitespace split.
std::vector<std::string> tokenize(std::string_view text);

// Corpus-level BLEU with uniform weights over 1..n-gram clipped precisions and
// the brevity penalty, x100. No smoothing: a zero precision gives 0.
double bleu_n(std::span<const std::string> hypotheses, std::span<const std::string> references, int n);

// Unique n-grams over all hypotheses / total n-grams, x100.
double distinct_n(std::span<const std::string> hypotheses, int n);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
// Mean per-pair LCS F-measure (beta = 1), x100.
double rouge_l(std::span<const std::string> hypotheses, std::span<const std::string> references);

// Mean per-pair token-overlap F1 (multiset precision/recall), x100.
double token_f1(std::span<const std::string> hypotheses, std::span<const std::string> references);

class TokenScorer {
 public:
  virtual ~TokenScorer() = default;
  // NLL of each gold response token (strategy token excluded).
  virtual std::vector<double> response_token_nll(const model::PreparedSample& sample) const = 0;
};

class ModelScorer final : public TokenScorer {
 public:
  explicit ModelScorer(const model::PrccfModel& model) : model_(model) {}
  std::vector<double> response_token_nll(const model::PreparedSample& sample) const override {
    return model_.response_token_nll(sample);
  }

 private:
  const model::PrccfModel& model_;
};

// Probability 1/V for every token.
class UniformScorer final : public TokenScorer {
 public:
  explicit UniformScorer(std::size_t vocab_size) : vocab_size_(vocab_size) {}
  std::vector<double> response_token_nll(const model::PreparedSample& sample) const override;

 private:
  std::size_t vocab_size_;
};

struct PerplexityResult {
  double ppl = 0.0;
  std::size_t token_count = 0;
  std::vector<std::vector<double>> token_nll;  // per sample, replayable
};

PerplexityResult perplexity(const TokenScorer& scorer, std::span<const model::PreparedSample> samples);
// exp(mean) over every logged token NLL.
double perplexity_from_log(std::span<const std::vector<double>> token_nll);

// Percent of samples whose gold id is in the first n entries of the ranking.
// Each ranking must be a permutation of [0, registry_size).
double strategy_accuracy(std::span<const std::vector<int>> rankings, std::span<const int> golds, int n,
                         std::size_t registry_size = corpus::StrategyRegistry::kSize);

struct MetricReport {
  double acc = 0.0;
  double ppl = 0.0;
  std::array<double, 4> bleu{};
  std::array<double, 2> distinct{};
  double rouge_l = 0.0;
  double f1 = 0.0;
  std::size_t sample_count = 0;
  std::array<double, corpus::StrategyRegistry::kSize> top_n{};  // top-1..8 accuracy

  void validate() const;
};

struct Predictions {
  std::vector<std::string> hypotheses;
  std::vector<std::string> references;
  std::vector<std::vector<int>> rankings;
  std::vector<int> golds;
};

MetricReport compute_report(const Predictions& predictions, double ppl);

inline constexpr int kStageIntervals = 6;

struct StageDistribution {
  // frequency[interval][strategy]; rows of empty intervals are all zero.
  std::array<std::array<double, corpus::StrategyRegistry::kSize>, kStageIntervals> frequency{};
  std::array<std::size_t, kStageIntervals> turns{};
};

// interval(turn) = floor(6 * position / turn_count), clamped to [0, 5].
int stage_interval(std::size_t position, std::size_t turn_count);
StageDistribution stage_distribution(std::span<const corpus::DialogueRecord> dialogues);

struct SweepReport {
  std::vector<int> pairs;
  std::vector<std::string> metrics;                // column names; "PPL^-1" is inverted
  std::vector<std::vector<double>> raw;            // [row][metric], PPL as measured
  std::vector<std::vector<double>> normalized;     // [row][metric] in [0, 1]
  std::vector<double> aggregate;                   // mean normalized score per row
  std::size_t best = 0;                            // argmax of aggregate, first on ties
};

// Column order of the sweep: ACC, PPL, B-1..B-4, D-1, D-2, R-L, F1.
std::vector<std::string> sweep_metric_names();
std::vector<double> sweep_metric_values(const MetricReport& report);

// Min-max normalisation per column, PPL inverted first. Constant columns map
// to 0.5.
SweepReport build_sweep_report(std::span<const int> pairs, std::span<const MetricReport> reports);
// Evaluates every pairs value, then builds the report. Needs at least two.
SweepReport pairs_sweep(std::span<const int> pairs_values, const std::function<MetricReport(int)>& evaluate);

struct EpochUpdate {
  int epoch = 0;
  double mean_delta = 0.0;
};

struct UpdateDynamics {
  std::string stage;
  std::vector<EpochUpdate> series;
  std::vector<int> zero_epochs;  // epochs whose mean update is not > 0

  bool all_nonzero() const { return zero_epochs.empty(); }
};

// Mean per-step |delta param| of `stage`, grouped by epoch. Throws ReportError
// when the log has no record for the stage.
UpdateDynamics update_dynamics(std::span<const model::TrainLogRecord> log, const std::string& stage = "refinement");
// Throws ReportError listing the epochs with zero updates.
void require_nonzero(const UpdateDynamics& dynamics);

// Fixed-width text tables.
std::string format_metric_table(std::span<const std::string> names, std::span<const MetricReport> reports);
std::string format_ablation_table(std::span<const std::string> names, std::span<const MetricReport> reports);
std::string format_sweep_report(const SweepReport& report);
std::string format_stage_distribution(const StageDistribution& dist, const corpus::StrategyRegistry& registry);
std::string format_update_dynamics(const UpdateDynamics& dynamics);

}  // namespace prccf::evalkit
