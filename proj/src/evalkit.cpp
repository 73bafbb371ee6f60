#include "prccf/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "prccf/errors.hpp"
#include "prccf/text.hpp"

namespace prccf::evalkit {

std::vector<std::string> tokenize(std::string_view text) { return text::whitespace_tokens(text); }

namespace {

void require_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw ContractViolation(std::string(what) + ": " + std::to_string(a) + " hypotheses vs " + std::to_string(b) +
                            " references");
}

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(const std::vector<std::string>& tokens, int n) {
  std::map<Ngram, std::size_t> counts;
  const auto len = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + len <= tokens.size(); ++i)
    ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                   tokens.begin() + static_cast<std::ptrdiff_t>(i + len))];
  return counts;
}

std::string fixed(double v, int precision = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string pad_right(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string pad_left(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

}  // namespace

double bleu_n(std::span<const std::string> hypotheses, std::span<const std::string> references, int n) {
  require_aligned(hypotheses.size(), references.size(), "bleu");
  if (n < 1 || n > 4) throw ContractViolation("bleu: n must be in [1, 4]");
  if (hypotheses.empty()) throw ContractViolation("bleu: empty corpus");

  std::vector<double> matched(static_cast<std::size_t>(n), 0.0), total(static_cast<std::size_t>(n), 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto h = tokenize(hypotheses[i]);
    const auto r = tokenize(references[i]);
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (int k = 1; k <= n; ++k) {
      const auto hc = ngram_counts(h, k);
      const auto rc = ngram_counts(r, k);
      for (const auto& [g, c] : hc) {
        const auto it = rc.find(g);
        matched[static_cast<std::size_t>(k - 1)] += static_cast<double>(std::min(c, it == rc.end() ? 0 : it->second));
        total[static_cast<std::size_t>(k - 1)] += static_cast<double>(c);
      }
    }
  }
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    if (total[kk] == 0.0 || matched[kk] == 0.0) return 0.0;
    log_sum += std::log(matched[kk] / total[kk]);
  }
  if (hyp_len == 0.0) return 0.0;
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_sum / n);
}

double distinct_n(std::span<const std::string> hypotheses, int n) {
  if (n < 1 || n > 2) throw ContractViolation("distinct: n must be 1 or 2");
  if (hypotheses.empty()) throw ContractViolation("distinct: empty corpus");
  std::set<Ngram> unique;
  std::size_t total = 0;
  for (const auto& h : hypotheses) {
    const auto tokens = tokenize(h);
    const auto len = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + len <= tokens.size(); ++i) {
      unique.emplace(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                     tokens.begin() + static_cast<std::ptrdiff_t>(i + len));
      ++total;
    }
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(unique.size()) / static_cast<double>(total);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  require_aligned(hypotheses.size(), references.size(), "rouge_l");
  if (hypotheses.empty()) throw ContractViolation("rouge_l: empty corpus");
  double sum = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto h = tokenize(hypotheses[i]);
    const auto r = tokenize(references[i]);
    if (h.empty() && r.empty()) {
      sum += 1.0;
      continue;
    }
    const auto lcs = static_cast<double>(lcs_length(h, r));
    if (lcs == 0.0) continue;
    const double p = lcs / static_cast<double>(h.size());
    const double rec = lcs / static_cast<double>(r.size());
    sum += 2.0 * p * rec / (p + rec);
  }
  return 100.0 * sum / static_cast<double>(hypotheses.size());
}

double token_f1(std::span<const std::string> hypotheses, std::span<const std::string> references) {
  require_aligned(hypotheses.size(), references.size(), "token_f1");
  if (hypotheses.empty()) throw ContractViolation("token_f1: empty corpus");
  double sum = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto h = tokenize(hypotheses[i]);
    const auto r = tokenize(references[i]);
    if (h.empty() && r.empty()) {
      sum += 1.0;
      continue;
    }
    std::map<std::string, std::size_t> rc;
    for (const auto& t : r) ++rc[t];
    std::size_t common = 0;
    for (const auto& t : h) {
      auto it = rc.find(t);
      if (it != rc.end() && it->second > 0) {
        --it->second;
        ++common;
      }
    }
    if (common == 0) continue;
    const double p = static_cast<double>(common) / static_cast<double>(h.size());
    const double rec = static_cast<double>(common) / static_cast<double>(r.size());
    sum += 2.0 * p * rec / (p + rec);
  }
  return 100.0 * sum / static_cast<double>(hypotheses.size());
}

std::vector<double> UniformScorer::response_token_nll(const model::PreparedSample& sample) const {
  if (sample.target_ids.empty()) return {};
  return std::vector<double>(sample.target_ids.size() - 1, std::log(static_cast<double>(vocab_size_)));
}

double perplexity_from_log(std::span<const std::vector<double>> token_nll) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& sample : token_nll) {
    sum += std::accumulate(sample.begin(), sample.end(), 0.0);
    count += sample.size();
  }
  if (count == 0) throw ContractViolation("perplexity: no tokens");
  const double ppl = std::exp(sum / static_cast<double>(count));
  if (!std::isfinite(ppl)) throw NumericError("perplexity", "non-finite perplexity");
  return ppl;
}

PerplexityResult perplexity(const TokenScorer& scorer, std::span<const model::PreparedSample> samples) {
  PerplexityResult r;
  for (const auto& s : samples) {
    r.token_nll.push_back(scorer.response_token_nll(s));
    r.token_count += r.token_nll.back().size();
  }
  r.ppl = perplexity_from_log(r.token_nll);
  return r;
}

double strategy_accuracy(std::span<const std::vector<int>> rankings, std::span<const int> golds, int n,
                         std::size_t registry_size) {
  if (rankings.size() != golds.size()) throw ContractViolation("strategy_accuracy: misaligned inputs");
  if (rankings.empty()) throw ContractViolation("strategy_accuracy: no predictions");
  if (n < 1) throw ContractViolation("strategy_accuracy: n must be >= 1");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    const auto& rank = rankings[i];
    std::vector<int> sorted = rank;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expected(registry_size);
    std::iota(expected.begin(), expected.end(), 0);
    if (sorted != expected) throw ContractViolation("strategy_accuracy: ranking is not a permutation of the registry");
    const auto end = rank.begin() + std::min<std::ptrdiff_t>(n, static_cast<std::ptrdiff_t>(rank.size()));
    if (std::find(rank.begin(), end, golds[i]) != end) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(rankings.size());
}

void MetricReport::validate() const {
  auto in_range = [](double v) { return v >= 0.0 && v <= 100.0; };
  bool ok = in_range(acc) && in_range(rouge_l) && in_range(f1);
  for (double v : bleu) ok = ok && in_range(v);
  for (double v : distinct) ok = ok && in_range(v);
  for (double v : top_n) ok = ok && in_range(v);
  if (!ok) throw ReportError("metric outside [0, 100]");
  if (!std::isfinite(ppl)) throw NumericError("evaluation", "non-finite perplexity");
}

MetricReport compute_report(const Predictions& p, double ppl) {
  MetricReport r;
  r.sample_count = p.hypotheses.size();
  r.ppl = ppl;
  for (int n = 1; n <= 4; ++n) r.bleu[static_cast<std::size_t>(n - 1)] = bleu_n(p.hypotheses, p.references, n);
  for (int n = 1; n <= 2; ++n) r.distinct[static_cast<std::size_t>(n - 1)] = distinct_n(p.hypotheses, n);
  r.rouge_l = rouge_l(p.hypotheses, p.references);
  r.f1 = token_f1(p.hypotheses, p.references);
  for (std::size_t n = 1; n <= r.top_n.size(); ++n)
    r.top_n[n - 1] = strategy_accuracy(p.rankings, p.golds, static_cast<int>(n));
  r.acc = r.top_n[0];
  r.validate();
  return r;
}

int stage_interval(std::size_t position, std::size_t turn_count) {
  if (turn_count == 0) return 0;
  const auto i = static_cast<long long>((kStageIntervals * position) / turn_count);
  return static_cast<int>(std::clamp<long long>(i, 0, kStageIntervals - 1));
}

StageDistribution stage_distribution(std::span<const corpus::DialogueRecord> dialogues) {
  StageDistribution d;
  std::array<std::array<std::size_t, corpus::StrategyRegistry::kSize>, kStageIntervals> counts{};
  for (const auto& dialogue : dialogues) {
    const auto n = dialogue.utterances.size();
    for (std::size_t pos = 0; pos < n; ++pos) {
      const auto& u = dialogue.utterances[pos];
      if (u.speaker != corpus::Speaker::kSupporter || !u.strategy) continue;
      const auto id = static_cast<std::size_t>(u.strategy->id);
      if (id >= corpus::StrategyRegistry::kSize) throw ContractViolation("strategy id out of range");
      const auto interval = static_cast<std::size_t>(stage_interval(pos, n));
      ++counts[interval][id];
      ++d.turns[interval];
    }
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (d.turns[i] == 0) continue;
    for (std::size_t s = 0; s < counts[i].size(); ++s)
      d.frequency[i][s] = static_cast<double>(counts[i][s]) / static_cast<double>(d.turns[i]);
  }
  return d;
}

std::vector<std::string> sweep_metric_names() {
  return {"ACC", "PPL^-1", "B-1", "B-2", "B-3", "B-4", "D-1", "D-2", "R-L", "F1"};
}

std::vector<double> sweep_metric_values(const MetricReport& r) {
  return {r.acc, r.ppl, r.bleu[0], r.bleu[1], r.bleu[2], r.bleu[3], r.distinct[0], r.distinct[1], r.rouge_l, r.f1};
}

SweepReport build_sweep_report(std::span<const int> pairs, std::span<const MetricReport> reports) {
  if (pairs.size() != reports.size()) throw ContractViolation("sweep: one report per pairs value");
  if (pairs.size() < 2) throw ContractViolation("sweep: at least two pairs values are needed");
  SweepReport s;
  s.pairs.assign(pairs.begin(), pairs.end());
  s.metrics = sweep_metric_names();
  for (const auto& r : reports) s.raw.push_back(sweep_metric_values(r));
  const std::size_t rows = s.raw.size(), cols = s.metrics.size();
  s.normalized.assign(rows, std::vector<double>(cols, 0.0));
  for (std::size_t c = 0; c < cols; ++c) {
    std::vector<double> col(rows);
    for (std::size_t i = 0; i < rows; ++i) col[i] = c == 1 ? 1.0 / s.raw[i][c] : s.raw[i][c];
    const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
    for (std::size_t i = 0; i < rows; ++i)
      s.normalized[i][c] = *hi == *lo ? 0.5 : (col[i] - *lo) / (*hi - *lo);
  }
  for (const auto& row : s.normalized)
    s.aggregate.push_back(std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(cols));
  s.best = static_cast<std::size_t>(std::max_element(s.aggregate.begin(), s.aggregate.end()) - s.aggregate.begin());
  return s;
}

SweepReport pairs_sweep(std::span<const int> pairs_values, const std::function<MetricReport(int)>& evaluate) {
  if (pairs_values.size() < 2) throw ContractViolation("sweep: at least two pairs values are needed");
  std::vector<MetricReport> reports;
  for (int p : pairs_values) reports.push_back(evaluate(p));
  return build_sweep_report(pairs_values, reports);
}

UpdateDynamics update_dynamics(std::span<const model::TrainLogRecord> log, const std::string& stage) {
  UpdateDynamics d;
  d.stage = stage;
  std::map<int, std::pair<double, std::size_t>> by_epoch;
  for (const auto& rec : log) {
    const auto it = rec.delta.find(stage);
    if (it == rec.delta.end()) continue;
    auto& e = by_epoch[rec.epoch];
    e.first += it->second;
    ++e.second;
  }
  if (by_epoch.empty()) throw ReportError("training log has no update records for stage '" + stage + "'");
  for (const auto& [epoch, e] : by_epoch) {
    const double mean = e.first / static_cast<double>(e.second);
    d.series.push_back({epoch, mean});
    if (!(mean > 0.0)) d.zero_epochs.push_back(epoch);
  }
  return d;
}

void require_nonzero(const UpdateDynamics& d) {
  if (d.all_nonzero()) return;
  std::string epochs;
  for (int e : d.zero_epochs) epochs += (epochs.empty() ? "" : ", ") + std::to_string(e);
  throw ReportError("stage '" + d.stage + "' has zero parameter updates in epoch(s) " + epochs);
}

std::string format_metric_table(std::span<const std::string> names, std::span<const MetricReport> reports) {
  if (names.size() != reports.size()) throw ContractViolation("one name per report");
  std::size_t w = 5;
  for (const auto& n : names) w = std::max(w, n.size());
  std::ostringstream out;
  out << pad_right("Model", w);
  for (const char* h : {"ACC(%)", "PPL", "B-1", "B-2", "B-3", "B-4", "D-1", "D-2", "R-L"}) out << pad_left(h, 9);
  out << '\n';
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    out << pad_right(names[i], w);
    for (double v : {r.acc, r.ppl, r.bleu[0], r.bleu[1], r.bleu[2], r.bleu[3], r.distinct[0], r.distinct[1],
                     r.rouge_l})
      out << pad_left(fixed(v), 9);
    out << '\n';
  }
  return out.str();
}

std::string format_ablation_table(std::span<const std::string> names, std::span<const MetricReport> reports) {
  if (names.size() != reports.size()) throw ContractViolation("one name per report");
  std::size_t w = 5;
  for (const auto& n : names) w = std::max(w, n.size());
  std::ostringstream out;
  out << pad_right("Model", w);
  for (const char* h : {"PPL", "B-1", "B-2", "B-3", "B-4", "R-L"}) out << pad_left(h, 9);
  out << '\n';
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    out << pad_right(names[i], w);
    for (double v : {r.ppl, r.bleu[0], r.bleu[1], r.bleu[2], r.bleu[3], r.rouge_l}) out << pad_left(fixed(v), 9);
    out << '\n';
  }
  return out.str();
}

std::string format_sweep_report(const SweepReport& s) {
  std::ostringstream out;
  out << "raw\n" << pad_right("pairs", 7);
  for (const auto& m : s.metrics) out << pad_left(m == "PPL^-1" ? "PPL" : m, 9);
  out << '\n';
  for (std::size_t i = 0; i < s.pairs.size(); ++i) {
    out << pad_right(std::to_string(s.pairs[i]), 7);
    for (double v : s.raw[i]) out << pad_left(fixed(v), 9);
    out << '\n';
  }
  out << "normalized\n" << pad_right("pairs", 7);
  for (const auto& m : s.metrics) out << pad_left(m, 9);
  out << pad_left("overall", 9) << '\n';
  for (std::size_t i = 0; i < s.pairs.size(); ++i) {
    out << pad_right(std::to_string(s.pairs[i]), 7);
    for (double v : s.normalized[i]) out << pad_left(fixed(v, 3), 9);
    out << pad_left(fixed(s.aggregate[i], 3), 9) << (i == s.best ? "  *" : "") << '\n';
  }
  out << "best pairs: " << s.pairs[s.best] << '\n';
  return out.str();
}

std::string format_stage_distribution(const StageDistribution& d, const corpus::StrategyRegistry& registry) {
  std::size_t w = 8;
  for (const auto& n : registry.names()) w = std::max(w, n.size());
  std::ostringstream out;
  out << pad_right("strategy", w);
  for (int i = 0; i < kStageIntervals; ++i) out << pad_left("I" + std::to_string(i + 1), 7);
  out << '\n';
  for (std::size_t s = 0; s < registry.size(); ++s) {
    out << pad_right(registry.names()[s], w);
    for (std::size_t i = 0; i < d.frequency.size(); ++i) out << pad_left(fixed(d.frequency[i][s], 3), 7);
    out << '\n';
  }
  out << pad_right("turns", w);
  for (auto n : d.turns) out << pad_left(std::to_string(n), 7);
  out << '\n';
  return out.str();
}

std::string format_update_dynamics(const UpdateDynamics& d) {
  std::ostringstream out;
  out << "epoch  mean|delta| (" << d.stage << ")\n";
  for (const auto& e : d.series) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%5d  %.6e", e.epoch, e.mean_delta);
    out << buf << '\n';
  }
  return out.str();
}

}  // namespace prccf::evalkit
