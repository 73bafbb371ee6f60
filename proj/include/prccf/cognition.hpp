#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prccf/corpus.hpp"
#include "prccf/nn/layers.hpp"

namespace prccf::cognition {

enum class Relation { kWant, kNeed, kIntent, kEffect };

inline constexpr std::array<Relation, 4> kRelations = {Relation::kWant, Relation::kNeed, Relation::kIntent,
                                                       Relation::kEffect};
// Order of E_com^all.
inline constexpr std::array<Relation, 4> kAggregationOrder = {Relation::kIntent, Relation::kWant,
                                                              Relation::kNeed, Relation::kEffect};

std::string_view relation_name(Relation r);
Relation parse_relation(std::string_view name);

enum class Verdict { kRelevant, kIrrelevant };  // RR / IR

std::string_view verdict_name(Verdict v);

struct CommonsenseCandidate {
  Relation relation = Relation::kWant;
  std::string text;
  std::optional<Verdict> verdict;
  bool padded = false;  // filler for an adapter that returned fewer than k

  bool operator==(const CommonsenseCandidate&) const = default;
};

class KnowledgeAdapter {
 public:
  virtual ~KnowledgeAdapter() = default;
  // Up to k inferences for `source` under `relation`, best first.
  virtual std::vector<std::string> infer(std::string_view source, Relation relation, int k) const = 0;
};

// Canned inferences from a line-delimited {source_text, relation, rank,
// inference} table. Also serves precomputed generator output.
class TableKnowledgeAdapter final : public KnowledgeAdapter {
 public:
  static TableKnowledgeAdapter load(const std::filesystem::path& path);
  void add(std::string_view source, Relation relation, int rank, std::string inference);
  std::vector<std::string> infer(std::string_view source, Relation relation, int k) const override;
  std::size_t size() const { return size_; }

 private:
  std::map<std::pair<std::string, Relation>, std::map<int, std::string>> table_;
  std::size_t size_ = 0;
};

// Exactly k candidates per relation; missing ones are padded and flagged.
std::vector<CommonsenseCandidate> expand_commonsense(std::string_view source_text,
                                                     std::span<const Relation> relations, int k,
                                                     const KnowledgeAdapter& adapter);

class FilterAdapter {
 public:
  virtual ~FilterAdapter() = default;
  virtual Verdict classify(const CommonsenseCandidate& candidate, std::string_view context_text) const = 0;
};

// IR iff the candidate contains one of the marker words.
class KeywordFilterAdapter final : public FilterAdapter {
 public:
  explicit KeywordFilterAdapter(std::vector<std::string> markers);
  Verdict classify(const CommonsenseCandidate& candidate, std::string_view context_text) const override;

 private:
  std::vector<std::string> markers_;
};

// Sets and returns the candidate's verdict. Padded or empty candidates are IR
// without consulting the adapter.
Verdict classify_relevance(CommonsenseCandidate& candidate, std::string_view context_text,
                           const FilterAdapter& adapter);

// Marks every non-empty candidate RR; the filter is skipped entirely.
void accept_all(std::span<CommonsenseCandidate> candidates);

inline constexpr std::string_view kNoKnowledge = "none";
inline constexpr std::string_view kKnowledgeSeparator = " [SEP] ";

struct CommonsenseBundle {
  std::vector<CommonsenseCandidate> candidates;
  std::map<Relation, std::vector<std::string>> survivors;  // RR texts, candidate order
  std::map<Relation, std::string> filtered;                // COM_filter^r

  // Filtered sequences in aggregation order (Intent, Want, Need, Effect).
  std::vector<std::string> aggregated() const;
};

CommonsenseBundle filter_bundle(std::vector<CommonsenseCandidate> candidates);

struct CauseQuery {
  std::string_view dialogue_id;
  const corpus::Utterance& candidate;
  const corpus::Utterance& target;
  std::string_view emotion;
};

class CauseAdapter {
 public:
  virtual ~CauseAdapter() = default;
  virtual bool is_cause(const CauseQuery& query) const = 0;
};

// An utterance is a cause iff it contains one of the keywords.
class KeywordCauseAdapter final : public CauseAdapter {
 public:
  explicit KeywordCauseAdapter(std::vector<std::string> keywords);
  bool is_cause(const CauseQuery& query) const override;

 private:
  std::vector<std::string> keywords_;
};

// Annotations cached in a sidecar keyed by (dialogue_id, turn_index). Misses go
// to `fallback` when one is given.
class CachedCauseAdapter final : public CauseAdapter {
 public:
  static CachedCauseAdapter load(const std::filesystem::path& path,
                                 std::shared_ptr<const CauseAdapter> fallback = nullptr);
  bool is_cause(const CauseQuery& query) const override;

 private:
  std::map<std::pair<std::string, int>, bool> cache_;
  std::shared_ptr<const CauseAdapter> fallback_;
};

struct CauseAnnotation {
  int utterance_index = 0;
  bool is_cause = false;

  bool operator==(const CauseAnnotation&) const = default;
};

struct CachedCause {
  std::string dialogue_id;
  int turn_index = 0;
  bool is_cause = false;
};
void save_cause_cache(const std::filesystem::path& path, std::span<const CachedCause> entries);

// One annotation per context utterance. When nothing is labelled a cause the
// current utterance alone is marked causal.
std::vector<CauseAnnotation> detect_emotion_causes(std::span<const corpus::Utterance> context,
                                                   std::size_t current_index, std::string_view emotion_label,
                                                   const CauseAdapter& adapter,
                                                   std::string_view dialogue_id = {});

// Position -> utterance index.
using TokenLayout = std::vector<int>;

using ByteMatrix = Eigen::Matrix<unsigned char, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct CausalMask {
  ByteMatrix matrix;                        // T x T, 1 = may attend
  TokenLayout token_layout;
  std::vector<unsigned char> open_columns;  // key j visible from every query

  Eigen::Index size() const { return matrix.rows(); }
};

// M[i][j] = 1 iff utterance(j) is causal, utterance(j) is current, or i == j.
CausalMask build_causal_mask(const TokenLayout& token_layout, std::span<const CauseAnnotation> annotations,
                             int current_index);
// The mask used when causal masking is ablated.
CausalMask all_ones_mask(const TokenLayout& token_layout);

// Mask for Enc_ref over H_mix = [summary x T] ++ context: summary keys are
// always visible, context keys follow the causal rule.
ByteMatrix mixed_mask(const CausalMask& mask);

struct CognitiveConfig {
  nn::Index hidden = 64;
  int heads = 4;
  int cog_layers = 1;
  int ref_layers = 1;
};

struct CognitiveState {
  nn::Tensor H_com;  // Enc_cog([CLS] ++ E_com^all)
  nn::Tensor h_com;  // H_com row 0
  nn::Tensor H_mix;  // h_com repeated T_ctx times ++ H_CTX
  nn::Tensor H_ref;  // Enc_ref(H_mix, mask)
  nn::Tensor gated;  // sigmoid(H_ref) * H_ref
  nn::Tensor H_C;    // selector MLP of the gated sequence
};

// sigmoid(x) * x, elementwise.
nn::Tensor cognitive_gate(const nn::Tensor& h_ref);

// Parameters of the Cognitive Knowledge Refinement stage.
class CognitiveRefiner {
 public:
  static constexpr const char* kStage = "refinement";

  CognitiveRefiner(nn::ParameterStore& store, nn::Rng& rng, const CognitiveConfig& cfg);

  CognitiveState refine(const nn::Tensor& knowledge, const nn::Tensor& context, const CausalMask& mask) const;
  // The two-layer selector MLP applied after the gate.
  nn::Tensor select(const nn::Tensor& gated) const;

 private:
  nn::Tensor cls_;
  nn::TransformerEncoder cog_encoder_;
  nn::TransformerEncoder ref_encoder_;
  nn::Linear selector_in_;
  nn::Linear selector_out_;
};

}  // namespace prccf::cognition
