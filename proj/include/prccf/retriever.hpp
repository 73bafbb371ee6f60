#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prccf/corpus.hpp"

namespace prccf::retriever {

struct EmbeddingVector {
  std::vector<float> values;
  double norm = 0.0;  // Euclidean norm of `values`, computed in double

  static EmbeddingVector from_values(std::vector<float> values);
  std::size_t dimension() const { return values.size(); }

  bool operator==(const EmbeddingVector&) const = default;
};

// Any text encoder exposing encode(text) -> vector.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual EmbeddingVector encode(std::string_view text) const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::string fingerprint() const = 0;
};

// Deterministic test backend: a seeded pseudo-random projection of token
// hashes. Each pre-token contributes three hashed features: the bare token
// (weight 1), the token tagged with its [SEP]-delimited segment number
// (weight 0.5) and the bigram with the previous token of the same segment
// (weight 0.5). A feature hash seeds a splitmix64 stream that yields one
// uniform value in [-1, 1) per dimension. Input longer than `max_tokens` is
// cut from the left.
class HashEncoder final : public TextEncoder {
 public:
  explicit HashEncoder(std::size_t dimension = 64, std::uint64_t seed = 0x5eedULL,
                       std::size_t max_tokens = 512);

  EmbeddingVector encode(std::string_view text) const override;
  std::size_t dimension() const override { return dimension_; }
  std::string fingerprint() const override;

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
  std::size_t max_tokens_;
};

// Query encoder f_q and passage encoder f_x. The two may be the same object.
struct DualEncoder {
  std::shared_ptr<const TextEncoder> query;
  std::shared_ptr<const TextEncoder> passage;

  static DualEncoder tied(std::shared_ptr<const TextEncoder> encoder) { return {encoder, encoder}; }
  std::string fingerprint() const;
};

enum class Similarity { kDot, kCosine };

std::string_view similarity_name(Similarity s);
Similarity parse_similarity(std::string_view name);

struct RetrieverConfig {
  double alpha = 0.7;
  double beta = 0.3;
  int pairs = 5;
  int max_prompt_tokens = 512;
  Similarity similarity = Similarity::kCosine;

  static constexpr int kEncoderInputLimit = 512;
  // Throws ContractViolation on the first violated invariant.
  void validate() const;
};

struct ScoredCandidate {
  corpus::RetrievalEntry entry;
  double sim_ctx = 0.0;
  double sim_per = 0.0;
  double score = 0.0;
};

struct DemonstrationPrompt {
  std::string text;
  std::size_t token_count = 0;
  std::vector<int> included_entries;  // source_index, descending score
  bool truncated = false;             // a lone block was cut at the cap
};

// q = [p_t [SEP] u_t]
std::string query_text(std::string_view persona, std::string_view utterance);
// x_i = [p_i [SEP] s_i [SEP] r_i]
std::string candidate_text(const corpus::RetrievalEntry& entry);

EmbeddingVector encode_query(const DualEncoder& encoder, std::string_view persona,
                             std::string_view utterance);
EmbeddingVector encode_candidate(const DualEncoder& encoder, const corpus::RetrievalEntry& entry);

double similarity(const EmbeddingVector& a, const EmbeddingVector& b, Similarity mode);

struct ScoreFields {
  double sim_ctx = 0.0;
  double sim_per = 0.0;
  double score = 0.0;
};

// sim(i) = alpha * sim(q, x) + beta * sim(p_q, p_x)
ScoreFields combined_score(const EmbeddingVector& q, const EmbeddingVector& x, const EmbeddingVector& pq,
                           const EmbeddingVector& px, const RetrieverConfig& cfg);

class RetrievalIndex {
 public:
  struct Bucket {
    std::string problem_type;
    std::vector<corpus::RetrievalEntry> entries;
    std::vector<EmbeddingVector> candidates;  // f_x(x_i)
    std::vector<EmbeddingVector> personas;    // f_x(p_i)
  };

  static RetrievalIndex build(const corpus::RetrievalCorpus& corpus, const DualEncoder& encoder,
                              Similarity mode = Similarity::kCosine);
  void save(const std::filesystem::path& path) const;
  // Throws IndexError when the file was produced by a different encoder.
  static RetrievalIndex load(const std::filesystem::path& path, const DualEncoder& encoder);

  const std::string& fingerprint() const { return fingerprint_; }
  std::size_t dimension() const { return dimension_; }
  Similarity similarity_mode() const { return mode_; }
  std::span<const Bucket> buckets() const { return buckets_; }
  const Bucket* find(std::string_view problem_type) const;
  std::size_t size() const;

 private:
  std::string fingerprint_;
  std::size_t dimension_ = 0;
  Similarity mode_ = Similarity::kCosine;
  std::vector<Bucket> buckets_;
};

// Top-`cfg.pairs` entries of the problem-type bucket (the whole index when the
// bucket is missing or empty), by descending score then ascending source_index.
// Entries from `exclude_dialogue` are skipped; training uses this to keep a
// sample from retrieving its own gold response.
std::vector<ScoredCandidate> retrieve_topk(std::string_view query_utterance, std::string_view persona,
                                           std::string_view problem_type, const RetrievalIndex& index,
                                           const DualEncoder& encoder, const RetrieverConfig& cfg,
                                           std::optional<std::string_view> exclude_dialogue = std::nullopt);

inline constexpr std::string_view kDemonstrationSeparator = " [SEP] ";

// "[User: u] [Persona: p] [STRATEGY: s] [SYSTEM: r]"
std::string format_block(const corpus::RetrievalEntry& entry);

// Joins blocks with kDemonstrationSeparator, dropping whole lowest-scored
// blocks until the prompt fits cfg.max_prompt_tokens.
DemonstrationPrompt format_demonstrations(std::span<const ScoredCandidate> candidates,
                                          const RetrieverConfig& cfg);

}  // namespace prccf::retriever
