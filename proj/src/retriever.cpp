#include "prccf/retriever.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prccf/errors.hpp"
#include "prccf/text.hpp"

namespace prccf::retriever {

using nlohmann::json;

EmbeddingVector EmbeddingVector::from_values(std::vector<float> values) {
  double sq = 0.0;
  for (float v : values) sq += static_cast<double>(v) * static_cast<double>(v);
  return {std::move(values), std::sqrt(sq)};
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

HashEncoder::HashEncoder(std::size_t dimension, std::uint64_t seed, std::size_t max_tokens)
    : dimension_(dimension), seed_(seed), max_tokens_(max_tokens) {
  if (dimension_ == 0) throw ContractViolation("encoder dimension must be positive");
}

EmbeddingVector HashEncoder::encode(std::string_view text) const {
  auto tokens = text::pretokenize(text);
  if (tokens.size() > max_tokens_)
    tokens.erase(tokens.begin(), tokens.end() - static_cast<std::ptrdiff_t>(max_tokens_));

  std::vector<double> acc(dimension_, 0.0);
  const auto add_feature = [&](const std::string& feature, double weight) {
    std::uint64_t state = text::fnv1a64(feature, seed_ ^ 0xcbf29ce484222325ULL);
    for (auto& a : acc) {
      const double unit = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
      a += weight * (2.0 * unit - 1.0);
    }
  };

  int segment = 0;
  const std::string* prev = nullptr;
  for (const auto& tok : tokens) {
    if (tok.token == "[SEP]") {
      ++segment;
      prev = nullptr;
      continue;
    }
    add_feature("w|" + tok.token, 1.0);
    add_feature("s|" + std::to_string(segment) + "|" + tok.token, 0.5);
    if (prev) add_feature("b|" + *prev + "|" + tok.token, 0.5);
    prev = &tok.token;
  }
  std::vector<float> values(acc.begin(), acc.end());
  return EmbeddingVector::from_values(std::move(values));
}

std::string HashEncoder::fingerprint() const {
  std::ostringstream os;
  os << "hash-v1:dim=" << dimension_ << ":seed=" << seed_ << ":max=" << max_tokens_;
  return os.str();
}

std::string DualEncoder::fingerprint() const {
  if (!query || !passage) throw AdapterError("encoder unavailable");
  return "q=" + query->fingerprint() + ";x=" + passage->fingerprint();
}

std::string_view similarity_name(Similarity s) { return s == Similarity::kDot ? "dot" : "cosine"; }

Similarity parse_similarity(std::string_view name) {
  if (name == "dot") return Similarity::kDot;
  if (name == "cosine") return Similarity::kCosine;
  throw ConfigError("unknown similarity '" + std::string(name) + "' (expected dot or cosine)");
}

void RetrieverConfig::validate() const {
  if (alpha < 0.0 || beta < 0.0) throw ContractViolation("alpha and beta must be non-negative");
  if (alpha + beta <= 0.0) throw ContractViolation("alpha + beta must be positive");
  if (pairs < 1) throw ContractViolation("pairs must be positive");
  if (max_prompt_tokens < 1 || max_prompt_tokens > kEncoderInputLimit)
    throw ContractViolation("max_prompt_tokens must be in [1, 512]");
}

std::string query_text(std::string_view persona, std::string_view utterance) {
  std::string out(persona);
  out += " [SEP] ";
  out += utterance;
  return out;
}

std::string candidate_text(const corpus::RetrievalEntry& entry) {
  return entry.persona + " [SEP] " + entry.strategy.name + " [SEP] " + entry.response;
}

EmbeddingVector encode_query(const DualEncoder& encoder, std::string_view persona,
                             std::string_view utterance) {
  if (!encoder.query) throw AdapterError("query encoder unavailable");
  return encoder.query->encode(query_text(persona, utterance));
}

EmbeddingVector encode_candidate(const DualEncoder& encoder, const corpus::RetrievalEntry& entry) {
  if (!encoder.passage) throw AdapterError("passage encoder unavailable");
  return encoder.passage->encode(candidate_text(entry));
}

double similarity(const EmbeddingVector& a, const EmbeddingVector& b, Similarity mode) {
  if (a.dimension() != b.dimension())
    throw ContractViolation("embedding dimension mismatch: " + std::to_string(a.dimension()) + " vs " +
                            std::to_string(b.dimension()));
  double dot = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    dot += static_cast<double>(a.values[i]) * static_cast<double>(b.values[i]);
  if (mode == Similarity::kDot) return dot;
  if (a.norm == 0.0 || b.norm == 0.0) return 0.0;
  return dot / (a.norm * b.norm);
}

ScoreFields combined_score(const EmbeddingVector& q, const EmbeddingVector& x, const EmbeddingVector& pq,
                           const EmbeddingVector& px, const RetrieverConfig& cfg) {
  ScoreFields f;
  f.sim_ctx = similarity(q, x, cfg.similarity);
  f.sim_per = similarity(pq, px, cfg.similarity);
  f.score = cfg.alpha * f.sim_ctx + cfg.beta * f.sim_per;
  return f;
}

RetrievalIndex RetrievalIndex::build(const corpus::RetrievalCorpus& corpus, const DualEncoder& encoder,
                                     Similarity mode) {
  RetrievalIndex index;
  index.fingerprint_ = encoder.fingerprint();
  index.dimension_ = encoder.passage->dimension();
  index.mode_ = mode;
  for (const auto& [problem, entries] : corpus) {
    Bucket b;
    b.problem_type = problem;
    b.entries = entries;
    for (const auto& e : entries) {
      b.candidates.push_back(encode_candidate(encoder, e));
      b.personas.push_back(encoder.passage->encode(e.persona));
    }
    index.buckets_.push_back(std::move(b));
  }
  return index;
}

namespace {

constexpr char kMagic[8] = {'P', 'R', 'C', 'C', 'F', 'I', 'D', 'X'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
  } else {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
}

template <typename T>
T read_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  if (!in.read(bytes.data(), sizeof(T))) throw IndexError("truncated index file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

json entry_to_json(const corpus::RetrievalEntry& e) {
  return {{"u", e.seeker_utterance}, {"s_id", e.strategy.id},          {"s", e.strategy.name},
          {"r", e.response},         {"p", e.persona},                 {"source_index", e.source_index},
          {"dialogue_id", e.dialogue_id}};
}

corpus::RetrievalEntry entry_from_json(const json& j, const std::string& problem) {
  corpus::RetrievalEntry e;
  e.seeker_utterance = j.at("u").get<std::string>();
  e.strategy = {j.at("s_id").get<int>(), j.at("s").get<std::string>()};
  e.response = j.at("r").get<std::string>();
  e.persona = j.at("p").get<std::string>();
  e.problem_type = problem;
  e.source_index = j.at("source_index").get<int>();
  e.dialogue_id = j.at("dialogue_id").get<std::string>();
  return e;
}

}  // namespace

void RetrievalIndex::save(const std::filesystem::path& path) const {
  json header = {{"fingerprint", fingerprint_},
                 {"dimension", dimension_},
                 {"similarity", similarity_name(mode_)},
                 {"buckets", json::array()}};
  for (const auto& b : buckets_) {
    json entries = json::array();
    for (const auto& e : b.entries) entries.push_back(entry_to_json(e));
    header["buckets"].push_back({{"problem_type", b.problem_type}, {"count", b.entries.size()},
                                 {"entries", std::move(entries)}});
  }
  const std::string head = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IndexError("cannot write index " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint64_t>(out, head.size());
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& b : buckets_) {
    for (const auto* matrix : {&b.candidates, &b.personas})
      for (const auto& vec : *matrix)
        for (float v : vec.values) write_le<float>(out, v);
  }
  if (!out) throw IndexError("failed writing index " + path.string());
}

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& path, const DualEncoder& encoder) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IndexError("cannot open index " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IndexError(path.string() + ": not a retrieval index");
  if (read_le<std::uint32_t>(in) != kVersion) throw IndexError(path.string() + ": unsupported index version");
  const auto head_size = read_le<std::uint64_t>(in);
  std::string head(head_size, '\0');
  if (!in.read(head.data(), static_cast<std::streamsize>(head_size))) throw IndexError("truncated index header");

  RetrievalIndex index;
  try {
    const json header = json::parse(head);
    index.fingerprint_ = header.at("fingerprint").get<std::string>();
    index.dimension_ = header.at("dimension").get<std::size_t>();
    index.mode_ = parse_similarity(header.at("similarity").get<std::string>());
    if (index.fingerprint_ != encoder.fingerprint())
      throw IndexError("index fingerprint '" + index.fingerprint_ + "' does not match encoder '" +
                       encoder.fingerprint() + "'");
    for (const auto& jb : header.at("buckets")) {
      Bucket b;
      b.problem_type = jb.at("problem_type").get<std::string>();
      for (const auto& je : jb.at("entries")) b.entries.push_back(entry_from_json(je, b.problem_type));
      if (b.entries.size() != jb.at("count").get<std::size_t>()) throw IndexError("bucket count mismatch");
      index.buckets_.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw IndexError(path.string() + ": bad header: " + e.what());
  }
  for (auto& b : index.buckets_) {
    for (auto* matrix : {&b.candidates, &b.personas}) {
      matrix->reserve(b.entries.size());
      for (std::size_t r = 0; r < b.entries.size(); ++r) {
        std::vector<float> values(index.dimension_);
        for (auto& v : values) v = read_le<float>(in);
        matrix->push_back(EmbeddingVector::from_values(std::move(values)));
      }
    }
  }
  return index;
}

const RetrievalIndex::Bucket* RetrievalIndex::find(std::string_view problem_type) const {
  for (const auto& b : buckets_)
    if (b.problem_type == problem_type) return &b;
  return nullptr;
}

std::size_t RetrievalIndex::size() const {
  std::size_t n = 0;
  for (const auto& b : buckets_) n += b.entries.size();
  return n;
}

std::vector<ScoredCandidate> retrieve_topk(std::string_view query_utterance, std::string_view persona,
                                           std::string_view problem_type, const RetrievalIndex& index,
                                           const DualEncoder& encoder, const RetrieverConfig& cfg,
                                           std::optional<std::string_view> exclude_dialogue) {
  cfg.validate();
  if (index.fingerprint() != encoder.fingerprint())
    throw IndexError("index was built with a different encoder");

  std::vector<const RetrievalIndex::Bucket*> pool;
  if (const auto* b = index.find(problem_type); b && !b->entries.empty()) {
    pool.push_back(b);
  } else {
    for (const auto& bucket : index.buckets()) pool.push_back(&bucket);
  }

  const auto q = encode_query(encoder, persona, query_utterance);
  const auto pq = encoder.query->encode(persona);

  std::vector<ScoredCandidate> scored;
  for (const auto* b : pool) {
    for (std::size_t i = 0; i < b->entries.size(); ++i) {
      if (exclude_dialogue && b->entries[i].dialogue_id == *exclude_dialogue) continue;
      const auto f = combined_score(q, b->candidates[i], pq, b->personas[i], cfg);
      scored.push_back({b->entries[i], f.sim_ctx, f.sim_per, f.score});
    }
  }
  if (scored.empty())
    throw RetrievalError("no retrieval candidates for problem type '" + std::string(problem_type) + "'");

  const auto k = std::min(scored.size(), static_cast<std::size_t>(cfg.pairs));
  const auto better = [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.entry.source_index < b.entry.source_index;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(), better);
  scored.resize(k);
  return scored;
}

std::string format_block(const corpus::RetrievalEntry& entry) {
  return "[User: " + entry.seeker_utterance + "] [Persona: " + entry.persona + "] [STRATEGY: " +
         entry.strategy.name + "] [SYSTEM: " + entry.response + "]";
}

DemonstrationPrompt format_demonstrations(std::span<const ScoredCandidate> candidates,
                                          const RetrieverConfig& cfg) {
  if (candidates.empty()) throw ContractViolation("format_demonstrations needs at least one candidate");
  const auto cap = static_cast<std::size_t>(cfg.max_prompt_tokens);

  std::vector<std::string> blocks;
  for (const auto& c : candidates) blocks.push_back(format_block(c.entry));

  const auto join = [&](std::size_t n) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) out += kDemonstrationSeparator;
      out += blocks[i];
    }
    return out;
  };

  std::size_t kept = blocks.size();
  std::string text = join(kept);
  std::size_t count = text::count_tokens(text);
  while (count > cap && kept > 1) {
    text = join(--kept);
    count = text::count_tokens(text);
  }
  DemonstrationPrompt prompt;
  if (count > cap) {
    text = text::truncate_tokens(text, cap);
    count = text::count_tokens(text);
    prompt.truncated = true;
  }
  prompt.text = std::move(text);
  prompt.token_count = count;
  for (std::size_t i = 0; i < kept; ++i) prompt.included_entries.push_back(candidates[i].entry.source_index);
  return prompt;
}

}  // namespace prccf::retriever
