#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prccf/corpus.hpp"
#include "prccf/fusion.hpp"
#include "prccf/model.hpp"
#include "prccf/retriever.hpp"

namespace prccf::config {

// Where a resolved value came from.
enum class Provenance { kPublished, kRepoDefault, kFile, kOverride };

std::string_view provenance_name(Provenance p);

struct PathsConfig {
  std::filesystem::path corpus;
  corpus::CorpusFormat corpus_format = corpus::CorpusFormat::kCanonical;
  std::filesystem::path personas;
  std::filesystem::path knowledge;
  std::filesystem::path cause_cache;
  std::filesystem::path strategies;
  std::filesystem::path artifact_root;
};

struct CognitionSettings {
  int k = 5;
  std::string knowledge_backend = "table";
  std::string filter_backend = "keyword";
  std::vector<std::string> filter_markers;
  std::string cause_backend = "keyword";
  std::vector<std::string> cause_keywords;
};

struct EncoderSettings {
  std::string backend = "hash";
  int dimension = 64;
  std::uint64_t seed = 0x5eed;
};

struct RunConfig {
  std::uint64_t seed = 42;
  PathsConfig paths;
  double validation_ratio = 0.1;
  double test_ratio = 0.1;
  int max_context_turns = 64;
  retriever::RetrieverConfig retriever;
  EncoderSettings encoder;
  CognitionSettings cognition;
  model::BackboneConfig backbone;
  std::size_t max_context_tokens = 512;
  std::size_t max_knowledge_tokens = 512;
  std::size_t max_response_tokens = 50;
  model::TrainConfig training;
  fusion::GenerationConfig generation;
  fusion::AblationFlags ablation;
  std::vector<int> sweep_pairs;
  std::string eval_split = "test";
  int eval_max_samples = 0;  // 0: every sample

  model::PipelineConfig pipeline() const;
  // Per-stage seeds are fixed offsets of `seed`.
  std::uint64_t split_seed() const { return seed; }
  std::uint64_t init_seed() const { return seed + 1; }
  std::uint64_t shuffle_seed() const { return seed + 2; }
  std::uint64_t sampling_seed() const { return seed + 3; }
};

// Frozen constants taken from the published training setup.
namespace published {
inline constexpr int kMaxEncoderLength = 512;
inline constexpr int kMaxDecoderLength = 50;
inline constexpr double kLearningRate = 1.5e-5;
inline constexpr int kTrainBatch = 8;
inline constexpr int kEvalBatch = 16;
inline constexpr int kEpochs = 10;
inline constexpr int kTopK = 10;
inline constexpr double kTopP = 0.9;
inline constexpr double kRepetitionPenalty = 1.03;
inline constexpr int kPairs = 5;
inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
}  // namespace published

// A fully resolved configuration with the provenance of every key.
class ResolvedConfig {
 public:
  // Built-in defaults.
  ResolvedConfig();

  // Merges a JSON file. Relative paths resolve against the file's directory.
  void merge_file(const std::filesystem::path& path);
  void merge_json(const nlohmann::json& tree, Provenance source, const std::filesystem::path& base_dir = {});
  // "key=value" with a dotted key; the value is parsed as JSON when possible,
  // otherwise taken as a string.
  void apply_override(std::string_view assignment);
  // PRCCF_ARTIFACT_ROOT, when set, replaces paths.artifact_root.
  void apply_environment();

  // Throws ConfigError listing every violation.
  RunConfig build() const;
  // One "key = value  # provenance" line per key, sorted by key.
  std::string dump() const;
  // Stable digest of the resolved values.
  std::string fingerprint() const;

  const nlohmann::json& value(const std::string& key) const;
  Provenance provenance(const std::string& key) const;

 private:
  struct Entry {
    nlohmann::json value;
    Provenance provenance;
    Provenance default_provenance;
    bool is_path = false;
  };
  void set(const std::string& key, nlohmann::json value, Provenance source, const std::filesystem::path& base_dir);
  std::map<std::string, Entry> entries_;
  std::vector<std::string> errors_;
};

// Defaults, then the optional file, then the environment, then overrides.
ResolvedConfig resolve(const std::filesystem::path& file, const std::vector<std::string>& overrides);

}  // namespace prccf::config
