#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace prccf::corpus {

enum class Speaker { kSeeker, kSupporter };

std::string_view speaker_name(Speaker s);

struct StrategyLabel {
  int id = 0;
  std::string name;

  bool operator==(const StrategyLabel&) const = default;
};

// Ordered list of the eight support strategies; index = label id.
class StrategyRegistry {
 public:
  static constexpr std::size_t kSize = 8;

  explicit StrategyRegistry(std::vector<std::string> names);
  static StrategyRegistry load(const std::filesystem::path& path);
  // Registry shipped in data/strategies.txt.
  static StrategyRegistry esconv_default();

  std::optional<StrategyLabel> find(std::string_view name) const;
  // Catch-all label for names outside the registry ("Others" when present).
  StrategyLabel catch_all() const;
  StrategyLabel label(int id) const;
  std::span<const std::string> names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::uint64_t hash() const;

 private:
  std::vector<std::string> names_;
};

struct Utterance {
  Speaker speaker = Speaker::kSeeker;
  std::string text;
  std::optional<StrategyLabel> strategy;  // set iff speaker == kSupporter
  int turn_index = 0;

  bool operator==(const Utterance&) const = default;
};

struct DialogueRecord {
  std::string dialogue_id;
  std::string situation;
  std::string emotion_label;
  std::string problem_type;
  std::vector<Utterance> utterances;
  std::optional<std::string> persona;

  bool operator==(const DialogueRecord&) const = default;
};

// One (u_i, s_i, r_i, p_i) unit of the retrieval corpus.
struct RetrievalEntry {
  std::string seeker_utterance;
  StrategyLabel strategy;
  std::string response;
  std::string persona;
  std::string problem_type;
  int source_index = 0;
  std::string dialogue_id;

  bool operator==(const RetrievalEntry&) const = default;
};

struct TrainingSample {
  std::vector<Utterance> context;  // history plus the current turn
  std::string target_response;
  StrategyLabel target_strategy;
  std::string persona;
  std::string emotion_label;
  std::string problem_type;
  std::string dialogue_id;
  int target_turn_index = 0;
};

enum class CorpusFormat { kCanonical, kEsconvRelease };

struct LoadResult {
  std::vector<DialogueRecord> records;
  std::vector<std::string> warnings;
};

LoadResult load_corpus(const std::filesystem::path& path, CorpusFormat format,
                       const StrategyRegistry& registry);

// Writes the canonical line-delimited format read back by load_corpus.
void save_corpus(const std::filesystem::path& path, std::span<const DialogueRecord> records);
std::string serialize_record(const DialogueRecord& record);

struct DatasetSplit {
  std::vector<DialogueRecord> train;
  std::vector<DialogueRecord> validation;
  std::vector<DialogueRecord> test;
};

// Dialogue-level split. Validation and test get floor(N * ratio) dialogues and
// the remainder goes to train. Deterministic for a fixed seed.
DatasetSplit split_dataset(std::span<const DialogueRecord> records, std::array<double, 3> ratios,
                           std::uint64_t seed);

struct PersonaAttachResult {
  std::vector<DialogueRecord> records;
  std::size_t unmatched = 0;
};

PersonaAttachResult attach_personas(std::vector<DialogueRecord> records,
                                    const std::filesystem::path& persona_file);

// Placeholder persona used for retrieval entries whose dialogue has none.
inline constexpr std::string_view kEmptyPersona = "none";

using RetrievalCorpus = std::map<std::string, std::vector<RetrievalEntry>>;

// Consecutive same-speaker turns are merged with '\n' before pairing each
// seeker block with the supporter block that follows it.
RetrievalCorpus build_retrieval_corpus(std::span<const DialogueRecord> train_records);

std::size_t corpus_size(const RetrievalCorpus& corpus);

// One sample per supporter turn with at least one predecessor.
std::vector<TrainingSample> derive_samples(std::span<const DialogueRecord> records,
                                           int max_context_turns);

// Index of the help-seeker's current utterance within a sample context: the
// last seeker turn, or the last turn when the context has no seeker turn.
std::size_t current_utterance_index(std::span<const Utterance> context);

}  // namespace prccf::corpus
