#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "prccf/config.hpp"
#include "prccf/evalkit.hpp"
#include "prccf/model.hpp"

namespace prccf::app {

// Artifact layout under the artifact root. Each directory has one producer.
struct Artifacts {
  std::filesystem::path root;

  std::filesystem::path corpus_dir() const { return root / "corpus"; }     // ingest
  std::filesystem::path split_file(std::string_view split) const;
  std::filesystem::path vocab_file() const { return corpus_dir() / "vocab.txt"; }
  std::filesystem::path index_file() const { return root / "index" / "retrieval.idx"; }  // index
  std::filesystem::path train_dir() const { return root / "train"; }        // train
  std::filesystem::path checkpoint_dir() const { return train_dir() / "best"; }
  std::filesystem::path training_log() const { return train_dir() / "training_log.jsonl"; }
  std::filesystem::path eval_dir() const { return root / "eval"; }          // eval
  std::filesystem::path ablation_dir() const { return root / "ablation"; }  // ablate
  std::filesystem::path sweep_dir() const { return root / "sweep"; }        // sweep-pairs
};

// Adapters and artifacts shared by the commands.
class Workspace {
 public:
  explicit Workspace(config::RunConfig cfg);
  ~Workspace();

  const config::RunConfig& config() const { return cfg_; }
  const Artifacts& artifacts() const { return artifacts_; }
  const corpus::StrategyRegistry& registry() const { return registry_; }
  retriever::DualEncoder encoder() const;

  std::vector<corpus::DialogueRecord> load_split(std::string_view split) const;
  const text::Vocabulary& vocab() const;
  const retriever::RetrievalIndex& index() const;

  // Resources for `flags`; adapters that the flags switch off are left out.
  model::PipelineResources resources(const text::Vocabulary& vocab, const fusion::AblationFlags& flags) const;

 private:
  config::RunConfig cfg_;
  Artifacts artifacts_;
  corpus::StrategyRegistry registry_;
  mutable std::optional<text::Vocabulary> vocab_;
  mutable std::optional<retriever::RetrievalIndex> index_;
  std::unique_ptr<cognition::KnowledgeAdapter> knowledge_;
  std::unique_ptr<cognition::FilterAdapter> filter_;
  std::shared_ptr<cognition::CauseAdapter> causes_;
};

struct IngestSummary {
  std::size_t dialogues = 0;
  std::size_t train = 0, validation = 0, test = 0;
  std::size_t unmatched_personas = 0;
  std::size_t vocab_size = 0;
  std::vector<std::string> warnings;
};

struct TrainOutcome {
  model::TrainSummary summary;
  std::filesystem::path checkpoint;
  evalkit::UpdateDynamics dynamics;
};

struct EvalOutcome {
  evalkit::MetricReport report;
  evalkit::Predictions predictions;
  std::string report_text;
};

struct AblationOutcome {
  std::vector<std::string> names;
  std::vector<evalkit::MetricReport> reports;
  std::vector<std::vector<std::string>> outputs;  // generated responses per variant
  std::string table;
};

IngestSummary cmd_ingest(const config::RunConfig& cfg, std::ostream& log);
std::size_t cmd_index(const config::RunConfig& cfg, std::ostream& log);
TrainOutcome cmd_train(const config::RunConfig& cfg, const std::string& config_fingerprint, std::ostream& log);
EvalOutcome cmd_eval(const config::RunConfig& cfg, const std::filesystem::path& checkpoint, std::ostream& log);
AblationOutcome cmd_ablate(const config::RunConfig& cfg, const std::vector<fusion::NamedAblation>& variants,
                           std::ostream& log);
evalkit::SweepReport cmd_sweep_pairs(const config::RunConfig& cfg, const std::vector<int>& values,
                                     std::ostream& log);
// Reads seeker turns and slash commands from `in` until EOF or /quit.
void cmd_chat(const config::RunConfig& cfg, const std::filesystem::path& checkpoint, std::istream& in,
              std::ostream& out);

// Trains one variant from scratch into `dir` (checkpoint + log).
TrainOutcome train_variant(const Workspace& ws, const fusion::AblationFlags& flags,
                           const config::RunConfig& cfg, const std::filesystem::path& dir,
                           const std::string& config_fingerprint, std::ostream& log);
// Perplexity and sampled generation over the configured evaluation split.
EvalOutcome evaluate_model(const Workspace& ws, const model::PrccfModel& model, const text::Vocabulary& vocab,
                           const config::RunConfig& cfg);

// Exit code for an exception: 2 config, 3 missing artifact, 4 numeric, 1 other.
int exit_code_for(const std::exception& e);

}  // namespace prccf::app
