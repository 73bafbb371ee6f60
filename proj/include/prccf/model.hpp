#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prccf/cognition.hpp"
#include "prccf/corpus.hpp"
#include "prccf/fusion.hpp"
#include "prccf/retriever.hpp"
#include "prccf/text.hpp"

namespace prccf::model {

struct BackboneConfig {
  int vocab_size = 200;
  int hidden = 64;
  int heads = 4;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int max_positions = 512;
  int cog_layers = 1;
  int ref_layers = 1;

  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

// Token ids of a speaker-separated context. Seeker turns start with [SEEKER];
// supporter turns with [SUPPORTER] followed by their strategy token.
struct ContextTokens {
  std::vector<int> ids;
  cognition::TokenLayout layout;  // context utterance index per position
  int current_index = 0;
  std::size_t dropped_utterances = 0;
};

// Drops the oldest utterances whole until the sequence fits `max_tokens`.
// A single remaining utterance that is still too long keeps its last tokens.
ContextTokens tokenize_context(std::span<const corpus::Utterance> context, std::size_t current_index,
                               const text::Vocabulary& vocab, std::size_t max_tokens = 512);

struct ContextEncoding {
  nn::Tensor H_CTX;
  cognition::TokenLayout token_layout;
};

struct PipelineConfig {
  retriever::RetrieverConfig retriever;
  int knowledge_k = 5;
  fusion::AblationFlags flags;
  std::size_t max_context_tokens = 512;
  std::size_t max_knowledge_tokens = 512;  // over all four relations
  std::size_t max_response_tokens = 50;    // decoder length, strategy and EOS included

  void validate() const;
};

// Ablations: w/o PR drops retrieval and H_P, w/o Per_sim zeroes beta, w/o CCF
// drops H_C, w/o Causal uses the all-ones mask, w/o Filter marks everything RR.
PipelineConfig apply_ablation(const fusion::AblationFlags& flags, PipelineConfig cfg);

// Everything the non-differentiable preprocessing needs. Pointers are not owned.
struct PipelineResources {
  const text::Vocabulary* vocab = nullptr;
  const corpus::StrategyRegistry* registry = nullptr;
  const retriever::RetrievalIndex* index = nullptr;
  retriever::DualEncoder encoder;
  const cognition::KnowledgeAdapter* knowledge = nullptr;
  const cognition::FilterAdapter* filter = nullptr;
  const cognition::CauseAdapter* causes = nullptr;
};

// A training sample with retrieval, commonsense expansion, filtering and cause
// detection already applied.
struct PreparedSample {
  std::string dialogue_id;
  int target_turn_index = 0;
  fusion::AblationFlags flags;

  ContextTokens context;
  std::vector<retriever::ScoredCandidate> demonstrations;
  std::optional<retriever::DemonstrationPrompt> prompt;
  std::vector<int> prompt_ids;

  cognition::CommonsenseBundle knowledge;
  std::vector<std::vector<int>> knowledge_ids;  // aggregation order
  std::vector<cognition::CauseAnnotation> causes;
  cognition::CausalMask mask;

  std::vector<int> target_ids;  // strategy token, response tokens, EOS
  int gold_strategy = 0;
  std::string reference;
};

class Preprocessor {
 public:
  Preprocessor(PipelineResources resources, PipelineConfig cfg);

  // Retrieval skips entries from `exclude_dialogue` when given.
  PreparedSample prepare(const corpus::TrainingSample& sample,
                         std::optional<std::string_view> exclude_dialogue = std::nullopt) const;
  std::vector<PreparedSample> prepare_all(std::span<const corpus::TrainingSample> samples,
                                          bool exclude_own_dialogue) const;

  const PipelineConfig& config() const { return cfg_; }
  const PipelineResources& resources() const { return res_; }

 private:
  PipelineResources res_;
  PipelineConfig cfg_;
};

struct GenerationResult {
  std::string text;
  std::vector<int> token_ids;
  corpus::StrategyLabel strategy;
  std::vector<int> ranked_strategies;  // strategy ids, most probable first
  std::vector<double> strategy_probs;  // by strategy id
};

// Encoder-decoder backbone with the refinement and fusion stages on top.
class PrccfModel {
 public:
  static constexpr const char* kBackboneStage = "backbone";

  PrccfModel(const BackboneConfig& cfg, std::uint64_t seed);
  PrccfModel(const PrccfModel&) = delete;
  PrccfModel& operator=(const PrccfModel&) = delete;

  const BackboneConfig& config() const { return cfg_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  fusion::FusionLayer& fusion_layer() { return fusion_; }
  const fusion::FusionLayer& fusion_layer() const { return fusion_; }

  nn::Tensor encode(std::span<const int> ids) const;
  ContextEncoding encode_context(const ContextTokens& tokens) const;
  // Each relation sequence encoded separately, then stacked.
  nn::Tensor encode_knowledge(std::span<const std::vector<int>> relation_ids) const;

  struct Forward {
    ContextEncoding context;
    std::optional<nn::Tensor> H_P;
    std::optional<cognition::CognitiveState> cognition;
    fusion::FusionState fusion;
    nn::Tensor logits;  // one row per target token
    nn::Tensor loss;    // mean NLL over the target tokens
  };
  Forward forward(const PreparedSample& sample) const;

  // The fusion output handed to the decoder as memory.
  nn::Tensor memory(const PreparedSample& sample) const;
  nn::Tensor decoder_logits(std::span<const int> decoder_input, const nn::Tensor& memory) const;

  // Per-token NLL of the gold response and EOS; the strategy token is skipped.
  std::vector<double> response_token_nll(const PreparedSample& sample) const;

  // Input of the cognitive gate, and the loss as a function of it. Used for
  // gradient checks through the gate.
  nn::Matrix gate_input(const PreparedSample& sample) const;
  nn::Tensor loss_from_gate_input(const PreparedSample& sample, const nn::Tensor& h_ref) const;

  GenerationResult generate(const PreparedSample& sample, const fusion::GenerationConfig& cfg,
                            const text::Vocabulary& vocab, const corpus::StrategyRegistry& registry) const;

 private:
  struct Sources {
    ContextEncoding context;
    std::optional<nn::Tensor> H_P;
    std::optional<cognition::CognitiveState> cognition;
  };
  Sources sources(const PreparedSample& sample) const;
  nn::Tensor embed(std::span<const int> ids) const;
  nn::Tensor decode_loss(const PreparedSample& sample, const nn::Tensor& memory, nn::Tensor* logits) const;

  BackboneConfig cfg_;
  nn::ParameterStore store_;
  nn::Rng rng_;
  nn::Tensor token_table_;
  nn::Tensor position_table_;
  nn::TransformerEncoder encoder_;
  nn::TransformerDecoder decoder_;
  nn::Tensor lm_head_;
  cognition::CognitiveRefiner refiner_;
  fusion::FusionLayer fusion_;
};

struct TrainConfig {
  double lr = 1.5e-5;
  int batch_size = 8;
  int eval_batch_size = 16;
  int epochs = 10;
  int max_steps = 0;  // 0: run every epoch in full
  bool linear_decay = true;
  nn::AdamConfig adam;
  std::uint64_t seed = 42;

  void validate() const;
};

struct TrainLogRecord {
  int step = 0;
  int epoch = 0;
  double loss = 0.0;
  double ppl = 0.0;
  double lr = 0.0;
  std::map<std::string, double> delta;  // stage -> mean |delta param|
};

std::string to_json_line(const TrainLogRecord& record);
TrainLogRecord parse_log_line(std::string_view line);
std::vector<TrainLogRecord> load_training_log(const std::filesystem::path& path);

struct StepResult {
  double loss = 0.0;  // before the update
  double ppl = 0.0;   // exp of the mean response-token NLL in the batch
  std::map<std::string, double> delta;
};

// Mean over the batch of each sample's mean target-token NLL, then one
// optimizer step.
StepResult train_step(PrccfModel& model, std::span<const PreparedSample* const> batch, nn::Adam& optimizer,
                      double lr);

struct TrainSummary {
  std::vector<TrainLogRecord> log;
  std::vector<double> validation_ppl;  // per epoch
  int best_epoch = 0;                  // 1-based; 0 when there is no validation data
  double best_validation_ppl = 0.0;
  int steps = 0;
};

// Runs the loop, then restores the parameters of the epoch with the lowest
// validation perplexity.
TrainSummary train(PrccfModel& model, std::span<const PreparedSample> train_set,
                   std::span<const PreparedSample> validation_set, const TrainConfig& cfg,
                   const std::function<void(const TrainLogRecord&)>& on_step = {});

// exp(mean response-token NLL) over the samples.
double validation_perplexity(const PrccfModel& model, std::span<const PreparedSample> samples);

struct CheckpointInfo {
  BackboneConfig backbone;
  std::string config_fingerprint;
  std::uint64_t registry_hash = 0;
  std::uint64_t vocab_fingerprint = 0;
  int best_epoch = 0;
  double best_validation_ppl = 0.0;
};

void save_checkpoint(const std::filesystem::path& dir, const PrccfModel& model, const text::Vocabulary& vocab,
                     const CheckpointInfo& info);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

struct LoadedCheckpoint {
  std::unique_ptr<PrccfModel> model;
  text::Vocabulary vocab;
  CheckpointInfo info;
};

// Fails when the stored strategy registry differs from `registry`.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const corpus::StrategyRegistry& registry);

}  // namespace prccf::model
