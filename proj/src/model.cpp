#include "prccf/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prccf/errors.hpp"

namespace prccf::model {

using nn::Matrix;
using nn::Tensor;

void BackboneConfig::validate() const {
  if (vocab_size <= text::special::kCount) throw ContractViolation("vocab_size must exceed the special tokens");
  if (hidden < 1 || heads < 1 || hidden % heads != 0) throw ContractViolation("hidden must be divisible by heads");
  if (encoder_layers < 1 || decoder_layers < 1 || cog_layers < 1 || ref_layers < 1)
    throw ContractViolation("layer counts must be >= 1");
  if (max_positions < 2) throw ContractViolation("max_positions must be >= 2");
}

ContextTokens tokenize_context(std::span<const corpus::Utterance> context, std::size_t current_index,
                               const text::Vocabulary& vocab, std::size_t max_tokens) {
  if (context.empty()) throw ContractViolation("encode_context: empty context");
  if (current_index >= context.size()) throw ContractViolation("encode_context: current index out of range");
  if (max_tokens < 2) throw ContractViolation("encode_context: token budget too small");

  std::vector<std::vector<int>> pieces;
  pieces.reserve(context.size());
  for (const auto& u : context) {
    std::vector<int> ids;
    if (u.speaker == corpus::Speaker::kSeeker) {
      ids.push_back(text::special::kSeeker);
    } else {
      ids.push_back(text::special::kSupporter);
      if (u.strategy) ids.push_back(text::strategy_token(u.strategy->id));
    }
    const auto body = vocab.encode(u.text);
    ids.insert(ids.end(), body.begin(), body.end());
    pieces.push_back(std::move(ids));
  }

  // Walk back from the newest utterance while whole utterances fit.
  std::size_t first = pieces.size();
  std::size_t total = 0;
  while (first > 0 && total + pieces[first - 1].size() <= max_tokens) total += pieces[--first].size();

  ContextTokens out;
  out.current_index = static_cast<int>(current_index);
  if (first == pieces.size()) {
    // The newest utterance alone is over budget: keep its marker and tail.
    const auto& last = pieces.back();
    const std::size_t head = last.size() > 1 && last[1] >= text::special::kFirstStrategy &&
                                     last[1] < text::special::kCount
                                 ? 2
                                 : 1;
    out.ids.assign(last.begin(), last.begin() + static_cast<std::ptrdiff_t>(head));
    out.ids.insert(out.ids.end(), last.end() - static_cast<std::ptrdiff_t>(max_tokens - head), last.end());
    out.layout.assign(out.ids.size(), static_cast<int>(pieces.size() - 1));
    out.dropped_utterances = pieces.size() - 1;
    return out;
  }
  for (std::size_t i = first; i < pieces.size(); ++i) {
    out.ids.insert(out.ids.end(), pieces[i].begin(), pieces[i].end());
    out.layout.insert(out.layout.end(), pieces[i].size(), static_cast<int>(i));
  }
  out.dropped_utterances = first;
  return out;
}

void PipelineConfig::validate() const {
  retriever.validate();
  flags.validate();
  if (knowledge_k < 1) throw ContractViolation("knowledge k must be >= 1");
  if (max_context_tokens < 2 || max_context_tokens > 512) throw ContractViolation("context length must be in [2, 512]");
  if (max_knowledge_tokens < 4) throw ContractViolation("knowledge length must be >= 4");
  if (max_response_tokens < 3) throw ContractViolation("decoder length must be >= 3");
}

PipelineConfig apply_ablation(const fusion::AblationFlags& flags, PipelineConfig cfg) {
  flags.validate();
  cfg.flags = flags;
  if (!flags.use_persona_sim) cfg.retriever.beta = 0.0;
  return cfg;
}

Preprocessor::Preprocessor(PipelineResources resources, PipelineConfig cfg)
    : res_(std::move(resources)), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (!res_.vocab || !res_.registry) throw ContractViolation("preprocessor needs a vocabulary and a registry");
  if (cfg_.flags.use_pr && (!res_.index || !res_.encoder.query || !res_.encoder.passage))
    throw ContractViolation("retrieval enabled without an index and encoder");
  if (cfg_.flags.use_ccf && !res_.knowledge) throw ContractViolation("cognitive filtering enabled without knowledge");
  if (cfg_.flags.use_filter && !res_.filter) throw ContractViolation("filtering enabled without a filter adapter");
  if (cfg_.flags.use_causal && !res_.causes) throw ContractViolation("causal masking enabled without a cause adapter");
}

PreparedSample Preprocessor::prepare(const corpus::TrainingSample& sample,
                                     std::optional<std::string_view> exclude_dialogue) const {
  if (sample.context.empty()) throw ContractViolation("sample '" + sample.dialogue_id + "' has an empty context");
  const auto& vocab = *res_.vocab;
  const auto& flags = cfg_.flags;

  PreparedSample p;
  p.dialogue_id = sample.dialogue_id;
  p.target_turn_index = sample.target_turn_index;
  p.flags = flags;
  const auto current = corpus::current_utterance_index(sample.context);
  p.context = tokenize_context(sample.context, current, vocab, cfg_.max_context_tokens);
  const std::string& utterance = sample.context[current].text;

  if (flags.use_pr) {
    const std::string persona = sample.persona.empty() ? std::string(corpus::kEmptyPersona) : sample.persona;
    p.demonstrations = retriever::retrieve_topk(utterance, persona, sample.problem_type, *res_.index, res_.encoder,
                                                cfg_.retriever, exclude_dialogue);
    p.prompt = retriever::format_demonstrations(p.demonstrations, cfg_.retriever);
    p.prompt_ids = vocab.encode(p.prompt->text);
    if (p.prompt_ids.size() > 512) p.prompt_ids.resize(512);
    if (p.prompt_ids.empty()) p.prompt_ids.push_back(text::special::kSep);
  }

  if (flags.use_ccf) {
    auto candidates =
        cognition::expand_commonsense(utterance, cognition::kRelations, cfg_.knowledge_k, *res_.knowledge);
    if (flags.use_filter) {
      std::string context_text;
      for (const auto& u : sample.context) {
        if (!context_text.empty()) context_text += ' ';
        context_text += u.text;
      }
      for (auto& c : candidates) cognition::classify_relevance(c, context_text, *res_.filter);
    } else {
      cognition::accept_all(candidates);
    }
    p.knowledge = cognition::filter_bundle(std::move(candidates));
    const std::size_t per_relation = cfg_.max_knowledge_tokens / cognition::kAggregationOrder.size();
    for (const auto& seq : p.knowledge.aggregated()) {
      auto ids = vocab.encode(seq);
      if (ids.size() > per_relation) ids.resize(per_relation);
      if (ids.empty()) ids.push_back(text::special::kUnk);
      p.knowledge_ids.push_back(std::move(ids));
    }
    if (flags.use_causal) {
      p.causes = cognition::detect_emotion_causes(sample.context, current, sample.emotion_label, *res_.causes,
                                                  sample.dialogue_id);
      p.mask = cognition::build_causal_mask(p.context.layout, p.causes, static_cast<int>(current));
    } else {
      p.mask = cognition::all_ones_mask(p.context.layout);
    }
  }

  p.gold_strategy = sample.target_strategy.id;
  p.reference = sample.target_response;
  p.target_ids.push_back(text::strategy_token(sample.target_strategy.id));
  auto response = vocab.encode(sample.target_response);
  if (response.size() > cfg_.max_response_tokens - 2) response.resize(cfg_.max_response_tokens - 2);
  p.target_ids.insert(p.target_ids.end(), response.begin(), response.end());
  p.target_ids.push_back(text::special::kEos);
  return p;
}

std::vector<PreparedSample> Preprocessor::prepare_all(std::span<const corpus::TrainingSample> samples,
                                                      bool exclude_own_dialogue) const {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back(prepare(s, exclude_own_dialogue ? std::optional<std::string_view>(s.dialogue_id) : std::nullopt));
  return out;
}

PrccfModel::PrccfModel(const BackboneConfig& cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)),
      rng_(seed),
      token_table_(store_.add("backbone.tokens", kBackboneStage, nn::init_normal(rng_, cfg.vocab_size, cfg.hidden))),
      position_table_(
          store_.add("backbone.positions", kBackboneStage, nn::init_normal(rng_, cfg.max_positions, cfg.hidden))),
      encoder_(store_, rng_, "backbone.encoder", kBackboneStage, cfg.hidden, cfg.heads, cfg.encoder_layers),
      decoder_(store_, rng_, "backbone.decoder", kBackboneStage, cfg.hidden, cfg.heads, cfg.decoder_layers),
      lm_head_(store_.add("backbone.lm_head", kBackboneStage, nn::init_normal(rng_, cfg.hidden, cfg.vocab_size))),
      refiner_(store_, rng_, {cfg.hidden, cfg.heads, cfg.cog_layers, cfg.ref_layers}),
      fusion_(store_, cfg.hidden) {}

Tensor PrccfModel::embed(std::span<const int> ids) const {
  if (ids.empty()) throw ContractViolation("cannot embed an empty sequence");
  if (ids.size() > static_cast<std::size_t>(cfg_.max_positions))
    throw ContractViolation("sequence of " + std::to_string(ids.size()) + " tokens exceeds " +
                            std::to_string(cfg_.max_positions) + " positions");
  for (int id : ids)
    if (id < 0 || id >= cfg_.vocab_size) throw ContractViolation("token id " + std::to_string(id) + " out of range");
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  return nn::add(nn::embedding(token_table_, ids), nn::embedding(position_table_, positions));
}

Tensor PrccfModel::encode(std::span<const int> ids) const { return encoder_(embed(ids)); }

ContextEncoding PrccfModel::encode_context(const ContextTokens& tokens) const {
  if (tokens.ids.size() != tokens.layout.size()) throw ContractViolation("context layout does not cover the sequence");
  return {encode(tokens.ids), tokens.layout};
}

Tensor PrccfModel::encode_knowledge(std::span<const std::vector<int>> relation_ids) const {
  if (relation_ids.empty()) throw ContractViolation("no knowledge sequences");
  std::vector<Tensor> parts;
  for (const auto& ids : relation_ids) parts.push_back(encode(ids));
  return nn::concat_rows(parts);
}

namespace {

void check_finite(const Tensor& t, const std::string& stage) {
  if (!nn::all_finite(t.value())) throw NumericError(stage, "non-finite values");
}

std::vector<int> decoder_input_for(const PreparedSample& s) {
  std::vector<int> in{text::special::kBos};
  in.insert(in.end(), s.target_ids.begin(), s.target_ids.end() - 1);
  return in;
}

}  // namespace

PrccfModel::Sources PrccfModel::sources(const PreparedSample& sample) const {
  Sources s;
  s.context = encode_context(sample.context);
  check_finite(s.context.H_CTX, "context encoder");
  if (sample.flags.use_pr) {
    if (sample.prompt_ids.empty()) throw ContractViolation("retrieval enabled but the sample has no prompt");
    s.H_P = encode(sample.prompt_ids);
  }
  if (sample.flags.use_ccf) {
    s.cognition = refiner_.refine(encode_knowledge(sample.knowledge_ids), s.context.H_CTX, sample.mask);
  }
  return s;
}

Tensor PrccfModel::decoder_logits(std::span<const int> decoder_input, const Tensor& memory) const {
  return nn::matmul(decoder_(embed(decoder_input), memory), lm_head_);
}

Tensor PrccfModel::decode_loss(const PreparedSample& sample, const Tensor& memory, Tensor* logits) const {
  const auto input = decoder_input_for(sample);
  Tensor out = decoder_logits(input, memory);
  check_finite(out, "decoder");
  if (logits) *logits = out;
  return nn::nll_loss(out, sample.target_ids);
}

PrccfModel::Forward PrccfModel::forward(const PreparedSample& sample) const {
  auto src = sources(sample);
  Forward f;
  f.fusion = fusion_.fuse(src.context.H_CTX, src.H_P,
                          src.cognition ? std::optional<Tensor>(src.cognition->H_C) : std::nullopt, sample.flags);
  check_finite(f.fusion.H_fin_norm, "fusion");
  f.loss = decode_loss(sample, f.fusion.H_fin_norm, &f.logits);
  check_finite(f.loss, "loss");
  f.context = std::move(src.context);
  f.H_P = std::move(src.H_P);
  f.cognition = std::move(src.cognition);
  return f;
}

Tensor PrccfModel::memory(const PreparedSample& sample) const {
  auto src = sources(sample);
  return fusion_
      .fuse(src.context.H_CTX, src.H_P, src.cognition ? std::optional<Tensor>(src.cognition->H_C) : std::nullopt,
            sample.flags)
      .H_fin_norm;
}

std::vector<double> PrccfModel::response_token_nll(const PreparedSample& sample) const {
  nn::NoGradGuard guard;
  const auto input = decoder_input_for(sample);
  const Matrix logits = decoder_logits(input, memory(sample)).value();
  const auto nll = nn::token_nll(logits, sample.target_ids);
  std::vector<double> out(nll.begin() + 1, nll.end());
  for (double v : out)
    if (!std::isfinite(v)) throw NumericError("perplexity", "non-finite token NLL");
  return out;
}

Matrix PrccfModel::gate_input(const PreparedSample& sample) const {
  if (!sample.flags.use_ccf) throw ContractViolation("gate input needs cognitive filtering enabled");
  nn::NoGradGuard guard;
  return sources(sample).cognition->H_ref.value();
}

Tensor PrccfModel::loss_from_gate_input(const PreparedSample& sample, const Tensor& h_ref) const {
  if (!sample.flags.use_ccf) throw ContractViolation("gate input needs cognitive filtering enabled");
  const ContextEncoding ctx = encode_context(sample.context);
  std::optional<Tensor> H_P;
  if (sample.flags.use_pr) H_P = encode(sample.prompt_ids);
  const Tensor H_C = refiner_.select(cognition::cognitive_gate(h_ref));
  const auto state = fusion_.fuse(ctx.H_CTX, H_P, H_C, sample.flags);
  return decode_loss(sample, state.H_fin_norm, nullptr);
}

GenerationResult PrccfModel::generate(const PreparedSample& sample, const fusion::GenerationConfig& cfg,
                                      const text::Vocabulary& vocab, const corpus::StrategyRegistry& registry) const {
  cfg.validate();
  if (vocab.size() > static_cast<std::size_t>(cfg_.vocab_size))
    throw ContractViolation("vocabulary is larger than the model's embedding table");
  nn::NoGradGuard guard;
  const Tensor mem = memory(sample);
  check_finite(mem, "fusion");

  std::vector<int> input{text::special::kBos};
  GenerationResult out;
  {
    const Matrix logits = decoder_logits(input, mem).value();
    const auto row = logits.row(logits.rows() - 1);
    const int n = static_cast<int>(registry.size());
    double m = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) m = std::max(m, row(text::strategy_token(i)));
    out.strategy_probs.resize(static_cast<std::size_t>(n));
    double z = 0.0;
    for (int i = 0; i < n; ++i) z += out.strategy_probs[static_cast<std::size_t>(i)] = std::exp(row(text::strategy_token(i)) - m);
    for (auto& p : out.strategy_probs) p /= z;
    out.ranked_strategies.resize(static_cast<std::size_t>(n));
    std::iota(out.ranked_strategies.begin(), out.ranked_strategies.end(), 0);
    std::stable_sort(out.ranked_strategies.begin(), out.ranked_strategies.end(), [&](int a, int b) {
      return out.strategy_probs[static_cast<std::size_t>(a)] > out.strategy_probs[static_cast<std::size_t>(b)];
    });
    out.strategy = registry.label(out.ranked_strategies.front());
    input.push_back(text::strategy_token(out.strategy.id));
  }

  nn::Rng rng(cfg.seed);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  while (out.token_ids.size() < static_cast<std::size_t>(cfg.max_new_tokens)) {
    const Matrix logits = decoder_logits(input, mem).value();
    std::vector<double> row(logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j) row[static_cast<std::size_t>(j)] = logits(logits.rows() - 1, j);
    for (std::size_t j = 0; j < row.size(); ++j)
      if ((j < static_cast<std::size_t>(text::special::kCount) && j != static_cast<std::size_t>(text::special::kEos)) ||
          j >= vocab.size())
        row[j] = neg_inf;
    fusion::apply_repetition_penalty(row, out.token_ids, cfg.repetition_penalty);
    const auto probs = fusion::truncated_distribution(row, cfg.top_k, cfg.top_p);
    const int token = fusion::sample_index(probs, rng);
    if (token == text::special::kEos) break;
    out.token_ids.push_back(token);
    input.push_back(token);
  }
  out.text = vocab.decode(out.token_ids);
  return out;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ContractViolation("learning rate must be positive");
  if (batch_size < 1 || eval_batch_size < 1) throw ContractViolation("batch sizes must be >= 1");
  if (epochs < 1) throw ContractViolation("epochs must be >= 1");
  if (max_steps < 0) throw ContractViolation("max_steps must be >= 0");
}

std::string to_json_line(const TrainLogRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["loss"] = r.loss;
  j["ppl"] = r.ppl;
  j["lr"] = r.lr;
  j["delta"] = r.delta;
  return j.dump();
}

TrainLogRecord parse_log_line(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    TrainLogRecord r;
    r.step = j.at("step").get<int>();
    r.epoch = j.at("epoch").get<int>();
    r.loss = j.at("loss").get<double>();
    r.ppl = j.at("ppl").get<double>();
    r.lr = j.at("lr").get<double>();
    if (j.contains("delta")) r.delta = j.at("delta").get<std::map<std::string, double>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ReportError(std::string("malformed training log record: ") + e.what());
  }
}

std::vector<TrainLogRecord> load_training_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path.string(), "train");
  std::vector<TrainLogRecord> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(parse_log_line(line));
  return out;
}

StepResult train_step(PrccfModel& model, std::span<const PreparedSample* const> batch, nn::Adam& optimizer,
                      double lr) {
  if (batch.empty()) throw ContractViolation("train_step: empty batch");
  model.parameters().zero_grad();
  StepResult r;
  double nll_sum = 0.0;
  std::size_t nll_count = 0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto* sample : batch) {
    auto f = model.forward(*sample);
    const double loss = f.loss.item();
    if (!std::isfinite(loss)) throw NumericError("training", "non-finite loss");
    r.loss += loss * inv;
    const auto nll = nn::token_nll(f.logits.value(), sample->target_ids);
    nll_sum += std::accumulate(nll.begin() + 1, nll.end(), 0.0);
    nll_count += nll.size() - 1;
    nn::scale(f.loss, inv).backward();
  }
  r.ppl = std::exp(nll_sum / static_cast<double>(std::max<std::size_t>(nll_count, 1)));
  r.delta = optimizer.step(lr);
  for (const auto& p : model.parameters().all())
    if (!nn::all_finite(p.tensor.value())) throw NumericError("training", "parameter " + p.name + " became non-finite");
  return r;
}

double validation_perplexity(const PrccfModel& model, std::span<const PreparedSample> samples) {
  if (samples.empty()) throw ContractViolation("perplexity over an empty sample set");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    const auto nll = model.response_token_nll(s);
    sum += std::accumulate(nll.begin(), nll.end(), 0.0);
    count += nll.size();
  }
  const double ppl = std::exp(sum / static_cast<double>(count));
  if (!std::isfinite(ppl)) throw NumericError("perplexity", "non-finite perplexity");
  return ppl;
}

TrainSummary train(PrccfModel& model, std::span<const PreparedSample> train_set,
                   std::span<const PreparedSample> validation_set, const TrainConfig& cfg,
                   const std::function<void(const TrainLogRecord&)>& on_step) {
  cfg.validate();
  if (train_set.empty()) throw ContractViolation("train: empty training set");
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const int steps_per_epoch = static_cast<int>((train_set.size() + batch - 1) / batch);
  const int epochs = cfg.max_steps > 0 ? (cfg.max_steps + steps_per_epoch - 1) / steps_per_epoch : cfg.epochs;
  const int total_steps = cfg.max_steps > 0 ? cfg.max_steps : epochs * steps_per_epoch;

  nn::Adam optimizer(model.parameters(), cfg.adam);
  TrainSummary summary;
  std::vector<Matrix> best;
  int step = 0;
  std::vector<std::size_t> order(train_set.size());

  for (int epoch = 1; epoch <= epochs && step < total_steps; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    nn::Rng rng(cfg.seed + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next() % i]);

    for (std::size_t start = 0; start < order.size() && step < total_steps; start += batch) {
      std::vector<const PreparedSample*> items;
      for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) items.push_back(&train_set[order[i]]);
      const double lr =
          cfg.linear_decay ? cfg.lr * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps)) : cfg.lr;
      const auto r = train_step(model, items, optimizer, lr);
      ++step;
      TrainLogRecord rec{step, epoch, r.loss, r.ppl, lr, r.delta};
      summary.log.push_back(rec);
      if (on_step) on_step(rec);
    }

    if (!validation_set.empty()) {
      const double ppl = validation_perplexity(model, validation_set);
      summary.validation_ppl.push_back(ppl);
      if (summary.best_epoch == 0 || ppl < summary.best_validation_ppl) {
        summary.best_epoch = epoch;
        summary.best_validation_ppl = ppl;
        best.clear();
        for (const auto& p : model.parameters().all()) best.push_back(p.tensor.value());
      }
    }
  }
  if (!best.empty()) {
    auto& params = model.parameters().all();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.mutable_value() = best[i];
  }
  summary.steps = step;
  return summary;
}

namespace {

nlohmann::ordered_json backbone_json(const BackboneConfig& b) {
  nlohmann::ordered_json j;
  j["vocab_size"] = b.vocab_size;
  j["hidden"] = b.hidden;
  j["heads"] = b.heads;
  j["encoder_layers"] = b.encoder_layers;
  j["decoder_layers"] = b.decoder_layers;
  j["max_positions"] = b.max_positions;
  j["cog_layers"] = b.cog_layers;
  j["ref_layers"] = b.ref_layers;
  return j;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const PrccfModel& model, const text::Vocabulary& vocab,
                     const CheckpointInfo& info) {
  std::filesystem::create_directories(dir);
  model.parameters().save(dir / "parameters.bin");
  vocab.save(dir / "vocab.txt");

  nlohmann::ordered_json fw;
  const auto& w = model.fusion_layer().weights().value();
  const Matrix lambda = model.fusion_layer().lambda(fusion::AblationFlags::full()).value();
  fw["w"] = std::vector<double>(w.data(), w.data() + w.size());
  fw["lambda"] = std::vector<double>(lambda.data(), lambda.data() + lambda.size());
  std::ofstream(dir / "fusion_weights.json") << fw.dump(2) << '\n';

  nlohmann::ordered_json m;
  m["backbone"] = backbone_json(info.backbone);
  m["config_fingerprint"] = info.config_fingerprint;
  m["registry_hash"] = info.registry_hash;
  m["vocab_fingerprint"] = vocab.fingerprint();
  m["best_epoch"] = info.best_epoch;
  m["best_validation_ppl"] = info.best_validation_ppl;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw LoadError("cannot write checkpoint manifest in " + dir.string());
  out << m.dump(2) << '\n';
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path.string(), "train");
  try {
    const auto m = nlohmann::json::parse(in);
    CheckpointInfo info;
    const auto& b = m.at("backbone");
    info.backbone.vocab_size = b.at("vocab_size");
    info.backbone.hidden = b.at("hidden");
    info.backbone.heads = b.at("heads");
    info.backbone.encoder_layers = b.at("encoder_layers");
    info.backbone.decoder_layers = b.at("decoder_layers");
    info.backbone.max_positions = b.at("max_positions");
    info.backbone.cog_layers = b.at("cog_layers");
    info.backbone.ref_layers = b.at("ref_layers");
    info.config_fingerprint = m.at("config_fingerprint");
    info.registry_hash = m.at("registry_hash");
    info.vocab_fingerprint = m.at("vocab_fingerprint");
    info.best_epoch = m.at("best_epoch");
    info.best_validation_ppl = m.at("best_validation_ppl");
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir, const corpus::StrategyRegistry& registry) {
  LoadedCheckpoint out;
  out.info = read_checkpoint_info(dir);
  if (out.info.registry_hash != registry.hash())
    throw LoadError(dir.string() + ": checkpoint was trained with a different strategy registry");
  out.vocab = text::Vocabulary::load(dir / "vocab.txt");
  if (out.vocab.fingerprint() != out.info.vocab_fingerprint)
    throw LoadError(dir.string() + ": vocabulary does not match the manifest");
  out.model = std::make_unique<PrccfModel>(out.info.backbone, 0);
  out.model->parameters().load(dir / "parameters.bin");
  return out;
}

}  // namespace prccf::model
