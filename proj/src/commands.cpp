#include "prccf/app.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prccf/errors.hpp"

namespace prccf::app {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::filesystem::path Artifacts::split_file(std::string_view split) const {
  return corpus_dir() / (std::string(split) + ".jsonl");
}

namespace {

void require_file(const fs::path& path, const char* producer) {
  if (!fs::exists(path)) throw MissingArtifact(path.string(), producer);
}

void require_input(const fs::path& path, const char* key) {
  if (path.empty()) throw ConfigError(std::string(key) + " is not set");
  if (!fs::exists(path)) throw ConfigError(std::string(key) + ": no such file " + path.string());
}

void write_text(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out << content;
}

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string slug(std::string_view name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c)))
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else if (!out.empty() && out.back() != '_')
      out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

}  // namespace

Workspace::Workspace(config::RunConfig cfg)
    : cfg_(std::move(cfg)),
      artifacts_{cfg_.paths.artifact_root},
      registry_(cfg_.paths.strategies.empty() ? corpus::StrategyRegistry::esconv_default()
                                              : corpus::StrategyRegistry::load(cfg_.paths.strategies)) {
  if (cfg_.ablation.use_ccf) {
    require_input(cfg_.paths.knowledge, "paths.knowledge");
    knowledge_ = std::make_unique<cognition::TableKnowledgeAdapter>(
        cognition::TableKnowledgeAdapter::load(cfg_.paths.knowledge));
  } else if (!cfg_.paths.knowledge.empty() && fs::exists(cfg_.paths.knowledge)) {
    knowledge_ = std::make_unique<cognition::TableKnowledgeAdapter>(
        cognition::TableKnowledgeAdapter::load(cfg_.paths.knowledge));
  }
  filter_ = std::make_unique<cognition::KeywordFilterAdapter>(cfg_.cognition.filter_markers);
  auto keyword = std::make_shared<cognition::KeywordCauseAdapter>(cfg_.cognition.cause_keywords);
  if (cfg_.cognition.cause_backend == "cached") {
    require_input(cfg_.paths.cause_cache, "paths.cause_cache");
    causes_ = std::make_shared<cognition::CachedCauseAdapter>(
        cognition::CachedCauseAdapter::load(cfg_.paths.cause_cache, keyword));
  } else {
    causes_ = keyword;
  }
}

Workspace::~Workspace() = default;

retriever::DualEncoder Workspace::encoder() const {
  return retriever::DualEncoder::tied(std::make_shared<retriever::HashEncoder>(
      static_cast<std::size_t>(cfg_.encoder.dimension), cfg_.encoder.seed,
      static_cast<std::size_t>(retriever::RetrieverConfig::kEncoderInputLimit)));
}

std::vector<corpus::DialogueRecord> Workspace::load_split(std::string_view split) const {
  const auto path = artifacts_.split_file(split);
  require_file(path, "ingest");
  return corpus::load_corpus(path, corpus::CorpusFormat::kCanonical, registry_).records;
}

const text::Vocabulary& Workspace::vocab() const {
  if (!vocab_) {
    require_file(artifacts_.vocab_file(), "ingest");
    vocab_ = text::Vocabulary::load(artifacts_.vocab_file());
  }
  return *vocab_;
}

const retriever::RetrievalIndex& Workspace::index() const {
  if (!index_) {
    require_file(artifacts_.index_file(), "index");
    index_ = retriever::RetrievalIndex::load(artifacts_.index_file(), encoder());
  }
  return *index_;
}

model::PipelineResources Workspace::resources(const text::Vocabulary& vocab,
                                              const fusion::AblationFlags& flags) const {
  model::PipelineResources r;
  r.vocab = &vocab;
  r.registry = &registry_;
  if (flags.use_pr) {
    r.index = &index();
    r.encoder = encoder();
  }
  if (flags.use_ccf) {
    if (!knowledge_) throw ConfigError("paths.knowledge is not set");
    r.knowledge = knowledge_.get();
  }
  if (flags.use_filter) r.filter = filter_.get();
  if (flags.use_causal) r.causes = causes_.get();
  return r;
}

IngestSummary cmd_ingest(const config::RunConfig& cfg, std::ostream& log) {
  require_input(cfg.paths.corpus, "paths.corpus");
  const auto registry = cfg.paths.strategies.empty() ? corpus::StrategyRegistry::esconv_default()
                                                     : corpus::StrategyRegistry::load(cfg.paths.strategies);
  auto loaded = corpus::load_corpus(cfg.paths.corpus, cfg.paths.corpus_format, registry);
  IngestSummary s;
  s.warnings = loaded.warnings;
  auto records = std::move(loaded.records);
  if (!cfg.paths.personas.empty()) {
    require_input(cfg.paths.personas, "paths.personas");
    auto attached = corpus::attach_personas(std::move(records), cfg.paths.personas);
    records = std::move(attached.records);
    s.unmatched_personas = attached.unmatched;
  }
  const double train_ratio = 1.0 - cfg.validation_ratio - cfg.test_ratio;
  const auto split =
      corpus::split_dataset(records, {train_ratio, cfg.validation_ratio, cfg.test_ratio}, cfg.split_seed());

  const Artifacts a{cfg.paths.artifact_root};
  fs::create_directories(a.corpus_dir());
  corpus::save_corpus(a.split_file("train"), split.train);
  corpus::save_corpus(a.split_file("validation"), split.validation);
  corpus::save_corpus(a.split_file("test"), split.test);

  // Vocabulary: training text plus everything the pipeline feeds the model.
  std::vector<std::string> texts;
  for (const auto& r : split.train) {
    for (const auto& u : r.utterances) texts.push_back(u.text);
    texts.push_back(r.persona.value_or(std::string(corpus::kEmptyPersona)));
  }
  for (const auto& n : registry.names()) texts.push_back(n);
  texts.emplace_back("[User: ] [Persona: ] [STRATEGY: ] [SYSTEM: ] none");
  if (!cfg.paths.knowledge.empty() && fs::exists(cfg.paths.knowledge)) {
    std::ifstream in(cfg.paths.knowledge);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_object() && j.contains("inference") && j["inference"].is_string())
        texts.push_back(j["inference"].get<std::string>());
    }
  }
  const auto vocab = text::Vocabulary::build(texts, static_cast<std::size_t>(cfg.backbone.vocab_size));
  vocab.save(a.vocab_file());

  s.dialogues = records.size();
  s.train = split.train.size();
  s.validation = split.validation.size();
  s.test = split.test.size();
  s.vocab_size = vocab.size();

  ordered_json report;
  report["dialogues"] = s.dialogues;
  report["train"] = s.train;
  report["validation"] = s.validation;
  report["test"] = s.test;
  report["unmatched_personas"] = s.unmatched_personas;
  report["vocab_size"] = s.vocab_size;
  report["warnings"] = s.warnings;
  write_text(a.corpus_dir() / "ingest_report.json", report.dump(2) + "\n");

  log << "ingested " << s.dialogues << " dialogues: train " << s.train << ", validation " << s.validation
      << ", test " << s.test << "\n";
  if (s.unmatched_personas) log << s.unmatched_personas << " dialogue(s) without a persona\n";
  for (const auto& w : s.warnings) log << "warning: " << w << "\n";
  log << "vocabulary: " << s.vocab_size << " tokens\n";
  return s;
}

std::size_t cmd_index(const config::RunConfig& cfg, std::ostream& log) {
  Workspace ws(cfg);
  const auto train = ws.load_split("train");
  const auto corpus = corpus::build_retrieval_corpus(train);
  const auto index = retriever::RetrievalIndex::build(corpus, ws.encoder(), cfg.retriever.similarity);
  fs::create_directories(ws.artifacts().index_file().parent_path());
  index.save(ws.artifacts().index_file());
  log << "indexed " << index.size() << " entries in " << index.buckets().size() << " problem-type buckets\n";
  return index.size();
}

namespace {

std::vector<corpus::TrainingSample> samples_of(const Workspace& ws, std::string_view split, int max_samples) {
  const auto records = ws.load_split(split);
  auto samples = corpus::derive_samples(records, ws.config().max_context_turns);
  if (max_samples > 0 && samples.size() > static_cast<std::size_t>(max_samples))
    samples.resize(static_cast<std::size_t>(max_samples));
  return samples;
}

// Pre-tokens joined by spaces, so references split like decoded hypotheses.
std::string metric_text(std::string_view raw) {
  std::string out;
  for (const auto& t : text::pretokenize(raw)) {
    if (!out.empty()) out += ' ';
    out += t.token;
  }
  return out;
}

void check_vocab_fits(const text::Vocabulary& vocab, const model::BackboneConfig& b) {
  if (vocab.size() > static_cast<std::size_t>(b.vocab_size))
    throw ConfigError("vocabulary has " + std::to_string(vocab.size()) + " tokens but model.vocab_size is " +
                      std::to_string(b.vocab_size));
}

}  // namespace

TrainOutcome train_variant(const Workspace& ws, const fusion::AblationFlags& flags, const config::RunConfig& cfg,
                           const fs::path& dir, const std::string& config_fingerprint, std::ostream& log) {
  const auto& vocab = ws.vocab();
  check_vocab_fits(vocab, cfg.backbone);
  auto pipeline_cfg = model::apply_ablation(flags, cfg.pipeline());
  const model::Preprocessor prep(ws.resources(vocab, flags), pipeline_cfg);

  const auto train_samples = samples_of(ws, "train", 0);
  const auto val_samples = samples_of(ws, "validation", 0);
  const auto train_set = prep.prepare_all(train_samples, true);
  const auto val_set = prep.prepare_all(val_samples, false);

  model::PrccfModel net(cfg.backbone, cfg.init_seed());
  fs::create_directories(dir);
  std::ofstream log_file(dir / "training_log.jsonl", std::ios::binary);
  if (!log_file) throw LoadError("cannot write " + (dir / "training_log.jsonl").string());

  TrainOutcome out;
  out.summary = model::train(net, train_set, val_set, cfg.training, [&](const model::TrainLogRecord& r) {
    log_file << model::to_json_line(r) << '\n';
  });
  log_file.close();

  model::CheckpointInfo info;
  info.backbone = cfg.backbone;
  info.config_fingerprint = config_fingerprint;
  info.registry_hash = ws.registry().hash();
  info.best_epoch = out.summary.best_epoch;
  info.best_validation_ppl = out.summary.best_validation_ppl;
  out.checkpoint = dir / "best";
  model::save_checkpoint(out.checkpoint, net, vocab, info);

  out.dynamics = evalkit::update_dynamics(out.summary.log, cognition::CognitiveRefiner::kStage);
  if (flags.use_ccf) write_text(dir / "update_dynamics.txt", evalkit::format_update_dynamics(out.dynamics));

  log << "trained " << out.summary.steps << " steps on " << train_set.size() << " samples";
  if (out.summary.best_epoch > 0)
    log << "; best epoch " << out.summary.best_epoch << " (validation PPL " << fmt(out.summary.best_validation_ppl)
        << ")";
  log << "\n";
  return out;
}

TrainOutcome cmd_train(const config::RunConfig& cfg, const std::string& config_fingerprint, std::ostream& log) {
  Workspace ws(cfg);
  auto out = train_variant(ws, cfg.ablation, cfg, ws.artifacts().train_dir(), config_fingerprint, log);
  if (cfg.ablation.use_ccf && !out.dynamics.all_nonzero())
    log << "warning: refinement stage had epochs without parameter updates\n";
  return out;
}

EvalOutcome evaluate_model(const Workspace& ws, const model::PrccfModel& net, const text::Vocabulary& vocab,
                           const config::RunConfig& cfg) {
  const auto samples = samples_of(ws, cfg.eval_split, cfg.eval_max_samples);
  if (samples.empty()) throw ContractViolation("evaluation split '" + cfg.eval_split + "' has no samples");
  const model::Preprocessor prep(ws.resources(vocab, cfg.ablation), cfg.pipeline());
  const auto prepared = prep.prepare_all(samples, false);

  EvalOutcome out;
  const double ppl = evalkit::perplexity(evalkit::ModelScorer(net), prepared).ppl;
  for (std::size_t i = 0; i < prepared.size(); ++i) {
    auto gen_cfg = cfg.generation;
    gen_cfg.seed = cfg.generation.seed + i;
    const auto g = net.generate(prepared[i], gen_cfg, vocab, ws.registry());
    out.predictions.hypotheses.push_back(g.text);
    out.predictions.references.push_back(metric_text(prepared[i].reference));
    out.predictions.rankings.push_back(g.ranked_strategies);
    out.predictions.golds.push_back(prepared[i].gold_strategy);
  }
  out.report = evalkit::compute_report(out.predictions, ppl);
  return out;
}

EvalOutcome cmd_eval(const config::RunConfig& cfg, const fs::path& checkpoint, std::ostream& log) {
  Workspace ws(cfg);
  const fs::path dir = checkpoint.empty() ? ws.artifacts().checkpoint_dir() : checkpoint;
  require_file(dir / "manifest.json", "train");
  auto loaded = model::load_checkpoint(dir, ws.registry());
  auto out = evaluate_model(ws, *loaded.model, loaded.vocab, cfg);

  const std::vector<std::string> names{"PRCCF"};
  std::ostringstream text;
  text << evalkit::format_metric_table(names, std::span(&out.report, 1));
  text << "top-n ACC(%):";
  for (double v : out.report.top_n) text << ' ' << fmt(v, 2);
  text << "\nF1: " << fmt(out.report.f1, 2) << "\nsamples: " << out.report.sample_count << "\n";
  out.report_text = text.str();

  const auto& a = ws.artifacts();
  write_text(a.eval_dir() / "report.txt", out.report_text);
  std::ostringstream preds;
  for (std::size_t i = 0; i < out.predictions.hypotheses.size(); ++i) {
    ordered_json j;
    j["gold_strategy"] = ws.registry().label(out.predictions.golds[i]).name;
    j["predicted_strategy"] = ws.registry().label(out.predictions.rankings[i].front()).name;
    j["ranking"] = out.predictions.rankings[i];
    j["hypothesis"] = out.predictions.hypotheses[i];
    j["reference"] = out.predictions.references[i];
    preds << j.dump() << '\n';
  }
  write_text(a.eval_dir() / "predictions.jsonl", preds.str());
  log << out.report_text;
  return out;
}

AblationOutcome cmd_ablate(const config::RunConfig& cfg, const std::vector<fusion::NamedAblation>& variants,
                           std::ostream& log) {
  Workspace ws(cfg);
  const auto fingerprint_base = std::string("ablation");
  AblationOutcome out;
  for (const auto& v : variants) {
    auto variant_cfg = cfg;
    variant_cfg.ablation = v.flags;
    const Workspace vws(variant_cfg);
    const auto dir = ws.artifacts().ablation_dir() / slug(v.name);
    std::ostringstream sink;
    const auto trained = train_variant(vws, v.flags, variant_cfg, dir, fingerprint_base + ":" + v.name, sink);
    auto loaded = model::load_checkpoint(trained.checkpoint, vws.registry());
    auto eval = evaluate_model(vws, *loaded.model, loaded.vocab, variant_cfg);
    out.names.push_back(v.name);
    out.reports.push_back(eval.report);
    out.outputs.push_back(eval.predictions.hypotheses);
    log << "variant " << v.name << ": PPL " << fmt(eval.report.ppl) << "\n";
  }
  out.table = evalkit::format_ablation_table(out.names, out.reports);
  write_text(ws.artifacts().ablation_dir() / "report.txt", out.table);
  log << out.table;
  return out;
}

evalkit::SweepReport cmd_sweep_pairs(const config::RunConfig& cfg, const std::vector<int>& values,
                                     std::ostream& log) {
  Workspace ws(cfg);
  const auto report = evalkit::pairs_sweep(values, [&](int pairs) {
    auto variant_cfg = cfg;
    variant_cfg.retriever.pairs = pairs;
    const Workspace vws(variant_cfg);
    const auto dir = ws.artifacts().sweep_dir() / ("pairs_" + std::to_string(pairs));
    std::ostringstream sink;
    const auto trained = train_variant(vws, variant_cfg.ablation, variant_cfg, dir, "sweep", sink);
    auto loaded = model::load_checkpoint(trained.checkpoint, vws.registry());
    const auto eval = evaluate_model(vws, *loaded.model, loaded.vocab, variant_cfg);
    log << "pairs=" << pairs << ": PPL " << fmt(eval.report.ppl) << "\n";
    return eval.report;
  });
  const auto text = evalkit::format_sweep_report(report);
  write_text(ws.artifacts().sweep_dir() / "report.txt", text);
  log << text;
  return report;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

void cmd_chat(const config::RunConfig& cfg, const fs::path& checkpoint, std::istream& in, std::ostream& out) {
  Workspace ws(cfg);
  const fs::path dir = checkpoint.empty() ? ws.artifacts().checkpoint_dir() : checkpoint;
  require_file(dir / "manifest.json", "train");
  auto loaded = model::load_checkpoint(dir, ws.registry());
  const auto& vocab = loaded.vocab;
  const model::Preprocessor prep(ws.resources(vocab, cfg.ablation), cfg.pipeline());

  std::string persona, problem, emotion;
  std::vector<corpus::Utterance> history;
  int turn = 0;
  out << "PRCCF chat. Commands: /persona <text>, /problem <type>, /emotion <label>, /reset, /quit\n";

  std::string line;
  while (std::getline(in, line)) {
    const auto text = trim(line);
    if (text.empty()) continue;
    if (text[0] == '/') {
      const auto space = text.find(' ');
      const auto cmd = text.substr(0, space);
      const auto arg = space == std::string::npos ? std::string() : trim(text.substr(space + 1));
      if (cmd == "/quit") break;
      if (cmd == "/reset") {
        history.clear();
        out << "[context cleared]\n";
      } else if (cmd == "/persona") {
        persona = arg;
        out << "[persona: " << (persona.empty() ? std::string(corpus::kEmptyPersona) : persona) << "]\n";
      } else if (cmd == "/problem") {
        problem = arg;
        out << "[problem: " << problem << "]\n";
      } else if (cmd == "/emotion") {
        emotion = arg;
        out << "[emotion: " << emotion << "]\n";
      } else {
        out << "[unknown command " << cmd << "]\n";
      }
      continue;
    }

    history.push_back({corpus::Speaker::kSeeker, text, std::nullopt, static_cast<int>(history.size())});
    corpus::TrainingSample sample;
    const std::size_t keep = static_cast<std::size_t>(cfg.max_context_turns);
    sample.context.assign(history.size() > keep ? history.end() - static_cast<std::ptrdiff_t>(keep) : history.begin(),
                          history.end());
    sample.persona = persona;
    sample.problem_type = problem;
    sample.emotion_label = emotion;
    sample.dialogue_id = "chat";
    sample.target_strategy = ws.registry().catch_all();
    const auto prepared = prep.prepare(sample);

    auto gen_cfg = cfg.generation;
    gen_cfg.seed = cfg.generation.seed + static_cast<std::uint64_t>(turn++);
    const auto g = loaded.model->generate(prepared, gen_cfg, vocab, ws.registry());

    out << "seeker> " << text << "\n";
    if (cfg.ablation.use_pr) {
      out << "  demonstrations:\n";
      for (std::size_t i = 0; i < prepared.demonstrations.size(); ++i) {
        const auto& d = prepared.demonstrations[i];
        out << "    " << i + 1 << ". score=" << fmt(d.score) << " " << retriever::format_block(d.entry) << "\n";
      }
    }
    if (cfg.ablation.use_ccf) {
      out << "  knowledge:\n";
      for (auto r : cognition::kAggregationOrder)
        out << "    " << cognition::relation_name(r) << ": " << prepared.knowledge.filtered.at(r) << "\n";
      out << "  cause utterances:";
      if (cfg.ablation.use_causal) {
        bool any = false;
        for (const auto& c : prepared.causes)
          if (c.is_cause) {
            out << ' ' << c.utterance_index;
            any = true;
          }
        if (!any) out << " none";
      } else {
        out << " (causal masking off)";
      }
      out << "\n";
    }
    out << "  strategy: " << g.strategy.name << " (p=" << fmt(g.strategy_probs[static_cast<std::size_t>(g.strategy.id)])
        << ")\n";
    out << "supporter> " << g.text << "\n";
    history.push_back({corpus::Speaker::kSupporter, g.text, g.strategy, static_cast<int>(history.size())});
  }
  out << "bye\n";
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const MissingArtifact*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

}  // namespace prccf::app
