#include "prccf/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "prccf/errors.hpp"
#include "prccf/text.hpp"

namespace prccf::config {

using json = nlohmann::json;

std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kPublished: return "published";
    case Provenance::kRepoDefault: return "repo-default";
    case Provenance::kFile: return "file";
    case Provenance::kOverride: return "override";
  }
  return "?";
}

model::PipelineConfig RunConfig::pipeline() const {
  model::PipelineConfig p;
  p.retriever = retriever;
  p.knowledge_k = cognition.k;
  p.max_context_tokens = max_context_tokens;
  p.max_knowledge_tokens = max_knowledge_tokens;
  p.max_response_tokens = max_response_tokens;
  return model::apply_ablation(ablation, p);
}

namespace {

struct Default {
  const char* key;
  json value;
  Provenance provenance;
  bool is_path = false;
};

std::vector<Default> defaults() {
  const auto P = Provenance::kPublished;
  const auto R = Provenance::kRepoDefault;
  return {
      {"seed", 42, R},
      {"paths.corpus", "", R, true},
      {"paths.corpus_format", "canonical", R},
      {"paths.personas", "", R, true},
      {"paths.knowledge", "", R, true},
      {"paths.cause_cache", "", R, true},
      {"paths.strategies", "", R, true},
      {"paths.artifact_root", "artifacts", R, true},
      {"split.validation", 0.1, P},
      {"split.test", 0.1, P},
      {"data.max_context_turns", 64, R},
      {"retriever.alpha", 0.7, R},
      {"retriever.beta", 0.3, R},
      {"retriever.pairs", published::kPairs, P},
      {"retriever.max_prompt_tokens", published::kMaxEncoderLength, P},
      {"retriever.similarity", "cosine", R},
      {"retriever.encoder", "hash", R},
      {"retriever.dimension", 64, R},
      {"retriever.encoder_seed", 0x5eed, R},
      {"cognition.k", 5, R},
      {"cognition.knowledge_backend", "table", R},
      {"cognition.filter_backend", "keyword", R},
      {"cognition.filter_markers", json::array(), R},
      {"cognition.cause_backend", "keyword", R},
      {"cognition.cause_keywords", json::array(), R},
      {"cognition.max_tokens", published::kMaxEncoderLength, P},
      {"model.vocab_size", 200, R},
      {"model.hidden", 64, R},
      {"model.heads", 4, R},
      {"model.encoder_layers", 2, R},
      {"model.decoder_layers", 2, R},
      {"model.cog_layers", 1, R},
      {"model.ref_layers", 1, R},
      {"model.max_encoder_length", published::kMaxEncoderLength, P},
      {"model.max_decoder_length", published::kMaxDecoderLength, P},
      {"training.lr", published::kLearningRate, P},
      {"training.batch_size", published::kTrainBatch, P},
      {"training.eval_batch_size", published::kEvalBatch, P},
      {"training.epochs", published::kEpochs, P},
      {"training.max_steps", 0, R},
      {"training.linear_decay", true, R},
      {"training.adam_beta1", published::kAdamBeta1, P},
      {"training.adam_beta2", published::kAdamBeta2, P},
      {"training.adam_eps", 1e-8, R},
      {"training.max_grad_norm", 1.0, R},
      {"generation.top_k", published::kTopK, P},
      {"generation.top_p", published::kTopP, P},
      {"generation.repetition_penalty", published::kRepetitionPenalty, P},
      {"generation.max_new_tokens", published::kMaxDecoderLength, P},
      {"ablation.use_pr", true, R},
      {"ablation.use_persona_sim", true, R},
      {"ablation.use_ccf", true, R},
      {"ablation.use_causal", true, R},
      {"ablation.use_filter", true, R},
      {"sweep.pairs", json::array({1, 2, 3, 4, 5, 6, 7}), R},
      {"eval.split", "test", R},
      {"eval.max_samples", 0, R},
  };
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return a.is_number_float() || !b.is_number_float();
  return a.type() == b.type();
}

void flatten(const json& tree, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  if (tree.is_object() && !tree.empty()) {
    for (const auto& [k, v] : tree.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out.emplace_back(prefix, tree);
  }
}

}  // namespace

ResolvedConfig::ResolvedConfig() {
  for (auto& d : defaults()) entries_[d.key] = {d.value, d.provenance, d.provenance, d.is_path};
}

void ResolvedConfig::set(const std::string& key, json value, Provenance source, const std::filesystem::path& base_dir) {
  const auto it = entries_.find(key);
  if (it == entries_.end()) {
    errors_.push_back("unknown key '" + key + "'");
    return;
  }
  auto& e = it->second;
  if (!same_kind(value, e.value)) {
    // Integers are accepted where reals are expected, not the other way round.
    if (!(e.value.is_number_float() && value.is_number())) {
      errors_.push_back("key '" + key + "' expects " + std::string(e.value.type_name()) + ", got " +
                        std::string(value.type_name()));
      return;
    }
    value = value.get<double>();
  }
  if (e.is_path && value.is_string()) {
    const std::filesystem::path p = value.get<std::string>();
    if (!p.empty() && p.is_relative() && !base_dir.empty()) value = (base_dir / p).lexically_normal().string();
  }
  e.value = std::move(value);
  e.provenance = source;
}

void ResolvedConfig::merge_json(const json& tree, Provenance source, const std::filesystem::path& base_dir) {
  if (!tree.is_object()) {
    errors_.push_back("config root must be an object");
    return;
  }
  std::vector<std::pair<std::string, json>> flat;
  flatten(tree, "", flat);
  for (auto& [k, v] : flat) set(k, std::move(v), source, base_dir);
}

void ResolvedConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json tree;
  try {
    tree = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  merge_json(tree, Provenance::kFile, std::filesystem::absolute(path).parent_path());
}

void ResolvedConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    errors_.push_back("override '" + std::string(assignment) + "' is not key=value");
    return;
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value;
  const auto it = entries_.find(key);
  if (it != entries_.end() && it->second.value.is_string()) {
    value = raw;
  } else {
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
  }
  set(key, std::move(value), Provenance::kOverride, std::filesystem::current_path());
}

void ResolvedConfig::apply_environment() {
  if (const char* root = std::getenv("PRCCF_ARTIFACT_ROOT"); root && *root)
    set("paths.artifact_root", std::string(root), Provenance::kOverride, std::filesystem::current_path());
}

const json& ResolvedConfig::value(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second.value;
}

Provenance ResolvedConfig::provenance(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second.provenance;
}

RunConfig ResolvedConfig::build() const {
  std::vector<std::string> errors = errors_;
  RunConfig c;
  auto get = [&](const char* key) -> const json& { return entries_.at(key).value; };
  auto integer = [&](const char* key, long long lo, long long hi) -> long long {
    const auto& v = get(key);
    if (!v.is_number_integer()) {
      errors.push_back(std::string(key) + ": expected an integer");
      return lo;
    }
    const auto x = v.get<long long>();
    if (x < lo || x > hi)
      errors.push_back(std::string(key) + " = " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                       std::to_string(hi) + "]");
    return x;
  };
  auto real = [&](const char* key, double lo, double hi, bool open_lo = false) -> double {
    const double x = get(key).get<double>();
    if (x < lo || x > hi || (open_lo && x == lo)) {
      std::ostringstream s;
      s << key << " = " << x << " outside " << (open_lo ? "(" : "[") << lo << ", " << hi << "]";
      errors.push_back(s.str());
    }
    return x;
  };
  auto strings = [&](const char* key) {
    std::vector<std::string> out;
    for (const auto& v : get(key)) {
      if (!v.is_string()) {
        errors.push_back(std::string(key) + ": expected strings");
        continue;
      }
      out.push_back(v.get<std::string>());
    }
    return out;
  };
  auto one_of = [&](const char* key, std::initializer_list<const char*> options) {
    const auto v = get(key).get<std::string>();
    for (const char* o : options)
      if (v == o) return v;
    std::string list;
    for (const char* o : options) list += (list.empty() ? "" : ", ") + std::string(o);
    errors.push_back(std::string(key) + " = '" + v + "' is not one of {" + list + "}");
    return v;
  };

  const auto seed = integer("seed", 0, std::numeric_limits<long long>::max());
  c.seed = static_cast<std::uint64_t>(seed);
  c.paths.corpus = get("paths.corpus").get<std::string>();
  c.paths.corpus_format = one_of("paths.corpus_format", {"canonical", "esconv"}) == "esconv"
                              ? corpus::CorpusFormat::kEsconvRelease
                              : corpus::CorpusFormat::kCanonical;
  c.paths.personas = get("paths.personas").get<std::string>();
  c.paths.knowledge = get("paths.knowledge").get<std::string>();
  c.paths.cause_cache = get("paths.cause_cache").get<std::string>();
  c.paths.strategies = get("paths.strategies").get<std::string>();
  c.paths.artifact_root = get("paths.artifact_root").get<std::string>();
  if (c.paths.artifact_root.empty()) errors.push_back("paths.artifact_root must not be empty");

  c.validation_ratio = real("split.validation", 0.0, 1.0);
  c.test_ratio = real("split.test", 0.0, 1.0);
  if (c.validation_ratio + c.test_ratio >= 1.0) errors.push_back("split.validation + split.test must be < 1");
  c.max_context_turns = static_cast<int>(integer("data.max_context_turns", 1, 1 << 20));

  c.retriever.alpha = real("retriever.alpha", 0.0, 1e9);
  c.retriever.beta = real("retriever.beta", 0.0, 1e9);
  if (c.retriever.alpha == 0.0 && c.retriever.beta == 0.0)
    errors.push_back("retriever.alpha and retriever.beta must not both be 0");
  c.retriever.pairs = static_cast<int>(integer("retriever.pairs", 1, 1 << 20));
  c.retriever.max_prompt_tokens = static_cast<int>(integer("retriever.max_prompt_tokens", 1, 512));
  c.retriever.similarity = one_of("retriever.similarity", {"cosine", "dot"}) == "dot" ? retriever::Similarity::kDot
                                                                                      : retriever::Similarity::kCosine;
  c.encoder.backend = one_of("retriever.encoder", {"hash"});
  c.encoder.dimension = static_cast<int>(integer("retriever.dimension", 1, 1 << 16));
  c.encoder.seed = static_cast<std::uint64_t>(integer("retriever.encoder_seed", 0, std::numeric_limits<long long>::max()));

  c.cognition.k = static_cast<int>(integer("cognition.k", 1, 1000));
  c.cognition.knowledge_backend = one_of("cognition.knowledge_backend", {"table"});
  c.cognition.filter_backend = one_of("cognition.filter_backend", {"keyword"});
  c.cognition.filter_markers = strings("cognition.filter_markers");
  c.cognition.cause_backend = one_of("cognition.cause_backend", {"keyword", "cached"});
  c.cognition.cause_keywords = strings("cognition.cause_keywords");
  c.max_knowledge_tokens = static_cast<std::size_t>(integer("cognition.max_tokens", 4, 512));

  c.backbone.vocab_size = static_cast<int>(integer("model.vocab_size", text::special::kCount + 1, 1 << 20));
  c.backbone.hidden = static_cast<int>(integer("model.hidden", 1, 1 << 14));
  c.backbone.heads = static_cast<int>(integer("model.heads", 1, 256));
  if (c.backbone.heads > 0 && c.backbone.hidden % c.backbone.heads != 0)
    errors.push_back("model.hidden must be divisible by model.heads");
  c.backbone.encoder_layers = static_cast<int>(integer("model.encoder_layers", 1, 64));
  c.backbone.decoder_layers = static_cast<int>(integer("model.decoder_layers", 1, 64));
  c.backbone.cog_layers = static_cast<int>(integer("model.cog_layers", 1, 64));
  c.backbone.ref_layers = static_cast<int>(integer("model.ref_layers", 1, 64));
  c.max_context_tokens = static_cast<std::size_t>(integer("model.max_encoder_length", 2, 512));
  c.max_response_tokens = static_cast<std::size_t>(integer("model.max_decoder_length", 3, 512));
  c.backbone.max_positions = 512;

  c.training.lr = real("training.lr", 0.0, 10.0, true);
  c.training.batch_size = static_cast<int>(integer("training.batch_size", 1, 1 << 16));
  c.training.eval_batch_size = static_cast<int>(integer("training.eval_batch_size", 1, 1 << 16));
  c.training.epochs = static_cast<int>(integer("training.epochs", 1, 1000));
  c.training.max_steps = static_cast<int>(integer("training.max_steps", 0, 1 << 30));
  c.training.linear_decay = get("training.linear_decay").get<bool>();
  c.training.adam.beta1 = real("training.adam_beta1", 0.0, 1.0);
  c.training.adam.beta2 = real("training.adam_beta2", 0.0, 1.0);
  c.training.adam.eps = real("training.adam_eps", 0.0, 1.0, true);
  c.training.adam.max_grad_norm = real("training.max_grad_norm", 0.0, 1e9);
  c.training.seed = c.shuffle_seed();

  c.generation.top_k = static_cast<int>(integer("generation.top_k", 1, 1 << 20));
  c.generation.top_p = real("generation.top_p", 0.0, 1.0, true);
  c.generation.repetition_penalty = real("generation.repetition_penalty", 1.0, 1e6);
  c.generation.max_new_tokens = static_cast<int>(integer("generation.max_new_tokens", 1, 1 << 16));
  c.generation.seed = c.sampling_seed();

  c.ablation.use_pr = get("ablation.use_pr").get<bool>();
  c.ablation.use_persona_sim = get("ablation.use_persona_sim").get<bool>();
  c.ablation.use_ccf = get("ablation.use_ccf").get<bool>();
  c.ablation.use_causal = get("ablation.use_causal").get<bool>();
  c.ablation.use_filter = get("ablation.use_filter").get<bool>();
  try {
    c.ablation.validate();
  } catch (const ContractViolation& e) {
    errors.push_back(std::string("ablation: ") + e.what());
  }

  for (const auto& v : get("sweep.pairs")) {
    if (!v.is_number_integer() || v.get<long long>() < 1) {
      errors.push_back("sweep.pairs: values must be positive integers");
      continue;
    }
    c.sweep_pairs.push_back(v.get<int>());
  }
  c.eval_split = one_of("eval.split", {"test", "validation", "train"});
  c.eval_max_samples = static_cast<int>(integer("eval.max_samples", 0, 1 << 30));

  if (!errors.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                      (errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return c;
}

std::string ResolvedConfig::dump() const {
  std::ostringstream out;
  for (const auto& [key, e] : entries_) {
    out << key << " = " << e.value.dump() << "  # " << provenance_name(e.provenance);
    if (e.provenance != e.default_provenance) out << " (default: " << provenance_name(e.default_provenance) << ")";
    out << '\n';
  }
  return out.str();
}

std::string ResolvedConfig::fingerprint() const {
  json flat = json::object();
  for (const auto& [key, e] : entries_)
    if (key.rfind("paths.", 0) != 0) flat[key] = e.value;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(text::fnv1a64(flat.dump())));
  return buf;
}

ResolvedConfig resolve(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  ResolvedConfig cfg;
  if (!file.empty()) cfg.merge_file(file);
  cfg.apply_environment();
  for (const auto& o : overrides) cfg.apply_override(o);
  return cfg;
}

}  // namespace prccf::config
