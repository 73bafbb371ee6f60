#include "prccf/cognition.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "prccf/errors.hpp"
#include "prccf/text.hpp"

namespace prccf::cognition {

using nlohmann::json;

std::string_view relation_name(Relation r) {
  switch (r) {
    case Relation::kWant: return "xWant";
    case Relation::kNeed: return "xNeed";
    case Relation::kIntent: return "xIntent";
    case Relation::kEffect: return "xEffect";
  }
  return "?";
}

Relation parse_relation(std::string_view name) {
  for (auto r : kRelations)
    if (relation_name(r) == name) return r;
  throw LoadError("unknown relation '" + std::string(name) + "'");
}

std::string_view verdict_name(Verdict v) { return v == Verdict::kRelevant ? "RR" : "IR"; }

namespace {

std::string normalize(std::string_view s) {
  std::string out;
  for (const auto& t : text::pretokenize(s)) {
    if (!out.empty()) out.push_back(' ');
    out += t.token;
  }
  return out;
}

bool contains_any_token(std::string_view text_in, const std::vector<std::string>& words) {
  for (const auto& t : text::pretokenize(text_in))
    if (std::find(words.begin(), words.end(), t.token) != words.end()) return true;
  return false;
}

std::vector<std::string> lowercase_all(std::vector<std::string> words) {
  for (auto& w : words) w = normalize(w);
  return words;
}

}  // namespace

TableKnowledgeAdapter TableKnowledgeAdapter::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open knowledge table " + path.string());
  TableKnowledgeAdapter adapter;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto obj = json::parse(line);
      adapter.add(obj.at("source_text").get<std::string>(),
                  parse_relation(obj.at("relation").get<std::string>()), obj.at("rank").get<int>(),
                  obj.at("inference").get<std::string>());
    } catch (const json::exception& e) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return adapter;
}

void TableKnowledgeAdapter::add(std::string_view source, Relation relation, int rank, std::string inference) {
  table_[{normalize(source), relation}][rank] = std::move(inference);
  ++size_;
}

std::vector<std::string> TableKnowledgeAdapter::infer(std::string_view source, Relation relation, int k) const {
  std::vector<std::string> out;
  const auto it = table_.find({normalize(source), relation});
  if (it == table_.end()) return out;
  for (const auto& [rank, text] : it->second) {
    if (static_cast<int>(out.size()) >= k) break;
    out.push_back(text);
  }
  return out;
}

std::vector<CommonsenseCandidate> expand_commonsense(std::string_view source_text,
                                                     std::span<const Relation> relations, int k,
                                                     const KnowledgeAdapter& adapter) {
  if (k < 1) throw ContractViolation("k must be >= 1");
  std::vector<CommonsenseCandidate> out;
  for (auto r : relations) {
    std::vector<std::string> inferred;
    try {
      inferred = adapter.infer(source_text, r, k);
    } catch (const std::exception& e) {
      throw KnowledgeError("knowledge adapter failed for " + std::string(relation_name(r)) + ": " + e.what());
    }
    if (static_cast<int>(inferred.size()) > k) inferred.resize(static_cast<std::size_t>(k));
    for (auto& text : inferred) out.push_back({r, std::move(text), std::nullopt, false});
    for (int i = static_cast<int>(inferred.size()); i < k; ++i) out.push_back({r, {}, std::nullopt, true});
  }
  return out;
}

KeywordFilterAdapter::KeywordFilterAdapter(std::vector<std::string> markers)
    : markers_(lowercase_all(std::move(markers))) {}

Verdict KeywordFilterAdapter::classify(const CommonsenseCandidate& candidate, std::string_view) const {
  return contains_any_token(candidate.text, markers_) ? Verdict::kIrrelevant : Verdict::kRelevant;
}

Verdict classify_relevance(CommonsenseCandidate& candidate, std::string_view context_text,
                           const FilterAdapter& adapter) {
  if (candidate.padded || candidate.text.empty()) {
    candidate.verdict = Verdict::kIrrelevant;
    return *candidate.verdict;
  }
  try {
    candidate.verdict = adapter.classify(candidate, context_text);
  } catch (const std::exception& e) {
    throw FilterError(std::string("relevance filter failed: ") + e.what());
  }
  return *candidate.verdict;
}

void accept_all(std::span<CommonsenseCandidate> candidates) {
  for (auto& c : candidates)
    c.verdict = (c.padded || c.text.empty()) ? Verdict::kIrrelevant : Verdict::kRelevant;
}

std::vector<std::string> CommonsenseBundle::aggregated() const {
  std::vector<std::string> out;
  for (auto r : kAggregationOrder) out.push_back(filtered.at(r));
  return out;
}

CommonsenseBundle filter_bundle(std::vector<CommonsenseCandidate> candidates) {
  CommonsenseBundle bundle;
  for (auto r : kRelations) bundle.survivors[r];
  for (const auto& c : candidates) {
    if (!c.verdict) throw ContractViolation("filter_bundle: candidate without verdict");
    if (*c.verdict == Verdict::kRelevant) bundle.survivors[c.relation].push_back(c.text);
  }
  for (const auto& [r, texts] : bundle.survivors) {
    std::string joined;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (i) joined += kKnowledgeSeparator;
      joined += texts[i];
    }
    bundle.filtered[r] = texts.empty() ? std::string(kNoKnowledge) : joined;
  }
  bundle.candidates = std::move(candidates);
  return bundle;
}

KeywordCauseAdapter::KeywordCauseAdapter(std::vector<std::string> keywords)
    : keywords_(lowercase_all(std::move(keywords))) {}

bool KeywordCauseAdapter::is_cause(const CauseQuery& query) const {
  return contains_any_token(query.candidate.text, keywords_);
}

CachedCauseAdapter CachedCauseAdapter::load(const std::filesystem::path& path,
                                            std::shared_ptr<const CauseAdapter> fallback) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open cause cache " + path.string());
  CachedCauseAdapter adapter;
  adapter.fallback_ = std::move(fallback);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto obj = json::parse(line);
      adapter.cache_[{obj.at("dialogue_id").get<std::string>(), obj.at("turn_index").get<int>()}] =
          obj.at("is_cause").get<bool>();
    } catch (const json::exception& e) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return adapter;
}

bool CachedCauseAdapter::is_cause(const CauseQuery& query) const {
  const auto it = cache_.find({std::string(query.dialogue_id), query.candidate.turn_index});
  if (it != cache_.end()) return it->second;
  if (fallback_) return fallback_->is_cause(query);
  throw AdapterError("no cached cause annotation for " + std::string(query.dialogue_id) + " turn " +
                     std::to_string(query.candidate.turn_index));
}

void save_cause_cache(const std::filesystem::path& path, std::span<const CachedCause> entries) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write cause cache " + path.string());
  for (const auto& e : entries)
    out << json{{"dialogue_id", e.dialogue_id}, {"turn_index", e.turn_index}, {"is_cause", e.is_cause}}.dump()
        << '\n';
}

std::vector<CauseAnnotation> detect_emotion_causes(std::span<const corpus::Utterance> context,
                                                   std::size_t current_index, std::string_view emotion_label,
                                                   const CauseAdapter& adapter, std::string_view dialogue_id) {
  if (context.empty()) throw ContractViolation("detect_emotion_causes: empty context");
  if (current_index >= context.size()) throw ContractViolation("detect_emotion_causes: current index out of range");
  std::vector<CauseAnnotation> out;
  bool any = false;
  for (std::size_t i = 0; i < context.size(); ++i) {
    bool cause = false;
    try {
      cause = adapter.is_cause({dialogue_id, context[i], context[current_index], emotion_label});
    } catch (const std::exception& e) {
      throw CauseDetectionError(std::string("cause detector failed: ") + e.what());
    }
    any = any || cause;
    out.push_back({static_cast<int>(i), cause});
  }
  if (!any) out[current_index].is_cause = true;
  return out;
}

CausalMask build_causal_mask(const TokenLayout& token_layout, std::span<const CauseAnnotation> annotations,
                             int current_index) {
  const auto n_utt = static_cast<int>(annotations.size());
  std::vector<unsigned char> causal(annotations.size(), 0);
  for (const auto& a : annotations) {
    if (a.utterance_index < 0 || a.utterance_index >= n_utt)
      throw ContractViolation("cause annotation index out of range");
    causal[static_cast<std::size_t>(a.utterance_index)] = a.is_cause ? 1 : 0;
  }
  const auto t = static_cast<Eigen::Index>(token_layout.size());
  CausalMask mask;
  mask.token_layout = token_layout;
  mask.open_columns.resize(token_layout.size());
  for (std::size_t j = 0; j < token_layout.size(); ++j) {
    const int u = token_layout[j];
    if (u < 0 || u >= n_utt)
      throw ContractViolation("token layout gap at position " + std::to_string(j));
    mask.open_columns[j] = (causal[static_cast<std::size_t>(u)] || u == current_index) ? 1 : 0;
  }
  mask.matrix.resize(t, t);
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index j = 0; j < t; ++j)
      mask.matrix(i, j) = (i == j || mask.open_columns[static_cast<std::size_t>(j)]) ? 1 : 0;
  return mask;
}

CausalMask all_ones_mask(const TokenLayout& token_layout) {
  const auto t = static_cast<Eigen::Index>(token_layout.size());
  CausalMask mask;
  mask.token_layout = token_layout;
  mask.open_columns.assign(token_layout.size(), 1);
  mask.matrix = ByteMatrix::Ones(t, t);
  return mask;
}

ByteMatrix mixed_mask(const CausalMask& mask) {
  const auto t = mask.size();
  ByteMatrix out(2 * t, 2 * t);
  out.leftCols(t).setOnes();
  for (Eigen::Index j = 0; j < t; ++j) out.block(0, t + j, t, 1).setConstant(mask.open_columns[static_cast<std::size_t>(j)]);
  out.bottomRightCorner(t, t) = mask.matrix;
  return out;
}

nn::Tensor cognitive_gate(const nn::Tensor& h_ref) { return nn::mul(nn::sigmoid(h_ref), h_ref); }

CognitiveRefiner::CognitiveRefiner(nn::ParameterStore& store, nn::Rng& rng, const CognitiveConfig& cfg)
    : cls_(store.add("refinement.cls", kStage, nn::init_normal(rng, 1, cfg.hidden))),
      cog_encoder_(store, rng, "refinement.enc_cog", kStage, cfg.hidden, cfg.heads, cfg.cog_layers),
      ref_encoder_(store, rng, "refinement.enc_ref", kStage, cfg.hidden, cfg.heads, cfg.ref_layers),
      selector_in_(store, rng, "refinement.selector.in", kStage, cfg.hidden, cfg.hidden),
      selector_out_(store, rng, "refinement.selector.out", kStage, cfg.hidden, cfg.hidden) {}

nn::Tensor CognitiveRefiner::select(const nn::Tensor& gated) const {
  return selector_out_(nn::gelu(selector_in_(gated)));
}

namespace {
void check_finite(const nn::Tensor& t, const char* stage) {
  if (!nn::all_finite(t.value())) throw NumericError(stage, "non-finite values");
}
}  // namespace

CognitiveState CognitiveRefiner::refine(const nn::Tensor& knowledge, const nn::Tensor& context,
                                        const CausalMask& mask) const {
  if (mask.size() != context.rows())
    throw ContractViolation("causal mask covers " + std::to_string(mask.size()) + " positions, context has " +
                            std::to_string(context.rows()));
  if (knowledge.cols() != context.cols()) throw ContractViolation("knowledge/context hidden size mismatch");

  CognitiveState s;
  const std::array<nn::Tensor, 2> cog_in{cls_, knowledge};
  // Knowledge positions attend freely among themselves.
  s.H_com = cog_encoder_(nn::concat_rows(cog_in));
  check_finite(s.H_com, "cognitive encoder");
  s.h_com = nn::slice_rows(s.H_com, 0, 1);

  const std::array<nn::Tensor, 2> mix{nn::repeat_row(s.h_com, context.rows()), context};
  s.H_mix = nn::concat_rows(mix);
  const nn::Matrix additive = nn::additive_mask(mixed_mask(mask));
  s.H_ref = ref_encoder_(s.H_mix, &additive);
  check_finite(s.H_ref, "refinement encoder");

  s.gated = cognitive_gate(s.H_ref);
  s.H_C = select(s.gated);
  check_finite(s.H_C, "cognitive selector");
  return s;
}

}  // namespace prccf::cognition
