#include "prccf/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "prccf/errors.hpp"
#include "prccf/text.hpp"

namespace prccf::corpus {

using nlohmann::json;

std::string_view speaker_name(Speaker s) { return s == Speaker::kSeeker ? "seeker" : "supporter"; }

StrategyRegistry::StrategyRegistry(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() != kSize)
    throw LoadError("strategy registry must list exactly 8 labels, got " + std::to_string(names_.size()));
  std::set<std::string> unique(names_.begin(), names_.end());
  if (unique.size() != names_.size()) throw LoadError("strategy registry has duplicate labels");
}

StrategyRegistry StrategyRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open strategy registry " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  return StrategyRegistry(std::move(names));
}

StrategyRegistry StrategyRegistry::esconv_default() {
  return StrategyRegistry({"Question", "Restatement or Paraphrasing", "Reflection of feelings",
                           "Self-disclosure", "Affirmation and Reassurance", "Providing Suggestions",
                           "Information", "Others"});
}

std::optional<StrategyLabel> StrategyRegistry::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return StrategyLabel{static_cast<int>(i), names_[i]};
  return std::nullopt;
}

StrategyLabel StrategyRegistry::catch_all() const {
  if (auto l = find("Others")) return *l;
  return label(static_cast<int>(names_.size()) - 1);
}

StrategyLabel StrategyRegistry::label(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names_.size())
    throw ContractViolation("strategy id out of range: " + std::to_string(id));
  return {id, names_[static_cast<std::size_t>(id)]};
}

std::uint64_t StrategyRegistry::hash() const {
  std::uint64_t h = text::fnv1a64("strategies");
  for (const auto& n : names_) h = text::fnv1a64(n + '\n', h);
  return h;
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::string string_field(const json& obj, const char* key, const std::string& where, bool required = true) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    if (required) throw LoadError(where + ": missing field '" + key + "'");
    return {};
  }
  if (!it->is_string()) throw LoadError(where + ": field '" + key + "' is not a string");
  return it->get<std::string>();
}

Speaker parse_speaker(const std::string& s, const std::string& where) {
  if (s == "seeker" || s == "usr") return Speaker::kSeeker;
  if (s == "supporter" || s == "sys") return Speaker::kSupporter;
  throw LoadError(where + ": unknown speaker '" + s + "'");
}

StrategyLabel map_strategy(const std::string& name, const StrategyRegistry& registry,
                           const std::string& where, std::vector<std::string>& warnings) {
  if (auto label = registry.find(name)) return *label;
  warnings.push_back(where + ": unknown strategy '" + name + "' mapped to '" +
                     registry.catch_all().name + "'");
  return registry.catch_all();
}

struct RawTurn {
  std::string speaker;
  std::string text;
  std::optional<std::string> strategy;
};

DialogueRecord make_record(std::string id, std::string situation, std::string emotion,
                           std::string problem, std::optional<std::string> persona,
                           const std::vector<RawTurn>& turns, const StrategyRegistry& registry,
                           const std::string& where, std::vector<std::string>& warnings) {
  if (turns.empty()) throw LoadError(where + ": dialogue has no turns");
  DialogueRecord rec{std::move(id), std::move(situation), std::move(emotion), std::move(problem), {},
                     std::move(persona)};
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto turn_where = where + " turn " + std::to_string(i);
    Utterance u;
    u.speaker = parse_speaker(turns[i].speaker, turn_where);
    u.text = trim(turns[i].text);
    u.turn_index = static_cast<int>(i);
    if (u.speaker == Speaker::kSupporter) {
      if (turns[i].strategy) {
        u.strategy = map_strategy(*turns[i].strategy, registry, turn_where, warnings);
      } else {
        warnings.push_back(turn_where + ": supporter turn without strategy mapped to '" +
                           registry.catch_all().name + "'");
        u.strategy = registry.catch_all();
      }
    }
    rec.utterances.push_back(std::move(u));
  }
  return rec;
}

std::vector<DialogueRecord> load_canonical(std::istream& in, const std::string& path,
                                           const StrategyRegistry& registry,
                                           std::vector<std::string>& warnings) {
  std::vector<DialogueRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto where = path + ":" + std::to_string(lineno);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw LoadError(where + ": " + e.what());
    }
    if (!obj.is_object()) throw LoadError(where + ": record is not an object");
    const auto dialog = obj.find("dialog");
    if (dialog == obj.end() || !dialog->is_array()) throw LoadError(where + ": missing 'dialog' array");
    std::vector<RawTurn> turns;
    for (const auto& t : *dialog) {
      if (!t.is_object()) throw LoadError(where + ": turn is not an object");
      RawTurn rt{string_field(t, "speaker", where), string_field(t, "text", where), std::nullopt};
      if (auto s = t.find("strategy"); s != t.end() && s->is_string()) rt.strategy = s->get<std::string>();
      turns.push_back(std::move(rt));
    }
    std::optional<std::string> persona;
    if (auto p = obj.find("persona"); p != obj.end() && p->is_string()) persona = p->get<std::string>();
    out.push_back(make_record(string_field(obj, "dialogue_id", where),
                              string_field(obj, "situation", where, false),
                              string_field(obj, "emotion_type", where, false),
                              string_field(obj, "problem_type", where), std::move(persona), turns,
                              registry, where, warnings));
  }
  return out;
}

// Published release: one JSON array, turns carry {speaker, content, annotation.strategy}.
std::vector<DialogueRecord> load_release(std::istream& in, const std::string& path,
                                         const StrategyRegistry& registry,
                                         std::vector<std::string>& warnings) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError(path + ": " + e.what());
  }
  if (!doc.is_array()) throw LoadError(path + ": release file must be a JSON array");
  std::vector<DialogueRecord> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto where = path + " record " + std::to_string(i);
    const auto& obj = doc[i];
    if (!obj.is_object()) throw LoadError(where + ": record is not an object");
    const auto dialog = obj.find("dialog");
    if (dialog == obj.end() || !dialog->is_array()) throw LoadError(where + ": missing 'dialog' array");
    std::vector<RawTurn> turns;
    for (const auto& t : *dialog) {
      RawTurn rt{string_field(t, "speaker", where), string_field(t, "content", where), std::nullopt};
      if (auto a = t.find("annotation"); a != t.end() && a->is_object())
        if (auto s = a->find("strategy"); s != a->end() && s->is_string()) rt.strategy = s->get<std::string>();
      turns.push_back(std::move(rt));
    }
    char id[32];
    std::snprintf(id, sizeof(id), "esconv-%04zu", i);
    out.push_back(make_record(id, string_field(obj, "situation", where, false),
                              string_field(obj, "emotion_type", where, false),
                              string_field(obj, "problem_type", where), std::nullopt, turns, registry,
                              where, warnings));
  }
  return out;
}

}  // namespace

LoadResult load_corpus(const std::filesystem::path& path, CorpusFormat format,
                       const StrategyRegistry& registry) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open corpus " + path.string());
  if (in.peek() == std::ifstream::traits_type::eof()) throw LoadError(path.string() + ": empty corpus file");
  LoadResult result;
  result.records = format == CorpusFormat::kCanonical
                       ? load_canonical(in, path.string(), registry, result.warnings)
                       : load_release(in, path.string(), registry, result.warnings);
  if (result.records.empty()) throw LoadError(path.string() + ": corpus contains no dialogues");
  return result;
}

std::string serialize_record(const DialogueRecord& record) {
  json turns = json::array();
  for (const auto& u : record.utterances) {
    json t = {{"speaker", speaker_name(u.speaker)}};
    if (u.strategy) t["strategy"] = u.strategy->name;
    t["text"] = u.text;
    turns.push_back(std::move(t));
  }
  json obj = {{"dialogue_id", record.dialogue_id},   {"situation", record.situation},
              {"emotion_type", record.emotion_label}, {"problem_type", record.problem_type},
              {"persona", record.persona ? json(*record.persona) : json(nullptr)},
              {"dialog", std::move(turns)}};
  return obj.dump();
}

void save_corpus(const std::filesystem::path& path, std::span<const DialogueRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write corpus " + path.string());
  for (const auto& r : records) out << serialize_record(r) << '\n';
}

DatasetSplit split_dataset(std::span<const DialogueRecord> records, std::array<double, 3> ratios,
                           std::uint64_t seed) {
  const std::size_t n = records.size();
  if (n < 3) throw SplitError("need at least 3 dialogues to split, got " + std::to_string(n));
  for (double r : ratios)
    if (r < 0.0) throw SplitError("split ratios must be non-negative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw SplitError("split ratios must sum to 1");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  // Fisher-Yates on the raw engine output so membership is identical across
  // standard library implementations.
  std::mt19937_64 rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);

  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[1] + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[2] + 1e-9));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_val),
                                order.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), order.end());

  const auto gather = [&](std::vector<std::size_t>& idx) {
    std::sort(idx.begin(), idx.end());
    std::vector<DialogueRecord> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(records[i]);
    return out;
  };
  return {gather(train), gather(val), gather(test)};
}

PersonaAttachResult attach_personas(std::vector<DialogueRecord> records,
                                    const std::filesystem::path& persona_file) {
  std::ifstream in(persona_file);
  if (!in) throw LoadError("cannot open persona file " + persona_file.string());
  std::unordered_map<std::string, std::string> personas;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto where = persona_file.string() + ":" + std::to_string(lineno);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw LoadError(where + ": " + e.what());
    }
    if (!obj.is_object()) throw LoadError(where + ": persona record is not an object");
    personas[string_field(obj, "dialogue_id", where)] = string_field(obj, "persona", where);
  }
  PersonaAttachResult result;
  for (auto& r : records) {
    if (auto it = personas.find(r.dialogue_id); it != personas.end()) {
      r.persona = it->second;
    } else {
      r.persona = std::string();
      ++result.unmatched;
    }
  }
  result.records = std::move(records);
  return result;
}

namespace {

struct Block {
  Speaker speaker;
  std::string text;
  std::optional<StrategyLabel> strategy;  // first supporter strategy of the block
};

std::vector<Block> merge_turns(const std::vector<Utterance>& utterances) {
  std::vector<Block> blocks;
  for (const auto& u : utterances) {
    if (!blocks.empty() && blocks.back().speaker == u.speaker) {
      blocks.back().text += '\n';
      blocks.back().text += u.text;
    } else {
      blocks.push_back({u.speaker, u.text, u.strategy});
    }
  }
  return blocks;
}

}  // namespace

RetrievalCorpus build_retrieval_corpus(std::span<const DialogueRecord> train_records) {
  RetrievalCorpus corpus;
  int next_index = 0;
  for (const auto& rec : train_records) {
    const auto blocks = merge_turns(rec.utterances);
    std::string persona = rec.persona.value_or("");
    if (persona.empty()) persona = kEmptyPersona;
    for (std::size_t i = 0; i + 1 < blocks.size(); ++i) {
      if (blocks[i].speaker != Speaker::kSeeker) continue;
      const auto& reply = blocks[i + 1];
      if (blocks[i].text.empty() || reply.text.empty()) continue;
      RetrievalEntry e;
      e.seeker_utterance = blocks[i].text;
      e.strategy = *reply.strategy;
      e.response = reply.text;
      e.persona = persona;
      e.problem_type = rec.problem_type;
      e.source_index = next_index++;
      e.dialogue_id = rec.dialogue_id;
      corpus[rec.problem_type].push_back(std::move(e));
    }
  }
  return corpus;
}

std::size_t corpus_size(const RetrievalCorpus& corpus) {
  std::size_t n = 0;
  for (const auto& [_, bucket] : corpus) n += bucket.size();
  return n;
}

std::vector<TrainingSample> derive_samples(std::span<const DialogueRecord> records,
                                           int max_context_turns) {
  if (max_context_turns < 1) throw ContractViolation("max_context_turns must be >= 1");
  std::vector<TrainingSample> out;
  for (const auto& rec : records) {
    const auto& turns = rec.utterances;
    for (std::size_t t = 1; t < turns.size(); ++t) {
      if (turns[t].speaker != Speaker::kSupporter) continue;
      const std::size_t begin = t > static_cast<std::size_t>(max_context_turns)
                                    ? t - static_cast<std::size_t>(max_context_turns)
                                    : 0;
      TrainingSample s;
      s.context.assign(turns.begin() + static_cast<std::ptrdiff_t>(begin),
                       turns.begin() + static_cast<std::ptrdiff_t>(t));
      s.target_response = turns[t].text;
      s.target_strategy = *turns[t].strategy;
      s.persona = rec.persona.value_or("");
      s.emotion_label = rec.emotion_label;
      s.problem_type = rec.problem_type;
      s.dialogue_id = rec.dialogue_id;
      s.target_turn_index = turns[t].turn_index;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::size_t current_utterance_index(std::span<const Utterance> context) {
  if (context.empty()) throw ContractViolation("empty context");
  for (std::size_t i = context.size(); i-- > 0;)
    if (context[i].speaker == Speaker::kSeeker) return i;
  return context.size() - 1;
}

}  // namespace prccf::corpus
