#include "prccf/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>

#include "prccf/errors.hpp"

namespace prccf::text {
namespace {

const std::array<std::string, special::kCount>& special_tokens() {
  static const std::array<std::string, special::kCount> names = [] {
    std::array<std::string, special::kCount> n{"[PAD]", "[UNK]",    "[BOS]",       "[EOS]",
                                               "[SEP]", "[CLS]",    "[SEEKER]",    "[SUPPORTER]"};
    for (int i = 0; i < special::kStrategyCount; ++i)
      n[static_cast<std::size_t>(special::kFirstStrategy + i)] = "[STRATEGY_" + std::to_string(i) + "]";
    return n;
  }();
  return names;
}

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80 || c == '_'; }

}  // namespace

bool is_special_token(std::string_view token) {
  const auto& names = special_tokens();
  return std::find(names.begin(), names.end(), token) != names.end();
}

std::vector<TokenSpan> pretokenize(std::string_view text) {
  std::vector<TokenSpan> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (c == '[') {
      const auto close = text.find(']', i);
      if (close != std::string_view::npos && is_special_token(text.substr(i, close - i + 1))) {
        out.push_back({std::string(text.substr(i, close - i + 1)), i, close + 1});
        i = close + 1;
        continue;
      }
    }
    if (is_word_byte(c)) {
      std::size_t j = i;
      std::string tok;
      while (j < n && is_word_byte(static_cast<unsigned char>(text[j]))) {
        tok.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[j]))));
        ++j;
      }
      out.push_back({std::move(tok), i, j});
      i = j;
      continue;
    }
    out.push_back({std::string(1, static_cast<char>(c)), i, i + 1});
    ++i;
  }
  return out;
}

std::size_t count_tokens(std::string_view text) { return pretokenize(text).size(); }

std::string truncate_tokens(std::string_view text, std::size_t max_tokens) {
  const auto spans = pretokenize(text);
  if (spans.size() <= max_tokens) return std::string(text);
  if (max_tokens == 0) return {};
  return std::string(text.substr(0, spans[max_tokens - 1].end));
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() {
  for (const auto& s : special_tokens()) {
    ids_.emplace(s, static_cast<int>(tokens_.size()));
    tokens_.push_back(s);
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t max_size) {
  if (max_size < static_cast<std::size_t>(special::kCount))
    throw ContractViolation("vocabulary size must cover the special tokens");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& span : pretokenize(t))
      if (!is_special_token(span.token)) ++counts[span.token];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, _] : ranked) {
    if (v.tokens_.size() >= max_size) break;
    v.ids_.emplace(tok, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(tok);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open vocabulary " + path.string());
  Vocabulary v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    if (lineno < static_cast<std::size_t>(special::kCount)) {
      if (line != v.tokens_[lineno])
        throw LoadError(path.string() + ":" + std::to_string(lineno + 1) + ": special token mismatch");
    } else {
      v.ids_.emplace(line, static_cast<int>(v.tokens_.size()));
      v.tokens_.push_back(line);
    }
    ++lineno;
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocabulary::id(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  return it == ids_.end() ? special::kUnk : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> out;
  for (const auto& span : pretokenize(text)) out.push_back(id(span.token));
  return out;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int i : ids) {
    if (i < special::kCount) continue;
    if (!out.empty()) out.push_back(' ');
    out += token(i);
  }
  return out;
}

std::uint64_t Vocabulary::fingerprint() const {
  std::uint64_t h = fnv1a64("vocab");
  for (const auto& t : tokens_) h = fnv1a64(t, h ^ 0x9e3779b97f4a7c15ULL);
  return h;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace prccf::text
