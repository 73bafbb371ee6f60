#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace prccf::text {

// A pre-token with its byte range in the source text.
struct TokenSpan {
  std::string token;  // lowercased surface form
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Splits on whitespace, breaks punctuation into single-character tokens and
// keeps bracketed special tokens such as "[SEP]" whole. ASCII letters are
// lowercased; bytes >= 0x80 are treated as word characters.
std::vector<TokenSpan> pretokenize(std::string_view text);

// Number of pre-tokens in `text`. This is the token count used for prompt caps.
std::size_t count_tokens(std::string_view text);

// Returns `text` cut after its first `max_tokens` pre-tokens.
std::string truncate_tokens(std::string_view text, std::size_t max_tokens);

// Lowercase + whitespace split. Used by the metrics.
std::vector<std::string> whitespace_tokens(std::string_view text);

// Fixed special-token ids shared by every vocabulary.
namespace special {
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kSep = 4;
inline constexpr int kCls = 5;
inline constexpr int kSeeker = 6;
inline constexpr int kSupporter = 7;
inline constexpr int kFirstStrategy = 8;
inline constexpr int kStrategyCount = 8;
inline constexpr int kCount = kFirstStrategy + kStrategyCount;
}  // namespace special

inline constexpr int strategy_token(int strategy_id) { return special::kFirstStrategy + strategy_id; }
bool is_special_token(std::string_view token);

// Word-level vocabulary over pre-tokens. Ids below special::kCount are reserved.
class Vocabulary {
 public:
  Vocabulary();

  // Keeps the `max_size - special::kCount` most frequent pre-tokens, ties
  // broken lexicographically.
  static Vocabulary build(std::span<const std::string> texts, std::size_t max_size);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }

  std::vector<int> encode(std::string_view text) const;
  // Joins non-special tokens with single spaces.
  std::string decode(std::span<const int> ids) const;

  // Order-sensitive digest of the token list.
  std::uint64_t fingerprint() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace prccf::text
