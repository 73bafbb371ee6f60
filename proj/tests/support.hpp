#pragma once

// Test-side oracles and fixture helpers. The oracles are written from the
// documented contracts, not by calling into the library code they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "prccf/app.hpp"
#include "prccf/config.hpp"
#include "prccf/corpus.hpp"
#include "prccf/retriever.hpp"

namespace prccf::testing {

namespace fs = std::filesystem;

inline fs::path fixture_dir() { return fs::path(PRCCF_FIXTURE_DIR); }
inline fs::path fixture(const std::string& name) { return fixture_dir() / name; }

// Fresh scratch directory per test name and process.
inline fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("prccf_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Fixture config with the artifact root moved to `root`.
inline config::ResolvedConfig fixture_config(const fs::path& root, std::vector<std::string> overrides = {}) {
  overrides.insert(overrides.begin(), "paths.artifact_root=" + root.string());
  return config::resolve(fixture("config.json"), overrides);
}

// Runs ingest and index for the fixture corpus under `root`.
inline config::RunConfig prepare_fixture(const fs::path& root, std::vector<std::string> overrides = {}) {
  auto cfg = fixture_config(root, std::move(overrides)).build();
  std::ostringstream sink;
  app::cmd_ingest(cfg, sink);
  app::cmd_index(cfg, sink);
  return cfg;
}

// Prepared fixture samples for one split, with the workspace that produced them.
struct FixtureSamples {
  config::RunConfig cfg;
  std::unique_ptr<app::Workspace> ws;
  std::vector<model::PreparedSample> samples;

  const text::Vocabulary& vocab() const { return ws->vocab(); }
};

inline FixtureSamples fixture_samples(const fs::path& root, const std::string& split, std::size_t limit,
                                      const fusion::AblationFlags& flags = {},
                                      std::vector<std::string> overrides = {}) {
  FixtureSamples out;
  out.cfg = prepare_fixture(root, std::move(overrides));
  out.ws = std::make_unique<app::Workspace>(out.cfg);
  auto records = out.ws->load_split(split);
  auto samples = corpus::derive_samples(records, out.cfg.max_context_turns);
  if (limit > 0 && samples.size() > limit) samples.resize(limit);
  const model::Preprocessor prep(out.ws->resources(out.ws->vocab(), flags),
                                 model::apply_ablation(flags, out.cfg.pipeline()));
  out.samples = prep.prepare_all(samples, split == "train");
  return out;
}

namespace oracle {

// --- hash encoder ----------------------------------------------------------

inline std::uint64_t fnv(const std::string& s, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t mix(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Embedding of an already tokenized input under the fixture encoder rule.
inline std::vector<float> hash_embed(const std::vector<std::string>& tokens, std::size_t dim, std::uint64_t seed) {
  std::vector<double> acc(dim, 0.0);
  auto feature = [&](const std::string& f, double w) {
    std::uint64_t s = fnv(f, seed ^ 14695981039346656037ULL);
    for (std::size_t d = 0; d < dim; ++d) {
      double u = static_cast<double>(mix(s) >> 11) / 9007199254740992.0;
      acc[d] += w * (u * 2.0 - 1.0);
    }
  };
  int seg = 0;
  std::string prev;
  for (const auto& t : tokens) {
    if (t == "[SEP]") {
      ++seg;
      prev.clear();
      continue;
    }
    feature("w|" + t, 1.0);
    feature("s|" + std::to_string(seg) + "|" + t, 0.5);
    if (!prev.empty()) feature("b|" + prev + "|" + t, 0.5);
    prev = t;
  }
  return {acc.begin(), acc.end()};
}

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// --- retrieval -------------------------------------------------------------

struct Ranked {
  int source_index;
  double score;
};

// Exhaustive scoring of every candidate, then a full sort.
inline std::vector<Ranked> brute_topk(const std::vector<std::vector<float>>& cand,
                                      const std::vector<std::vector<float>>& pers,
                                      const std::vector<int>& source_index, const std::vector<float>& q,
                                      const std::vector<float>& pq, double alpha, double beta, int k) {
  std::vector<Ranked> all;
  for (std::size_t i = 0; i < cand.size(); ++i)
    all.push_back({source_index[i], alpha * cosine(q, cand[i]) + beta * cosine(pq, pers[i])});
  std::sort(all.begin(), all.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.source_index < b.source_index;
  });
  if (static_cast<int>(all.size()) > k) all.resize(static_cast<std::size_t>(k));
  return all;
}

// --- causal mask -----------------------------------------------------------

inline std::vector<std::vector<int>> mask_rule(const std::vector<int>& layout, const std::vector<bool>& causal,
                                               int current) {
  const std::size_t t = layout.size();
  std::vector<std::vector<int>> m(t, std::vector<int>(t, 0));
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) {
      const int u = layout[j];
      m[i][j] = (causal[static_cast<std::size_t>(u)] || u == current || i == j) ? 1 : 0;
    }
  return m;
}

// --- finite differences ----------------------------------------------------

inline double central_difference(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

// --- metrics ---------------------------------------------------------------

inline std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) {
    for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(w);
  }
  return out;
}

// Unique n-grams / total n-grams by set insertion, x100.
inline double distinct(const std::vector<std::string>& hyps, int n) {
  std::set<std::vector<std::string>> seen;
  std::size_t total = 0;
  for (const auto& h : hyps) {
    auto w = words(h);
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= w.size(); ++i) {
      seen.insert(std::vector<std::string>(w.begin() + static_cast<long>(i), w.begin() + static_cast<long>(i) + n));
      ++total;
    }
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(seen.size()) / static_cast<double>(total);
}

// Lowercase, whitespace split, punctuation as single tokens, [SEP] kept whole.
inline std::vector<std::string> split_tokens(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(cur);
    cur.clear();
  };
  for (std::size_t i = 0; i < s.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if (s.compare(i, 5, "[SEP]") == 0) {
      flush();
      out.push_back("[SEP]");
      i += 4;
    } else if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || c >= 0x80 || c == '_') {
      cur += static_cast<char>(std::tolower(c));
    } else {
      flush();
      out.push_back(std::string(1, static_cast<char>(c)));
    }
  }
  flush();
  return out;
}

}  // namespace oracle

// Random retrieval entries over a small word pool. Problem types cycle over
// `buckets` names so that some queries hit a bucket and some fall back.
inline corpus::RetrievalCorpus random_retrieval_corpus(int n, unsigned seed, int buckets = 1) {
  static const std::vector<std::string> words = {"work", "sleep", "friend", "money", "tired", "alone", "exam",
                                                 "family", "lost", "angry", "sad", "help", "talk", "job",
                                                 "school", "night", "worry", "calm", "hope", "pain"};
  static const std::vector<std::string> personas = {"calm", "i am a student", "a tired nurse",
                                                    "i like short answers", "a worried father", "none"};
  const auto reg = corpus::StrategyRegistry::esconv_default();
  std::mt19937 rng(seed);
  auto phrase = [&](int len) {
    std::string s;
    for (int i = 0; i < len; ++i) {
      if (i) s += ' ';
      s += words[rng() % words.size()];
    }
    return s;
  };
  corpus::RetrievalCorpus out;
  for (int i = 0; i < n; ++i) {
    corpus::RetrievalEntry e;
    e.seeker_utterance = phrase(3 + static_cast<int>(rng() % 5));
    e.strategy = reg.label(static_cast<int>(rng() % reg.size()));
    e.response = phrase(2 + static_cast<int>(rng() % 6));
    e.persona = personas[rng() % personas.size()];
    e.problem_type = "type" + std::to_string(i % buckets);
    e.source_index = i;
    e.dialogue_id = "r" + std::to_string(i / 3);
    out[e.problem_type].push_back(e);
  }
  return out;
}

}  // namespace prccf::testing
