#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "prccf/corpus.hpp"
#include "prccf/errors.hpp"
#include "prccf/text.hpp"
#include "support.hpp"

using namespace prccf;
using namespace prccf::corpus;
namespace fs = std::filesystem;

namespace {

void write(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

Utterance seeker(std::string text, int turn = 0) { return {Speaker::kSeeker, std::move(text), std::nullopt, turn}; }
Utterance supporter(std::string text, int strategy, int turn = 0) {
  const auto reg = StrategyRegistry::esconv_default();
  return {Speaker::kSupporter, std::move(text), reg.label(strategy), turn};
}

DialogueRecord dialogue(std::string id, std::string problem, std::vector<Utterance> turns) {
  for (std::size_t i = 0; i < turns.size(); ++i) turns[i].turn_index = static_cast<int>(i);
  DialogueRecord r;
  r.dialogue_id = std::move(id);
  r.situation = "s";
  r.emotion_label = "anxiety";
  r.problem_type = std::move(problem);
  r.utterances = std::move(turns);
  r.persona = "p";
  return r;
}

std::vector<DialogueRecord> numbered(int n) {
  std::vector<DialogueRecord> out;
  for (int i = 0; i < n; ++i)
    out.push_back(dialogue("d" + std::to_string(i), "job", {seeker("hi"), supporter("hello", 0)}));
  return out;
}

const char* kTwoDialogues =
    R"({"dialogue_id":"a","situation":"x","emotion_type":"anxiety","problem_type":"job","persona":"calm","dialog":[{"speaker":"seeker","text":"i lost my job"},{"speaker":"supporter","strategy":"Question","text":"what happened ?"},{"speaker":"seeker","text":"they cut staff"}]}
{"dialogue_id":"b","situation":"y","emotion_type":"sadness","problem_type":"breakup","persona":"","dialog":[{"speaker":"seeker","text":"she left"},{"speaker":"supporter","strategy":"Greeting","text":"i am sorry"}]}
)";

}  // namespace

TEST(Text, PretokenizeSplitsPunctuationAndKeepsSpecials) {
  auto toks = text::pretokenize("Hello, World [SEP] ok?");
  std::vector<std::string> got;
  for (auto& t : toks) got.push_back(t.token);
  EXPECT_EQ(got, (std::vector<std::string>{"hello", ",", "world", "[SEP]", "ok", "?"}));
  EXPECT_EQ(text::count_tokens("a b, c"), 4u);
  EXPECT_EQ(text::truncate_tokens("one two three", 2), "one two");
}

TEST(Text, VocabularyReservesSpecialsAndRoundTrips) {
  std::vector<std::string> texts = {"b a a", "c a b"};
  auto v = text::Vocabulary::build(texts, text::special::kCount + 2);
  ASSERT_EQ(v.size(), static_cast<std::size_t>(text::special::kCount + 2));
  EXPECT_EQ(v.token(text::special::kCount), "a");
  EXPECT_EQ(v.token(text::special::kCount + 1), "b");
  EXPECT_EQ(v.id("c"), text::special::kUnk);
  auto dir = prccf::testing::scratch_dir("vocab");
  v.save(dir / "v.txt");
  auto back = text::Vocabulary::load(dir / "v.txt");
  EXPECT_EQ(back.fingerprint(), v.fingerprint());
  EXPECT_EQ(v.decode(v.encode("a b")), "a b");
}

TEST(Corpus, RegistryHasEightNamesAndCatchAll) {
  const auto reg = StrategyRegistry::esconv_default();
  EXPECT_EQ(reg.size(), 8u);
  EXPECT_EQ(reg.catch_all().name, "Others");
  EXPECT_EQ(reg.find("Question")->id, 0);
  EXPECT_FALSE(reg.find("Greeting").has_value());
}

TEST(Corpus, LoadsCanonicalFixtureAndMapsUnknownStrategy) {
  auto dir = prccf::testing::scratch_dir("load");
  write(dir / "c.jsonl", kTwoDialogues);
  const auto reg = StrategyRegistry::esconv_default();
  auto res = load_corpus(dir / "c.jsonl", CorpusFormat::kCanonical, reg);
  ASSERT_EQ(res.records.size(), 2u);
  EXPECT_EQ(res.records[0].utterances.size(), 3u);
  EXPECT_EQ(res.records[1].utterances.size(), 2u);
  EXPECT_EQ(res.records[1].utterances[1].strategy->name, "Others");
  EXPECT_EQ(res.warnings.size(), 1u);
}

TEST(Corpus, LoadsReleaseFormat) {
  auto dir = prccf::testing::scratch_dir("release");
  write(dir / "r.json",
        R"([{"situation":"x","emotion_type":"anxiety","problem_type":"job","dialog":[
             {"speaker":"usr","content":"hi","annotation":{}},
             {"speaker":"sys","content":"hello","annotation":{"strategy":"Question"}}]}])");
  auto res = load_corpus(dir / "r.json", CorpusFormat::kEsconvRelease, StrategyRegistry::esconv_default());
  ASSERT_EQ(res.records.size(), 1u);
  EXPECT_EQ(res.records[0].utterances[1].strategy->name, "Question");
}

TEST(Corpus, MalformedInputIsALoadError) {
  auto dir = prccf::testing::scratch_dir("bad");
  write(dir / "c.jsonl", "{not json\n");
  EXPECT_THROW(load_corpus(dir / "c.jsonl", CorpusFormat::kCanonical, StrategyRegistry::esconv_default()),
               LoadError);
  EXPECT_THROW(load_corpus(dir / "missing.jsonl", CorpusFormat::kCanonical, StrategyRegistry::esconv_default()),
               LoadError);
}

TEST(Corpus, SaveLoadRoundTrip) {
  auto dir = prccf::testing::scratch_dir("roundtrip");
  write(dir / "c.jsonl", kTwoDialogues);
  const auto reg = StrategyRegistry::esconv_default();
  auto first = load_corpus(dir / "c.jsonl", CorpusFormat::kCanonical, reg).records;
  save_corpus(dir / "again.jsonl", first);
  auto second = load_corpus(dir / "again.jsonl", CorpusFormat::kCanonical, reg).records;
  EXPECT_EQ(first, second);
}

TEST(Corpus, SplitSizes) {
  auto ten = numbered(10);
  auto s = split_dataset(ten, {0.8, 0.1, 0.1}, 7);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.validation.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);

  auto big = numbered(1300);
  auto b = split_dataset(big, {0.8, 0.1, 0.1}, 7);
  EXPECT_EQ(b.train.size(), 1040u);
  EXPECT_EQ(b.validation.size(), 130u);
  EXPECT_EQ(b.test.size(), 130u);
}

TEST(Corpus, SplitIsDeterministicAndDisjoint) {
  auto recs = numbered(50);
  auto a = split_dataset(recs, {0.8, 0.1, 0.1}, 3);
  auto b = split_dataset(recs, {0.8, 0.1, 0.1}, 3);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  std::set<std::string> ids;
  for (const auto* part : {&a.train, &a.validation, &a.test})
    for (const auto& r : *part) EXPECT_TRUE(ids.insert(r.dialogue_id).second);
  EXPECT_EQ(ids.size(), 50u);
  EXPECT_THROW(split_dataset(recs, {0.5, 0.1, 0.1}, 3), SplitError);
}

TEST(Corpus, AttachPersonas) {
  auto dir = prccf::testing::scratch_dir("persona");
  write(dir / "p.jsonl", "{\"dialogue_id\":\"d0\",\"persona\":\"i am  calm\\u00e9\"}\n{\"dialogue_id\":\"d1\",\"persona\":\"tired\"}\n");
  auto res = attach_personas(numbered(3), dir / "p.jsonl");
  EXPECT_EQ(res.unmatched, 1u);
  EXPECT_EQ(*res.records[0].persona, "i am  calm\xc3\xa9");
  EXPECT_EQ(*res.records[2].persona, "");
  auto corpus = build_retrieval_corpus(res.records);
  EXPECT_EQ(corpus.at("job")[0].persona, "i am  calm\xc3\xa9");
}

TEST(Corpus, AdjacencyPairsAndMerge) {
  auto d = dialogue("x", "job",
                    {seeker("a"), seeker("b"), supporter("r1", 0), supporter("r2", 1), seeker("c"), supporter("r3", 2)});
  auto corpus = build_retrieval_corpus(std::vector<DialogueRecord>{d});
  const auto& e = corpus.at("job");
  // Hand enumeration: [a\nb] -> [r1\nr2], [c] -> [r3].
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].seeker_utterance, "a\nb");
  EXPECT_EQ(e[0].response, "r1\nr2");
  EXPECT_EQ(e[1].seeker_utterance, "c");
  EXPECT_EQ(e[1].response, "r3");
  EXPECT_EQ(e[1].strategy.id, 2);
}

TEST(Corpus, BucketsByProblemType) {
  std::vector<DialogueRecord> recs = {
      dialogue("x", "job", {seeker("a"), supporter("r", 0), seeker("b"), supporter("s", 0)}),
      dialogue("y", "breakup", {seeker("c"), supporter("t", 0)})};
  auto corpus = build_retrieval_corpus(recs);
  ASSERT_EQ(corpus.size(), 2u);
  EXPECT_EQ(corpus.at("job").size(), 2u);
  EXPECT_EQ(corpus.at("breakup").size(), 1u);
  for (const auto& e : corpus.at("job")) EXPECT_EQ(e.dialogue_id, "x");
  EXPECT_EQ(corpus_size(corpus), 3u);
}

TEST(Corpus, DeriveSamples) {
  auto d = dialogue("x", "job", {seeker("a"), supporter("r", 0), seeker("b"), supporter("s", 1)});
  auto samples = derive_samples(std::vector<DialogueRecord>{d}, 64);
  ASSERT_EQ(samples.size(), 2u);
  EXPECT_EQ(samples[1].context.size(), 3u);
  EXPECT_EQ(samples[1].target_response, "s");

  auto last = derive_samples(std::vector<DialogueRecord>{d}, 1);
  for (const auto& s : last) {
    ASSERT_EQ(s.context.size(), 1u);
    EXPECT_EQ(s.context[0].turn_index, s.target_turn_index - 1);
  }
}

TEST(Corpus, FixtureCountsMatchBruteForce) {
  const auto reg = StrategyRegistry::esconv_default();
  auto recs = load_corpus(prccf::testing::fixture("synthetic_dialogues.jsonl"), CorpusFormat::kCanonical, reg).records;
  ASSERT_EQ(recs.size(), 20u);
  std::size_t supporter_turns = 0, pairs = 0;
  for (const auto& r : recs) {
    for (std::size_t t = 1; t < r.utterances.size(); ++t)
      if (r.utterances[t].speaker == Speaker::kSupporter) ++supporter_turns;
    // A pair starts wherever a seeker run is followed by a supporter turn.
    for (std::size_t t = 0; t + 1 < r.utterances.size(); ++t)
      if (r.utterances[t].speaker == Speaker::kSeeker && r.utterances[t + 1].speaker == Speaker::kSupporter) ++pairs;
  }
  EXPECT_EQ(derive_samples(recs, 64).size(), supporter_turns);
  EXPECT_EQ(corpus_size(build_retrieval_corpus(recs)), pairs);
}

TEST(Corpus, CurrentUtteranceIsLastSeekerTurn) {
  std::vector<Utterance> ctx = {seeker("a"), supporter("b", 0), seeker("c"), supporter("d", 0)};
  EXPECT_EQ(current_utterance_index(ctx), 2u);
  std::vector<Utterance> only = {supporter("b", 0)};
  EXPECT_EQ(current_utterance_index(only), 0u);
}
