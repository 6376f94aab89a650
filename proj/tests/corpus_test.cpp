#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "instopt/corpus.hpp"
#include "instopt/error.hpp"
#include "instopt/rng.hpp"
#include "test_util.hpp"

using namespace instopt;
using testutil::make_instruction;

TEST(Xxh64, ReferenceVectors) {
  EXPECT_EQ(xxh64("", 0), 0xef46db3751d8e999ULL);
  EXPECT_EQ(xxh64("abc", 0), 0x44bc2cf5ad770999ULL);
  EXPECT_EQ(xxh64("abc", 7), 0x9e755206156676d7ULL);
  EXPECT_EQ(xxh64("0123456789abcdefghijklmnopqrstuvwxyzABCDEFGHIJ", 42), 0x97426a2ededcb5a0ULL);
}

TEST(Tokenize, LowercasesAndSplits) {
  std::vector<std::string> storage;
  const auto tokens = tokenize("Hello, WORLD! x2 caf\xc3\xa9", storage);
  std::vector<std::string> got(tokens.begin(), tokens.end());
  EXPECT_EQ(got, (std::vector<std::string>{"hello", "world", "x2", "caf\xc3\xa9"}));
}

TEST(SimHash, CutoffAndBasics) {
  EXPECT_EQ(hamming_cutoff(0.95), 3);
  EXPECT_EQ(hamming_cutoff(1.0), 0);
  EXPECT_EQ(hamming_cutoff(0.5), 32);
  EXPECT_EQ(simhash(""), 0u);
  EXPECT_EQ(simhash("The quick brown fox"), simhash("the QUICK, brown fox!"));
  EXPECT_NE(simhash("alpha beta gamma"), simhash("delta epsilon zeta"));
  EXPECT_NE(simhash("alpha beta gamma", 1), simhash("alpha beta gamma", 2));
}

namespace {

// Greedy keep-first against every kept signature, written independently.
std::vector<std::pair<std::size_t, std::size_t>> brute_dedup(const std::vector<std::uint64_t>& s,
                                                             int cutoff) {
  std::vector<std::size_t> kept;
  std::vector<std::pair<std::size_t, std::size_t>> removed;
  for (std::size_t i = 0; i < s.size(); ++i) {
    bool dup = false;
    for (std::size_t k : kept) {
      if (__builtin_popcountll(s[i] ^ s[k]) <= cutoff) {
        removed.emplace_back(k, i);
        dup = true;
        break;
      }
    }
    if (!dup) kept.push_back(i);
  }
  return removed;
}

}  // namespace

TEST(DedupSignatures, LshMatchesFullScanAndOracle) {
  Rng rng(11);
  for (int cutoff : {0, 1, 3, 6}) {
    std::vector<std::uint64_t> sigs;
    for (int i = 0; i < 1500; ++i) sigs.push_back(rng.next());
    for (int i = 0; i < 300; ++i) {
      std::uint64_t s = sigs[rng.below(sigs.size())];
      const int flips = static_cast<int>(rng.below(static_cast<std::uint64_t>(cutoff) + 3));
      for (int f = 0; f < flips; ++f) s ^= 1ULL << rng.below(64);
      sigs.push_back(s);
    }
    const auto oracle = brute_dedup(sigs, cutoff);
    for (bool full : {false, true}) {
      const auto got = dedup_signatures(sigs, cutoff, full);
      ASSERT_EQ(got.size(), oracle.size()) << "cutoff " << cutoff << " full " << full;
      for (std::size_t k = 0; k < got.size(); ++k) {
        EXPECT_EQ(got[k].kept, oracle[k].first);
        EXPECT_EQ(got[k].removed, oracle[k].second);
        EXPECT_EQ(got[k].hamming, hamming(sigs[got[k].kept], sigs[got[k].removed]));
      }
    }
  }
}

TEST(Deduplicate, KeepsFirstAndReportsPairs) {
  Corpus c;
  c.add(make_instruction("a", "write a poem about the sea and the moon tonight"));
  c.add(make_instruction("b", "compute the derivative of x squared plus three x"));
  c.add(make_instruction("c", "Write a poem about the sea and the moon tonight!"));
  DedupOptions o;
  o.threads = 2;
  const auto r = deduplicate(c, o);
  ASSERT_EQ(r.corpus.size(), 2u);
  EXPECT_EQ(r.corpus[0].id, "a");
  EXPECT_EQ(r.corpus[1].id, "b");
  ASSERT_EQ(r.removed.size(), 1u);
  EXPECT_EQ(r.removed[0].kept_id, "a");
  EXPECT_EQ(r.removed[0].removed_id, "c");
  EXPECT_EQ(r.removed[0].hamming, 0);
  o.full_scan = true;
  EXPECT_EQ(deduplicate(c, o).removed.size(), 1u);
  o.similarity_threshold = 1.5;
  EXPECT_THROW(deduplicate(c, o), ValidationError);
}

TEST(CorpusIo, RoundTripAndProvenanceHeader) {
  Corpus c;
  auto a = make_instruction("a", "hi \"there\"", "hello\nworld");
  a.tags = {"greeting", "small talk"};
  a.quality_score = 4.5;
  a.category = "Multiturn Dialogue";
  c.add(a);
  c.add(make_instruction("b", "second"));
  std::stringstream s;
  write_corpus(s, c, R"({"_provenance":{"tool":"instopt"}})");
  const Corpus back = parse_corpus(s, "mem");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], c[0]);
  EXPECT_EQ(back[1], c[1]);
  EXPECT_EQ(back.provenance()[0].line, 2u);
  ASSERT_TRUE(back.find("b").has_value());
}

TEST(CorpusIo, DuplicateIdNamesBothLines) {
  std::stringstream s;
  s << R"({"id":"x","turns":[{"role":"user","text":"a"}]})" << "\n"
    << R"({"id":"y","turns":[{"role":"user","text":"b"}]})" << "\n"
    << R"({"id":"x","turns":[{"role":"user","text":"c"}]})" << "\n";
  try {
    parse_corpus(s, "in.jsonl");
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("\"x\""), std::string::npos) << msg;
    EXPECT_NE(msg.find("1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("3"), std::string::npos) << msg;
  }
}

TEST(CorpusIo, StrictRejectsUnknownKeysLenientIgnores) {
  const std::string line = R"({"id":"x","turns":[{"role":"user","text":"a"}],"extra":1})";
  std::stringstream strict(line), lenient(line);
  EXPECT_THROW(parse_corpus(strict, "s", SchemaMode::strict), ValidationError);
  EXPECT_EQ(parse_corpus(lenient, "l", SchemaMode::lenient).size(), 1u);
}

TEST(CorpusIo, MalformedRecordsCiteTheLine) {
  std::stringstream s;
  s << R"({"id":"x","turns":[{"role":"user","text":"a"}]})" << "\n"
    << "{not json\n";
  try {
    parse_corpus(s, "bad.jsonl");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos) << e.what();
  }
  std::stringstream roles(R"({"id":"x","turns":[{"role":"robot","text":"a"}]})");
  EXPECT_THROW(parse_corpus(roles, "r"), ValidationError);
  std::stringstream empty_turns(R"({"id":"x","turns":[]})");
  EXPECT_THROW(parse_corpus(empty_turns, "e"), ValidationError);
}

TEST(Corpus, DialogueAndPromptText) {
  Instruction ins;
  ins.id = "d";
  ins.turns = {{Role::user, "q1"}, {Role::assistant, "a1"}, {Role::user, "q2"}};
  EXPECT_EQ(ins.dialogue_text(), "q1\na1\nq2");
  EXPECT_EQ(ins.prompt_text(), "q1\nq2");
}

TEST(Contamination, SpecMockExampleIsExcluded) {
  Corpus c;
  c.add(make_instruction("hit", "prompt a"));
  c.add(make_instruction("miss", "prompt b"));
  const float y = static_cast<float>(std::sqrt(1.0 - 0.1225));
  TableEmbedder embedder({{"bench", {1.0f, 0.0f}},
                          {"prompt a", {0.35f, y}},
                          {"prompt b", {0.29f, static_cast<float>(std::sqrt(1.0 - 0.0841))}}});
  const auto r = filter_contamination(c, {"bench"}, embedder);
  ASSERT_EQ(r.excluded.size(), 1u);
  EXPECT_EQ(r.excluded[0].id, "hit");
  EXPECT_NEAR(r.excluded[0].max_cosine, 0.35, 1e-6);
  ASSERT_EQ(r.corpus.size(), 1u);
  EXPECT_EQ(r.corpus[0].id, "miss");
}

TEST(Contamination, UpstreamFailureReportsProgress) {
  Corpus c;
  c.add(make_instruction("a", "known"));
  c.add(make_instruction("b", "unknown"));
  TableEmbedder embedder({{"bench", {1.0f, 0.0f}}, {"known", {0.0f, 1.0f}}});
  EXPECT_THROW(filter_contamination(c, {"bench"}, embedder), UpstreamError);
}

TEST(Contamination, BenchmarkPromptFormats) {
  testutil::TempDir dir;
  testutil::write_file(dir / "a.jsonl", "{\"prompt\":\"p1\"}\n{\"text\":\"p2\"}\n");
  testutil::write_file(dir / "b.txt", "line one\n\nline two\n");
  EXPECT_EQ(load_benchmark_prompts((dir / "a.jsonl").string()),
            (std::vector<std::string>{"p1", "p2"}));
  EXPECT_EQ(load_benchmark_prompts((dir / "b.txt").string()),
            (std::vector<std::string>{"line one", "line two"}));
}
