#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>

#include "instopt/error.hpp"
#include "instopt/tagging.hpp"
#include "test_util.hpp"

using namespace instopt;
using testutil::make_instruction;

namespace {

// Fails the first `failures` calls per prompt, then answers with the prompt's
// first word as the tag.
class FlakyChat : public ChatProvider {
 public:
  explicit FlakyChat(int failures, bool garbage = false) : failures_(failures), garbage_(garbage) {}
  std::string complete(const std::vector<ChatMessage>& messages) override {
    const std::string& text = messages.back().content;
    int seen;
    {
      std::lock_guard lock(mu_);
      seen = calls_[text]++;
    }
    ++total;
    if (seen < failures_) {
      if (garbage_) return "I cannot comply.";
      throw UpstreamError("test", "boom");
    }
    return "['" + text.substr(0, text.find(' ')) + "']";
  }
  std::atomic<int> total{0};

 private:
  int failures_;
  bool garbage_;
  std::mutex mu_;
  std::map<std::string, int> calls_;
};

std::vector<RawTagSet> sets_with(const std::vector<std::pair<std::string, std::size_t>>& counts) {
  std::vector<RawTagSet> sets;
  std::size_t id = 0;
  for (const auto& [tag, n] : counts) {
    for (std::size_t k = 0; k < n; ++k) sets.push_back({"i" + std::to_string(id++), {tag}});
  }
  return sets;
}

}  // namespace

TEST(ParseTagList, AcceptsQuotedLists) {
  EXPECT_EQ(*parse_tag_list("Tags: ['a b', \"c\"]"), (std::vector<std::string>{"a b", "c"}));
  EXPECT_EQ(*parse_tag_list("[x] then ['real']"), (std::vector<std::string>{"real"}));
  EXPECT_EQ(*parse_tag_list("[  ' padded ' , 'x' ]"), (std::vector<std::string>{"padded", "x"}));
  EXPECT_TRUE(parse_tag_list("[]")->empty());
  EXPECT_FALSE(parse_tag_list("no list").has_value());
  EXPECT_FALSE(parse_tag_list("['unterminated").has_value());
}

TEST(RenderPrompt, SubstitutesDialogue) {
  EXPECT_EQ(render_tagging_prompt("A {dialogue} B", "xyz"), "A xyz B");
  EXPECT_NE(std::string(default_tagging_prompt()).find("{dialogue}"), std::string::npos);
}

TEST(TagInstructions, RetriesTransportErrorsAndKeepsOrder) {
  Corpus c;
  for (int i = 0; i < 40; ++i) {
    c.add(make_instruction("id" + std::to_string(i), "t" + std::to_string(i) + " body"));
  }
  FlakyChat chat(2);
  TaggingOptions o;
  o.max_attempts = 3;
  o.concurrency = 8;
  const auto r = tag_instructions(c, chat, "{dialogue}", o);
  ASSERT_EQ(r.tag_sets.size(), 40u);
  EXPECT_TRUE(r.failures.empty());
  for (int i = 0; i < 40; ++i) {
    EXPECT_EQ(r.tag_sets[i].instruction_id, "id" + std::to_string(i));
    EXPECT_EQ(r.tag_sets[i].tags, (std::vector<std::string>{"t" + std::to_string(i)}));
  }
  EXPECT_EQ(chat.total.load(), 120);
}

TEST(TagInstructions, ReportsPersistentFailures) {
  Corpus c;
  c.add(make_instruction("a", "alpha"));
  FlakyChat chat(5, true);
  TaggingOptions o;
  o.max_attempts = 3;
  const auto r = tag_instructions(c, chat, "{dialogue}", o);
  EXPECT_TRUE(r.tag_sets.empty());
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].instruction_id, "a");
  EXPECT_EQ(r.failures[0].attempts, 3);
  EXPECT_EQ(chat.total.load(), 3);
}

TEST(TagSets, RoundTrip) {
  std::vector<RawTagSet> sets = {{"a", {"x", "y"}}, {"b", {}}};
  std::stringstream s;
  write_tag_sets(s, sets, R"({"_provenance":{}})");
  const auto back = read_tag_sets(s);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].instruction_id, "a");
  EXPECT_EQ(back[0].tags, sets[0].tags);
  EXPECT_TRUE(back[1].tags.empty());
}

TEST(SimilarityComponents, TransitiveChains) {
  // a~b and b~c above 0.8 while a and c are further apart.
  const double t = 0.6;
  std::vector<Embedding> v = {{1.0f, 0.0f},
                              {static_cast<float>(std::cos(t)), static_cast<float>(std::sin(t))},
                              {static_cast<float>(std::cos(2 * t)), static_cast<float>(std::sin(2 * t))},
                              {-1.0f, 0.0f}};
  EXPECT_EQ(similarity_components(v, 0.8), (std::vector<std::size_t>{0, 0, 0, 3}));
  EXPECT_EQ(similarity_components(v, 0.9), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(NormalizeTags, MergesSimilarAndDropsLongTail) {
  const float y = static_cast<float>(std::sqrt(1.0 - 0.93 * 0.93));
  TableEmbedder embedder({{"math calculation", {1.0f, 0.0f, 0.0f}},
                          {"mathematical calculation", {0.93f, y, 0.0f}},
                          {"poetry", {0.0f, 0.0f, 1.0f}}});
  const auto raw = sets_with({{"math calculation", 500}, {"mathematical calculation", 120}, {"poetry", 90}});
  const auto vocab = normalize_tags(raw, embedder);
  EXPECT_EQ(*vocab.canonical("mathematical calculation"), "math calculation");
  EXPECT_EQ(vocab.merged_frequency("math calculation"), 620u);
  EXPECT_TRUE(vocab.kept("mathematical calculation"));
  EXPECT_FALSE(vocab.kept("poetry"));
  EXPECT_EQ(vocab.kept_canonicals(), (std::vector<std::string>{"math calculation"}));
  EXPECT_FALSE(vocab.canonical("unknown").has_value());

  std::stringstream s;
  write_tag_report(s, vocab, "# test");
  const auto back = read_tag_report(s);
  EXPECT_EQ(back.entries().size(), 3u);
  EXPECT_EQ(*back.canonical("mathematical calculation"), "math calculation");
  EXPECT_FALSE(back.kept("poetry"));
}

TEST(NormalizeTags, FilterAppliesToMergedTotals) {
  // Neither spelling reaches 100 alone; together they do.
  TableEmbedder embedder({{"qa", {1.0f, 0.0f}}, {"q&a", {1.0f, 0.0f}}});
  const auto vocab = normalize_tags(sets_with({{"qa", 60}, {"q&a", 60}}), embedder);
  EXPECT_TRUE(vocab.kept("qa"));
  EXPECT_TRUE(vocab.kept("q&a"));
  EXPECT_EQ(*vocab.canonical("qa"), "q&a");  // equal counts: smallest string
}

TEST(NormalizeTags, RejectsBadLambdaAndSurfacesUpstream) {
  TableEmbedder embedder({{"a", {1.0f}}});
  NormalizeOptions o;
  o.lambda = 0.0;
  EXPECT_THROW(normalize_tags(sets_with({{"a", 1}}), embedder, o), ValidationError);
  EXPECT_THROW(normalize_tags(sets_with({{"b", 1}}), embedder), UpstreamError);
}

TEST(CategoryMap, DefaultsHave29Categories) {
  const auto map = CategoryMap::defaults();
  EXPECT_EQ(map.categories().size(), 29u);
  EXPECT_EQ(*map.category_for("Text Summarization"), "Text Summarization");
  EXPECT_FALSE(map.category_for("nope").has_value());
  std::size_t total = 0;
  for (const auto& [domain, members] : default_category_domains()) total += members.size();
  EXPECT_EQ(total, 29u);
}

TEST(CategoryMap, FromCsvAndValidation) {
  std::stringstream s("tag,category\npython,Coding\nrust,Coding\npoem,Writing\n");
  const auto map = CategoryMap::from_csv(s);
  EXPECT_EQ(map.categories(), (std::vector<std::string>{"Coding", "Writing"}));
  EXPECT_EQ(*map.category_for("rust"), "Coding");
  std::stringstream bad("tag,cat\n");
  EXPECT_THROW(CategoryMap::from_csv(bad), ValidationError);
  EXPECT_THROW(CategoryMap({"A", "A"}, {}), ValidationError);
  EXPECT_THROW(CategoryMap({"A"}, {{"x", "B"}}), ValidationError);
}

TEST(AssignCategories, RarestCategoryWins) {
  const auto map = CategoryMap::defaults();
  TagVocabulary vocab;
  Corpus c;
  auto a = make_instruction("a", "x");
  a.tags = {"Python"};
  auto b = make_instruction("b", "y");
  b.tags = {"Python", "Translation"};
  auto d = make_instruction("d", "z");
  d.tags = {"unmapped"};
  c.add(a);
  c.add(b);
  c.add(d);
  AssignmentStats stats;
  const auto out = assign_categories(c, vocab, map, &stats);
  EXPECT_EQ(*out[0].category, "Python");
  EXPECT_EQ(*out[1].category, "Translation");
  EXPECT_FALSE(out[2].category.has_value());
  EXPECT_EQ(stats.unassigned, 1u);
  EXPECT_EQ(stats.counts[*map.index_of("Python")], 1u);
}

TEST(AssignCategories, UsesCanonicalTagsAndDropsFiltered) {
  const auto map = CategoryMap::defaults();
  std::map<std::string, TagEntry> entries = {
      {"python", {50, "Python", true}}, {"Python", {200, "Python", true}}, {"rare", {3, "rare", false}}};
  TagVocabulary vocab(entries, 0.85, 100);
  Corpus c;
  auto a = make_instruction("a", "x");
  a.tags = {"python", "rare"};
  c.add(a);
  const auto out = assign_categories(c, vocab, map);
  EXPECT_EQ(out[0].tags, (std::vector<std::string>{"Python"}));
  EXPECT_EQ(*out[0].category, "Python");
}

TEST(AttachTags, ReplacesById) {
  Corpus c;
  c.add(make_instruction("a", "x"));
  c.add(make_instruction("b", "y"));
  const auto out = attach_tags(c, {{"b", {"z", "y", "z"}}});
  EXPECT_TRUE(out[0].tags.empty());
  EXPECT_EQ(out[1].tags, (std::vector<std::string>{"y", "z"}));
}
