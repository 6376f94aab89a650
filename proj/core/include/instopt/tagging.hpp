#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "instopt/corpus.hpp"
#include "instopt/providers.hpp"

namespace instopt {

struct RawTagSet {
  std::string instruction_id;
  std::vector<std::string> tags;  // trimmed, non-empty, in tagger order
};

struct TagFailure {
  std::string instruction_id;
  int attempts = 0;
  std::string reason;
};

struct TaggingOptions {
  int max_attempts = 3;        // per instruction, counting unparseable replies
  unsigned concurrency = 4;    // in-flight requests
  std::string system_prompt;   // optional system message
};

struct TaggingResult {
  std::vector<RawTagSet> tag_sets;   // one per successfully tagged instruction, corpus order
  std::vector<TagFailure> failures;  // corpus order
};

// Built-in tagging prompt. `{dialogue}` is replaced by the instruction text.
std::string_view default_tagging_prompt();

// Substitutes `{dialogue}` in the template.
std::string render_tagging_prompt(std::string_view prompt_template,
                                  std::string_view dialogue);

// Finds the first bracketed list of quoted strings, e.g. ['a', "b"], and
// returns its trimmed, non-empty items. nullopt when no such list exists.
std::optional<std::vector<std::string>> parse_tag_list(std::string_view reply);

// Tags every instruction. Unparseable replies and transport errors are retried
// up to max_attempts; instructions that still fail are reported, not thrown.
TaggingResult tag_instructions(const Corpus& corpus, ChatProvider& client,
                               std::string_view prompt_template,
                               const TaggingOptions& options = {});

void write_tag_sets(std::ostream& out, const std::vector<RawTagSet>& sets,
                    const std::string& header_json = {});
std::vector<RawTagSet> read_tag_sets(std::istream& in);
void write_tag_failures(std::ostream& out, const std::vector<TagFailure>& failures);

// ---------------------------------------------------------------------------
// Normalisation.

struct TagEntry {
  std::size_t frequency = 0;  // instructions carrying the raw tag
  std::string canonical;
  bool kept = true;           // component total >= min_frequency
};

class TagVocabulary {
 public:
  TagVocabulary() = default;
  TagVocabulary(std::map<std::string, TagEntry> entries, double lambda,
                std::size_t min_frequency);

  const std::map<std::string, TagEntry>& entries() const noexcept { return entries_; }
  double lambda() const noexcept { return lambda_; }
  std::size_t min_frequency() const noexcept { return min_frequency_; }

  // Canonical form of a raw tag; nullopt for unknown tags.
  std::optional<std::string> canonical(std::string_view tag) const;
  // Whether the tag's component survived the long-tail filter.
  bool kept(std::string_view tag) const;
  // Sum of raw frequencies merged into `canonical_tag`.
  std::size_t merged_frequency(std::string_view canonical_tag) const;
  // Canonical tags that survived the filter, sorted.
  std::vector<std::string> kept_canonicals() const;

 private:
  std::map<std::string, TagEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> merged_;
  double lambda_ = 0.85;
  std::size_t min_frequency_ = 100;
};

struct NormalizeOptions {
  double lambda = 0.85;
  std::size_t min_frequency = 100;
  std::size_t batch_size = 256;
};

// Groups distinct tags into connected components of the cosine >= lambda
// graph. Each component maps to its most frequent member (ties: smallest
// string). Components with total frequency below min_frequency are dropped.
TagVocabulary normalize_tags(const std::vector<RawTagSet>& raw,
                             EmbeddingProvider& embedder,
                             const NormalizeOptions& options = {});

// Component labels for unit vectors under the cosine >= lambda relation.
// labels[i] is the smallest index in i's component.
std::vector<std::size_t> similarity_components(const std::vector<Embedding>& vectors,
                                               double lambda);

void write_tag_report(std::ostream& out, const TagVocabulary& vocab,
                      const std::string& comment = {});
TagVocabulary read_tag_report(std::istream& in);

// ---------------------------------------------------------------------------
// Categories.

class CategoryMap {
 public:
  CategoryMap() = default;
  // Throws ValidationError on duplicate categories or membership pointing at
  // an unknown category.
  CategoryMap(std::vector<std::string> categories,
              std::map<std::string, std::string> membership);

  // The 29 analysis categories; each category's own name is its member tag.
  static CategoryMap defaults();
  // CSV `tag,category`; categories are listed in first-appearance order.
  static CategoryMap from_csv(std::istream& in);

  const std::vector<std::string>& categories() const noexcept { return categories_; }
  const std::map<std::string, std::string>& membership() const noexcept { return membership_; }
  std::optional<std::size_t> index_of(std::string_view category) const;
  std::optional<std::string> category_for(std::string_view tag) const;

 private:
  std::vector<std::string> categories_;
  std::map<std::string, std::string> membership_;
};

// Domain grouping of the default categories (Math, Coding, ...).
const std::vector<std::pair<std::string, std::vector<std::string>>>& default_category_domains();

struct AssignmentStats {
  std::vector<std::size_t> counts;  // per category, CategoryMap order
  std::size_t unassigned = 0;
};

// Canonicalises tags, then assigns each instruction the matching category
// with the fewest members so far (ties: category order). Instructions with no
// matching tag get no category.
Corpus assign_categories(const Corpus& corpus, const TagVocabulary& vocab,
                         const CategoryMap& map, AssignmentStats* stats = nullptr);

// Applies tag sets to the corpus by instruction id (tags replaced).
Corpus attach_tags(const Corpus& corpus, const std::vector<RawTagSet>& sets);

}  // namespace instopt
