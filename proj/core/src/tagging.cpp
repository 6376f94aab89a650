#include "instopt/tagging.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <numeric>
#include <istream>
#include <ostream>
#include <set>
#include <thread>

#include <json.hpp>

#include "csv.hpp"
#include "instopt/error.hpp"

namespace instopt {

using nlohmann::json;

namespace {
constexpr const char* kModule = "tagging";
}

std::string_view default_tagging_prompt() {
  return R"(Below is a dialogue between a user and an AI assistant. List the knowledge and skills needed to complete it, one short tag per item. Answer only with a list of tags in the form ['tag 1', 'tag 2', ...].

Dialogue:
{dialogue}

Tags:)";
}

std::string render_tagging_prompt(std::string_view prompt_template, std::string_view dialogue) {
  static constexpr std::string_view kSlot = "{dialogue}";
  std::string out;
  std::size_t pos = 0;
  bool substituted = false;
  for (std::size_t hit = prompt_template.find(kSlot); hit != std::string_view::npos;
       hit = prompt_template.find(kSlot, pos)) {
    out.append(prompt_template.substr(pos, hit - pos));
    out.append(dialogue);
    pos = hit + kSlot.size();
    substituted = true;
  }
  out.append(prompt_template.substr(pos));
  if (!substituted) {
    out.append("\n");
    out.append(dialogue);
  }
  return out;
}

namespace {

// Parses a quoted string starting at s[pos] (which is the quote). Advances pos
// past the closing quote.
std::optional<std::string> parse_quoted(std::string_view s, std::size_t& pos) {
  const char quote = s[pos++];
  std::string out;
  while (pos < s.size()) {
    const char ch = s[pos++];
    if (ch == '\\' && pos < s.size()) {
      const char next = s[pos++];
      switch (next) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        default: out.push_back(next); break;
      }
    } else if (ch == quote) {
      return out;
    } else {
      out.push_back(ch);
    }
  }
  return std::nullopt;
}

void skip_space(std::string_view s, std::size_t& pos) {
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\n' || s[pos] == '\r')) {
    ++pos;
  }
}

std::optional<std::vector<std::string>> parse_list_at(std::string_view s, std::size_t pos) {
  ++pos;  // '['
  std::vector<std::string> items;
  skip_space(s, pos);
  if (pos < s.size() && s[pos] == ']') return items;
  while (pos < s.size()) {
    skip_space(s, pos);
    if (pos >= s.size() || (s[pos] != '\'' && s[pos] != '"')) return std::nullopt;
    auto item = parse_quoted(s, pos);
    if (!item) return std::nullopt;
    if (std::string t = detail::trim(*item); !t.empty()) items.push_back(std::move(t));
    skip_space(s, pos);
    if (pos >= s.size()) return std::nullopt;
    if (s[pos] == ']') return items;
    if (s[pos] != ',') return std::nullopt;
    ++pos;
  }
  return std::nullopt;
}

}  // namespace

std::optional<std::vector<std::string>> parse_tag_list(std::string_view reply) {
  for (std::size_t pos = reply.find('['); pos != std::string_view::npos;
       pos = reply.find('[', pos + 1)) {
    if (auto items = parse_list_at(reply, pos)) return items;
  }
  return std::nullopt;
}

TaggingResult tag_instructions(const Corpus& corpus, ChatProvider& client,
                               std::string_view prompt_template, const TaggingOptions& options) {
  const auto& items = corpus.instructions();
  std::vector<std::optional<RawTagSet>> done(items.size());
  std::vector<std::optional<TagFailure>> failed(items.size());
  std::atomic<std::size_t> next{0};
  const int max_attempts = std::max(1, options.max_attempts);

  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      std::vector<ChatMessage> messages;
      if (!options.system_prompt.empty()) messages.push_back({"system", options.system_prompt});
      messages.push_back(
          {"user", render_tagging_prompt(prompt_template, items[i].dialogue_text())});
      std::string reason;
      int attempt = 1;
      for (; attempt <= max_attempts; ++attempt) {
        std::string reply;
        try {
          reply = client.complete(messages);
        } catch (const std::exception& e) {
          reason = std::string("transport: ") + e.what();
          continue;
        }
        if (auto tags = parse_tag_list(reply)) {
          done[i] = RawTagSet{items[i].id, std::move(*tags)};
          break;
        }
        reason = "no bracketed tag list in reply";
      }
      if (!done[i]) failed[i] = TagFailure{items[i].id, max_attempts, reason};
    }
  };

  const unsigned workers =
      std::max(1U, std::min<unsigned>(options.concurrency, static_cast<unsigned>(items.size())));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  TaggingResult result;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (done[i]) result.tag_sets.push_back(std::move(*done[i]));
    if (failed[i]) result.failures.push_back(std::move(*failed[i]));
  }
  return result;
}

void write_tag_sets(std::ostream& out, const std::vector<RawTagSet>& sets,
                    const std::string& header_json) {
  if (!header_json.empty()) out << header_json << '\n';
  for (const auto& set : sets) {
    nlohmann::ordered_json obj;
    obj["id"] = set.instruction_id;
    obj["tags"] = set.tags;
    out << obj.dump() << '\n';
  }
}

std::vector<RawTagSet> read_tag_sets(std::istream& in) {
  std::vector<RawTagSet> sets;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      const json obj = json::parse(line);
      if (obj.contains("_provenance")) continue;
      RawTagSet set{obj.at("id").get<std::string>(), {}};
      for (const auto& tag : obj.at("tags")) {
        if (std::string t = detail::trim(tag.get<std::string>()); !t.empty()) {
          set.tags.push_back(std::move(t));
        }
      }
      sets.push_back(std::move(set));
    } catch (const json::exception& e) {
      throw ValidationError(kModule, "tag sets line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return sets;
}

void write_tag_failures(std::ostream& out, const std::vector<TagFailure>& failures) {
  out << "instruction_id,attempts,reason\n";
  for (const auto& f : failures) {
    out << detail::csv_field(f.instruction_id) << ',' << f.attempts << ','
        << detail::csv_field(f.reason) << '\n';
  }
}

// ---------------------------------------------------------------------------

TagVocabulary::TagVocabulary(std::map<std::string, TagEntry> entries, double lambda,
                             std::size_t min_frequency)
    : entries_(std::move(entries)), lambda_(lambda), min_frequency_(min_frequency) {
  for (const auto& [tag, entry] : entries_) merged_[entry.canonical] += entry.frequency;
}

std::optional<std::string> TagVocabulary::canonical(std::string_view tag) const {
  const auto it = entries_.find(std::string(tag));
  if (it == entries_.end()) return std::nullopt;
  return it->second.canonical;
}

bool TagVocabulary::kept(std::string_view tag) const {
  const auto it = entries_.find(std::string(tag));
  return it != entries_.end() && it->second.kept;
}

std::size_t TagVocabulary::merged_frequency(std::string_view canonical_tag) const {
  const auto it = merged_.find(canonical_tag);
  return it == merged_.end() ? 0 : it->second;
}

std::vector<std::string> TagVocabulary::kept_canonicals() const {
  std::set<std::string> out;
  for (const auto& [tag, entry] : entries_) {
    if (entry.kept) out.insert(entry.canonical);
  }
  return {out.begin(), out.end()};
}

namespace {

struct DisjointSets {
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }

  // The smaller index becomes the root.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }

  std::vector<std::size_t> parent;
};

}  // namespace

std::vector<std::size_t> similarity_components(const std::vector<Embedding>& vectors,
                                               double lambda) {
  DisjointSets sets(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    for (std::size_t j = i + 1; j < vectors.size(); ++j) {
      if (cosine(vectors[i], vectors[j]) >= lambda) sets.unite(i, j);
    }
  }
  std::vector<std::size_t> labels(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) labels[i] = sets.find(i);
  return labels;
}

TagVocabulary normalize_tags(const std::vector<RawTagSet>& raw, EmbeddingProvider& embedder,
                             const NormalizeOptions& options) {
  if (!(options.lambda > 0.0 && options.lambda <= 1.0)) {
    throw ValidationError(kModule, "lambda must lie in (0, 1]");
  }
  std::map<std::string, std::size_t> frequency;
  for (const auto& set : raw) {
    std::set<std::string> unique;
    for (const auto& tag : set.tags) {
      std::string t = detail::trim(tag);
      if (!t.empty()) unique.insert(std::move(t));
    }
    for (const auto& t : unique) ++frequency[t];
  }

  std::vector<std::string> tags;
  tags.reserve(frequency.size());
  for (const auto& [tag, count] : frequency) tags.push_back(tag);

  std::vector<Embedding> vectors;
  vectors.reserve(tags.size());
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t start = 0; start < tags.size(); start += batch) {
    const std::vector<std::string> chunk(
        tags.begin() + static_cast<std::ptrdiff_t>(start),
        tags.begin() + static_cast<std::ptrdiff_t>(std::min(tags.size(), start + batch)));
    std::vector<Embedding> part;
    try {
      part = embedder.embed(chunk);
    } catch (const UpstreamError& e) {
      throw UpstreamError(kModule, "embedding tags failed after " + std::to_string(start) +
                                       " of " + std::to_string(tags.size()) + ": " + e.what(),
                          start);
    }
    if (part.size() != chunk.size()) {
      throw UpstreamError(kModule, "embedder returned a wrong number of vectors", start);
    }
    for (auto& v : part) vectors.push_back(std::move(v));
  }

  const auto labels = similarity_components(vectors, options.lambda);
  // Tags are sorted, so the first maximum in index order wins ties.
  std::map<std::size_t, std::size_t> best;   // root -> index of canonical member
  std::map<std::size_t, std::size_t> total;  // root -> summed frequency
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::size_t root = labels[i];
    total[root] += frequency[tags[i]];
    auto it = best.find(root);
    if (it == best.end() || frequency[tags[i]] > frequency[tags[it->second]]) best[root] = i;
  }

  std::map<std::string, TagEntry> entries;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::size_t root = labels[i];
    entries[tags[i]] = TagEntry{frequency[tags[i]], tags[best[root]],
                                total[root] >= options.min_frequency};
  }
  return TagVocabulary(std::move(entries), options.lambda, options.min_frequency);
}

void write_tag_report(std::ostream& out, const TagVocabulary& vocab, const std::string& comment) {
  if (!comment.empty()) out << comment << '\n';
  out << "raw_tag,canonical_tag,frequency,kept\n";
  for (const auto& [tag, entry] : vocab.entries()) {
    out << detail::csv_field(tag) << ',' << detail::csv_field(entry.canonical) << ','
        << entry.frequency << ',' << (entry.kept ? "true" : "false") << '\n';
  }
}

TagVocabulary read_tag_report(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!detail::next_data_line(in, line, line_no) || line != "raw_tag,canonical_tag,frequency,kept") {
    throw ValidationError(kModule, "tag report must start with raw_tag,canonical_tag,frequency,kept");
  }
  std::map<std::string, TagEntry> entries;
  while (detail::next_data_line(in, line, line_no)) {
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 4 || (fields[3] != "true" && fields[3] != "false")) {
      throw ValidationError(kModule, "tag report line " + std::to_string(line_no) + " is malformed");
    }
    try {
      entries[fields[0]] = TagEntry{std::stoul(fields[2]), fields[1], fields[3] == "true"};
    } catch (const std::exception&) {
      throw ValidationError(kModule, "tag report line " + std::to_string(line_no) +
                                         ": bad frequency");
    }
  }
  return TagVocabulary(std::move(entries), 0.85, 100);
}

// ---------------------------------------------------------------------------

CategoryMap::CategoryMap(std::vector<std::string> categories,
                         std::map<std::string, std::string> membership)
    : categories_(std::move(categories)), membership_(std::move(membership)) {
  std::set<std::string> seen;
  for (const auto& c : categories_) {
    if (c.empty()) throw ValidationError(kModule, "empty category name");
    if (!seen.insert(c).second) throw ValidationError(kModule, "duplicate category \"" + c + "\"");
  }
  for (const auto& [tag, category] : membership_) {
    if (!seen.count(category)) {
      throw ValidationError(kModule, "tag \"" + tag + "\" maps to unknown category \"" +
                                         category + "\"");
    }
  }
}

const std::vector<std::pair<std::string, std::vector<std::string>>>& default_category_domains() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> domains = {
      {"Math",
       {"Math Reasoning", "Mathematical Modelling", "Arithmetic Calculation",
        "Data Process and Analysis"}},
      {"Coding", {"Python", "Java", "Programm Ability", "Coding Algorithm"}},
      {"QA",
       {"STEM Knowledge QA", "Humanities & Social Sciences QA", "Commonsense Understanding",
        "Open Domain QA"}},
      {"Commonsense Reasoning",
       {"Commonsense Reasoning", "Concept Understanding", "Logical Reasoning"}},
      {"NLP & NLU",
       {"Information Extraction", "Sentiment Analysis", "Story Understanding",
        "Text Classification", "NLU", "Text Summarization", "Translation",
        "Event Understanding"}},
      {"Dialogue & Applications",
       {"Multiturn Dialogue", "Communication & Social Media",
        "Character Understanding and Role-Playing", "String Process", "Academic Writing",
        "Creative Writing"}},
  };
  return domains;
}

CategoryMap CategoryMap::defaults() {
  std::vector<std::string> categories;
  std::map<std::string, std::string> membership;
  for (const auto& [domain, members] : default_category_domains()) {
    for (const auto& c : members) {
      categories.push_back(c);
      membership[c] = c;
    }
  }
  return CategoryMap(std::move(categories), std::move(membership));
}

CategoryMap CategoryMap::from_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!detail::next_data_line(in, line, line_no) || line != "tag,category") {
    throw ValidationError(kModule, "category map must start with tag,category");
  }
  std::vector<std::string> categories;
  std::map<std::string, std::string> membership;
  while (detail::next_data_line(in, line, line_no)) {
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw ValidationError(kModule, "category map line " + std::to_string(line_no) +
                                         " is malformed");
    }
    if (std::find(categories.begin(), categories.end(), fields[1]) == categories.end()) {
      categories.push_back(fields[1]);
    }
    if (!membership.emplace(fields[0], fields[1]).second) {
      throw ValidationError(kModule, "tag \"" + fields[0] + "\" is mapped twice");
    }
  }
  return CategoryMap(std::move(categories), std::move(membership));
}

std::optional<std::size_t> CategoryMap::index_of(std::string_view category) const {
  const auto it = std::find(categories_.begin(), categories_.end(), category);
  if (it == categories_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - categories_.begin());
}

std::optional<std::string> CategoryMap::category_for(std::string_view tag) const {
  const auto it = membership_.find(std::string(tag));
  if (it == membership_.end()) return std::nullopt;
  return it->second;
}

Corpus assign_categories(const Corpus& corpus, const TagVocabulary& vocab, const CategoryMap& map,
                         AssignmentStats* stats) {
  std::vector<std::size_t> counts(map.categories().size(), 0);
  std::size_t unassigned = 0;
  Corpus out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Instruction ins = corpus[i];
    std::vector<std::string> tags;
    for (const auto& tag : ins.tags) {
      if (auto canonical = vocab.canonical(tag)) {
        if (vocab.kept(tag)) tags.push_back(*canonical);
      } else {
        tags.push_back(tag);
      }
    }
    std::sort(tags.begin(), tags.end());
    tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
    ins.tags = std::move(tags);

    std::optional<std::size_t> chosen;
    for (const auto& tag : ins.tags) {
      const auto category = map.category_for(tag);
      if (!category) continue;
      const std::size_t idx = *map.index_of(*category);
      if (!chosen || counts[idx] < counts[*chosen] ||
          (counts[idx] == counts[*chosen] && idx < *chosen)) {
        chosen = idx;
      }
    }
    if (chosen) {
      ++counts[*chosen];
      ins.category = map.categories()[*chosen];
    } else {
      ++unassigned;
      ins.category.reset();
    }
    out.add(std::move(ins), corpus.provenance()[i]);
  }
  if (stats) *stats = AssignmentStats{std::move(counts), unassigned};
  return out;
}

Corpus attach_tags(const Corpus& corpus, const std::vector<RawTagSet>& sets) {
  std::map<std::string, const RawTagSet*> by_id;
  for (const auto& set : sets) by_id[set.instruction_id] = &set;
  Corpus out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Instruction ins = corpus[i];
    if (const auto it = by_id.find(ins.id); it != by_id.end()) {
      ins.tags = it->second->tags;
      std::sort(ins.tags.begin(), ins.tags.end());
      ins.tags.erase(std::unique(ins.tags.begin(), ins.tags.end()), ins.tags.end());
    }
    out.add(std::move(ins), corpus.provenance()[i]);
  }
  return out;
}

}  // namespace instopt
