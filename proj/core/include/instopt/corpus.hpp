#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "instopt/providers.hpp"

namespace instopt {

enum class Role { user, assistant };

struct Turn {
  Role role = Role::user;
  std::string text;

  bool operator==(const Turn&) const = default;
};

struct Instruction {
  std::string id;
  std::vector<Turn> turns;
  std::vector<std::string> tags;  // sorted, unique
  std::optional<double> quality_score;
  std::optional<std::string> category;
  std::string language = "en";

  // All turn texts joined by '\n'.
  std::string dialogue_text() const;
  // User turn texts joined by '\n'.
  std::string prompt_text() const;

  bool operator==(const Instruction&) const = default;
};

struct Provenance {
  std::string source;
  std::size_t line = 0;  // 1-based line in `source`; 0 when synthesised

  bool operator==(const Provenance&) const = default;
};

// Ordered collection of instructions with unique ids. Mutating members keep
// the id index in sync; `instructions()` is read-only.
class Corpus {
 public:
  Corpus() = default;

  // Throws ValidationError on duplicate id or invalid instruction.
  void add(Instruction instruction, Provenance provenance = {});

  std::size_t size() const noexcept { return instructions_.size(); }
  bool empty() const noexcept { return instructions_.empty(); }
  const std::vector<Instruction>& instructions() const noexcept { return instructions_; }
  const std::vector<Provenance>& provenance() const noexcept { return provenance_; }
  const Instruction& operator[](std::size_t i) const { return instructions_[i]; }

  // Index of the instruction with `id`, if present.
  std::optional<std::size_t> find(std::string_view id) const;

  // Replace an instruction in place; the id must not change.
  void replace(std::size_t index, Instruction instruction);

  // Copy of the instructions at `indices`, in the order given.
  Corpus subset(const std::vector<std::size_t>& indices) const;

 private:
  std::vector<Instruction> instructions_;
  std::vector<Provenance> provenance_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Throws ValidationError when the instruction breaks a record invariant.
void validate_instruction(const Instruction& instruction);

enum class SchemaMode {
  strict,   // unknown keys are an error
  lenient,  // unknown keys are ignored
};

Corpus load_corpus(const std::string& path, SchemaMode mode = SchemaMode::strict);
Corpus parse_corpus(std::istream& in, const std::string& source_name,
                    SchemaMode mode = SchemaMode::strict);

// One JSON object per instruction. `header_json`, when non-empty, is written
// as the first line (a provenance record that parse_corpus skips).
void write_corpus(std::ostream& out, const Corpus& corpus,
                  const std::string& header_json = {});
std::string instruction_to_json(const Instruction& instruction);

// ---------------------------------------------------------------------------
// SimHash.

struct SimHashSignature {
  std::uint64_t bits = 0;
  std::string owner;
};

// XXH64 of `data`.
std::uint64_t xxh64(std::string_view data, std::uint64_t seed);

// Lowercased ASCII alphanumeric runs; every other byte separates tokens.
// Non-ASCII bytes are kept inside tokens.
std::vector<std::string_view> tokenize(std::string_view text, std::vector<std::string>& storage);

// 64-bit SimHash over unigram tokens. Empty text yields 0.
std::uint64_t simhash(std::string_view text, std::uint64_t seed = 0);
SimHashSignature simhash_signature(const Instruction& instruction, std::uint64_t seed = 0);

inline int hamming(std::uint64_t a, std::uint64_t b) noexcept {
  return __builtin_popcountll(a ^ b);
}

// Largest Hamming distance whose similarity 1 - h/64 still reaches `threshold`.
int hamming_cutoff(double threshold);

struct DedupOptions {
  double similarity_threshold = 0.95;
  std::uint64_t seed = 0;
  bool full_scan = false;     // compare against every kept signature
  unsigned threads = 1;       // signature computation only
};

struct RemovedPair {
  std::string kept_id;
  std::string removed_id;
  int hamming = 0;
};

struct DedupResult {
  Corpus corpus;
  std::vector<RemovedPair> removed;
};

// Greedy keep-first deduplication in load order. An instruction is removed
// when some earlier kept instruction lies within the Hamming cutoff; it is
// paired with the earliest such instruction.
DedupResult deduplicate(const Corpus& corpus, const DedupOptions& options = {});

// Same decision rule over raw signatures; returns the removed indices paired
// with the kept index. Used by deduplicate and exposed for benchmarks.
struct DedupDecision {
  std::size_t kept;
  std::size_t removed;
  int hamming;
};
std::vector<DedupDecision> dedup_signatures(const std::vector<std::uint64_t>& signatures,
                                            int cutoff, bool full_scan);

void write_dedup_report(std::ostream& out, const std::vector<RemovedPair>& removed,
                        const std::string& comment = {});

// ---------------------------------------------------------------------------
// Benchmark contamination.

struct ContaminationOptions {
  double cosine_threshold = 0.3;
  std::size_t batch_size = 256;
};

struct ExcludedInstruction {
  std::string id;
  double max_cosine = 0.0;
  std::size_t benchmark_index = 0;
};

struct ContaminationResult {
  Corpus corpus;
  std::vector<ExcludedInstruction> excluded;
};

// Drops instructions whose user-turn text has cosine similarity above the
// threshold to any benchmark prompt. Embedder failures surface as
// UpstreamError with the number of instructions already screened.
ContaminationResult filter_contamination(const Corpus& corpus,
                                         const std::vector<std::string>& benchmark_prompts,
                                         EmbeddingProvider& embedder,
                                         const ContaminationOptions& options = {});

// Reads benchmark prompts: JSON Lines with a "prompt" (or "text") field,
// or plain text with one prompt per line.
std::vector<std::string> load_benchmark_prompts(const std::string& path);

}  // namespace instopt
