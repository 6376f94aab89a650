#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "instopt/corpus.hpp"
#include "instopt/evalstore.hpp"
#include "instopt/pipeline.hpp"
#include "instopt/providers.hpp"

// Synthetic end-to-end workspace: a tagged-by-keyword corpus over the 29
// default categories, a benchmark prompt file and a score matrix with a
// planted response surface.
namespace instopt::fixture {

struct DemoSpec {
  std::uint64_t seed = 1;
  std::size_t near_duplicates = 200;
  std::size_t benchmark_copies = 20;
  std::size_t benchmark_unrelated = 30;
  std::size_t instances_per_category = 50;
  std::size_t target_size = 3000;
};

// Categories the planted surface makes hard to substitute.
const std::vector<std::string>& hard_categories();
// Roots and leaves of the planted dependency graph.
const std::vector<std::string>& preliminary_categories();
const std::vector<std::string>& subsequential_categories();
// Planted (prerequisite, dependent) pairs.
const std::vector<std::pair<std::string, std::string>>& planted_edges();

// Single-token keyword the mock tagger maps to `category`.
std::string keyword_for(const std::string& category);

std::vector<KeywordChatProvider::Rule> demo_rules();
// Untagged instructions. The first `near_duplicates` entries after the base
// set are one-token edits of earlier instructions.
Corpus demo_corpus(const DemoSpec& spec);
std::vector<std::string> demo_benchmark(const Corpus& corpus, const DemoSpec& spec);
SyntheticScoreSpec demo_score_spec(const DemoSpec& spec);

// Writes corpus.jsonl, keyword_rules.tsv, benchmark.jsonl, scores.csv and
// instopt.toml into `dir`.
void write_demo(const std::filesystem::path& dir, const DemoSpec& spec);

struct ChainStep {
  std::string command;
  CommandResult result;
};

// Runs dedup through report on a workspace written by write_demo, with
// artifacts under `out_dir`.
std::vector<ChainStep> run_demo_chain(const std::filesystem::path& dir,
                                      const std::filesystem::path& out_dir,
                                      const PipelineConfig& config);

}  // namespace instopt::fixture
