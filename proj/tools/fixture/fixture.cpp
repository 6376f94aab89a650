#include "fixture.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "instopt/error.hpp"
#include "instopt/rng.hpp"
#include "instopt/tagging.hpp"

namespace instopt::fixture {

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

const std::vector<std::string>& substitutable_categories() {
  static const std::vector<std::string> c = {"NLU", "Concept Understanding",
                                             "Commonsense Reasoning"};
  return c;
}

// Domains on the symbolic side of the planted meta-group split.
bool symbolic(const std::string& category) {
  static const std::vector<std::string> domains = {"Math", "Coding", "Commonsense Reasoning"};
  for (const auto& [domain, members] : default_category_domains()) {
    if (contains(members, category)) return contains(domains, domain);
  }
  return false;
}

std::size_t stock_for(const std::string& category) {
  if (contains(subsequential_categories(), category)) return 450;
  if (contains(preliminary_categories(), category) || contains(hard_categories(), category)) {
    return 150;
  }
  if (contains(substitutable_categories(), category)) return 300;
  return 200;
}

std::string word(Rng& rng, char prefix, std::size_t vocab) {
  return prefix + std::to_string(rng.below(vocab));
}

std::string sentence(Rng& rng, char prefix, std::size_t vocab, std::size_t lo, std::size_t hi) {
  const std::size_t n = lo + rng.below(hi - lo + 1);
  std::string s;
  for (std::size_t k = 0; k < n; ++k) {
    if (k) s += ' ';
    s += word(rng, prefix, vocab);
  }
  return s;
}

std::string lower(std::string s) {
  for (char& ch : s) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  }
  return s;
}

}  // namespace

const std::vector<std::string>& hard_categories() {
  static const std::vector<std::string> c = {"Text Summarization", "Academic Writing"};
  return c;
}

const std::vector<std::string>& preliminary_categories() {
  static const std::vector<std::string> c = {"Math Reasoning", "Mathematical Modelling", "Python"};
  return c;
}

const std::vector<std::string>& subsequential_categories() {
  static const std::vector<std::string> c = {"Data Process and Analysis", "Programm Ability",
                                             "Logical Reasoning"};
  return c;
}

const std::vector<std::pair<std::string, std::string>>& planted_edges() {
  static const std::vector<std::pair<std::string, std::string>> e = {
      {"Mathematical Modelling", "Data Process and Analysis"},
      {"Math Reasoning", "Logical Reasoning"},
      {"Python", "Coding Algorithm"},
      {"Coding Algorithm", "Programm Ability"},
  };
  return e;
}

std::string keyword_for(const std::string& category) {
  std::string k = "kw";
  for (char ch : lower(category)) {
    if ((ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9')) k += ch;
  }
  return k;
}

std::vector<KeywordChatProvider::Rule> demo_rules() {
  std::vector<KeywordChatProvider::Rule> rules;
  const auto map = CategoryMap::defaults();
  for (const auto& c : map.categories()) {
    rules.push_back({keyword_for(c), c});
    // A lower-case spelling variant that normalisation folds back in.
    rules.push_back({keyword_for(c) + "alt", lower(c)});
  }
  rules.push_back({"kwchatter", "misc chatter"});
  return rules;
}

Corpus demo_corpus(const DemoSpec& spec) {
  Rng rng(spec.seed);
  Corpus corpus;
  std::size_t next_id = 0;
  auto make_id = [&] {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "ins%06zu", next_id++);
    return std::string(buf);
  };
  const auto map = CategoryMap::defaults();
  for (const auto& c : map.categories()) {
    for (std::size_t k = 0; k < stock_for(c); ++k) {
      std::string prompt = keyword_for(c) + (rng.below(5) == 0 ? "alt " : " ") +
                           sentence(rng, 'w', 4000, 25, 45);
      if (rng.below(100) == 0) prompt += " kwchatter";
      Instruction ins;
      ins.id = make_id();
      ins.turns = {{Role::user, prompt}, {Role::assistant, sentence(rng, 'w', 4000, 30, 60)}};
      ins.quality_score = std::round(1000.0 * (1.0 + 5.0 * rng.uniform())) / 1000.0;
      corpus.add(std::move(ins));
    }
  }
  const std::size_t base = corpus.size();
  for (std::size_t d = 0; d < spec.near_duplicates && base > 0; ++d) {
    Instruction copy = corpus[static_cast<std::size_t>(rng.below(base))];
    copy.id = make_id();
    copy.turns.back().text += ' ' + word(rng, 'w', 4000);
    corpus.add(std::move(copy));
  }
  return corpus;
}

std::vector<std::string> demo_benchmark(const Corpus& corpus, const DemoSpec& spec) {
  Rng rng(spec.seed ^ 0x5bd1e995u);
  std::vector<std::string> prompts;
  for (std::size_t k = 0; k < spec.benchmark_copies && !corpus.empty(); ++k) {
    prompts.push_back(corpus[static_cast<std::size_t>(rng.below(corpus.size()))].prompt_text());
  }
  for (std::size_t k = 0; k < spec.benchmark_unrelated; ++k) {
    prompts.push_back(sentence(rng, 'b', 4000, 15, 30));
  }
  return prompts;
}

SyntheticScoreSpec demo_score_spec(const DemoSpec& spec) {
  SyntheticScoreSpec s;
  s.categories = CategoryMap::defaults().categories();
  s.instances_per_category = spec.instances_per_category;
  s.seed = spec.seed;
  const std::size_t n = s.categories.size();
  std::vector<double> g(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = s.categories[i];
    if (contains(hard_categories(), c) || contains(preliminary_categories(), c)) g[i] = 6.0;
    if (contains(substitutable_categories(), c)) g[i] = 0.3;
  }
  s.addition_gain.assign(n, std::vector<double>(n, 0.0));
  s.ablation_ppl_shift.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool same = symbolic(s.categories[i]) == symbolic(s.categories[j]);
      const double m = i == j ? 1.0 : same ? 0.4 : -0.1;
      s.addition_gain[i][j] = g[i] * m;
    }
  }
  s.addition_noise_sd = 0.01;
  for (const auto& [from, to] : planted_edges()) {
    const auto fi = std::find(s.categories.begin(), s.categories.end(), from);
    const auto ti = std::find(s.categories.begin(), s.categories.end(), to);
    s.ablation_ppl_shift[static_cast<std::size_t>(fi - s.categories.begin())]
                        [static_cast<std::size_t>(ti - s.categories.begin())] = 0.5;
  }
  s.ablation_noise_sd = 0.05;
  return s;
}

void write_demo(const std::filesystem::path& dir, const DemoSpec& spec) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("fixture", "cannot write " + (dir / name).string());
    return out;
  };
  const Corpus corpus = demo_corpus(spec);
  {
    auto out = open("corpus.jsonl");
    write_corpus(out, corpus);
  }
  {
    auto out = open("keyword_rules.tsv");
    out << "# keyword\ttag\n";
    for (const auto& r : demo_rules()) out << r.keyword << '\t' << r.tag << '\n';
  }
  {
    auto out = open("benchmark.jsonl");
    for (const auto& p : demo_benchmark(corpus, spec)) {
      out << nlohmann::json{{"prompt", p}}.dump() << '\n';
    }
  }
  {
    auto out = open("scores.csv");
    write_scores(out, generate_synthetic_scores(demo_score_spec(spec)));
  }
  {
    auto out = open("instopt.toml");
    const auto abs = std::filesystem::absolute(dir);
    out << "seed = " << spec.seed << "\nthreads = 0\n\n"
        << "[chat]\nprovider = \"keyword\"\nrules = "
        << nlohmann::json((abs / "keyword_rules.tsv").string()).dump() << "\n\n"
        << "[embeddings]\nprovider = \"hashing\"\ndim = 1024\n\n"
        << "[optimize]\ntarget_size = " << spec.target_size << '\n';
  }
}

std::vector<ChainStep> run_demo_chain(const std::filesystem::path& dir,
                                      const std::filesystem::path& out_dir,
                                      const PipelineConfig& config) {
  const auto o = [&](const char* name) { return (out_dir / name).string(); };
  const auto in = [&](const char* name) { return (dir / name).string(); };
  const std::vector<std::pair<std::string, std::map<std::string, std::string>>> steps = {
      {"dedup", {{"input", in("corpus.jsonl")}}},
      {"decontaminate", {{"input", o("dedup.jsonl")}, {"benchmark", in("benchmark.jsonl")}}},
      {"tag", {{"input", o("decontaminated.jsonl")}}},
      {"normalize-tags", {{"tags", o("tag_sets.jsonl")}}},
      {"assign-categories",
       {{"input", o("decontaminated.jsonl")},
        {"tags", o("tag_sets.jsonl")},
        {"vocabulary", o("tag_vocabulary.csv")}}},
      {"ingest-scores", {{"scores", in("scores.csv")}}},
      {"equivalence", {{"scores", o("scores.csv")}}},
      {"metagroups", {{"gamma", o("equivalence.csv")}}},
      {"taxonomy", {{"scores", o("scores.csv")}}},
      {"optimize", {{"gamma", o("equivalence.csv")}, {"reference", o("categorized.jsonl")}}},
      {"materialize", {{"input", o("categorized.jsonl")}, {"solution", o("solution.csv")}}},
      {"curriculum", {{"input", o("materialized.jsonl")}, {"taxonomy", o("taxonomy.json")}}},
      {"report",
       {{"solution", o("solution.csv")},
        {"taxonomy", o("taxonomy.json")},
        {"gamma", o("equivalence.csv")}}},
  };
  std::vector<ChainStep> done;
  for (const auto& [command, inputs] : steps) {
    CommandArgs args;
    args.inputs = inputs;
    args.out_dir = out_dir;
    done.push_back({command, run_command(command, args, config)});
  }
  return done;
}

}  // namespace instopt::fixture
