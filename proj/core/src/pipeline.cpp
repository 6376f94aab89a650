#include "instopt/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "csv.hpp"
#include "instopt/corpus.hpp"
#include "instopt/curriculum.hpp"
#include "instopt/eecpo.hpp"
#include "instopt/error.hpp"
#include "instopt/evalstore.hpp"
#include "instopt/interaction.hpp"
#include "instopt/tagging.hpp"
#include "instopt/taxonomy.hpp"

namespace instopt {

namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "pipeline";

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> d = {
      {"seed", ""},
      {"threads", "1"},
      {"dedup.threshold", "0.95"},
      {"dedup.hash_seed", "0"},
      {"dedup.full_scan", "false"},
      {"contamination.threshold", "0.3"},
      {"contamination.batch_size", "256"},
      {"tagging.prompt", ""},
      {"tagging.max_attempts", "3"},
      {"tagging.concurrency", "4"},
      {"tagging.lambda", "0.85"},
      {"tagging.min_frequency", "100"},
      {"chat.provider", "openai"},
      {"chat.url", "http://localhost:8000/v1/chat/completions"},
      {"chat.model", ""},
      {"chat.api_key_env", "OPENAI_API_KEY"},
      {"chat.timeout_seconds", "60"},
      {"chat.max_attempts", "4"},
      {"chat.rules", ""},
      {"chat.reply", "[]"},
      {"embeddings.provider", "openai"},
      {"embeddings.url", "http://localhost:8000/v1/embeddings"},
      {"embeddings.model", ""},
      {"embeddings.api_key_env", "OPENAI_API_KEY"},
      {"embeddings.timeout_seconds", "60"},
      {"embeddings.max_attempts", "4"},
      {"embeddings.batch", "64"},
      {"embeddings.dim", "256"},
      {"embeddings.seed", "0"},
      {"equivalence.eps", "1e-06"},
      {"equivalence.aggregation", "per_instance_mean"},
      {"equivalence.likelihood", "sum"},
      {"equivalence.winsorize", ""},
      {"metagroups.k", "2"},
      {"taxonomy.q", "0.05"},
      {"taxonomy.zero_method", "wilcox"},
      {"taxonomy.exact_max_n", "25"},
      {"taxonomy.allow_unequal_ablation", "false"},
      {"optimize.alpha_source", ""},
      {"optimize.band_low", "0.5"},
      {"optimize.band_high", "2.0"},
      {"optimize.floor", "0.001"},
      {"optimize.orientation", "donor_rows"},
      {"optimize.target_size", "10000"},
      {"curriculum.shift_fraction", "0.5"},
  };
  return d;
}

bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

bool parse_int(const std::string& s, std::int64_t& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

void require_range(const PipelineConfig& c, const std::string& key, double lo, double hi,
                   bool lo_open = false, bool hi_open = false) {
  const double v = c.get_double(key);
  const bool ok = (lo_open ? v > lo : v >= lo) && (hi_open ? v < hi : v <= hi);
  if (!ok) {
    throw ValidationError(kModule, key + " = " + c.get(key) + " is outside " +
                                       (lo_open ? "(" : "[") + detail::format_double(lo) + ", " +
                                       detail::format_double(hi) + (hi_open ? ")" : "]"));
  }
}

void require_choice(const PipelineConfig& c, const std::string& key,
                    std::initializer_list<const char*> choices) {
  for (const char* choice : choices) {
    if (c.get(key) == choice) return;
  }
  std::string list;
  for (const char* choice : choices) list += std::string(list.empty() ? "" : ", ") + choice;
  throw ValidationError(kModule, key + " must be one of " + list + ", got \"" + c.get(key) + "\"");
}

std::optional<Winsorization> parse_winsorize(const std::string& text) {
  if (text.empty()) return std::nullopt;
  const auto parts = detail::split_csv_line(text);
  Winsorization w;
  if (parts.size() != 2 || !parse_double(detail::trim(parts[0]), w.lower_percentile) ||
      !parse_double(detail::trim(parts[1]), w.upper_percentile) || w.lower_percentile < 0 ||
      w.lower_percentile >= w.upper_percentile || w.upper_percentile > 1) {
    throw ValidationError(kModule, "equivalence.winsorize must be \"lo,hi\" with 0 <= lo < hi <= 1");
  }
  return w;
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& value, const std::string& where) {
  if (value.size() >= 2 && value.front() == '"') {
    if (value.back() != '"') throw ValidationError(kModule, where + ": unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < value.size(); ++i) {
      if (value[i] == '\\' && i + 2 < value.size()) {
        const char next = value[++i];
        out += next == 'n' ? '\n' : next == 't' ? '\t' : next;
      } else {
        out += value[i];
      }
    }
    return out;
  }
  if (!value.empty() && value.front() == '"') {
    throw ValidationError(kModule, where + ": unterminated string");
  }
  return value;
}

// ---------------------------------------------------------------------------
// Command plumbing.

struct Context {
  const CommandArgs& args;
  const PipelineConfig& config;
  std::string command;
  CommandResult result;

  const std::string* input(const std::string& role) const {
    const auto it = args.inputs.find(role);
    if (it == args.inputs.end() || it->second.empty()) return nullptr;
    return &it->second;
  }

  const std::string& required(const std::string& role) const {
    const auto* path = input(role);
    if (!path) throw ValidationError(kModule, command + " needs --" + role);
    return *path;
  }

  std::ifstream open_in(const std::string& role) const {
    const auto& path = required(role);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError(kModule, "cannot open " + role + " file " + path);
    return in;
  }

  std::string comment() const { return provenance_comment(config, command); }
  std::string json() const { return provenance_json(config, command); }
  std::string jsonl_header() const { return "{\"_provenance\":" + json() + "}"; }

  template <typename Fn>
  void write(const std::string& name, Fn&& fn) {
    std::error_code ec;
    fs::create_directories(args.out_dir, ec);
    const fs::path path = args.out_dir / name;
    std::ostringstream buffer;
    fn(buffer);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError(kModule, "cannot write " + path.string());
    out << buffer.str();
    if (!out.flush()) throw ValidationError(kModule, "failed writing " + path.string());
    result.artifacts.push_back(path);
  }
};

std::map<std::string, double> read_sizes(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  if (!detail::next_data_line(in, line, line_no) || line != "category,size") {
    throw ValidationError(kModule, source + " must start with the header category,size");
  }
  std::map<std::string, double> sizes;
  while (detail::next_data_line(in, line, line_no)) {
    const auto f = detail::split_csv_line(line);
    double v = 0;
    if (f.size() != 2 || !parse_double(detail::trim(f[1]), v) || v <= 0) {
      throw ValidationError(kModule, source + ":" + std::to_string(line_no) +
                                         ": expected category,positive size");
    }
    if (!sizes.emplace(f[0], v).second) {
      throw ValidationError(kModule, source + ":" + std::to_string(line_no) +
                                         ": duplicate category " + f[0]);
    }
  }
  return sizes;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(kModule, "cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

EquivalenceOptions equivalence_options(const PipelineConfig& c) {
  EquivalenceOptions o;
  o.eps = c.get_double("equivalence.eps");
  o.aggregation = c.get("equivalence.aggregation") == "ratio_of_means"
                      ? RatioAggregation::ratio_of_means
                      : RatioAggregation::per_instance_mean;
  o.likelihood = c.get("equivalence.likelihood") == "mean" ? LikelihoodAggregation::mean
                                                           : LikelihoodAggregation::sum;
  o.winsorize = parse_winsorize(c.get("equivalence.winsorize"));
  return o;
}

Corpus load_input(const Context& ctx, const std::string& role) {
  return load_corpus(ctx.required(role), SchemaMode::strict);
}

std::size_t target_size(const Context& ctx) {
  if (ctx.args.target_size) return *ctx.args.target_size;
  return static_cast<std::size_t>(ctx.config.get_int("optimize.target_size"));
}

CommandResult cmd_dedup(Context& ctx) {
  const Corpus corpus = load_input(ctx, "input");
  DedupOptions o;
  o.similarity_threshold = ctx.config.get_double("dedup.threshold");
  o.seed = static_cast<std::uint64_t>(ctx.config.get_int("dedup.hash_seed"));
  o.full_scan = ctx.config.get_bool("dedup.full_scan");
  o.threads = ctx.config.threads();
  const auto r = deduplicate(corpus, o);
  ctx.write("dedup.jsonl", [&](std::ostream& out) { write_corpus(out, r.corpus, ctx.jsonl_header()); });
  ctx.write("dedup_removed.csv",
            [&](std::ostream& out) { write_dedup_report(out, r.removed, ctx.comment()); });
  ctx.result.summary = "dedup: kept " + std::to_string(r.corpus.size()) + " of " +
                       std::to_string(corpus.size()) + ", removed " +
                       std::to_string(r.removed.size());
  return ctx.result;
}

CommandResult cmd_decontaminate(Context& ctx) {
  const Corpus corpus = load_input(ctx, "input");
  const auto prompts = load_benchmark_prompts(ctx.required("benchmark"));
  auto embedder = make_embedding_provider(ctx.config);
  ContaminationOptions o;
  o.cosine_threshold = ctx.config.get_double("contamination.threshold");
  o.batch_size = static_cast<std::size_t>(ctx.config.get_int("contamination.batch_size"));
  const auto r = filter_contamination(corpus, prompts, *embedder, o);
  ctx.write("decontaminated.jsonl",
            [&](std::ostream& out) { write_corpus(out, r.corpus, ctx.jsonl_header()); });
  ctx.write("contamination_excluded.csv", [&](std::ostream& out) {
    out << ctx.comment() << "\nid,max_cosine,benchmark_index\n";
    for (const auto& e : r.excluded) {
      out << detail::csv_field(e.id) << ',' << detail::format_double(e.max_cosine) << ','
          << e.benchmark_index << '\n';
    }
  });
  ctx.result.summary = "decontaminate: excluded " + std::to_string(r.excluded.size()) + " of " +
                       std::to_string(corpus.size()) + " against " +
                       std::to_string(prompts.size()) + " benchmark prompts";
  return ctx.result;
}

CommandResult cmd_tag(Context& ctx) {
  const Corpus corpus = load_input(ctx, "input");
  auto chat = make_chat_provider(ctx.config);
  const std::string prompt = ctx.config.has_value("tagging.prompt")
                                 ? read_text_file(ctx.config.get("tagging.prompt"))
                                 : std::string(default_tagging_prompt());
  TaggingOptions o;
  o.max_attempts = static_cast<int>(ctx.config.get_int("tagging.max_attempts"));
  o.concurrency = static_cast<unsigned>(ctx.config.get_int("tagging.concurrency"));
  const auto r = tag_instructions(corpus, *chat, prompt, o);
  ctx.write("tag_sets.jsonl",
            [&](std::ostream& out) { write_tag_sets(out, r.tag_sets, ctx.jsonl_header()); });
  ctx.write("tag_failures.csv", [&](std::ostream& out) {
    out << ctx.comment() << '\n';
    write_tag_failures(out, r.failures);
  });
  ctx.result.summary = "tag: tagged " + std::to_string(r.tag_sets.size()) + " of " +
                       std::to_string(corpus.size()) + ", failures " +
                       std::to_string(r.failures.size());
  return ctx.result;
}

CommandResult cmd_normalize_tags(Context& ctx) {
  auto in = ctx.open_in("tags");
  const auto sets = read_tag_sets(in);
  auto embedder = make_embedding_provider(ctx.config);
  NormalizeOptions o;
  o.lambda = ctx.config.get_double("tagging.lambda");
  o.min_frequency = static_cast<std::size_t>(ctx.config.get_int("tagging.min_frequency"));
  o.batch_size = static_cast<std::size_t>(ctx.config.get_int("embeddings.batch"));
  const auto vocab = normalize_tags(sets, *embedder, o);
  ctx.write("tag_vocabulary.csv",
            [&](std::ostream& out) { write_tag_report(out, vocab, ctx.comment()); });
  ctx.result.summary = "normalize-tags: " + std::to_string(vocab.entries().size()) +
                       " raw tags, " + std::to_string(vocab.kept_canonicals().size()) +
                       " canonical tags kept";
  return ctx.result;
}

CommandResult cmd_assign_categories(Context& ctx) {
  const Corpus corpus = load_input(ctx, "input");
  auto tags_in = ctx.open_in("tags");
  const auto sets = read_tag_sets(tags_in);
  auto vocab_in = ctx.open_in("vocabulary");
  const auto vocab = read_tag_report(vocab_in);
  CategoryMap map = CategoryMap::defaults();
  if (ctx.input("category-map")) {
    auto map_in = ctx.open_in("category-map");
    map = CategoryMap::from_csv(map_in);
  }
  AssignmentStats stats;
  const Corpus out_corpus = assign_categories(attach_tags(corpus, sets), vocab, map, &stats);
  ctx.write("categorized.jsonl",
            [&](std::ostream& out) { write_corpus(out, out_corpus, ctx.jsonl_header()); });
  ctx.write("category_counts.csv", [&](std::ostream& out) {
    out << ctx.comment() << "\ncategory,count\n";
    for (std::size_t i = 0; i < map.categories().size(); ++i) {
      out << detail::csv_field(map.categories()[i]) << ',' << stats.counts[i] << '\n';
    }
  });
  ctx.result.summary = "assign-categories: " + std::to_string(corpus.size() - stats.unassigned) +
                       " assigned, " + std::to_string(stats.unassigned) + " without a category";
  return ctx.result;
}

CommandResult cmd_ingest_scores(Context& ctx) {
  const auto m = ingest_scores(ctx.required("scores"));
  ctx.write("scores.csv", [&](std::ostream& out) { write_scores(out, m, ctx.comment()); });
  std::size_t additions = 0, ablations = 0;
  for (const auto& v : m.variants()) {
    additions += v.kind == VariantKind::addition;
    ablations += v.kind == VariantKind::ablation;
  }
  ctx.result.summary = "ingest-scores: " + std::to_string(m.record_count()) + " records, " +
                       std::to_string(m.categories().size()) + " categories, " +
                       std::to_string(additions) + " addition and " + std::to_string(ablations) +
                       " ablation variants";
  return ctx.result;
}

CommandResult cmd_equivalence(Context& ctx) {
  const auto m = ingest_scores(ctx.required("scores"));
  auto o = equivalence_options(ctx.config);
  if (ctx.input("addition-sizes")) {
    auto in = ctx.open_in("addition-sizes");
    o.addition_sizes = read_sizes(in, ctx.required("addition-sizes"));
  }
  const auto g = build_equivalence_matrix(m, o, ctx.config.threads());
  ctx.write("equivalence.csv", [&](std::ostream& out) { write_equivalence_csv(out, g, ctx.comment()); });
  ctx.write("equivalence.svg", [&](std::ostream& out) { write_equivalence_svg(out, g, ctx.comment()); });
  std::size_t skipped = 0;
  for (const auto& row : g.skipped) {
    for (std::size_t s : row) skipped += s;
  }
  ctx.result.summary = "equivalence: " + std::to_string(g.size()) + "x" +
                       std::to_string(g.size()) + " matrix, " + std::to_string(skipped) +
                       " instances skipped";
  return ctx.result;
}

CommandResult cmd_metagroups(Context& ctx) {
  auto in = ctx.open_in("gamma");
  const auto g = read_equivalence_csv(in);
  const auto k = ctx.config.get_int("metagroups.k");
  const auto grouping = cluster_meta_groups(g, static_cast<std::size_t>(k));
  ctx.write("metagroups.json",
            [&](std::ostream& out) { write_meta_groups(out, grouping, ctx.json()); });
  ctx.result.summary = "metagroups: " + std::to_string(g.size()) + " categories in " +
                       std::to_string(grouping.groups) + " groups";
  return ctx.result;
}

CommandResult cmd_taxonomy(Context& ctx) {
  const auto m = ingest_scores(ctx.required("scores"));
  DependencyOptions o;
  o.alpha = ctx.config.get_double("taxonomy.q");
  o.wilcoxon.zeros =
      ctx.config.get("taxonomy.zero_method") == "pratt" ? ZeroMethod::pratt : ZeroMethod::wilcox;
  o.wilcoxon.exact_max_n = static_cast<std::size_t>(ctx.config.get_int("taxonomy.exact_max_n"));
  o.allow_unequal_ablation = ctx.config.get_bool("taxonomy.allow_unequal_ablation");
  o.threads = ctx.config.threads();
  if (ctx.input("ablation-sizes")) {
    auto in = ctx.open_in("ablation-sizes");
    for (const auto& [category, size] : read_sizes(in, ctx.required("ablation-sizes"))) {
      if (size != std::floor(size)) {
        throw ValidationError(kModule, "ablation size for " + category + " must be an integer");
      }
      o.ablation_sizes[category] = static_cast<std::size_t>(size);
    }
  }
  const auto graph = induce_dependency_graph(m, o);
  const auto t = layer_taxonomy(graph);
  ctx.write("dependency_tests.csv",
            [&](std::ostream& out) { write_dependency_report(out, graph, ctx.comment()); });
  ctx.write("taxonomy.json", [&](std::ostream& out) { write_taxonomy_json(out, t, ctx.json()); });
  ctx.result.summary = "taxonomy: " + std::to_string(graph.edges.size()) + " edges; " +
                       std::to_string(t.preliminary.size()) + " preliminary, " +
                       std::to_string(t.intermediary.size()) + " intermediary, " +
                       std::to_string(t.subsequential.size()) + " subsequential" +
                       (t.cycles.empty() ? "" : ", " + std::to_string(t.cycles.size()) + " cycles");
  return ctx.result;
}

ProblemOptions problem_options(const PipelineConfig& c) {
  ProblemOptions o;
  o.low_mult = c.get_double("optimize.band_low");
  o.high_mult = c.get_double("optimize.band_high");
  o.floor = c.get_double("optimize.floor");
  o.orientation = c.get("optimize.orientation") == "transposed" ? CoefficientOrientation::transposed
                                                               : CoefficientOrientation::donor_rows;
  return o;
}

CommandResult cmd_optimize(Context& ctx) {
  auto in = ctx.open_in("gamma");
  const auto g = read_equivalence_csv(in);
  std::string reference_path;
  if (const auto* path = ctx.input("reference")) {
    reference_path = *path;
  } else if (ctx.config.has_value("optimize.alpha_source")) {
    reference_path = ctx.config.get("optimize.alpha_source");
  } else {
    throw ValidationError(kModule, "optimize needs --reference or optimize.alpha_source");
  }
  const Corpus reference = load_corpus(reference_path, SchemaMode::strict);
  const auto importance = estimate_importance(reference, g.categories, reference_path);
  const auto problem = build_problem(g, importance, problem_options(ctx.config));
  const auto solution = solve_proportions(problem);
  const auto quota = apportion(solution.w, target_size(ctx));
  const auto rows = solution_report(problem, solution, quota);
  ctx.write("solution.csv", [&](std::ostream& out) { write_solution_report(out, rows, ctx.comment()); });
  ctx.write("weight_change.svg",
            [&](std::ostream& out) { write_weight_change_svg(out, rows, ctx.comment()); });
  std::size_t up = 0;
  for (const auto& r : rows) up += r.w_after > r.w_before;
  char objective[64];
  std::snprintf(objective, sizeof(objective), "%.6g", solution.objective);
  ctx.result.summary = "optimize: objective " + std::string(objective) + ", " +
                       std::to_string(up) + " of " + std::to_string(rows.size()) +
                       " categories up-weighted";
  return ctx.result;
}

CommandResult cmd_materialize(Context& ctx) {
  const Corpus corpus = load_input(ctx, "input");
  auto in = ctx.open_in("solution");
  auto rows = read_solution_report(in);
  ProportionSolution solution;
  for (const auto& r : rows) {
    solution.categories.push_back(r.category);
    solution.w.push_back(r.w_after);
  }
  const auto r = materialize(corpus, solution, target_size(ctx));
  std::size_t shortfall = 0;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    rows[j].quota = r.quota[j];
    rows[j].shortfall = r.shortfall[j];
    shortfall += r.shortfall[j];
  }
  ctx.write("materialized.jsonl",
            [&](std::ostream& out) { write_corpus(out, r.corpus, ctx.jsonl_header()); });
  ctx.write("materialize_report.csv",
            [&](std::ostream& out) { write_solution_report(out, rows, ctx.comment()); });
  ctx.result.summary = "materialize: selected " + std::to_string(r.corpus.size()) + " of target " +
                       std::to_string(target_size(ctx)) + ", shortfall " +
                       std::to_string(shortfall);
  return ctx.result;
}

CommandResult cmd_curriculum(Context& ctx) {
  const Corpus d = load_input(ctx, "input");
  auto in = ctx.open_in("taxonomy");
  const auto t = read_taxonomy_json(in);
  const auto plan = plan_curriculum(d, t, ctx.config.seed(),
                                    ctx.config.get_double("curriculum.shift_fraction"));
  const auto seq = emit_sequence(plan, d);
  ctx.write("curriculum.jsonl",
            [&](std::ostream& out) { write_sequence(out, seq, d, nullptr, ctx.jsonl_header()); });
  ctx.write("curriculum_plan.json",
            [&](std::ostream& out) { out << plan_metadata_json(plan, ctx.json()) << '\n'; });
  ctx.result.summary = "curriculum: " + std::to_string(seq.entries.size()) + " entries over " +
                       std::to_string(kEpochs) + " epochs, shift " + std::to_string(plan.shift);
  return ctx.result;
}

CommandResult cmd_mixplus(Context& ctx) {
  const Corpus d = load_input(ctx, "input");
  const Corpus pool = load_input(ctx, "pool");
  auto in = ctx.open_in("taxonomy");
  const auto t = read_taxonomy_json(in);
  const auto seq = emit_mix_plus(d, pool, t, ctx.config.seed());
  ctx.write("mixplus.jsonl",
            [&](std::ostream& out) { write_sequence(out, seq, d, &pool, ctx.jsonl_header()); });
  ctx.result.summary = "mixplus: " + std::to_string(seq.entries.size()) + " entries, " +
                       std::to_string(2 * d.size()) + " added preliminary instructions";
  return ctx.result;
}

CommandResult cmd_report(Context& ctx) {
  auto in = ctx.open_in("solution");
  const auto rows = read_solution_report(in);
  std::optional<Taxonomy> taxonomy;
  if (ctx.input("taxonomy")) {
    auto tin = ctx.open_in("taxonomy");
    taxonomy = read_taxonomy_json(tin);
  }
  std::optional<EquivalenceMatrix> gamma;
  if (ctx.input("gamma")) {
    auto gin = ctx.open_in("gamma");
    gamma = read_equivalence_csv(gin);
  }
  ctx.write("weight_change.svg",
            [&](std::ostream& out) { write_weight_change_svg(out, rows, ctx.comment()); });
  if (gamma) {
    ctx.write("equivalence.svg",
              [&](std::ostream& out) { write_equivalence_svg(out, *gamma, ctx.comment()); });
  }
  std::size_t up = 0, down = 0;
  ctx.write("report.md", [&](std::ostream& out) {
    out << "<!-- " << ctx.comment() << " -->\n";
    out << "# Category weights\n\n| category | layer | alpha | w_after | change | quota | shortfall |\n";
    out << "|---|---|---:|---:|---:|---:|---:|\n";
    char buf[160];
    for (const auto& r : rows) {
      const double delta = r.w_after - r.w_before;
      up += delta > 0;
      down += delta < 0;
      std::string layer = "-";
      if (taxonomy) {
        if (const auto l = taxonomy->layer_of(r.category)) {
          layer = *l == Taxonomy::Layer::preliminary    ? "preliminary"
                  : *l == Taxonomy::Layer::intermediary ? "intermediary"
                                                        : "subsequential";
        }
      }
      std::snprintf(buf, sizeof(buf), "| %.4f | %.4f | %+.4f | %zu | %zu |\n", r.alpha, r.w_after,
                    delta, r.quota, r.shortfall);
      out << "| " << r.category << " | " << layer << ' ' << buf;
    }
    out << "\nUp-weighted: " << up << ", down-weighted: " << down << ".\n";
    if (taxonomy && !taxonomy->cycles.empty()) {
      out << "\nDependency cycles:\n";
      for (const auto& cycle : taxonomy->cycles) {
        out << "-";
        for (const auto& c : cycle) out << ' ' << c;
        out << '\n';
      }
    }
  });
  ctx.result.summary = "report: " + std::to_string(rows.size()) + " categories, " +
                       std::to_string(up) + " up-weighted, " + std::to_string(down) +
                       " down-weighted";
  return ctx.result;
}

using Handler = CommandResult (*)(Context&);

struct CommandSpec {
  std::string name;
  std::vector<std::string> inputs;
  Handler handler;
};

const std::vector<CommandSpec>& command_table() {
  static const std::vector<CommandSpec> table = {
      {"dedup", {"input"}, cmd_dedup},
      {"decontaminate", {"input", "benchmark"}, cmd_decontaminate},
      {"tag", {"input"}, cmd_tag},
      {"normalize-tags", {"tags"}, cmd_normalize_tags},
      {"assign-categories", {"input", "tags", "vocabulary", "category-map?"}, cmd_assign_categories},
      {"ingest-scores", {"scores"}, cmd_ingest_scores},
      {"equivalence", {"scores", "addition-sizes?"}, cmd_equivalence},
      {"metagroups", {"gamma"}, cmd_metagroups},
      {"taxonomy", {"scores", "ablation-sizes?"}, cmd_taxonomy},
      {"optimize", {"gamma", "reference?"}, cmd_optimize},
      {"materialize", {"input", "solution"}, cmd_materialize},
      {"curriculum", {"input", "taxonomy"}, cmd_curriculum},
      {"mixplus", {"input", "pool", "taxonomy"}, cmd_mixplus},
      {"report", {"solution", "taxonomy?", "gamma?"}, cmd_report},
  };
  return table;
}

const CommandSpec& find_command(std::string_view name) {
  for (const auto& spec : command_table()) {
    if (spec.name == name) return spec;
  }
  throw ValidationError(kModule, "unknown subcommand \"" + std::string(name) + "\"");
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration.

PipelineConfig::PipelineConfig() : values_(defaults()) {}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(kModule, "cannot open config file " + path.string());
  return parse(in, path.string());
}

PipelineConfig PipelineConfig::parse(std::istream& in, const std::string& source_name) {
  PipelineConfig config;
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source_name + ":" + std::to_string(line_no);
    const std::string text = detail::trim(strip_comment(line));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']' || text.size() < 3) {
        throw ValidationError(kModule, where + ": malformed section header");
      }
      section = detail::trim(text.substr(1, text.size() - 2));
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ValidationError(kModule, where + ": expected key = value");
    const std::string key = detail::trim(text.substr(0, eq));
    const std::string value = unquote(detail::trim(text.substr(eq + 1)), where);
    try {
      config.set(section.empty() ? key : section + "." + key, value);
    } catch (const ValidationError& e) {
      throw ValidationError(kModule, where + ": " + e.what());
    }
  }
  return config;
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError(kModule, "unknown configuration key \"" + key + "\"");
  const std::string& fallback = defaults().at(key);
  double d = 0;
  std::int64_t i = 0;
  if (fallback == "true" || fallback == "false") {
    if (value != "true" && value != "false") {
      throw ValidationError(kModule, key + " must be true or false, got \"" + value + "\"");
    }
  } else if (!fallback.empty() && parse_int(fallback, i)) {
    if (!(key == "seed" && value.empty()) && !parse_int(value, i)) {
      throw ValidationError(kModule, key + " must be an integer, got \"" + value + "\"");
    }
  } else if (!fallback.empty() && parse_double(fallback, d)) {
    if (!parse_double(value, d)) {
      throw ValidationError(kModule, key + " must be a number, got \"" + value + "\"");
    }
  } else if (key == "seed" && !value.empty() && !parse_int(value, i)) {
    throw ValidationError(kModule, "seed must be an integer, got \"" + value + "\"");
  }
  it->second = value;
}

void PipelineConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ValidationError(kModule, "expected key=value, got \"" + assignment + "\"");
  }
  set(detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

const std::string& PipelineConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw LookupError(kModule, "unknown configuration key \"" + key + "\"");
  return it->second;
}

double PipelineConfig::get_double(const std::string& key) const {
  double v = 0;
  if (!parse_double(get(key), v)) throw ValidationError(kModule, key + " is not a number");
  return v;
}

std::int64_t PipelineConfig::get_int(const std::string& key) const {
  std::int64_t v = 0;
  if (!parse_int(get(key), v)) throw ValidationError(kModule, key + " is not an integer");
  return v;
}

bool PipelineConfig::get_bool(const std::string& key) const { return get(key) == "true"; }

bool PipelineConfig::has_value(const std::string& key) const { return !get(key).empty(); }

void PipelineConfig::validate() const {
  const double inf = std::numeric_limits<double>::infinity();
  if (has_value("seed")) {
    if (get_int("seed") < 0) throw ValidationError(kModule, "seed must be >= 0");
  }
  require_range(*this, "threads", 0, 1024);
  require_range(*this, "dedup.threshold", 0, 1, true);
  require_range(*this, "dedup.hash_seed", 0, inf);
  require_range(*this, "contamination.threshold", -1, 1);
  require_range(*this, "contamination.batch_size", 1, inf);
  require_range(*this, "tagging.max_attempts", 1, 100);
  require_range(*this, "tagging.concurrency", 1, 256);
  require_range(*this, "tagging.lambda", 0, 1, true);
  require_range(*this, "tagging.min_frequency", 0, inf);
  require_choice(*this, "chat.provider", {"openai", "keyword", "fixed"});
  require_range(*this, "chat.timeout_seconds", 1, 3600);
  require_range(*this, "chat.max_attempts", 1, 100);
  require_choice(*this, "embeddings.provider", {"openai", "hashing"});
  require_range(*this, "embeddings.timeout_seconds", 1, 3600);
  require_range(*this, "embeddings.max_attempts", 1, 100);
  require_range(*this, "embeddings.batch", 1, 65536);
  require_range(*this, "embeddings.dim", 1, 1 << 20);
  require_range(*this, "embeddings.seed", 0, inf);
  require_range(*this, "equivalence.eps", 0, inf, true);
  require_choice(*this, "equivalence.aggregation", {"per_instance_mean", "ratio_of_means"});
  require_choice(*this, "equivalence.likelihood", {"sum", "mean"});
  parse_winsorize(get("equivalence.winsorize"));
  require_range(*this, "metagroups.k", 1, inf);
  require_range(*this, "taxonomy.q", 0, 1, true, true);
  require_choice(*this, "taxonomy.zero_method", {"wilcox", "pratt"});
  require_range(*this, "taxonomy.exact_max_n", 0, 60);
  require_range(*this, "optimize.band_low", 0, inf);
  require_range(*this, "optimize.band_high", get_double("optimize.band_low"), inf);
  require_range(*this, "optimize.floor", 0, 1, false, true);
  require_choice(*this, "optimize.orientation", {"donor_rows", "transposed"});
  require_range(*this, "optimize.target_size", 1, inf);
  require_range(*this, "curriculum.shift_fraction", 0, 1);
}

std::uint64_t PipelineConfig::seed() const {
  if (!has_value("seed")) {
    throw ValidationError(kModule, "this command is stochastic and needs --seed or a seed key");
  }
  return static_cast<std::uint64_t>(get_int("seed"));
}

unsigned PipelineConfig::threads() const {
  const auto n = get_int("threads");
  if (n > 0) return static_cast<unsigned>(n);
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string PipelineConfig::hash() const {
  std::string text;
  for (const auto& [key, value] : values_) text += key + "=" + value + "\n";
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(xxh64(text, 0)));
  return buf;
}

const std::vector<std::string>& PipelineConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [key, value] : defaults()) k.push_back(key);
    return k;
  }();
  return keys;
}

std::string provenance_comment(const PipelineConfig& config, std::string_view command) {
  return "# " + std::string(kToolName) + " " + std::string(kToolVersion) +
         " config=" + config.hash() + " command=" + std::string(command);
}

std::string provenance_json(const PipelineConfig& config, std::string_view command) {
  nlohmann::ordered_json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["config_hash"] = config.hash();
  j["command"] = command;
  return j.dump();
}

namespace {

EndpointConfig endpoint(const PipelineConfig& c, const std::string& prefix) {
  EndpointConfig e;
  e.url = c.get(prefix + ".url");
  e.model = c.get(prefix + ".model");
  e.api_key_env = c.get(prefix + ".api_key_env");
  e.timeout = std::chrono::seconds(c.get_int(prefix + ".timeout_seconds"));
  e.retry.max_attempts = static_cast<int>(c.get_int(prefix + ".max_attempts"));
  return e;
}

}  // namespace

std::unique_ptr<ChatProvider> make_chat_provider(const PipelineConfig& config) {
  const auto& kind = config.get("chat.provider");
  if (kind == "keyword") {
    if (!config.has_value("chat.rules")) {
      throw ValidationError(kModule, "chat.provider = keyword needs chat.rules");
    }
    return std::make_unique<KeywordChatProvider>(KeywordChatProvider::from_file(config.get("chat.rules")));
  }
  if (kind == "fixed") return std::make_unique<FixedChatProvider>(config.get("chat.reply"));
  if (kind != "openai") throw ValidationError(kModule, "unknown chat.provider \"" + kind + "\"");
  if (!config.has_value("chat.model")) throw ValidationError(kModule, "chat.model is not set");
  return std::make_unique<OpenAiChatClient>(endpoint(config, "chat"));
}

std::unique_ptr<EmbeddingProvider> make_embedding_provider(const PipelineConfig& config) {
  const auto& kind = config.get("embeddings.provider");
  if (kind == "hashing") {
    return std::make_unique<HashingEmbedder>(
        static_cast<std::size_t>(config.get_int("embeddings.dim")),
        static_cast<std::uint64_t>(config.get_int("embeddings.seed")));
  }
  if (kind != "openai") throw ValidationError(kModule, "unknown embeddings.provider \"" + kind + "\"");
  if (!config.has_value("embeddings.model")) {
    throw ValidationError(kModule, "embeddings.model is not set");
  }
  auto e = endpoint(config, "embeddings");
  e.max_batch = static_cast<std::size_t>(config.get_int("embeddings.batch"));
  return std::make_unique<OpenAiEmbeddingClient>(std::move(e));
}

// ---------------------------------------------------------------------------
// Commands.

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& spec : command_table()) n.push_back(spec.name);
    return n;
  }();
  return names;
}

const std::vector<std::string>& command_inputs(std::string_view name) {
  return find_command(name).inputs;
}

CommandResult run_command(std::string_view name, const CommandArgs& args,
                          const PipelineConfig& config) {
  const auto& spec = find_command(name);
  config.validate();
  for (const auto& role : spec.inputs) {
    if (role.back() == '?') continue;
    const auto it = args.inputs.find(role);
    if (it == args.inputs.end() || it->second.empty()) {
      throw ValidationError(kModule, spec.name + " needs --" + role);
    }
  }
  for (const auto& [role, path] : args.inputs) {
    const bool known = std::any_of(spec.inputs.begin(), spec.inputs.end(), [&](const std::string& r) {
      return r == role || r == role + "?";
    });
    if (!known) throw ValidationError(kModule, spec.name + " does not take --" + role);
  }
  if (args.target_size && *args.target_size == 0) {
    throw ValidationError(kModule, "target size must be positive");
  }
  Context ctx{args, config, spec.name, {}};
  return spec.handler(ctx);
}

int exit_code_for(const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  if (!err) return 1;
  switch (err->kind()) {
    case ErrorKind::validation:
    case ErrorKind::lookup:
    case ErrorKind::undefined: return 2;
    case ErrorKind::upstream: return 3;
    case ErrorKind::infeasible: return 4;
  }
  return 1;
}

std::string error_json(const std::exception& e, std::string_view command) {
  nlohmann::ordered_json j;
  const auto* err = dynamic_cast<const Error*>(&e);
  j["error"]["command"] = command;
  j["error"]["module"] = err ? err->module() : "unknown";
  j["error"]["kind"] = err ? to_string(err->kind()) : "internal";
  j["error"]["message"] = e.what();
  j["error"]["exit_code"] = exit_code_for(e);
  if (const auto* up = dynamic_cast<const UpstreamError*>(&e)) {
    j["error"]["completed"] = up->completed();
  }
  if (const auto* un = dynamic_cast<const UndefinedResultError*>(&e)) {
    j["error"]["skipped"] = un->skipped();
  }
  return j.dump();
}

}  // namespace instopt
