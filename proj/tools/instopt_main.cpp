#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "instopt/error.hpp"
#include "instopt/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out_dir = ".";
  std::vector<std::string> overrides;
  std::optional<std::size_t> target_size;
  std::map<std::string, std::string> inputs;
};

const char* describe(const std::string& name) {
  static const std::map<std::string, const char*> text = {
      {"dedup", "Remove SimHash near-duplicates (keep first in load order)"},
      {"decontaminate", "Drop instructions whose prompt is close to a benchmark prompt"},
      {"tag", "Tag every instruction through the chat endpoint"},
      {"normalize-tags", "Merge similar tags and drop long-tail tags"},
      {"assign-categories", "Assign one category per instruction, rarest first"},
      {"ingest-scores", "Validate a score CSV and write its canonical form"},
      {"equivalence", "Effect equivalence matrix (CSV and SVG heatmap)"},
      {"metagroups", "Average-linkage clustering of equivalence rows"},
      {"taxonomy", "Dependency tests and preliminary/intermediary/subsequential layers"},
      {"optimize", "Solve the category proportion LP"},
      {"materialize", "Select the highest-quality instructions per category quota"},
      {"curriculum", "Three-epoch front-loading training order"},
      {"mixplus", "Three epochs plus 2|D| extra preliminary instructions"},
      {"report", "Markdown summary and SVG charts of a solution"},
  };
  return text.at(name);
}

std::string describe_role(const std::string& role) {
  static const std::map<std::string, std::string> text = {
      {"input", "instruction corpus (JSON Lines)"},
      {"benchmark", "benchmark prompts (JSON Lines or plain lines)"},
      {"tags", "raw tag sets written by `tag`"},
      {"vocabulary", "tag vocabulary CSV written by `normalize-tags`"},
      {"category-map", "tag,category CSV (default: built-in 29 categories)"},
      {"scores", "score CSV"},
      {"addition-sizes", "category,size CSV of added instructions per category"},
      {"ablation-sizes", "category,size CSV of removed instructions per category"},
      {"gamma", "equivalence matrix CSV"},
      {"reference", "categorised reference corpus for importance weights"},
      {"solution", "solution report CSV"},
      {"taxonomy", "taxonomy JSON"},
      {"pool", "corpus of extra instructions for Mix+"},
  };
  const auto it = text.find(role);
  return it == text.end() ? role : it->second;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instruction-tuning dataset optimizer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(instopt::kToolVersion));

  CommonFlags flags;
  std::string command;
  std::vector<std::string> roles_seen;

  for (const auto& name : instopt::subcommands()) {
    auto* sub = app.add_subcommand(name, describe(name));
    sub->add_option("--config", flags.config_path, "TOML-style configuration file");
    sub->add_option("--seed", flags.seed, "Seed for stochastic steps");
    sub->add_option("--threads", flags.threads, "Worker threads (0 = hardware concurrency)");
    sub->add_option("--out-dir", flags.out_dir, "Directory for artifacts")->capture_default_str();
    sub->add_option("--set", flags.overrides, "Override a config key (key=value), repeatable");
    if (name == "optimize" || name == "materialize") {
      sub->add_option("--target-size", flags.target_size, "Size of the materialized set");
    }
    for (const auto& spec : instopt::command_inputs(name)) {
      const bool optional = spec.back() == '?';
      const std::string role = optional ? spec.substr(0, spec.size() - 1) : spec;
      auto* opt = sub->add_option_function<std::string>(
          "--" + role, [&flags, role](const std::string& path) { flags.inputs[role] = path; },
          describe_role(role) + (optional ? " (optional)" : ""));
      if (!optional) opt->required();
    }
    sub->callback([&command, name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    const instopt::ValidationError err("cli", e.what());
    std::cerr << instopt::error_json(err, command) << '\n';
    return 2;
  }

  try {
    instopt::PipelineConfig config = flags.config_path.empty()
                                         ? instopt::PipelineConfig()
                                         : instopt::PipelineConfig::load(flags.config_path);
    for (const auto& assignment : flags.overrides) config.set_assignment(assignment);
    if (flags.seed) config.set("seed", std::to_string(*flags.seed));
    if (flags.threads) config.set("threads", std::to_string(*flags.threads));

    instopt::CommandArgs args;
    args.inputs = flags.inputs;
    args.out_dir = flags.out_dir;
    args.target_size = flags.target_size;
    const auto result = instopt::run_command(command, args, config);
    std::cout << result.summary << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << instopt::error_json(e, command) << '\n';
    return instopt::exit_code_for(e);
  }
}
