#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "instopt/providers.hpp"

namespace instopt {

inline constexpr std::string_view kToolName = "instopt";
inline constexpr std::string_view kToolVersion = "0.1.0";

// Flat key/value configuration. Keys use `section.name`; a `[section]`
// header in the file prefixes the keys that follow it. Every known key has a
// default, so the effective configuration (and its hash) is always complete.
class PipelineConfig {
 public:
  PipelineConfig();

  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig parse(std::istream& in, const std::string& source_name = "<config>");

  // Throws ValidationError for unknown keys or unparseable values.
  void set(const std::string& key, const std::string& value);
  // Parses `key=value`.
  void set_assignment(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  bool has_value(const std::string& key) const;  // non-empty

  // Range checks for every threshold; throws ValidationError.
  void validate() const;

  // Seed for stochastic steps; throws ValidationError when unset.
  std::uint64_t seed() const;
  unsigned threads() const;

  // Hex XXH64 over the sorted effective key=value lines.
  std::string hash() const;
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string> values_;
};

// `# instopt <version> config=<hash> command=<name>`
std::string provenance_comment(const PipelineConfig& config, std::string_view command);
// {"tool":..,"version":..,"config_hash":..,"command":..}
std::string provenance_json(const PipelineConfig& config, std::string_view command);

std::unique_ptr<ChatProvider> make_chat_provider(const PipelineConfig& config);
std::unique_ptr<EmbeddingProvider> make_embedding_provider(const PipelineConfig& config);

struct CommandArgs {
  std::map<std::string, std::string> inputs;  // role -> path (input, scores, taxonomy, ...)
  std::filesystem::path out_dir = ".";
  std::optional<std::size_t> target_size;
};

struct CommandResult {
  std::string summary;  // one line
  std::vector<std::filesystem::path> artifacts;
};

const std::vector<std::string>& subcommands();
// Input roles each subcommand reads; optional roles are suffixed with '?'.
const std::vector<std::string>& command_inputs(std::string_view name);

// Runs one subcommand, writing artifacts under args.out_dir.
CommandResult run_command(std::string_view name, const CommandArgs& args,
                          const PipelineConfig& config);

// 2 validation / lookup / undefined, 3 upstream, 4 infeasible, 1 otherwise.
int exit_code_for(const std::exception& e);
// {"error":{"command":..,"module":..,"kind":..,"message":..,"exit_code":..}}
std::string error_json(const std::exception& e, std::string_view command);

}  // namespace instopt
