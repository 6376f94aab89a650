#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace instopt {

enum class VariantKind { base, addition, ablation };

struct ModelVariant {
  std::string id;
  VariantKind kind = VariantKind::base;
  std::string category;  // empty for base
  std::string base_model_name;

  bool operator==(const ModelVariant&) const = default;
};

// `base`, `add:<category>` or `abl:<category>`.
std::string kind_label(const ModelVariant& variant);
ModelVariant parse_kind(std::string_view variant_id, std::string_view kind);

struct ScoreRecord {
  std::string variant;
  std::string category;
  std::string instance;
  double log_likelihood = 0.0;  // summed over response tokens
  std::uint64_t token_count = 0;
  double ppl = 0.0;             // exp(-log_likelihood / token_count)
};

double ppl_from_log_likelihood(double log_likelihood, std::uint64_t token_count);
double log_likelihood_from_ppl(double ppl, std::uint64_t token_count);

enum class ScoreField { log_likelihood, ppl };

// How the likelihood score rho is read from a record.
enum class LikelihoodAggregation {
  sum,   // total log-likelihood over response tokens
  mean,  // per-token mean
};

// Dense paired score store: for each (variant, category) a vector of scores
// aligned to the category's sorted instance ids.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;

  // Validates and builds. Throws ValidationError listing unpaired cells,
  // duplicate records, or inconsistent fields.
  static ScoreMatrix from_records(std::vector<ModelVariant> variants,
                                  const std::vector<ScoreRecord>& records);

  const std::vector<ModelVariant>& variants() const noexcept { return variants_; }
  const std::vector<std::string>& categories() const noexcept { return categories_; }
  const std::vector<std::string>& instances(std::string_view category) const;

  const ModelVariant& variant(std::string_view id) const;
  std::optional<std::size_t> variant_index(std::string_view id) const;
  std::optional<std::size_t> category_index(std::string_view category) const;

  // The unique base variant; throws LookupError when missing.
  const ModelVariant& base() const;
  // First addition/ablation variant for `category`, if any.
  const ModelVariant* addition_for(std::string_view category) const;
  const ModelVariant* ablation_for(std::string_view category) const;

  std::vector<double> scores(std::string_view variant, std::string_view category,
                             ScoreField field,
                             LikelihoodAggregation aggregation = LikelihoodAggregation::sum) const;
  std::vector<std::uint64_t> token_counts(std::string_view variant,
                                          std::string_view category) const;

  std::size_t record_count() const noexcept;

  bool operator==(const ScoreMatrix&) const = default;

 private:
  struct Cell {
    std::vector<double> log_likelihood;
    std::vector<double> ppl;
    std::vector<std::uint64_t> tokens;
    bool operator==(const Cell&) const = default;
  };

  const Cell& cell(std::string_view variant, std::string_view category) const;

  std::vector<ModelVariant> variants_;
  std::vector<std::string> categories_;
  std::vector<std::vector<std::string>> instances_;  // per category, sorted
  std::vector<Cell> cells_;  // variant-major: v * categories + c
};

// Header: variant_id,kind,category,instance_id,log_likelihood,token_count[,ppl]
// Either log_likelihood or ppl may be empty on a row (not both). Leading '#'
// lines are skipped.
ScoreMatrix ingest_scores(const std::string& path);
ScoreMatrix parse_scores(std::istream& in, const std::string& source_name = "<stream>");

// Writes the canonical CSV (with the ppl column).
void write_scores(std::ostream& out, const ScoreMatrix& matrix,
                  const std::string& comment = {});

// a - b per instance, in the category's instance order.
std::vector<double> paired_differences(const ScoreMatrix& m, std::string_view a,
                                       std::string_view b, std::string_view category,
                                       ScoreField field);

// ---------------------------------------------------------------------------
// Synthetic scores with a planted response surface, for tests and demos.

struct SyntheticScoreSpec {
  std::vector<std::string> categories;
  std::size_t instances_per_category = 100;
  std::uint64_t token_count = 200;
  std::uint64_t seed = 0;
  std::string base_model_name = "synthetic-7b";

  // Base per-token log-likelihood ~ N(base_mean, base_sd); stored as sums.
  double base_token_ll_mean = -1.2;
  double base_token_ll_sd = 0.15;

  // gain[i][j]: summed log-likelihood gain on category j from adding i.
  // Empty disables addition variants.
  std::vector<std::vector<double>> addition_gain;
  double addition_noise_sd = 0.0;

  // ppl_shift[i][j]: additive PPL increase on category j when i is removed.
  // Empty disables ablation variants.
  std::vector<std::vector<double>> ablation_ppl_shift;
  double ablation_noise_sd = 0.05;
};

std::vector<ModelVariant> synthetic_variants(const SyntheticScoreSpec& spec);
ScoreMatrix generate_synthetic_scores(const SyntheticScoreSpec& spec);

}  // namespace instopt
