#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "instopt/evalstore.hpp"

namespace instopt {

enum class RatioAggregation {
  per_instance_mean,  // mean of per-instance gain ratios
  ratio_of_means,     // mean numerator gain / mean denominator gain
};

struct Winsorization {
  double lower_percentile = 0.05;  // in [0, 1)
  double upper_percentile = 0.95;  // in (lower, 1]
};

struct EquivalenceOptions {
  double eps = 1e-6;
  std::optional<double> size_ratio;  // |C~_j| / |C~_i| per-instruction normalisation
  RatioAggregation aggregation = RatioAggregation::per_instance_mean;
  std::optional<Winsorization> winsorize;
  LikelihoodAggregation likelihood = LikelihoodAggregation::sum;
  // Matrix builds only: number of added instructions per category. When set,
  // cell (i, j) is scaled by size[j] / size[i].
  std::map<std::string, double> addition_sizes;
};

struct CoefficientCell {
  double gamma = 0.0;
  std::size_t retained = 0;
  std::size_t skipped = 0;
};

// gamma_ij for the eval instances of category_j: ratio of the likelihood gain
// from adding category i to the gain from adding category j, averaged over
// instances. Instances with |gain_j| < eps are skipped and counted.
CoefficientCell equivalence_coefficient(const ScoreMatrix& m, std::string_view base,
                                        std::string_view add_i, std::string_view add_j,
                                        std::string_view category_j,
                                        const EquivalenceOptions& options = {});

// Same rule over raw per-instance score vectors.
CoefficientCell equivalence_coefficient(const std::vector<double>& base,
                                        const std::vector<double>& add_i,
                                        const std::vector<double>& add_j,
                                        const EquivalenceOptions& options = {});

struct EquivalenceMatrix {
  std::vector<std::string> categories;
  std::vector<std::vector<double>> gamma;  // gamma[i][j]
  std::vector<std::vector<std::size_t>> skipped;
  bool size_ratio_applied = false;

  std::size_t size() const noexcept { return categories.size(); }
  std::optional<std::size_t> index_of(std::string_view category) const;
};

// Full N x N matrix over the score matrix's categories. Diagonal is exactly 1.
EquivalenceMatrix build_equivalence_matrix(const ScoreMatrix& m,
                                           const EquivalenceOptions& options = {},
                                           unsigned threads = 1);

void write_equivalence_csv(std::ostream& out, const EquivalenceMatrix& g,
                           const std::string& comment = {});
// Reads the CSV written above (skipped counts are not stored and come back 0).
EquivalenceMatrix read_equivalence_csv(std::istream& in);

// Self-contained SVG heatmap, diverging palette centred at 0, two-decimal
// cell labels.
void write_equivalence_svg(std::ostream& out, const EquivalenceMatrix& g,
                           const std::string& comment = {});

// ---------------------------------------------------------------------------
// Meta-groups.

struct Merge {
  std::size_t left = 0;   // cluster ids: 0..N-1 are leaves, N+t is the t-th merge
  std::size_t right = 0;
  double height = 0.0;
  std::size_t size = 0;
};

struct MetaGrouping {
  std::vector<std::string> categories;
  std::vector<std::size_t> assignment;  // group label per category, 0-based
  std::vector<Merge> dendrogram;        // full merge trace down to one cluster
  std::size_t groups = 0;
};

// 1 - Pearson correlation; a constant row has correlation 0 with everything.
double correlation_distance(const std::vector<double>& a, const std::vector<double>& b);

// Average-linkage agglomerative clustering of gamma rows, cut at k clusters.
// Ties merge the pair with the smallest member indices first. Labels are
// numbered by each group's smallest category index.
MetaGrouping cluster_meta_groups(const EquivalenceMatrix& g, std::size_t k = 2);

void write_meta_groups(std::ostream& out, const MetaGrouping& grouping,
                       const std::string& provenance_json = {});

}  // namespace instopt
