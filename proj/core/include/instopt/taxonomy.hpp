#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "instopt/evalstore.hpp"

namespace instopt {

enum class ZeroMethod {
  wilcox,  // drop zero differences before ranking
  pratt,   // rank zeros, then exclude them from the signed sum
};

struct WilcoxonResult {
  double w_plus = 0.0;
  std::size_t n_effective = 0;
  double p = 1.0;
  bool exact = false;
  bool degenerate = false;  // every difference was zero
};

struct WilcoxonOptions {
  ZeroMethod zeros = ZeroMethod::wilcox;
  std::size_t exact_max_n = 25;
  double zero_tolerance = 0.0;  // |d| <= tolerance counts as zero
};

// One-sided (greater) Wilcoxon signed-rank test. Ties get midranks; exact
// null distribution (conditional on the tie pattern) for n <= exact_max_n,
// otherwise the tie-corrected normal approximation with continuity
// correction. Throws ValidationError on empty input.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs,
                                    const WilcoxonOptions& options = {});

// Midranks of the values (1-based).
std::vector<double> midranks(const std::vector<double>& values);

struct BhResult {
  std::vector<double> adjusted;
  std::vector<bool> rejected;  // adjusted < q
};

// Benjamini-Hochberg step-up adjustment in input order.
BhResult benjamini_hochberg(const std::vector<double>& p_values, double q = 0.05);

struct DependencyTest {
  std::string removed;   // ablated category i
  std::string affected;  // evaluated category j
  std::size_t n_effective = 0;
  double w_plus = 0.0;
  double p_raw = 1.0;
  double p_adjusted = 1.0;
  bool edge = false;     // removed -> affected is an emitted edge
};

struct DependencyEdge {
  std::size_t from = 0;  // prerequisite (removed) category
  std::size_t to = 0;    // dependent category
};

struct DependencyGraph {
  std::vector<std::string> nodes;
  std::vector<DependencyTest> tests;  // all ordered pairs, removed-major
  std::vector<DependencyEdge> edges;
};

struct DependencyOptions {
  double alpha = 0.05;
  WilcoxonOptions wilcoxon;
  // Instructions removed per ablation; when non-empty all counts must match
  // unless allow_unequal_ablation is set.
  std::map<std::string, std::size_t> ablation_sizes;
  bool allow_unequal_ablation = false;
  unsigned threads = 1;
};

// Tests every ordered pair (remove i, affect j), BH-adjusts them as one
// family, and emits i -> j when (i, j) is significant and (j, i) is not.
DependencyGraph induce_dependency_graph(const ScoreMatrix& m,
                                        const DependencyOptions& options = {});

// Edge rule applied to a finished family of tests (exposed for testing).
std::vector<DependencyEdge> asymmetric_edges(const std::vector<std::string>& nodes,
                                             std::vector<DependencyTest>& tests,
                                             double alpha);

struct Taxonomy {
  std::vector<std::string> preliminary;
  std::vector<std::string> intermediary;
  std::vector<std::string> subsequential;
  // Strongly connected groups with more than one member. The edge rule rules
  // out 2-cycles, so in induced graphs these have three or more members.
  std::vector<std::vector<std::string>> cycles;

  enum class Layer { preliminary, intermediary, subsequential };
  // Layer of a category; nullopt when it is in none.
  std::optional<Layer> layer_of(const std::string& category) const;
};

// Roots (out, no in) are preliminary, leaves (in, no out) subsequential,
// everything else intermediary. Layers keep node order.
Taxonomy layer_taxonomy(const DependencyGraph& g);

void write_dependency_report(std::ostream& out, const DependencyGraph& g,
                             const std::string& comment = {});
void write_taxonomy_json(std::ostream& out, const Taxonomy& t,
                         const std::string& provenance_json = {});
Taxonomy read_taxonomy_json(std::istream& in);

}  // namespace instopt
