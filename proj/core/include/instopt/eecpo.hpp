#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "instopt/corpus.hpp"
#include "instopt/interaction.hpp"

namespace instopt {

struct ImportanceWeights {
  std::vector<std::string> categories;
  std::vector<double> alpha;  // >= 0, sums to 1
  std::string source;
};

// alpha_i = share of category i among the categorised reference instructions.
ImportanceWeights estimate_importance(const Corpus& reference,
                                      const std::vector<std::string>& categories,
                                      std::string source = {});

enum class CoefficientOrientation {
  donor_rows,  // c_j = sum_i alpha_i * gamma[j][i]
  transposed,  // c_j = sum_i alpha_i * gamma[i][j]
};

struct ProblemOptions {
  double low_mult = 0.5;
  double high_mult = 2.0;
  double floor = 0.001;
  CoefficientOrientation orientation = CoefficientOrientation::donor_rows;
};

// max c.w  s.t.  sum w = 1,  lower <= w <= upper
struct ProportionProblem {
  std::vector<std::string> categories;
  std::vector<double> c;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> alpha;  // reference proportions the bounds came from

  std::size_t size() const noexcept { return c.size(); }
};

// Throws InfeasibleError when the bounds cannot hold a unit budget.
void check_feasible(const ProportionProblem& p);

ProportionProblem build_problem(const EquivalenceMatrix& gamma,
                                const ImportanceWeights& importance,
                                const ProblemOptions& options = {});

struct ProportionSolution {
  std::vector<std::string> categories;
  std::vector<double> w;
  double objective = 0.0;
};

// Greedy fill from the lower bounds in descending c (ties: lower index).
ProportionSolution solve_proportions(const ProportionProblem& p);

// Largest-remainder apportionment of `total` by weights; ties go to the lower
// index. Sum of the result is exactly `total`.
std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total);

struct MaterializeResult {
  Corpus corpus;
  std::vector<std::size_t> quota;
  std::vector<std::size_t> selected;
  std::vector<std::size_t> shortfall;
};

// Per category, the quota highest-quality instructions (ties: id). Selected
// instructions keep corpus order.
MaterializeResult materialize(const Corpus& corpus, const ProportionSolution& solution,
                              std::size_t target_size);

struct SolutionReportRow {
  std::string category;
  double alpha = 0.0;
  double c = 0.0;
  double w_before = 0.0;
  double w_after = 0.0;
  std::size_t quota = 0;
  std::size_t shortfall = 0;
};

std::vector<SolutionReportRow> solution_report(const ProportionProblem& p,
                                               const ProportionSolution& s,
                                               const std::vector<std::size_t>& quota = {},
                                               const std::vector<std::size_t>& shortfall = {});
void write_solution_report(std::ostream& out, const std::vector<SolutionReportRow>& rows,
                           const std::string& comment = {});
std::vector<SolutionReportRow> read_solution_report(std::istream& in);

// Horizontal bar chart of w_after - w_before per category.
void write_weight_change_svg(std::ostream& out, const std::vector<SolutionReportRow>& rows,
                             const std::string& comment = {});

}  // namespace instopt
