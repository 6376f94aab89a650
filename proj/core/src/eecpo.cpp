#include "instopt/eecpo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>

#include "csv.hpp"
#include "instopt/error.hpp"

namespace instopt {

namespace {
constexpr const char* kModule = "eecpo";
constexpr double kTol = 1e-12;
}  // namespace

ImportanceWeights estimate_importance(const Corpus& reference,
                                      const std::vector<std::string>& categories,
                                      std::string source) {
  if (reference.empty()) throw ValidationError(kModule, "reference set is empty");
  ImportanceWeights weights;
  weights.categories = categories;
  weights.source = std::move(source);
  std::vector<std::size_t> counts(categories.size(), 0);
  std::size_t total = 0;
  for (const auto& ins : reference.instructions()) {
    if (!ins.category) continue;
    const auto it = std::find(categories.begin(), categories.end(), *ins.category);
    if (it == categories.end()) continue;
    ++counts[static_cast<std::size_t>(it - categories.begin())];
    ++total;
  }
  if (total == 0) {
    throw ValidationError(kModule, "no reference instruction carries one of the analysed categories");
  }
  weights.alpha.resize(categories.size());
  for (std::size_t i = 0; i < categories.size(); ++i) {
    weights.alpha[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  return weights;
}

void check_feasible(const ProportionProblem& p) {
  const std::size_t n = p.size();
  if (n == 0) throw InfeasibleError(kModule, "problem has no categories");
  if (p.lower.size() != n || p.upper.size() != n) {
    throw ValidationError(kModule, "bound vectors do not match the coefficient vector");
  }
  double sum_l = 0.0, sum_u = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!std::isfinite(p.c[j])) throw ValidationError(kModule, "non-finite objective coefficient");
    if (p.lower[j] < -kTol || p.lower[j] > p.upper[j] + kTol) {
      throw InfeasibleError(kModule, "bounds cross for category " +
                                         (j < p.categories.size() ? p.categories[j] : std::to_string(j)) +
                                         ": lower " + detail::format_double(p.lower[j]) +
                                         " > upper " + detail::format_double(p.upper[j]));
    }
    sum_l += p.lower[j];
    sum_u += p.upper[j];
  }
  if (sum_l > 1.0 + 1e-9 || sum_u < 1.0 - 1e-9) {
    throw InfeasibleError(kModule, "bounds cannot hold a unit budget: sum(lower) = " +
                                       detail::format_double(sum_l) +
                                       ", sum(upper) = " + detail::format_double(sum_u));
  }
}

ProportionProblem build_problem(const EquivalenceMatrix& gamma, const ImportanceWeights& importance,
                                const ProblemOptions& options) {
  if (!(options.low_mult >= 0.0 && options.low_mult <= options.high_mult)) {
    throw ValidationError(kModule, "band must satisfy 0 <= low <= high");
  }
  if (!(options.floor >= 0.0 && options.floor < 1.0)) {
    throw ValidationError(kModule, "floor must lie in [0, 1)");
  }
  const std::size_t n = gamma.size();
  ProportionProblem p;
  p.categories = gamma.categories;
  p.alpha.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const auto it = std::find(importance.categories.begin(), importance.categories.end(),
                              gamma.categories[j]);
    if (it == importance.categories.end()) {
      throw ValidationError(kModule, "no importance weight for category \"" +
                                         gamma.categories[j] + "\"");
    }
    p.alpha[j] = importance.alpha[static_cast<std::size_t>(it - importance.categories.begin())];
  }

  p.c.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const double g = options.orientation == CoefficientOrientation::donor_rows ? gamma.gamma[j][i]
                                                                                 : gamma.gamma[i][j];
      p.c[j] += p.alpha[i] * g;
    }
  }

  p.lower.resize(n);
  p.upper.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    p.lower[j] = std::max(options.floor, options.low_mult * p.alpha[j]);
    p.upper[j] = std::min(1.0, options.high_mult * p.alpha[j] + options.floor);
  }
  const double sum_l = std::accumulate(p.lower.begin(), p.lower.end(), 0.0);
  if (sum_l > 1.0) {
    for (double& l : p.lower) l /= sum_l;
  }
  for (int round = 0; round < 64; ++round) {
    const double sum_u = std::accumulate(p.upper.begin(), p.upper.end(), 0.0);
    if (sum_u >= 1.0 || sum_u == 0.0) break;
    bool changed = false;
    for (double& u : p.upper) {
      const double scaled = std::min(1.0, u / sum_u);
      changed = changed || scaled != u;
      u = scaled;
    }
    if (!changed) break;
  }
  try {
    check_feasible(p);
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(kModule, std::string("infeasible after rescaling bounds: ") + e.what());
  }
  return p;
}

ProportionSolution solve_proportions(const ProportionProblem& p) {
  check_feasible(p);
  const std::size_t n = p.size();
  ProportionSolution s;
  s.categories = p.categories;
  s.w = p.lower;
  double remaining = 1.0 - std::accumulate(p.lower.begin(), p.lower.end(), 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p.c[a] > p.c[b]; });
  for (std::size_t j : order) {
    if (remaining <= 0.0) break;
    const double add = std::min(p.upper[j] - p.lower[j], remaining);
    s.w[j] += add;
    remaining -= add;
  }
  for (std::size_t j = 0; j < n; ++j) s.objective += p.c[j] * s.w[j];
  return s;
}

std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (weights.empty() || !(sum > 0.0)) {
    throw ValidationError(kModule, "apportionment needs positive weights");
  }
  std::vector<std::size_t> out(weights.size());
  std::vector<double> remainder(weights.size());
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (weights[j] < 0) throw ValidationError(kModule, "apportionment weights must be >= 0");
    const double exact = weights[j] / sum * static_cast<double>(total);
    out[j] = static_cast<std::size_t>(std::floor(exact));
    remainder[j] = exact - static_cast<double>(out[j]);
    assigned += out[j];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t t = 0; assigned < total; ++t) {
    ++out[order[t % order.size()]];
    ++assigned;
  }
  return out;
}

MaterializeResult materialize(const Corpus& corpus, const ProportionSolution& solution,
                              std::size_t target_size) {
  if (target_size == 0) throw ValidationError(kModule, "target size must be positive");
  const std::size_t n = solution.categories.size();
  MaterializeResult result;
  result.quota = apportion(solution.w, target_size);
  result.selected.assign(n, 0);
  result.shortfall.assign(n, 0);

  std::vector<std::vector<std::size_t>> members(n);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& category = corpus[i].category;
    if (!category) continue;
    const auto it = std::find(solution.categories.begin(), solution.categories.end(), *category);
    if (it != solution.categories.end()) {
      members[static_cast<std::size_t>(it - solution.categories.begin())].push_back(i);
    }
  }

  std::vector<std::size_t> chosen;
  for (std::size_t j = 0; j < n; ++j) {
    auto& pool = members[j];
    std::sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
      const auto& qa = corpus[a].quality_score;
      const auto& qb = corpus[b].quality_score;
      if (qa.has_value() != qb.has_value()) return qa.has_value();
      if (qa && *qa != *qb) return *qa > *qb;
      return corpus[a].id < corpus[b].id;
    });
    const std::size_t take = std::min(pool.size(), result.quota[j]);
    result.selected[j] = take;
    result.shortfall[j] = result.quota[j] - take;
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(chosen.begin(), chosen.end());
  result.corpus = corpus.subset(chosen);
  return result;
}

std::vector<SolutionReportRow> solution_report(const ProportionProblem& p,
                                               const ProportionSolution& s,
                                               const std::vector<std::size_t>& quota,
                                               const std::vector<std::size_t>& shortfall) {
  std::vector<SolutionReportRow> rows;
  for (std::size_t j = 0; j < p.size(); ++j) {
    rows.push_back({p.categories[j], p.alpha[j], p.c[j], p.alpha[j], s.w[j],
                    j < quota.size() ? quota[j] : 0, j < shortfall.size() ? shortfall[j] : 0});
  }
  return rows;
}

void write_solution_report(std::ostream& out, const std::vector<SolutionReportRow>& rows,
                           const std::string& comment) {
  if (!comment.empty()) out << comment << '\n';
  out << "category,alpha,c,w_before,w_after,quota,shortfall\n";
  for (const auto& r : rows) {
    out << detail::csv_field(r.category) << ',' << detail::format_double(r.alpha) << ','
        << detail::format_double(r.c) << ',' << detail::format_double(r.w_before) << ','
        << detail::format_double(r.w_after) << ',' << r.quota << ',' << r.shortfall << '\n';
  }
}

std::vector<SolutionReportRow> read_solution_report(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!detail::next_data_line(in, line, line_no) ||
      line != "category,alpha,c,w_before,w_after,quota,shortfall") {
    throw ValidationError(kModule,
                          "solution report must start with category,alpha,c,w_before,w_after,quota,shortfall");
  }
  std::vector<SolutionReportRow> rows;
  while (detail::next_data_line(in, line, line_no)) {
    const auto f = detail::split_csv_line(line);
    if (f.size() != 7) {
      throw ValidationError(kModule, "solution report line " + std::to_string(line_no) + " is malformed");
    }
    try {
      rows.push_back({f[0], std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]),
                      std::stoul(f[5]), std::stoul(f[6])});
    } catch (const std::exception&) {
      throw ValidationError(kModule, "solution report line " + std::to_string(line_no) +
                                         " has a bad number");
    }
  }
  return rows;
}

void write_weight_change_svg(std::ostream& out, const std::vector<SolutionReportRow>& rows,
                             const std::string& comment) {
  const int row_h = 18, label_w = 250, half = 220, top = 30;
  const int width = label_w + 2 * half + 80;
  const int height = top + row_h * static_cast<int>(rows.size()) + 20;
  double scale = 0.0;
  for (const auto& r : rows) scale = std::max(scale, std::abs(r.w_after - r.w_before));
  if (scale == 0.0) scale = 1.0;
  const int axis = label_w + half;

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\">\n";
  if (!comment.empty()) out << "<!-- " << comment << " -->\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << axis << "\" y=\"18\" font-size=\"12\" text-anchor=\"middle\">"
      << "change in category weight (w_after - w_before)</text>\n";
  char value[32];
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const int y = top + row_h * static_cast<int>(i);
    const double delta = r.w_after - r.w_before;
    const int len = static_cast<int>(std::lround(std::abs(delta) / scale * half));
    std::string label;
    for (char ch : r.category) label += ch == '&' ? std::string("&amp;") : std::string(1, ch);
    out << "<text x=\"" << label_w - 6 << "\" y=\"" << y + 13
        << "\" font-size=\"11\" text-anchor=\"end\">" << label << "</text>\n";
    out << "<rect x=\"" << (delta >= 0 ? axis : axis - len) << "\" y=\"" << y + 3 << "\" width=\""
        << len << "\" height=\"" << row_h - 6 << "\" fill=\"" << (delta >= 0 ? "#2b8a3e" : "#c92a2a")
        << "\"/>\n";
    std::snprintf(value, sizeof(value), "%+.4f", delta);
    out << "<text x=\"" << (delta >= 0 ? axis + len + 4 : axis - len - 4) << "\" y=\"" << y + 13
        << "\" font-size=\"9\" text-anchor=\"" << (delta >= 0 ? "start" : "end") << "\">" << value
        << "</text>\n";
  }
  out << "<line x1=\"" << axis << "\" y1=\"" << top << "\" x2=\"" << axis << "\" y2=\""
      << height - 20 << "\" stroke=\"black\"/>\n";
  out << "</svg>\n";
}

}  // namespace instopt
