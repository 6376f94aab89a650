#include "instopt/taxonomy.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <thread>

#include <json.hpp>

#include "csv.hpp"
#include "instopt/error.hpp"

namespace instopt {

namespace {
constexpr const char* kModule = "taxonomy";
}

std::vector<double> midranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start + 1;
    while (end < n && values[order[end]] == values[order[start]]) ++end;
    const double rank = 0.5 * static_cast<double>(start + 1 + end);  // mean of start+1..end
    for (std::size_t t = start; t < end; ++t) ranks[order[t]] = rank;
    start = end;
  }
  return ranks;
}

namespace {

// Upper tail P(W+ >= w_plus) under the sign-flip null for the given ranks.
// Ranks are multiples of 0.5, so the subset-sum DP runs over doubled ranks.
double exact_upper_tail(const std::vector<double>& ranks, double w_plus) {
  std::vector<std::size_t> doubled(ranks.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    doubled[i] = static_cast<std::size_t>(std::llround(2.0 * ranks[i]));
    total += doubled[i];
  }
  std::vector<double> counts(total + 1, 0.0);
  counts[0] = 1.0;
  std::size_t reach = 0;
  for (std::size_t r : doubled) {
    reach += r;
    for (std::size_t s = reach; s >= r; --s) {
      counts[s] += counts[s - r];
      if (s == r) break;
    }
  }
  const auto threshold = static_cast<std::size_t>(std::llround(2.0 * w_plus));
  double tail = 0.0;
  for (std::size_t s = threshold; s <= total; ++s) tail += counts[s];
  return std::ldexp(tail, -static_cast<int>(ranks.size()));
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs,
                                    const WilcoxonOptions& options) {
  if (diffs.empty()) throw ValidationError(kModule, "wilcoxon_signed_rank needs at least one difference");
  for (double d : diffs) {
    if (!std::isfinite(d)) throw ValidationError(kModule, "differences must be finite");
  }
  auto is_zero = [&](double d) { return std::abs(d) <= options.zero_tolerance; };

  std::vector<double> ranked;      // values entering the ranking
  std::vector<double> signed_diffs;
  for (double d : diffs) {
    if (options.zeros == ZeroMethod::pratt || !is_zero(d)) {
      ranked.push_back(std::abs(d));
      signed_diffs.push_back(d);
    }
  }
  const auto ranks = midranks(ranked);

  WilcoxonResult result;
  std::vector<double> nonzero_ranks;
  for (std::size_t i = 0; i < signed_diffs.size(); ++i) {
    if (is_zero(signed_diffs[i])) continue;
    nonzero_ranks.push_back(ranks[i]);
    if (signed_diffs[i] > 0) result.w_plus += ranks[i];
  }
  result.n_effective = nonzero_ranks.size();
  if (result.n_effective == 0) {
    result.p = 1.0;
    result.degenerate = true;
    return result;
  }

  if (result.n_effective <= options.exact_max_n) {
    result.exact = true;
    result.p = std::min(1.0, exact_upper_tail(nonzero_ranks, result.w_plus));
    return result;
  }

  const double n_all = static_cast<double>(ranked.size());
  const double n_zero = n_all - static_cast<double>(result.n_effective);
  double mean = n_all * (n_all + 1) / 4.0;
  double var24 = n_all * (n_all + 1) * (2 * n_all + 1);
  if (options.zeros == ZeroMethod::pratt) {
    mean -= n_zero * (n_zero + 1) / 4.0;
    var24 -= n_zero * (n_zero + 1) * (2 * n_zero + 1);
  }
  std::vector<double> sorted = nonzero_ranks;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t start = 0; start < sorted.size();) {
    std::size_t end = start + 1;
    while (end < sorted.size() && sorted[end] == sorted[start]) ++end;
    const double t = static_cast<double>(end - start);
    var24 -= 0.5 * (t * t * t - t);
    start = end;
  }
  const double sd = std::sqrt(var24 / 24.0);
  const double z = (result.w_plus - mean - 0.5) / sd;
  result.p = 0.5 * std::erfc(z / std::sqrt(2.0));
  return result;
}

BhResult benjamini_hochberg(const std::vector<double>& p_values, double q) {
  if (!(q > 0.0 && q < 1.0)) throw ValidationError(kModule, "q must lie in (0, 1)");
  const std::size_t m = p_values.size();
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw ValidationError(kModule, "p-value outside [0, 1]: " + detail::format_double(p));
    }
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  BhResult result;
  result.adjusted.assign(m, 1.0);
  result.rejected.assign(m, false);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const double scaled = static_cast<double>(m) / static_cast<double>(r + 1) * p_values[order[r]];
    running = std::min(running, std::min(1.0, scaled));
    result.adjusted[order[r]] = running;
  }
  for (std::size_t i = 0; i < m; ++i) result.rejected[i] = result.adjusted[i] < q;
  return result;
}

std::vector<DependencyEdge> asymmetric_edges(const std::vector<std::string>& nodes,
                                             std::vector<DependencyTest>& tests, double alpha) {
  const std::size_t n = nodes.size();
  auto index = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(nodes.begin(), nodes.end(), name) - nodes.begin());
  };
  std::vector<std::vector<int>> significant(n, std::vector<int>(n, -1));
  for (const auto& t : tests) {
    const std::size_t i = index(t.removed), j = index(t.affected);
    if (i >= n || j >= n) throw LookupError(kModule, "test references an unknown category");
    significant[i][j] = t.p_adjusted < alpha ? 1 : 0;
  }
  std::vector<DependencyEdge> edges;
  for (auto& t : tests) {
    const std::size_t i = index(t.removed), j = index(t.affected);
    t.edge = significant[i][j] == 1 && significant[j][i] != 1;
    if (t.edge) edges.push_back({i, j});
  }
  std::sort(edges.begin(), edges.end(), [](const DependencyEdge& a, const DependencyEdge& b) {
    return a.from != b.from ? a.from < b.from : a.to < b.to;
  });
  return edges;
}

DependencyGraph induce_dependency_graph(const ScoreMatrix& m, const DependencyOptions& options) {
  if (!(options.alpha > 0.0 && options.alpha < 1.0)) {
    throw ValidationError(kModule, "alpha must lie in (0, 1)");
  }
  DependencyGraph g;
  g.nodes = m.categories();
  const std::size_t n = g.nodes.size();
  const std::string base = m.base().id;

  std::vector<std::string> ablations(n);
  for (std::size_t i = 0; i < n; ++i) {
    const ModelVariant* v = m.ablation_for(g.nodes[i]);
    if (!v) throw ValidationError(kModule, "no ablation variant for category \"" + g.nodes[i] + "\"");
    ablations[i] = v->id;
  }

  if (!options.ablation_sizes.empty() && !options.allow_unequal_ablation) {
    std::set<std::size_t> sizes;
    for (const auto& category : g.nodes) {
      const auto it = options.ablation_sizes.find(category);
      if (it == options.ablation_sizes.end()) {
        throw ValidationError(kModule, "no ablation size for category \"" + category + "\"");
      }
      sizes.insert(it->second);
    }
    if (sizes.size() > 1) {
      throw ValidationError(kModule,
                            "ablations removed unequal instruction counts; pass "
                            "allow_unequal_ablation to override");
    }
  }

  g.tests.resize(n * (n > 0 ? n - 1 : 0));
  auto run_rows = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::size_t slot = i * (n - 1);
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const auto diffs = paired_differences(m, ablations[i], base, g.nodes[j], ScoreField::ppl);
        const auto w = wilcoxon_signed_rank(diffs, options.wilcoxon);
        g.tests[slot++] = DependencyTest{g.nodes[i], g.nodes[j], w.n_effective, w.w_plus, w.p, 1.0,
                                         false};
      }
    }
  };
  const unsigned threads = std::max(1U, std::min<unsigned>(options.threads, static_cast<unsigned>(n)));
  if (threads <= 1) {
    run_rows(0, n);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t per = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * per, end = std::min(n, begin + per);
      if (begin >= end) continue;
      pool.emplace_back([&, t, begin, end] {
        try {
          run_rows(begin, end);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::vector<double> raw(g.tests.size());
  for (std::size_t t = 0; t < raw.size(); ++t) raw[t] = g.tests[t].p_raw;
  const auto bh = benjamini_hochberg(raw, options.alpha);
  for (std::size_t t = 0; t < raw.size(); ++t) g.tests[t].p_adjusted = bh.adjusted[t];
  g.edges = asymmetric_edges(g.nodes, g.tests, options.alpha);
  return g;
}

std::optional<Taxonomy::Layer> Taxonomy::layer_of(const std::string& category) const {
  auto in = [&](const std::vector<std::string>& v) {
    return std::find(v.begin(), v.end(), category) != v.end();
  };
  if (in(preliminary)) return Layer::preliminary;
  if (in(intermediary)) return Layer::intermediary;
  if (in(subsequential)) return Layer::subsequential;
  return std::nullopt;
}

Taxonomy layer_taxonomy(const DependencyGraph& g) {
  const std::size_t n = g.nodes.size();
  std::vector<std::size_t> in_degree(n, 0), out_degree(n, 0);
  std::vector<std::vector<std::size_t>> adjacency(n);
  for (const auto& e : g.edges) {
    if (e.from >= n || e.to >= n) throw LookupError(kModule, "edge references an unknown node");
    ++out_degree[e.from];
    ++in_degree[e.to];
    adjacency[e.from].push_back(e.to);
  }

  Taxonomy t;
  for (std::size_t i = 0; i < n; ++i) {
    if (out_degree[i] > 0 && in_degree[i] == 0) {
      t.preliminary.push_back(g.nodes[i]);
    } else if (out_degree[i] == 0 && in_degree[i] > 0) {
      t.subsequential.push_back(g.nodes[i]);
    } else {
      t.intermediary.push_back(g.nodes[i]);
    }
  }

  // Tarjan's strongly connected components.
  std::vector<int> index(n, -1), low(n, 0);
  std::vector<bool> on_stack(n, false);
  std::vector<std::size_t> stack;
  int counter = 0;
  std::vector<std::vector<std::size_t>> components;
  std::function<void(std::size_t)> visit = [&](std::size_t v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = true;
    for (std::size_t w : adjacency[v]) {
      if (index[w] < 0) {
        visit(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack[w]) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<std::size_t> component;
      std::size_t w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack[w] = false;
        component.push_back(w);
      } while (w != v);
      if (component.size() > 1) components.push_back(std::move(component));
    }
  };
  for (std::size_t v = 0; v < n; ++v) {
    if (index[v] < 0) visit(v);
  }
  for (auto& component : components) {
    std::sort(component.begin(), component.end());
    std::vector<std::string> names;
    for (std::size_t v : component) names.push_back(g.nodes[v]);
    t.cycles.push_back(std::move(names));
  }
  std::sort(t.cycles.begin(), t.cycles.end());
  return t;
}

void write_dependency_report(std::ostream& out, const DependencyGraph& g,
                             const std::string& comment) {
  if (!comment.empty()) out << comment << '\n';
  out << "removed,affected,n,w_plus,p_raw,p_adjusted,edge\n";
  for (const auto& t : g.tests) {
    out << detail::csv_field(t.removed) << ',' << detail::csv_field(t.affected) << ','
        << t.n_effective << ',' << detail::format_double(t.w_plus) << ','
        << detail::format_double(t.p_raw) << ',' << detail::format_double(t.p_adjusted) << ','
        << (t.edge ? "true" : "false") << '\n';
  }
}

void write_taxonomy_json(std::ostream& out, const Taxonomy& t, const std::string& provenance_json) {
  nlohmann::ordered_json doc;
  if (!provenance_json.empty()) doc["provenance"] = nlohmann::ordered_json::parse(provenance_json);
  doc["preliminary"] = t.preliminary;
  doc["intermediary"] = t.intermediary;
  doc["subsequential"] = t.subsequential;
  doc["cycles"] = t.cycles;
  out << doc.dump(2) << '\n';
}

Taxonomy read_taxonomy_json(std::istream& in) {
  Taxonomy t;
  try {
    const auto doc = nlohmann::json::parse(in);
    t.preliminary = doc.at("preliminary").get<std::vector<std::string>>();
    t.intermediary = doc.at("intermediary").get<std::vector<std::string>>();
    t.subsequential = doc.at("subsequential").get<std::vector<std::string>>();
    if (doc.contains("cycles")) t.cycles = doc.at("cycles").get<std::vector<std::vector<std::string>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(kModule, std::string("malformed taxonomy JSON: ") + e.what());
  }
  std::set<std::string> seen;
  for (const auto* layer : {&t.preliminary, &t.intermediary, &t.subsequential}) {
    for (const auto& c : *layer) {
      if (!seen.insert(c).second) {
        throw ValidationError(kModule, "category \"" + c + "\" appears in more than one layer");
      }
    }
  }
  return t;
}

}  // namespace instopt
