#include "instopt/interaction.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "csv.hpp"
#include "instopt/error.hpp"

namespace instopt {

namespace {

constexpr const char* kModule = "interaction";

double percentile(std::vector<double> sorted, double q) {
  std::sort(sorted.begin(), sorted.end());
  if (sorted.size() == 1) return sorted.front();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

CoefficientCell equivalence_coefficient(const std::vector<double>& base,
                                        const std::vector<double>& add_i,
                                        const std::vector<double>& add_j,
                                        const EquivalenceOptions& options) {
  if (base.size() != add_i.size() || base.size() != add_j.size()) {
    throw ValidationError(kModule, "score vectors are not paired");
  }
  if (!(options.eps > 0.0)) throw ValidationError(kModule, "eps must be positive");

  CoefficientCell cell;
  std::vector<double> ratios;
  double num_sum = 0.0, den_sum = 0.0;
  for (std::size_t k = 0; k < base.size(); ++k) {
    const double num = add_i[k] - base[k];
    const double den = add_j[k] - base[k];
    if (std::abs(den) < options.eps) {
      ++cell.skipped;
      continue;
    }
    ratios.push_back(num / den);
    num_sum += num;
    den_sum += den;
  }
  cell.retained = ratios.size();
  if (ratios.empty()) {
    throw UndefinedResultError(kModule,
                               "every instance has a near-zero denominator gain (" +
                                   std::to_string(cell.skipped) + " skipped)",
                               cell.skipped);
  }

  if (options.aggregation == RatioAggregation::ratio_of_means) {
    if (std::abs(den_sum) / static_cast<double>(cell.retained) < options.eps) {
      throw UndefinedResultError(kModule, "mean denominator gain is near zero", cell.skipped);
    }
    cell.gamma = num_sum / den_sum;
  } else {
    if (options.winsorize) {
      const auto [lo_q, hi_q] = *options.winsorize;
      if (!(lo_q >= 0.0 && lo_q < hi_q && hi_q <= 1.0)) {
        throw ValidationError(kModule, "winsorization percentiles must satisfy 0 <= lo < hi <= 1");
      }
      const double lo = percentile(ratios, lo_q);
      const double hi = percentile(ratios, hi_q);
      for (double& r : ratios) r = std::clamp(r, lo, hi);
    }
    cell.gamma = std::accumulate(ratios.begin(), ratios.end(), 0.0) /
                 static_cast<double>(ratios.size());
  }
  if (options.size_ratio) cell.gamma *= *options.size_ratio;
  return cell;
}

CoefficientCell equivalence_coefficient(const ScoreMatrix& m, std::string_view base,
                                        std::string_view add_i, std::string_view add_j,
                                        std::string_view category_j,
                                        const EquivalenceOptions& options) {
  for (auto id : {add_i, add_j}) {
    if (m.variant(id).kind != VariantKind::addition) {
      throw ValidationError(kModule, "variant \"" + std::string(id) + "\" is not an addition");
    }
  }
  const auto field = ScoreField::log_likelihood;
  return equivalence_coefficient(m.scores(base, category_j, field, options.likelihood),
                                 m.scores(add_i, category_j, field, options.likelihood),
                                 m.scores(add_j, category_j, field, options.likelihood), options);
}

std::optional<std::size_t> EquivalenceMatrix::index_of(std::string_view category) const {
  const auto it = std::find(categories.begin(), categories.end(), category);
  if (it == categories.end()) return std::nullopt;
  return static_cast<std::size_t>(it - categories.begin());
}

EquivalenceMatrix build_equivalence_matrix(const ScoreMatrix& m, const EquivalenceOptions& options,
                                           unsigned threads) {
  EquivalenceMatrix g;
  g.categories = m.categories();
  const std::size_t n = g.categories.size();
  const std::string base = m.base().id;

  std::vector<std::string> additions(n);
  for (std::size_t i = 0; i < n; ++i) {
    const ModelVariant* v = m.addition_for(g.categories[i]);
    if (!v) {
      throw ValidationError(kModule, "no addition variant for category \"" + g.categories[i] + "\"");
    }
    additions[i] = v->id;
  }
  g.size_ratio_applied = !options.addition_sizes.empty();
  std::vector<double> sizes(n, 1.0);
  if (g.size_ratio_applied) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto it = options.addition_sizes.find(g.categories[i]);
      if (it == options.addition_sizes.end() || !(it->second > 0)) {
        throw ValidationError(kModule, "missing or non-positive addition size for \"" +
                                           g.categories[i] + "\"");
      }
      sizes[i] = it->second;
    }
  }

  // Per category j: base and addition scores, fetched once.
  const auto field = ScoreField::log_likelihood;
  std::vector<std::vector<double>> base_scores(n);
  std::vector<std::vector<std::vector<double>>> add_scores(n, std::vector<std::vector<double>>(n));
  for (std::size_t j = 0; j < n; ++j) {
    base_scores[j] = m.scores(base, g.categories[j], field, options.likelihood);
    for (std::size_t i = 0; i < n; ++i) {
      add_scores[i][j] = m.scores(additions[i], g.categories[j], field, options.likelihood);
    }
  }

  g.gamma.assign(n, std::vector<double>(n, 0.0));
  g.skipped.assign(n, std::vector<std::size_t>(n, 0));
  EquivalenceOptions cell_options = options;
  cell_options.size_ratio.reset();

  auto fill_rows = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) {
          std::size_t skipped = 0;
          for (std::size_t k = 0; k < base_scores[j].size(); ++k) {
            if (std::abs(add_scores[j][j][k] - base_scores[j][k]) < options.eps) ++skipped;
          }
          g.gamma[i][j] = 1.0;
          g.skipped[i][j] = skipped;
          continue;
        }
        CoefficientCell cell;
        try {
          cell = equivalence_coefficient(base_scores[j], add_scores[i][j], add_scores[j][j],
                                         cell_options);
        } catch (const UndefinedResultError& e) {
          throw UndefinedResultError(kModule,
                                     "gamma(" + g.categories[i] + ", " + g.categories[j] +
                                         "): " + e.what(),
                                     e.skipped());
        }
        g.gamma[i][j] = cell.gamma * (sizes[j] / sizes[i]);
        g.skipped[i][j] = cell.skipped;
      }
    }
  };

  threads = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    fill_rows(0, n);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t per = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * per, end = std::min(n, begin + per);
      if (begin >= end) continue;
      pool.emplace_back([&, t, begin, end] {
        try {
          fill_rows(begin, end);
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
  return g;
}

void write_equivalence_csv(std::ostream& out, const EquivalenceMatrix& g,
                           const std::string& comment) {
  if (!comment.empty()) out << comment << '\n';
  out << "category";
  for (const auto& c : g.categories) out << ',' << detail::csv_field(c);
  out << '\n';
  for (std::size_t i = 0; i < g.size(); ++i) {
    out << detail::csv_field(g.categories[i]);
    for (std::size_t j = 0; j < g.size(); ++j) out << ',' << detail::format_double(g.gamma[i][j]);
    out << '\n';
  }
}

EquivalenceMatrix read_equivalence_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!detail::next_data_line(in, line, line_no)) {
    throw ValidationError(kModule, "empty equivalence matrix file");
  }
  auto header = detail::split_csv_line(line);
  if (header.empty() || header.front() != "category") {
    throw ValidationError(kModule, "equivalence CSV must start with a \"category\" column");
  }
  EquivalenceMatrix g;
  g.categories.assign(header.begin() + 1, header.end());
  const std::size_t n = g.categories.size();
  while (detail::next_data_line(in, line, line_no)) {
    const auto f = detail::split_csv_line(line);
    const std::size_t row = g.gamma.size();
    if (f.size() != n + 1 || row >= n || f[0] != g.categories[row]) {
      throw ValidationError(kModule, "equivalence CSV line " + std::to_string(line_no) +
                                         " does not match the header");
    }
    std::vector<double> values(n);
    for (std::size_t j = 0; j < n; ++j) {
      try {
        std::size_t used = 0;
        values[j] = std::stod(f[j + 1], &used);
        if (used != f[j + 1].size() || !std::isfinite(values[j])) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw ValidationError(kModule, "equivalence CSV line " + std::to_string(line_no) +
                                           ": bad value \"" + f[j + 1] + "\"");
      }
    }
    g.gamma.push_back(std::move(values));
  }
  if (g.gamma.size() != n) throw ValidationError(kModule, "equivalence CSV is not square");
  g.skipped.assign(n, std::vector<std::size_t>(n, 0));
  return g;
}

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

// Blue (-1) through white (0) to red (+1).
std::string diverging_color(double t) {
  t = std::clamp(t, -1.0, 1.0);
  int r, g, b;
  if (t >= 0) {
    r = 255;
    g = static_cast<int>(std::lround(255 * (1 - t) + 40 * t));
    b = static_cast<int>(std::lround(255 * (1 - t) + 40 * t));
  } else {
    const double s = -t;
    r = static_cast<int>(std::lround(255 * (1 - s) + 33 * s));
    g = static_cast<int>(std::lround(255 * (1 - s) + 102 * s));
    b = static_cast<int>(std::lround(255 * (1 - s) + 172 * s));
  }
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

void write_equivalence_svg(std::ostream& out, const EquivalenceMatrix& g,
                           const std::string& comment) {
  const std::size_t n = g.size();
  const int cell = 30, margin = 230;
  const int side = margin + cell * static_cast<int>(n) + 20;
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) scale = std::max(scale, std::abs(g.gamma[i][j]));
  }
  if (scale == 0.0) scale = 1.0;

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << side << "\" height=\"" << side
      << "\" font-family=\"sans-serif\">\n";
  if (!comment.empty()) out << "<!-- " << xml_escape(comment) << " -->\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < n; ++i) {
    const int y = margin + cell * static_cast<int>(i);
    out << "<text x=\"" << margin - 6 << "\" y=\"" << y + cell / 2 + 4
        << "\" font-size=\"11\" text-anchor=\"end\">" << xml_escape(g.categories[i]) << "</text>\n";
    const int x = margin + cell * static_cast<int>(i) + cell / 2;
    out << "<text x=\"" << x << "\" y=\"" << margin - 6 << "\" font-size=\"11\" transform=\"rotate(-60 "
        << x << ' ' << margin - 6 << ")\">" << xml_escape(g.categories[i]) << "</text>\n";
  }
  char label[32];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const int x = margin + cell * static_cast<int>(j);
      const int y = margin + cell * static_cast<int>(i);
      const double v = g.gamma[i][j];
      out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
          << "\" fill=\"" << diverging_color(v / scale) << "\" stroke=\"#dddddd\"/>\n";
      std::snprintf(label, sizeof(label), "%.2f", v);
      out << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 3
          << "\" font-size=\"8\" text-anchor=\"middle\">" << label << "</text>\n";
    }
  }
  out << "</svg>\n";
}

// ---------------------------------------------------------------------------

double correlation_distance(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  if (n != b.size() || n == 0) throw ValidationError(kModule, "rows differ in length");
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 1.0;
  return 1.0 - sab / std::sqrt(saa * sbb);
}

MetaGrouping cluster_meta_groups(const EquivalenceMatrix& g, std::size_t k) {
  const std::size_t n = g.size();
  if (k == 0 || k > n) {
    throw ValidationError(kModule, "requested " + std::to_string(k) + " groups for " +
                                       std::to_string(n) + " categories");
  }
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dist[i][j] = dist[j][i] = correlation_distance(g.gamma[i], g.gamma[j]);
    }
  }

  struct Cluster {
    std::size_t id;
    std::vector<std::size_t> members;  // sorted
  };
  std::vector<Cluster> active;
  for (std::size_t i = 0; i < n; ++i) active.push_back({i, {i}});

  MetaGrouping result;
  result.categories = g.categories;
  result.groups = k;
  result.assignment.assign(n, 0);

  auto linkage = [&](const Cluster& a, const Cluster& b) {
    double sum = 0.0;
    for (std::size_t x : a.members) {
      for (std::size_t y : b.members) sum += dist[x][y];
    }
    return sum / static_cast<double>(a.members.size() * b.members.size());
  };
  auto record_cut = [&] {
    // Active clusters are kept ordered by smallest member.
    for (std::size_t label = 0; label < active.size(); ++label) {
      for (std::size_t member : active[label].members) result.assignment[member] = label;
    }
  };

  if (active.size() == k) record_cut();
  std::size_t next_id = n;
  while (active.size() > 1) {
    std::size_t best_a = 0, best_b = 1;
    double best = linkage(active[0], active[1]);
    for (std::size_t a = 0; a < active.size(); ++a) {
      for (std::size_t b = a + 1; b < active.size(); ++b) {
        const double d = linkage(active[a], active[b]);
        if (d < best - 1e-12) {
          best = d;
          best_a = a;
          best_b = b;
        }
      }
    }
    Cluster merged{next_id++, active[best_a].members};
    merged.members.insert(merged.members.end(), active[best_b].members.begin(),
                          active[best_b].members.end());
    std::sort(merged.members.begin(), merged.members.end());
    result.dendrogram.push_back(
        {active[best_a].id, active[best_b].id, best, merged.members.size()});
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_b));
    active[best_a] = std::move(merged);
    if (active.size() == k) record_cut();
  }
  return result;
}

void write_meta_groups(std::ostream& out, const MetaGrouping& grouping,
                       const std::string& provenance_json) {
  nlohmann::ordered_json doc;
  if (!provenance_json.empty()) doc["provenance"] = nlohmann::ordered_json::parse(provenance_json);
  doc["groups"] = grouping.groups;
  nlohmann::ordered_json assignment = nlohmann::ordered_json::object();
  std::vector<std::vector<std::string>> members(grouping.groups);
  for (std::size_t i = 0; i < grouping.categories.size(); ++i) {
    assignment[grouping.categories[i]] = grouping.assignment[i];
    members[grouping.assignment[i]].push_back(grouping.categories[i]);
  }
  doc["assignment"] = assignment;
  doc["members"] = members;
  doc["dendrogram"] = nlohmann::ordered_json::array();
  for (const auto& m : grouping.dendrogram) {
    doc["dendrogram"].push_back(
        {{"left", m.left}, {"right", m.right}, {"height", m.height}, {"size", m.size}});
  }
  out << doc.dump(2) << '\n';
}

}  // namespace instopt
