#include "instopt/evalstore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "csv.hpp"
#include "instopt/error.hpp"
#include "instopt/rng.hpp"

namespace instopt {

namespace {
constexpr const char* kModule = "evalstore";
constexpr std::string_view kHeader = "variant_id,kind,category,instance_id,log_likelihood,token_count";
constexpr std::size_t kMaxListed = 20;
}  // namespace

std::string kind_label(const ModelVariant& variant) {
  switch (variant.kind) {
    case VariantKind::base: return "base";
    case VariantKind::addition: return "add:" + variant.category;
    case VariantKind::ablation: return "abl:" + variant.category;
  }
  return "base";
}

ModelVariant parse_kind(std::string_view variant_id, std::string_view kind) {
  ModelVariant v;
  v.id = std::string(variant_id);
  if (kind == "base") {
    v.kind = VariantKind::base;
  } else if (kind.substr(0, 4) == "add:" && kind.size() > 4) {
    v.kind = VariantKind::addition;
    v.category = std::string(kind.substr(4));
  } else if (kind.substr(0, 4) == "abl:" && kind.size() > 4) {
    v.kind = VariantKind::ablation;
    v.category = std::string(kind.substr(4));
  } else {
    throw ValidationError(kModule, "variant \"" + v.id + "\" has unknown kind \"" +
                                       std::string(kind) + "\"");
  }
  return v;
}

double ppl_from_log_likelihood(double log_likelihood, std::uint64_t token_count) {
  return std::exp(-log_likelihood / static_cast<double>(token_count));
}

double log_likelihood_from_ppl(double ppl, std::uint64_t token_count) {
  return -static_cast<double>(token_count) * std::log(ppl);
}

ScoreMatrix ScoreMatrix::from_records(std::vector<ModelVariant> variants,
                                      const std::vector<ScoreRecord>& records) {
  ScoreMatrix m;
  std::map<std::string, std::size_t> variant_index;
  std::size_t bases = 0;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    if (variant_index.count(variants[v].id)) {
      throw ValidationError(kModule, "duplicate variant \"" + variants[v].id + "\"");
    }
    variant_index[variants[v].id] = v;
    if (variants[v].kind == VariantKind::base) ++bases;
  }
  if (bases > 1) throw ValidationError(kModule, "more than one base variant");
  m.variants_ = std::move(variants);

  std::map<std::string, std::size_t> category_index;
  std::vector<std::set<std::string>> instance_sets;
  for (const auto& r : records) {
    if (!variant_index.count(r.variant)) {
      throw ValidationError(kModule, "record references unknown variant \"" + r.variant + "\"");
    }
    auto [it, inserted] = category_index.emplace(r.category, m.categories_.size());
    if (inserted) {
      m.categories_.push_back(r.category);
      instance_sets.emplace_back();
    }
    instance_sets[it->second].insert(r.instance);
  }
  for (const auto& v : m.variants_) {
    if (v.kind != VariantKind::base && !category_index.count(v.category)) {
      throw ValidationError(kModule, "variant \"" + v.id + "\" references unknown category \"" +
                                         v.category + "\"");
    }
  }

  const std::size_t nc = m.categories_.size();
  m.instances_.resize(nc);
  std::vector<std::map<std::string, std::size_t>> position(nc);
  for (std::size_t c = 0; c < nc; ++c) {
    m.instances_[c].assign(instance_sets[c].begin(), instance_sets[c].end());
    for (std::size_t k = 0; k < m.instances_[c].size(); ++k) position[c][m.instances_[c][k]] = k;
  }

  m.cells_.resize(m.variants_.size() * nc);
  std::vector<std::vector<bool>> filled(m.cells_.size());
  for (std::size_t v = 0; v < m.variants_.size(); ++v) {
    for (std::size_t c = 0; c < nc; ++c) {
      const std::size_t n = m.instances_[c].size();
      Cell& cell = m.cells_[v * nc + c];
      cell.log_likelihood.assign(n, 0.0);
      cell.ppl.assign(n, 0.0);
      cell.tokens.assign(n, 0);
      filled[v * nc + c].assign(n, false);
    }
  }

  std::vector<std::string> duplicates;
  for (const auto& r : records) {
    const std::size_t v = variant_index[r.variant];
    const std::size_t c = category_index[r.category];
    const std::size_t k = position[c][r.instance];
    const std::size_t slot = v * nc + c;
    if (filled[slot][k]) {
      if (duplicates.size() < kMaxListed) {
        duplicates.push_back("(" + r.variant + ", " + r.category + ", " + r.instance + ")");
      }
      continue;
    }
    filled[slot][k] = true;
    m.cells_[slot].log_likelihood[k] = r.log_likelihood;
    m.cells_[slot].ppl[k] = r.ppl;
    m.cells_[slot].tokens[k] = r.token_count;
  }
  if (!duplicates.empty()) {
    std::string msg = "duplicate score records:";
    for (const auto& d : duplicates) msg += " " + d;
    throw ValidationError(kModule, msg);
  }

  std::vector<std::string> missing;
  std::size_t missing_total = 0;
  for (std::size_t v = 0; v < m.variants_.size(); ++v) {
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t k = 0; k < m.instances_[c].size(); ++k) {
        if (filled[v * nc + c][k]) continue;
        ++missing_total;
        if (missing.size() < kMaxListed) {
          missing.push_back("(" + m.variants_[v].id + ", " + m.categories_[c] + ", " +
                            m.instances_[c][k] + ")");
        }
      }
    }
  }
  if (missing_total) {
    std::string msg = "unpaired instances: " + std::to_string(missing_total) +
                      " (variant, category, instance) cells missing:";
    for (const auto& d : missing) msg += " " + d;
    if (missing_total > missing.size()) msg += " ...";
    throw ValidationError(kModule, msg);
  }
  return m;
}

const std::vector<std::string>& ScoreMatrix::instances(std::string_view category) const {
  const auto c = category_index(category);
  if (!c) throw LookupError(kModule, "unknown category \"" + std::string(category) + "\"");
  return instances_[*c];
}

std::optional<std::size_t> ScoreMatrix::variant_index(std::string_view id) const {
  for (std::size_t v = 0; v < variants_.size(); ++v) {
    if (variants_[v].id == id) return v;
  }
  return std::nullopt;
}

std::optional<std::size_t> ScoreMatrix::category_index(std::string_view category) const {
  for (std::size_t c = 0; c < categories_.size(); ++c) {
    if (categories_[c] == category) return c;
  }
  return std::nullopt;
}

const ModelVariant& ScoreMatrix::variant(std::string_view id) const {
  const auto v = variant_index(id);
  if (!v) throw LookupError(kModule, "unknown variant \"" + std::string(id) + "\"");
  return variants_[*v];
}

const ModelVariant& ScoreMatrix::base() const {
  for (const auto& v : variants_) {
    if (v.kind == VariantKind::base) return v;
  }
  throw LookupError(kModule, "score matrix has no base variant");
}

const ModelVariant* ScoreMatrix::addition_for(std::string_view category) const {
  for (const auto& v : variants_) {
    if (v.kind == VariantKind::addition && v.category == category) return &v;
  }
  return nullptr;
}

const ModelVariant* ScoreMatrix::ablation_for(std::string_view category) const {
  for (const auto& v : variants_) {
    if (v.kind == VariantKind::ablation && v.category == category) return &v;
  }
  return nullptr;
}

const ScoreMatrix::Cell& ScoreMatrix::cell(std::string_view variant,
                                           std::string_view category) const {
  const auto v = variant_index(variant);
  if (!v) throw LookupError(kModule, "unknown variant \"" + std::string(variant) + "\"");
  const auto c = category_index(category);
  if (!c) throw LookupError(kModule, "unknown category \"" + std::string(category) + "\"");
  return cells_[*v * categories_.size() + *c];
}

std::vector<double> ScoreMatrix::scores(std::string_view variant, std::string_view category,
                                        ScoreField field,
                                        LikelihoodAggregation aggregation) const {
  const Cell& c = cell(variant, category);
  if (field == ScoreField::ppl) return c.ppl;
  if (aggregation == LikelihoodAggregation::sum) return c.log_likelihood;
  std::vector<double> out(c.log_likelihood.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = c.log_likelihood[k] / static_cast<double>(c.tokens[k]);
  }
  return out;
}

std::vector<std::uint64_t> ScoreMatrix::token_counts(std::string_view variant,
                                                     std::string_view category) const {
  return cell(variant, category).tokens;
}

std::size_t ScoreMatrix::record_count() const noexcept {
  std::size_t n = 0;
  for (const auto& c : cells_) n += c.ppl.size();
  return n;
}

// ---------------------------------------------------------------------------

namespace {

double parse_number(const std::string& text, const std::string& what, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(kModule, "line " + std::to_string(line_no) + ": bad " + what + " \"" +
                                       text + "\"");
  }
}

}  // namespace

ScoreMatrix parse_scores(std::istream& in, const std::string& source_name) {
  std::string line;
  std::size_t line_no = 0;
  if (!detail::next_data_line(in, line, line_no)) {
    throw ValidationError(kModule, source_name + ": empty score file");
  }
  bool has_ppl = false;
  if (line == std::string(kHeader) + ",ppl") {
    has_ppl = true;
  } else if (line != kHeader) {
    throw ValidationError(kModule, source_name + ": header must be \"" + std::string(kHeader) +
                                       "[,ppl]\"");
  }
  const std::size_t width = has_ppl ? 7 : 6;

  std::vector<ModelVariant> variants;
  std::map<std::string, std::size_t> seen;
  std::vector<ScoreRecord> records;
  while (detail::next_data_line(in, line, line_no)) {
    const auto f = detail::split_csv_line(line);
    if (f.size() != width) {
      throw ValidationError(kModule, source_name + ":" + std::to_string(line_no) + ": expected " +
                                         std::to_string(width) + " columns");
    }
    ModelVariant v = parse_kind(f[0], f[1]);
    if (auto it = seen.find(v.id); it == seen.end()) {
      seen.emplace(v.id, variants.size());
      variants.push_back(v);
    } else if (!(variants[it->second] == v)) {
      throw ValidationError(kModule, source_name + ":" + std::to_string(line_no) + ": variant \"" +
                                         v.id + "\" changes kind");
    }

    ScoreRecord r;
    r.variant = f[0];
    r.category = f[2];
    r.instance = f[3];
    if (r.category.empty() || r.instance.empty()) {
      throw ValidationError(kModule, source_name + ":" + std::to_string(line_no) +
                                         ": empty category or instance id");
    }
    const double tokens = parse_number(f[5], "token_count", line_no);
    if (tokens <= 0 || tokens != std::floor(tokens)) {
      throw ValidationError(kModule, source_name + ":" + std::to_string(line_no) +
                                         ": token_count must be a positive integer");
    }
    r.token_count = static_cast<std::uint64_t>(tokens);
    const bool has_ll = !f[4].empty();
    const bool has_p = has_ppl && !f[6].empty();
    if (!has_ll && !has_p) {
      throw ValidationError(kModule, source_name + ":" + std::to_string(line_no) +
                                         ": needs log_likelihood or ppl");
    }
    if (has_ll) {
      r.log_likelihood = parse_number(f[4], "log_likelihood", line_no);
      if (r.log_likelihood > 0) {
        throw ValidationError(kModule, source_name + ":" + std::to_string(line_no) +
                                           ": log_likelihood must be <= 0");
      }
    }
    if (has_p) {
      r.ppl = parse_number(f[6], "ppl", line_no);
      if (r.ppl <= 0) {
        throw ValidationError(kModule, source_name + ":" + std::to_string(line_no) +
                                           ": ppl must be > 0");
      }
    }
    if (has_ll && has_p) {
      const double expected = ppl_from_log_likelihood(r.log_likelihood, r.token_count);
      if (std::abs(expected - r.ppl) > 1e-6 * std::max(1.0, std::abs(expected))) {
        throw ValidationError(kModule, source_name + ":" + std::to_string(line_no) +
                                           ": ppl disagrees with log_likelihood/token_count");
      }
    } else if (has_ll) {
      r.ppl = ppl_from_log_likelihood(r.log_likelihood, r.token_count);
    } else {
      r.log_likelihood = log_likelihood_from_ppl(r.ppl, r.token_count);
    }
    records.push_back(std::move(r));
  }
  try {
    return ScoreMatrix::from_records(std::move(variants), records);
  } catch (const ValidationError& e) {
    throw ValidationError(kModule, source_name + ": " + e.what());
  }
}

ScoreMatrix ingest_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(kModule, "cannot open score file " + path);
  return parse_scores(in, path);
}

void write_scores(std::ostream& out, const ScoreMatrix& m, const std::string& comment) {
  if (!comment.empty()) out << comment << '\n';
  out << kHeader << ",ppl\n";
  for (const auto& v : m.variants()) {
    const std::string kind = detail::csv_field(kind_label(v));
    for (const auto& category : m.categories()) {
      const auto& ids = m.instances(category);
      const auto ll = m.scores(v.id, category, ScoreField::log_likelihood);
      const auto ppl = m.scores(v.id, category, ScoreField::ppl);
      const auto tokens = m.token_counts(v.id, category);
      for (std::size_t k = 0; k < ids.size(); ++k) {
        out << detail::csv_field(v.id) << ',' << kind << ',' << detail::csv_field(category) << ','
            << detail::csv_field(ids[k]) << ',' << detail::format_double(ll[k]) << ','
            << tokens[k] << ',' << detail::format_double(ppl[k]) << '\n';
      }
    }
  }
}

std::vector<double> paired_differences(const ScoreMatrix& m, std::string_view a,
                                       std::string_view b, std::string_view category,
                                       ScoreField field) {
  const auto sa = m.scores(a, category, field);
  const auto sb = m.scores(b, category, field);
  std::vector<double> out(sa.size());
  for (std::size_t k = 0; k < sa.size(); ++k) out[k] = sa[k] - sb[k];
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string indexed_id(const char* prefix, std::size_t i) {
  std::ostringstream os;
  os << prefix;
  os.width(2);
  os.fill('0');
  os << i;
  return os.str();
}

void check_square(const std::vector<std::vector<double>>& m, std::size_t n, const char* what) {
  if (m.empty()) return;
  bool ok = m.size() == n;
  for (const auto& row : m) ok = ok && row.size() == n;
  if (!ok) {
    throw ValidationError(kModule, std::string(what) + " must be " + std::to_string(n) + "x" +
                                       std::to_string(n));
  }
}

}  // namespace

std::vector<ModelVariant> synthetic_variants(const SyntheticScoreSpec& spec) {
  std::vector<ModelVariant> variants;
  variants.push_back({"base", VariantKind::base, "", spec.base_model_name});
  if (!spec.addition_gain.empty()) {
    for (std::size_t i = 0; i < spec.categories.size(); ++i) {
      variants.push_back({indexed_id("add_", i), VariantKind::addition, spec.categories[i],
                          spec.base_model_name});
    }
  }
  if (!spec.ablation_ppl_shift.empty()) {
    for (std::size_t i = 0; i < spec.categories.size(); ++i) {
      variants.push_back({indexed_id("abl_", i), VariantKind::ablation, spec.categories[i],
                          spec.base_model_name});
    }
  }
  return variants;
}

ScoreMatrix generate_synthetic_scores(const SyntheticScoreSpec& spec) {
  const std::size_t n = spec.categories.size();
  check_square(spec.addition_gain, n, "addition_gain");
  check_square(spec.ablation_ppl_shift, n, "ablation_ppl_shift");
  if (spec.token_count == 0) throw ValidationError(kModule, "token_count must be positive");

  Rng rng(spec.seed);
  const auto variants = synthetic_variants(spec);
  const double tokens = static_cast<double>(spec.token_count);
  std::vector<ScoreRecord> records;
  records.reserve(variants.size() * n * spec.instances_per_category);

  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < spec.instances_per_category; ++k) {
      const std::string instance = "k" + std::to_string(100000 + k).substr(1);
      const double token_ll =
          std::min(-0.05, spec.base_token_ll_mean + spec.base_token_ll_sd * rng.normal());
      const double base_ll = token_ll * tokens;
      const double base_ppl = ppl_from_log_likelihood(base_ll, spec.token_count);
      records.push_back({"base", spec.categories[j], instance, base_ll, spec.token_count, base_ppl});

      std::size_t v = 1;
      if (!spec.addition_gain.empty()) {
        for (std::size_t i = 0; i < n; ++i, ++v) {
          double ll = base_ll + spec.addition_gain[i][j];
          if (spec.addition_noise_sd > 0) ll += spec.addition_noise_sd * rng.normal();
          ll = std::min(ll, -1e-9);
          records.push_back({variants[v].id, spec.categories[j], instance, ll, spec.token_count,
                             ppl_from_log_likelihood(ll, spec.token_count)});
        }
      }
      if (!spec.ablation_ppl_shift.empty()) {
        for (std::size_t i = 0; i < n; ++i, ++v) {
          double ppl = base_ppl + spec.ablation_ppl_shift[i][j];
          if (spec.ablation_noise_sd > 0) ppl += spec.ablation_noise_sd * rng.normal();
          ppl = std::max(ppl, 1.0 + 1e-9);
          records.push_back({variants[v].id, spec.categories[j], instance,
                             log_likelihood_from_ppl(ppl, spec.token_count), spec.token_count,
                             ppl});
        }
      }
    }
  }
  return ScoreMatrix::from_records(variants, records);
}

}  // namespace instopt
