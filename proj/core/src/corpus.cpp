#include "instopt/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "csv.hpp"
#include "instopt/error.hpp"

namespace instopt {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kModule = "corpus";

std::string join_turns(const std::vector<Turn>& turns, bool user_only) {
  std::string out;
  for (const auto& turn : turns) {
    if (user_only && turn.role != Role::user) continue;
    if (!out.empty()) out.push_back('\n');
    out += turn.text;
  }
  return out;
}

}  // namespace

std::string Instruction::dialogue_text() const { return join_turns(turns, false); }
std::string Instruction::prompt_text() const { return join_turns(turns, true); }

void validate_instruction(const Instruction& instruction) {
  if (instruction.id.empty()) throw ValidationError(kModule, "instruction id is empty");
  const std::string where = "instruction \"" + instruction.id + "\": ";
  if (instruction.turns.empty()) throw ValidationError(kModule, where + "has no turns");
  for (std::size_t i = 0; i < instruction.turns.size(); ++i) {
    const Role expected = (i % 2 == 0) ? Role::user : Role::assistant;
    if (instruction.turns[i].role != expected) {
      throw ValidationError(kModule, where + "turn " + std::to_string(i) +
                                         " breaks user/assistant alternation");
    }
  }
  if (instruction.quality_score &&
      (!std::isfinite(*instruction.quality_score) || *instruction.quality_score < 0.0)) {
    throw ValidationError(kModule, where + "quality_score must be a finite value >= 0");
  }
  for (const auto& tag : instruction.tags) {
    if (tag.empty() || detail::trim(tag) != tag) {
      throw ValidationError(kModule, where + "tags must be trimmed and non-empty");
    }
  }
  if (!std::is_sorted(instruction.tags.begin(), instruction.tags.end()) ||
      std::adjacent_find(instruction.tags.begin(), instruction.tags.end()) !=
          instruction.tags.end()) {
    throw ValidationError(kModule, where + "tags must be sorted and unique");
  }
}

void Corpus::add(Instruction instruction, Provenance provenance) {
  validate_instruction(instruction);
  if (index_.count(instruction.id)) {
    throw ValidationError(kModule, "duplicate instruction id \"" + instruction.id + "\"");
  }
  index_.emplace(instruction.id, instructions_.size());
  instructions_.push_back(std::move(instruction));
  provenance_.push_back(std::move(provenance));
}

std::optional<std::size_t> Corpus::find(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Corpus::replace(std::size_t index, Instruction instruction) {
  if (instruction.id != instructions_.at(index).id) {
    throw ValidationError(kModule, "replace() may not change an instruction id");
  }
  validate_instruction(instruction);
  instructions_[index] = std::move(instruction);
}

Corpus Corpus::subset(const std::vector<std::size_t>& indices) const {
  Corpus out;
  for (std::size_t i : indices) out.add(instructions_.at(i), provenance_.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// JSON Lines.

namespace {

Role parse_role(const std::string& role) {
  if (role == "user") return Role::user;
  if (role == "assistant") return Role::assistant;
  throw ValidationError(kModule, "unknown role \"" + role + "\"");
}

Instruction instruction_from_json(const json& obj, SchemaMode mode) {
  if (!obj.is_object()) throw ValidationError(kModule, "record is not a JSON object");
  static const std::array<const char*, 6> known = {"id",       "turns",         "tags",
                                                   "category", "quality_score", "language"};
  if (mode == SchemaMode::strict) {
    for (const auto& item : obj.items()) {
      if (std::find_if(known.begin(), known.end(),
                       [&](const char* k) { return item.key() == k; }) == known.end()) {
        throw ValidationError(kModule, "unknown key \"" + item.key() + "\"");
      }
    }
  }
  Instruction ins;
  try {
    ins.id = obj.at("id").get<std::string>();
    for (const auto& turn : obj.at("turns")) {
      ins.turns.push_back({parse_role(turn.at("role").get<std::string>()),
                           turn.at("text").get<std::string>()});
    }
    if (auto it = obj.find("tags"); it != obj.end() && !it->is_null()) {
      for (const auto& tag : *it) ins.tags.push_back(detail::trim(tag.get<std::string>()));
      std::sort(ins.tags.begin(), ins.tags.end());
      ins.tags.erase(std::unique(ins.tags.begin(), ins.tags.end()), ins.tags.end());
    }
    if (auto it = obj.find("quality_score"); it != obj.end() && !it->is_null()) {
      ins.quality_score = it->get<double>();
    }
    if (auto it = obj.find("category"); it != obj.end() && !it->is_null()) {
      ins.category = it->get<std::string>();
    }
    if (auto it = obj.find("language"); it != obj.end() && !it->is_null()) {
      ins.language = it->get<std::string>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(kModule, e.what());
  }
  validate_instruction(ins);
  return ins;
}

}  // namespace

Corpus parse_corpus(std::istream& in, const std::string& source_name, SchemaMode mode) {
  Corpus corpus;
  std::unordered_map<std::string, std::size_t> first_line;
  std::string line;
  std::size_t line_no = 0;
  bool first_record = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(kModule, source_name + ":" + std::to_string(line_no) +
                                         ": malformed JSON: " + e.what());
    }
    if (first_record && obj.is_object() && obj.size() == 1 && obj.contains("_provenance")) {
      first_record = false;
      continue;
    }
    first_record = false;
    Instruction ins;
    try {
      ins = instruction_from_json(obj, mode);
    } catch (const ValidationError& e) {
      throw ValidationError(kModule, source_name + ":" + std::to_string(line_no) + ": " +
                                         e.what());
    }
    if (auto it = first_line.find(ins.id); it != first_line.end()) {
      throw ValidationError(kModule, source_name + ": duplicate id \"" + ins.id +
                                         "\" on lines " + std::to_string(it->second) +
                                         " and " + std::to_string(line_no));
    }
    first_line.emplace(ins.id, line_no);
    corpus.add(std::move(ins), {source_name, line_no});
  }
  return corpus;
}

Corpus load_corpus(const std::string& path, SchemaMode mode) {
  std::ifstream in(path);
  if (!in) throw ValidationError(kModule, "cannot open corpus " + path);
  return parse_corpus(in, path, mode);
}

std::string instruction_to_json(const Instruction& ins) {
  ordered_json obj;
  obj["id"] = ins.id;
  obj["turns"] = ordered_json::array();
  for (const auto& turn : ins.turns) {
    obj["turns"].push_back(
        {{"role", turn.role == Role::user ? "user" : "assistant"}, {"text", turn.text}});
  }
  obj["tags"] = ins.tags;
  if (ins.quality_score) obj["quality_score"] = *ins.quality_score;
  if (ins.category) obj["category"] = *ins.category;
  obj["language"] = ins.language;
  return obj.dump();
}

void write_corpus(std::ostream& out, const Corpus& corpus, const std::string& header_json) {
  if (!header_json.empty()) out << header_json << '\n';
  for (const auto& ins : corpus.instructions()) out << instruction_to_json(ins) << '\n';
}

// ---------------------------------------------------------------------------
// XXH64.

namespace {

constexpr std::uint64_t kP1 = 0x9E3779B185EBCA87ULL;
constexpr std::uint64_t kP2 = 0xC2B2AE3D27D4EB4FULL;
constexpr std::uint64_t kP3 = 0x165667B19E3779F9ULL;
constexpr std::uint64_t kP4 = 0x85EBCA77C2B2AE63ULL;
constexpr std::uint64_t kP5 = 0x27D4EB2F165667C5ULL;

inline std::uint64_t rotl(std::uint64_t x, int r) { return (x << r) | (x >> (64 - r)); }

inline std::uint64_t read64(const char* p) {
  std::uint64_t v;
  std::memcpy(&v, p, 8);
  return v;
}

inline std::uint32_t read32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

inline std::uint64_t xxh_round(std::uint64_t acc, std::uint64_t input) {
  acc += input * kP2;
  acc = rotl(acc, 31);
  return acc * kP1;
}

inline std::uint64_t merge_round(std::uint64_t acc, std::uint64_t val) {
  acc ^= xxh_round(0, val);
  return acc * kP1 + kP4;
}

}  // namespace

std::uint64_t xxh64(std::string_view data, std::uint64_t seed) {
  const char* p = data.data();
  const char* const end = p + data.size();
  std::uint64_t h;
  if (data.size() >= 32) {
    std::uint64_t v1 = seed + kP1 + kP2;
    std::uint64_t v2 = seed + kP2;
    std::uint64_t v3 = seed;
    std::uint64_t v4 = seed - kP1;
    const char* const limit = end - 32;
    do {
      v1 = xxh_round(v1, read64(p));
      v2 = xxh_round(v2, read64(p + 8));
      v3 = xxh_round(v3, read64(p + 16));
      v4 = xxh_round(v4, read64(p + 24));
      p += 32;
    } while (p <= limit);
    h = rotl(v1, 1) + rotl(v2, 7) + rotl(v3, 12) + rotl(v4, 18);
    h = merge_round(h, v1);
    h = merge_round(h, v2);
    h = merge_round(h, v3);
    h = merge_round(h, v4);
  } else {
    h = seed + kP5;
  }
  h += static_cast<std::uint64_t>(data.size());
  while (p + 8 <= end) {
    h ^= xxh_round(0, read64(p));
    h = rotl(h, 27) * kP1 + kP4;
    p += 8;
  }
  if (p + 4 <= end) {
    h ^= static_cast<std::uint64_t>(read32(p)) * kP1;
    h = rotl(h, 23) * kP2 + kP3;
    p += 4;
  }
  while (p < end) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(*p)) * kP5;
    h = rotl(h, 11) * kP1;
    ++p;
  }
  h ^= h >> 33;
  h *= kP2;
  h ^= h >> 29;
  h *= kP3;
  h ^= h >> 32;
  return h;
}

// ---------------------------------------------------------------------------
// SimHash.

std::vector<std::string_view> tokenize(std::string_view text, std::vector<std::string>& storage) {
  storage.clear();
  std::string current;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if ((ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9') || u >= 0x80) {
      current.push_back(ch);
    } else if (ch >= 'A' && ch <= 'Z') {
      current.push_back(static_cast<char>(ch - 'A' + 'a'));
    } else if (!current.empty()) {
      storage.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) storage.push_back(std::move(current));
  return {storage.begin(), storage.end()};
}

std::uint64_t simhash(std::string_view text, std::uint64_t seed) {
  std::vector<std::string> storage;
  const auto tokens = tokenize(text, storage);
  if (tokens.empty()) return 0;
  std::array<std::int64_t, 64> weights{};
  for (std::string_view token : tokens) {
    const std::uint64_t h = xxh64(token, seed);
    for (int bit = 0; bit < 64; ++bit) weights[bit] += ((h >> bit) & 1U) ? 1 : -1;
  }
  std::uint64_t bits = 0;
  for (int bit = 0; bit < 64; ++bit) {
    if (weights[bit] > 0) bits |= std::uint64_t{1} << bit;
  }
  return bits;
}

SimHashSignature simhash_signature(const Instruction& instruction, std::uint64_t seed) {
  return {simhash(instruction.dialogue_text(), seed), instruction.id};
}

int hamming_cutoff(double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw ValidationError(kModule, "similarity threshold must lie in (0, 1], got " +
                                       detail::format_double(threshold));
  }
  return static_cast<int>(std::floor(64.0 * (1.0 - threshold) + 1e-9));
}

namespace {

// Splits 64 bits into `bands` contiguous chunks whose widths differ by at most
// one. Two signatures within Hamming distance bands-1 agree on some chunk.
std::vector<std::pair<int, int>> band_layout(int bands) {
  std::vector<std::pair<int, int>> layout;
  int offset = 0;
  for (int b = 0; b < bands; ++b) {
    const int width = 64 / bands + (b < 64 % bands ? 1 : 0);
    layout.emplace_back(offset, width);
    offset += width;
  }
  return layout;
}

inline std::uint64_t chunk(std::uint64_t bits, std::pair<int, int> band) {
  const auto [offset, width] = band;
  const std::uint64_t mask = width == 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << width) - 1);
  return (bits >> offset) & mask;
}

}  // namespace

std::vector<DedupDecision> dedup_signatures(const std::vector<std::uint64_t>& signatures,
                                            int cutoff, bool full_scan) {
  std::vector<DedupDecision> decisions;
  const int bands = cutoff + 1;
  if (full_scan || bands > 64) {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < signatures.size(); ++i) {
      bool removed = false;
      for (std::size_t k : kept) {
        const int d = hamming(signatures[i], signatures[k]);
        if (d <= cutoff) {
          decisions.push_back({k, i, d});
          removed = true;
          break;
        }
      }
      if (!removed) kept.push_back(i);
    }
    return decisions;
  }

  const auto layout = band_layout(bands);
  std::vector<std::unordered_map<std::uint64_t, std::vector<std::size_t>>> tables(layout.size());
  for (std::size_t i = 0; i < signatures.size(); ++i) {
    const std::uint64_t sig = signatures[i];
    std::size_t best = signatures.size();
    int best_distance = 0;
    for (std::size_t b = 0; b < layout.size(); ++b) {
      const auto it = tables[b].find(chunk(sig, layout[b]));
      if (it == tables[b].end()) continue;
      for (std::size_t k : it->second) {
        if (k >= best) break;  // buckets hold kept indices in increasing order
        const int d = hamming(sig, signatures[k]);
        if (d <= cutoff) {
          best = k;
          best_distance = d;
          break;
        }
      }
    }
    if (best < signatures.size()) {
      decisions.push_back({best, i, best_distance});
      continue;
    }
    for (std::size_t b = 0; b < layout.size(); ++b) {
      tables[b][chunk(sig, layout[b])].push_back(i);
    }
  }
  return decisions;
}

DedupResult deduplicate(const Corpus& corpus, const DedupOptions& options) {
  const int cutoff = hamming_cutoff(options.similarity_threshold);
  const auto& items = corpus.instructions();
  std::vector<std::uint64_t> signatures(items.size());

  const unsigned threads = std::max(1U, std::min<unsigned>(options.threads, 64));
  const std::size_t per_thread = (items.size() + threads - 1) / threads;
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      signatures[i] = simhash(items[i].dialogue_text(), options.seed);
    }
  };
  if (threads == 1 || items.size() < 2 * threads) {
    work(0, items.size());
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * per_thread;
      const std::size_t end = std::min(items.size(), begin + per_thread);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  const auto decisions = dedup_signatures(signatures, cutoff, options.full_scan);
  std::vector<bool> removed(items.size(), false);
  DedupResult result;
  for (const auto& d : decisions) {
    removed[d.removed] = true;
    result.removed.push_back({items[d.kept].id, items[d.removed].id, d.hamming});
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!removed[i]) result.corpus.add(items[i], corpus.provenance()[i]);
  }
  return result;
}

void write_dedup_report(std::ostream& out, const std::vector<RemovedPair>& removed,
                        const std::string& comment) {
  if (!comment.empty()) out << comment << '\n';
  out << "kept_id,removed_id,hamming\n";
  for (const auto& r : removed) {
    out << detail::csv_field(r.kept_id) << ',' << detail::csv_field(r.removed_id) << ','
        << r.hamming << '\n';
  }
}

// ---------------------------------------------------------------------------
// Contamination.

ContaminationResult filter_contamination(const Corpus& corpus,
                                         const std::vector<std::string>& benchmark_prompts,
                                         EmbeddingProvider& embedder,
                                         const ContaminationOptions& options) {
  if (!(options.cosine_threshold >= -1.0 && options.cosine_threshold <= 1.0)) {
    throw ValidationError(kModule, "cosine threshold must lie in [-1, 1]");
  }
  ContaminationResult result;
  if (benchmark_prompts.empty()) {
    result.corpus = corpus;
    return result;
  }

  std::vector<Embedding> bench;
  try {
    bench = embedder.embed(benchmark_prompts);
  } catch (const UpstreamError& e) {
    throw UpstreamError(kModule, std::string("embedding benchmark prompts: ") + e.what(), 0);
  }
  if (bench.size() != benchmark_prompts.size()) {
    throw UpstreamError(kModule, "embedder returned a wrong number of vectors", 0);
  }

  const auto& items = corpus.instructions();
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t start = 0; start < items.size(); start += batch) {
    const std::size_t end = std::min(items.size(), start + batch);
    std::vector<std::string> texts;
    texts.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) texts.push_back(items[i].prompt_text());
    std::vector<Embedding> vectors;
    try {
      vectors = embedder.embed(texts);
    } catch (const UpstreamError& e) {
      throw UpstreamError(kModule,
                          "embedding failed after screening " + std::to_string(start) + " of " +
                              std::to_string(items.size()) + " instructions: " + e.what(),
                          start);
    }
    if (vectors.size() != texts.size()) {
      throw UpstreamError(kModule, "embedder returned a wrong number of vectors", start);
    }
    for (std::size_t i = start; i < end; ++i) {
      double best = -2.0;
      std::size_t best_index = 0;
      for (std::size_t b = 0; b < bench.size(); ++b) {
        const double c = cosine(vectors[i - start], bench[b]);
        if (c > best) {
          best = c;
          best_index = b;
        }
      }
      if (best > options.cosine_threshold) {
        result.excluded.push_back({items[i].id, best, best_index});
      } else {
        result.corpus.add(items[i], corpus.provenance()[i]);
      }
    }
  }
  return result;
}

std::vector<std::string> load_benchmark_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(kModule, "cannot open benchmark prompts " + path);
  std::vector<std::string> prompts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    if (trimmed.front() == '{') {
      try {
        const json obj = json::parse(trimmed);
        if (obj.contains("prompt")) {
          prompts.push_back(obj.at("prompt").get<std::string>());
        } else if (obj.contains("text")) {
          prompts.push_back(obj.at("text").get<std::string>());
        } else {
          throw ValidationError(kModule, path + ":" + std::to_string(line_no) +
                                             ": expected a \"prompt\" or \"text\" field");
        }
      } catch (const json::exception& e) {
        throw ValidationError(kModule, path + ":" + std::to_string(line_no) + ": " + e.what());
      }
    } else {
      prompts.push_back(line);
    }
  }
  return prompts;
}

}  // namespace instopt
