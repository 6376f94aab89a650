#include "instopt/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "instopt/error.hpp"
#include "instopt/rng.hpp"

namespace instopt {

namespace {

constexpr const char* kModule = "curriculum";

using Pattern = std::array<std::size_t, kEpochs>;

// Picks `count` members of `members` uniformly at random.
std::vector<std::size_t> choose(std::vector<std::size_t> members, std::size_t count, Rng& rng) {
  rng.shuffle(members);
  members.resize(count);
  std::sort(members.begin(), members.end());
  return members;
}

}  // namespace

EpochCounts epoch_schedule(std::size_t n_pre, std::size_t n_inter, std::size_t n_sub,
                           std::size_t shift) {
  if (shift > n_pre) {
    throw ValidationError(kModule, "shift " + std::to_string(shift) +
                                       " exceeds the preliminary count " + std::to_string(n_pre));
  }
  if (n_sub < shift) {
    throw ValidationError(kModule, "subsequential count " + std::to_string(n_sub) +
                                       " is smaller than the shift " + std::to_string(shift) +
                                       "; epoch 1 would need a negative subsequential count");
  }
  EpochCounts t{};
  t[0] = {n_pre + shift, n_inter, n_sub - shift};
  t[1] = {n_pre, n_inter, n_sub};
  t[2] = {n_pre - shift, n_inter, n_sub + shift};
  return t;
}

CurriculumPlan plan_curriculum(const Corpus& d, const Taxonomy& taxonomy, std::uint64_t seed,
                               double shift_fraction) {
  if (!(shift_fraction >= 0.0 && shift_fraction <= 1.0)) {
    throw ValidationError(kModule, "shift fraction must lie in [0, 1]");
  }
  CurriculumPlan plan;
  plan.seed = seed;
  plan.shift_fraction = shift_fraction;
  plan.layers.reserve(d.size());
  for (const auto& ins : d.instructions()) {
    if (!ins.category) {
      throw ValidationError(kModule, "instruction \"" + ins.id + "\" has no category");
    }
    const auto layer = taxonomy.layer_of(*ins.category);
    if (!layer) {
      throw ValidationError(kModule, "category \"" + *ins.category + "\" of instruction \"" +
                                         ins.id + "\" is not in the taxonomy");
    }
    plan.layers.push_back(*layer);
    switch (*layer) {
      case Taxonomy::Layer::preliminary: ++plan.n_pre; break;
      case Taxonomy::Layer::intermediary: ++plan.n_inter; break;
      case Taxonomy::Layer::subsequential: ++plan.n_sub; break;
    }
  }
  plan.shift = static_cast<std::size_t>(
      std::floor(shift_fraction * static_cast<double>(plan.n_pre) + 1e-9));
  plan.epoch_counts = epoch_schedule(plan.n_pre, plan.n_inter, plan.n_sub, plan.shift);
  return plan;
}

TrainingSequence emit_sequence(const CurriculumPlan& plan, const Corpus& d) {
  if (plan.layers.size() != d.size()) {
    throw ValidationError(kModule, "plan was built for a corpus of " +
                                       std::to_string(plan.layers.size()) + " instructions, got " +
                                       std::to_string(d.size()));
  }
  std::vector<std::size_t> pre, sub;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (plan.layers[i] == Taxonomy::Layer::preliminary) pre.push_back(i);
    if (plan.layers[i] == Taxonomy::Layer::subsequential) sub.push_back(i);
  }
  if (pre.size() != plan.n_pre || sub.size() != plan.n_sub) {
    throw ValidationError(kModule, "plan layer counts do not match its layer list");
  }

  Rng rng(plan.seed);
  std::vector<Pattern> pattern(d.size(), Pattern{1, 1, 1});
  for (std::size_t i : choose(pre, plan.shift, rng)) pattern[i] = {2, 1, 0};
  for (std::size_t i : choose(sub, plan.shift, rng)) pattern[i] = {0, 1, 2};

  TrainingSequence seq;
  seq.entries.reserve(d.size() * kEpochs);
  std::vector<std::size_t> seen(d.size(), 0);
  for (std::size_t e = 0; e < kEpochs; ++e) {
    seq.epoch_starts.push_back(seq.entries.size());
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < d.size(); ++i) {
      for (std::size_t c = 0; c < pattern[i][e]; ++c) slots.push_back(i);
    }
    rng.shuffle(slots);
    for (std::size_t i : slots) seq.entries.push_back({i, e + 1, seen[i]++});
  }
  return seq;
}

TrainingSequence emit_mix_plus(const Corpus& d, const Corpus& pool, const Taxonomy& taxonomy,
                               std::uint64_t seed) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& category = pool[i].category;
    if (category && taxonomy.layer_of(*category) == Taxonomy::Layer::preliminary) {
      candidates.push_back(i);
    }
  }
  const std::size_t extra = 2 * d.size();
  if (candidates.size() < extra) {
    throw ValidationError(kModule, "Mix+ needs " + std::to_string(extra) +
                                       " preliminary pool instructions, pool has " +
                                       std::to_string(candidates.size()));
  }
  Rng rng(seed);
  rng.shuffle(candidates);
  candidates.resize(extra);

  TrainingSequence seq;
  seq.entries.reserve(3 * d.size() + extra);
  std::vector<std::size_t> seen(d.size() + pool.size(), 0);
  std::size_t offset = 0;
  for (std::size_t e = 0; e < kEpochs; ++e) {
    seq.epoch_starts.push_back(seq.entries.size());
    const std::size_t share = extra / kEpochs + (e < extra % kEpochs ? 1 : 0);
    std::vector<std::size_t> slots(d.size());
    std::iota(slots.begin(), slots.end(), 0);
    for (std::size_t k = 0; k < share; ++k) slots.push_back(d.size() + candidates[offset + k]);
    offset += share;
    rng.shuffle(slots);
    for (std::size_t i : slots) seq.entries.push_back({i, e + 1, seen[i]++});
  }
  return seq;
}

void write_sequence(std::ostream& out, const TrainingSequence& seq, const Corpus& d,
                    const Corpus* pool, const std::string& header_json) {
  if (!header_json.empty()) out << header_json << '\n';
  for (const auto& entry : seq.entries) {
    const Instruction* ins = nullptr;
    if (entry.index < d.size()) {
      ins = &d[entry.index];
    } else if (pool && entry.index - d.size() < pool->size()) {
      ins = &(*pool)[entry.index - d.size()];
    } else {
      throw ValidationError(kModule, "sequence index " + std::to_string(entry.index) +
                                         " is out of range");
    }
    auto record = nlohmann::ordered_json::parse(instruction_to_json(*ins));
    record["epoch"] = entry.epoch;
    record["copy_index"] = entry.copy_index;
    out << record.dump() << '\n';
  }
}

std::string plan_metadata_json(const CurriculumPlan& plan, const std::string& provenance_json) {
  nlohmann::ordered_json j;
  if (!provenance_json.empty()) j["provenance"] = nlohmann::json::parse(provenance_json);
  j["n_pre"] = plan.n_pre;
  j["n_inter"] = plan.n_inter;
  j["n_sub"] = plan.n_sub;
  j["shift"] = plan.shift;
  j["shift_fraction"] = plan.shift_fraction;
  j["seed"] = plan.seed;
  auto table = nlohmann::ordered_json::array();
  for (std::size_t e = 0; e < kEpochs; ++e) {
    table.push_back({{"epoch", e + 1},
                     {"preliminary", plan.epoch_counts[e][0]},
                     {"intermediary", plan.epoch_counts[e][1]},
                     {"subsequential", plan.epoch_counts[e][2]}});
  }
  j["epoch_counts"] = table;
  j["correction_notice"] =
      "Epoch 2 and 3 counts use (N_pre, N_inter, N_sub) and (N_pre - s, N_inter, N_sub + s) so "
      "that every epoch holds |D| instructions and each instruction appears exactly three times; "
      "the original printed formulas for these blocks do not conserve counts.";
  return j.dump(2);
}

}  // namespace instopt
