#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "instopt/corpus.hpp"
#include "instopt/taxonomy.hpp"

namespace instopt {

inline constexpr std::size_t kEpochs = 3;

// Rows are epochs, columns are layers (preliminary, intermediary, subsequential).
using EpochCounts = std::array<std::array<std::size_t, 3>, kEpochs>;

struct CurriculumPlan {
  std::size_t n_pre = 0;
  std::size_t n_inter = 0;
  std::size_t n_sub = 0;
  std::size_t shift = 0;
  double shift_fraction = 0.5;
  EpochCounts epoch_counts{};
  std::uint64_t seed = 0;
  // Layer of each instruction in D, by corpus index.
  std::vector<Taxonomy::Layer> layers;

  std::size_t base_size() const noexcept { return n_pre + n_inter + n_sub; }
};

// Epoch table for the given layer sizes; throws ValidationError when
// n_sub < shift.
EpochCounts epoch_schedule(std::size_t n_pre, std::size_t n_inter, std::size_t n_sub,
                           std::size_t shift);

CurriculumPlan plan_curriculum(const Corpus& d, const Taxonomy& taxonomy,
                               std::uint64_t seed, double shift_fraction = 0.5);

struct SequenceEntry {
  std::size_t index = 0;       // into the corpus the sequence was built from
  std::size_t epoch = 1;       // 1-based
  std::size_t copy_index = 0;  // occurrence number of this instruction, 0-based
};

struct TrainingSequence {
  std::vector<SequenceEntry> entries;
  std::vector<std::size_t> epoch_starts;  // offset of each epoch in entries
};

TrainingSequence emit_sequence(const CurriculumPlan& plan, const Corpus& d);

// Three epochs of D, each with an equal share (within one) of 2|D|
// preliminary instructions sampled without replacement from `pool`. Entries
// with index >= |D| refer to pool[index - |D|].
TrainingSequence emit_mix_plus(const Corpus& d, const Corpus& pool,
                               const Taxonomy& taxonomy, std::uint64_t seed);

// JSON Lines in training order with injected `epoch` and `copy_index`.
// `pool` resolves indices past the end of `d` (Mix+ sequences).
void write_sequence(std::ostream& out, const TrainingSequence& seq, const Corpus& d,
                    const Corpus* pool = nullptr, const std::string& header_json = {});

// Plan metadata (counts table, seed, shift fraction, correction notice).
std::string plan_metadata_json(const CurriculumPlan& plan,
                               const std::string& provenance_json = {});

}  // namespace instopt
