#pragma once

#include <cstdint>
#include <vector>

#include "unmt/ops.hpp"
#include "unmt/vocab.hpp"

namespace unmt {

// Local shuffling schedule: displacement bound k * (floor(steps / s) + 1),
// capped at the sentence length.
struct NoiseSchedule {
  std::uint64_t k = 2;
  std::uint64_t s = 100000;

  void validate() const;
};

std::size_t displacement_bound(std::uint64_t steps, std::size_t n, const NoiseSchedule& schedule);

// A random permutation of positions 0..n-1 in which no element moves more
// than `bound` places. perm[i] is the original index placed at position i.
std::vector<std::size_t> bounded_permutation(std::size_t n, std::size_t bound, Rng& rng);

TokenSequence shuffle_sentence(const TokenSequence& tokens, std::uint64_t steps,
                               const NoiseSchedule& schedule, Rng& rng);

}  // namespace unmt
