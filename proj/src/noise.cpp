#include "unmt/noise.hpp"

#include <algorithm>
#include <numeric>

#include "unmt/errors.hpp"

namespace unmt {

void NoiseSchedule::validate() const {
  if (k < 1 || s < 1) throw ConfigError("noise schedule needs k >= 1 and s >= 1");
}

std::size_t displacement_bound(std::uint64_t steps, std::size_t n, const NoiseSchedule& schedule) {
  schedule.validate();
  const std::uint64_t raw = schedule.k * (steps / schedule.s + 1);
  return static_cast<std::size_t>(std::min<std::uint64_t>(raw, n));
}

std::vector<std::size_t> bounded_permutation(std::size_t n, std::size_t bound, Rng& rng) {
  std::uniform_real_distribution<double> offset(0.0, static_cast<double>(bound) + 1.0);
  std::vector<double> keys(n);
  std::vector<std::size_t> perm(n);
  for (;;) {
    for (std::size_t i = 0; i < n; ++i) keys[i] = static_cast<double>(i) + offset(rng);
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(),
                     [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      const std::size_t d = perm[i] > i ? perm[i] - i : i - perm[i];
      ok = d <= bound;
    }
    if (ok) return perm;
  }
}

TokenSequence shuffle_sentence(const TokenSequence& tokens, std::uint64_t steps,
                               const NoiseSchedule& schedule, Rng& rng) {
  if (tokens.empty()) throw DataError("cannot shuffle an empty sentence");
  const auto perm = bounded_permutation(tokens.size(), displacement_bound(steps, tokens.size(), schedule), rng);
  TokenSequence out(tokens.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out[i] = tokens[perm[i]];
  return out;
}

}  // namespace unmt
