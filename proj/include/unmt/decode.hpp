#pragma once

#include <span>
#include <string>
#include <vector>

#include "unmt/dual_model.hpp"

namespace unmt {

// Greedy decoding of a batch from `from` into the other language. Stops a
// row at </s> (not included in the output) or after max_len tokens.
std::vector<TokenSequence> greedy_decode(const DualModel& model, Lang from,
                                         std::span<const TokenSequence> batch, std::size_t max_len);
TokenSequence greedy_decode(const DualModel& model, Lang from, const TokenSequence& source,
                            std::size_t max_len);
// Greedy decoding back into the input language (the auto-encoder path).
std::vector<TokenSequence> greedy_reconstruct(const DualModel& model, Lang lang,
                                              std::span<const TokenSequence> batch, std::size_t max_len);

// Ancestral sampling at temperature 1, same stopping rule as greedy.
std::vector<TokenSequence> sample_decode(const DualModel& model, Lang from,
                                         std::span<const TokenSequence> batch, std::size_t max_len,
                                         Rng& rng);

// ((5 + len) / 6)^alpha.
Real length_penalty(std::size_t length, Real alpha);

// Next-token scorer driven by beam search. `advance` first keeps the rows
// listed in `parents` (in that order), appends one token to each, and
// returns log-probabilities [rows x vocab] for the following token.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::vector<Real> advance(std::span<const std::size_t> parents,
                                    std::span<const int> tokens) = 0;
};

struct Hypothesis {
  TokenSequence tokens;
  Real log_prob = 0;
  bool finished = false;
  // log_prob / length_penalty, the final ranking key.
  Real score = 0;
};

// Keeps `beam` live hypotheses; each step ranks the 2*beam best expansions,
// moves those among the top `beam` that end in </s> to the finished pool and
// continues with the best non-final ones. Stops once `beam` hypotheses have
// finished, nothing is alive, or max_len tokens were generated. Hypotheses
// still alive at the end are scored as they are. Returns the best finished
// hypothesis; its tokens exclude </s>.
Hypothesis beam_search(StepScorer& scorer, std::size_t beam, Real alpha, std::size_t max_len);

TokenSequence beam_search(const DualModel& model, Lang from, const TokenSequence& source,
                          std::size_t beam = 4, Real alpha = 0.6, std::size_t max_len = 100);

struct BleuStats {
  Real bleu = 0;
  Real precisions[4] = {0, 0, 0, 0};
  Real brevity_penalty = 0;
  Real ratio = 0;
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;

  // "BLEU = 77.88, 100.0/100.0/100.0/100.0 (BP=0.779, ratio=0.800, hyp_len=4, ref_len=5)"
  std::string report() const;
};

// Corpus-level BLEU-4 with one reference per hypothesis, no smoothing.
BleuStats bleu_stats(std::span<const TokenSequence> hypotheses,
                     std::span<const TokenSequence> references);
Real bleu(std::span<const TokenSequence> hypotheses, std::span<const TokenSequence> references);

// Tokenised string variant used for text files.
BleuStats bleu_stats(const std::vector<std::vector<std::string>>& hypotheses,
                     const std::vector<std::vector<std::string>>& references);

}  // namespace unmt
