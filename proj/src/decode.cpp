#include "unmt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <unordered_map>

#include "unmt/errors.hpp"

namespace unmt {
namespace {

// Decodes every row in lockstep; `choose` picks the next token of a row from
// its log-probabilities.
template <typename Choose>
std::vector<TokenSequence> decode_batch(const DualModel& model, Lang from, Lang to,
                                        std::span<const TokenSequence> batch, std::size_t max_len,
                                        Choose&& choose) {
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  std::vector<TokenSequence> out(batch.size());
  if (batch.empty()) return out;
  NoGradGuard guard;
  Latent memory = model.encode(from, batch, Mode::Eval);
  std::vector<std::size_t> rows(batch.size());
  std::iota(rows.begin(), rows.end(), 0);
  DecoderSession session(model, to, memory, rows);
  const std::size_t v = model.vocab_size(to);
  std::vector<int> last(batch.size(), Vocab::kBos);
  for (std::size_t t = 0; t < max_len && !rows.empty(); ++t) {
    auto lp = session.step(last);
    std::vector<std::size_t> keep;
    std::vector<std::size_t> still;
    std::vector<int> next;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const int token = choose(std::span<const Real>(lp).subspan(r * v, v));
      if (token == Vocab::kEos) continue;
      out[rows[r]].push_back(token);
      keep.push_back(r);
      still.push_back(rows[r]);
      next.push_back(token);
    }
    if (keep.size() != rows.size()) session.select(keep);
    rows = std::move(still);
    last = std::move(next);
  }
  return out;
}

int argmax(std::span<const Real> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

std::vector<TokenSequence> greedy_decode(const DualModel& model, Lang from,
                                         std::span<const TokenSequence> batch, std::size_t max_len) {
  return decode_batch(model, from, other(from), batch, max_len, argmax);
}

std::vector<TokenSequence> greedy_reconstruct(const DualModel& model, Lang lang,
                                              std::span<const TokenSequence> batch, std::size_t max_len) {
  return decode_batch(model, lang, lang, batch, max_len, argmax);
}

TokenSequence greedy_decode(const DualModel& model, Lang from, const TokenSequence& source,
                            std::size_t max_len) {
  return greedy_decode(model, from, std::span<const TokenSequence>(&source, 1), max_len).front();
}

std::vector<TokenSequence> sample_decode(const DualModel& model, Lang from,
                                         std::span<const TokenSequence> batch, std::size_t max_len,
                                         Rng& rng) {
  std::uniform_real_distribution<Real> unit(0.0, 1.0);
  return decode_batch(model, from, other(from), batch, max_len, [&](std::span<const Real> row) {
    Real u = unit(rng);
    for (std::size_t i = 0; i < row.size(); ++i) {
      u -= std::exp(row[i]);
      if (u <= 0) return static_cast<int>(i);
    }
    return argmax(row);
  });
}

Real length_penalty(std::size_t length, Real alpha) {
  if (length == 0) throw ContractError("length_penalty: length must be at least 1");
  return std::pow((5.0 + static_cast<Real>(length)) / 6.0, alpha);
}

Hypothesis beam_search(StepScorer& scorer, std::size_t beam, Real alpha, std::size_t max_len) {
  if (beam < 1) throw ConfigError("beam size must be at least 1");
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  const std::size_t v = scorer.vocab_size();
  std::vector<Hypothesis> alive(1), finished;
  std::vector<std::size_t> parents{0};
  std::vector<int> tokens{Vocab::kBos};

  struct Candidate {
    Real log_prob;
    std::size_t parent;
    int token;
  };
  for (std::size_t t = 0; t < max_len; ++t) {
    auto lp = scorer.advance(parents, tokens);
    std::vector<Candidate> candidates;
    candidates.reserve(alive.size() * v);
    for (std::size_t h = 0; h < alive.size(); ++h) {
      for (std::size_t w = 0; w < v; ++w) {
        const Real l = lp[h * v + w];
        if (l == -std::numeric_limits<Real>::infinity()) continue;
        candidates.push_back({alive[h].log_prob + l, h, static_cast<int>(w)});
      }
    }
    const std::size_t keep = std::min(candidates.size(), 2 * beam);
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    parents.clear();
    tokens.clear();
    for (std::size_t rank = 0; rank < keep && next.size() < beam; ++rank) {
      const Candidate& c = candidates[rank];
      if (c.token == Vocab::kEos) {
        if (rank < beam) {
          Hypothesis done{alive[c.parent].tokens, c.log_prob, true, 0};
          done.score = c.log_prob / length_penalty(done.tokens.size() + 1, alpha);
          finished.push_back(std::move(done));
        }
        continue;
      }
      Hypothesis h{alive[c.parent].tokens, c.log_prob, false, 0};
      h.tokens.push_back(c.token);
      next.push_back(std::move(h));
      parents.push_back(c.parent);
      tokens.push_back(c.token);
    }
    alive = std::move(next);
    if (finished.size() >= beam || alive.empty()) break;
  }
  if (finished.size() < beam) {
    for (auto& h : alive) {
      h.score = h.log_prob / length_penalty(std::max<std::size_t>(h.tokens.size(), 1), alpha);
      finished.push_back(std::move(h));
    }
  }
  if (finished.empty()) return Hypothesis{{}, -std::numeric_limits<Real>::infinity(), true, -std::numeric_limits<Real>::infinity()};
  auto best = std::max_element(finished.begin(), finished.end(),
                               [](const Hypothesis& a, const Hypothesis& b) { return a.score < b.score; });
  return *best;
}

namespace {

class ModelScorer final : public StepScorer {
 public:
  ModelScorer(const DualModel& model, Lang to, const Latent& memory)
      : to_(to), v_(model.vocab_size(to)), session_(model, to, memory, {0}) {}

  std::size_t vocab_size() const override { return v_; }

  std::vector<Real> advance(std::span<const std::size_t> parents, std::span<const int> tokens) override {
    const bool identity = parents.size() == session_.rows() &&
                          std::is_sorted(parents.begin(), parents.end()) &&
                          (parents.empty() || parents.back() == parents.size() - 1);
    if (!identity) session_.select(parents);
    return session_.step(tokens);
  }

 private:
  Lang to_;
  std::size_t v_;
  DecoderSession session_;
};

}  // namespace

TokenSequence beam_search(const DualModel& model, Lang from, const TokenSequence& source,
                          std::size_t beam, Real alpha, std::size_t max_len) {
  if (beam < 1) throw ConfigError("beam size must be at least 1");
  NoGradGuard guard;
  Latent memory = model.encode(from, source, Mode::Eval);
  ModelScorer scorer(model, other(from), memory);
  return beam_search(scorer, beam, alpha, max_len).tokens;
}

namespace {

using NgramCounts = std::map<std::vector<int>, std::size_t>;

NgramCounts ngrams(const TokenSequence& s, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++counts[std::vector<int>(s.begin() + static_cast<std::ptrdiff_t>(i),
                              s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

BleuStats bleu_stats(std::span<const TokenSequence> hypotheses,
                     std::span<const TokenSequence> references) {
  if (hypotheses.size() != references.size()) {
    throw ContractError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                        std::to_string(references.size()) + " references");
  }
  std::size_t matched[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
  BleuStats stats;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& hyp = hypotheses[i];
    const auto& ref = references[i];
    stats.hypothesis_length += hyp.size();
    stats.reference_length += ref.size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const NgramCounts h = ngrams(hyp, n), r = ngrams(ref, n);
      for (const auto& [gram, count] : h) {
        auto it = r.find(gram);
        if (it != r.end()) matched[n - 1] += std::min(count, it->second);
        total[n - 1] += count;
      }
    }
  }
  Real log_sum = 0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    stats.precisions[n] = total[n] ? static_cast<Real>(matched[n]) / static_cast<Real>(total[n]) : 0.0;
    if (matched[n] == 0) zero = true;
    else log_sum += std::log(stats.precisions[n]);
  }
  const Real c = static_cast<Real>(stats.hypothesis_length);
  const Real r = static_cast<Real>(stats.reference_length);
  stats.ratio = r > 0 ? c / r : 0.0;
  stats.brevity_penalty = c == 0 ? 0.0 : (c > r ? 1.0 : std::exp(1.0 - r / c));
  stats.bleu = zero ? 0.0 : 100.0 * stats.brevity_penalty * std::exp(log_sum / 4.0);
  return stats;
}

Real bleu(std::span<const TokenSequence> hypotheses, std::span<const TokenSequence> references) {
  return bleu_stats(hypotheses, references).bleu;
}

BleuStats bleu_stats(const std::vector<std::vector<std::string>>& hypotheses,
                     const std::vector<std::vector<std::string>>& references) {
  std::unordered_map<std::string, int> ids;
  auto encode = [&](const std::vector<std::vector<std::string>>& lines) {
    std::vector<TokenSequence> out;
    out.reserve(lines.size());
    for (const auto& line : lines) {
      TokenSequence s;
      for (const auto& token : line) s.push_back(ids.try_emplace(token, static_cast<int>(ids.size())).first->second);
      out.push_back(std::move(s));
    }
    return out;
  };
  auto h = encode(hypotheses);
  auto r = encode(references);
  return bleu_stats(h, r);
}

std::string BleuStats::report() const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "BLEU = %.2f, %.1f/%.1f/%.1f/%.1f (BP=%.3f, ratio=%.3f, hyp_len=%zu, ref_len=%zu)", bleu,
                100 * precisions[0], 100 * precisions[1], 100 * precisions[2], 100 * precisions[3],
                brevity_penalty, ratio, hypothesis_length, reference_length);
  return buf;
}

}  // namespace unmt
