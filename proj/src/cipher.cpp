#include "unmt/cipher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <string>

#include "unmt/errors.hpp"

namespace unmt {

void CipherSpec::validate() const {
  if (vocab_size < Vocab::kReserved + 2) {
    throw ConfigError("cipher vocabulary of " + std::to_string(vocab_size) +
                      " leaves fewer than 2 content tokens after " +
                      std::to_string(Vocab::kReserved) + " reserved ids");
  }
  if (min_length == 0 || min_length > max_length) throw ConfigError("invalid sentence-length range");
  if (successors == 0) throw ConfigError("bigram grammar needs at least one successor");
  if (reorder_rate < 0 || reorder_rate > 1) throw ConfigError("reorder_rate must lie in [0, 1]");
  if (embedding_noise < 0) throw ConfigError("embedding_noise must be nonnegative");
  if (embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
}

namespace {

struct BigramGrammar {
  std::vector<std::discrete_distribution<std::size_t>> next;
  std::vector<std::vector<std::size_t>> next_ids;
  std::discrete_distribution<std::size_t> start;
};

BigramGrammar make_grammar(std::size_t content, std::size_t successors, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> weight(1.0);
  BigramGrammar g;
  std::vector<std::size_t> all(content);
  std::iota(all.begin(), all.end(), 0);
  const std::size_t fan = std::min(successors, content);
  for (std::size_t c = 0; c < content; ++c) {
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<std::size_t> ids(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(fan));
    std::vector<double> w(fan);
    for (auto& x : w) x = weight(rng);
    g.next.emplace_back(w.begin(), w.end());
    g.next_ids.push_back(std::move(ids));
  }
  std::vector<double> w(content);
  for (auto& x : w) x = weight(rng);
  g.start = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  return g;
}

std::vector<Real> unit_gaussian(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<Real> normal(0.0, 1.0);
  std::vector<Real> v(dim);
  Real norm = 0;
  for (auto& x : v) {
    x = normal(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

}  // namespace

TokenSequence apply_cipher(const CipherData& data, const TokenSequence& source) {
  TokenSequence out;
  out.reserve(source.size());
  auto map = [&](int id) {
    if (Vocab::is_reserved(id)) return id;
    return data.dictionary[static_cast<std::size_t>(id) - Vocab::kReserved].second;
  };
  for (std::size_t i = 0; i < source.size();) {
    const int id = source[i];
    const bool trigger = !Vocab::is_reserved(id) &&
                         data.reorder_trigger[static_cast<std::size_t>(id) - Vocab::kReserved];
    if (trigger && i + 1 < source.size()) {
      out.push_back(map(source[i + 1]));
      out.push_back(map(id));
      i += 2;
    } else {
      out.push_back(map(id));
      ++i;
    }
  }
  return out;
}

CipherData gen_cipher_pair(const CipherSpec& spec) {
  spec.validate();
  const std::size_t content = spec.vocab_size - Vocab::kReserved;

  std::vector<std::string> source_tokens, target_tokens;
  for (std::size_t c = 0; c < content; ++c) {
    source_tokens.push_back("s" + std::to_string(c));
    target_tokens.push_back("t" + std::to_string(c));
  }
  CipherData data;
  data.vocab_source = Vocab::from_tokens(source_tokens);
  data.vocab_target = Vocab::from_tokens(target_tokens);

  std::mt19937_64 sub_rng(spec.substitution_seed);
  std::vector<std::size_t> perm(content);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), sub_rng);
  for (std::size_t c = 0; c < content; ++c) {
    data.dictionary.emplace_back(static_cast<int>(c + Vocab::kReserved),
                                 static_cast<int>(perm[c] + Vocab::kReserved));
  }
  std::bernoulli_distribution reorder(spec.reorder_rate);
  data.reorder_trigger.resize(content);
  for (std::size_t c = 0; c < content; ++c) data.reorder_trigger[c] = reorder(sub_rng);

  BigramGrammar grammar = make_grammar(content, spec.successors, spec.grammar_seed);
  std::mt19937_64 rng(spec.sample_seed);
  std::uniform_int_distribution<std::size_t> length(spec.min_length, spec.max_length);
  std::set<TokenSequence> seen;
  const std::size_t wanted = 2 * spec.train_size + 2 * spec.dev_size + spec.test_size;
  std::size_t attempts = 0;
  auto sample = [&]() {
    for (;;) {
      if (++attempts > 50 * wanted + 1000) {
        throw ConfigError("cipher grammar cannot produce enough distinct sentences");
      }
      TokenSequence s;
      const std::size_t n = length(rng);
      std::size_t c = grammar.start(rng);
      s.push_back(static_cast<int>(c + Vocab::kReserved));
      while (s.size() < n) {
        c = grammar.next_ids[c][grammar.next[c](rng)];
        s.push_back(static_cast<int>(c + Vocab::kReserved));
      }
      if (seen.insert(s).second) return s;
    }
  };

  // Every split draws fresh underlying sentences, so all of them are disjoint
  // and the two training sides share no underlying sentence.
  data.train_source.lang = data.dev_source.lang = Lang::Source;
  data.train_target.lang = data.dev_target.lang = Lang::Target;
  for (std::size_t i = 0; i < spec.train_size; ++i) data.train_source.sentences.push_back(sample());
  for (std::size_t i = 0; i < spec.train_size; ++i)
    data.train_target.sentences.push_back(apply_cipher(data, sample()));
  for (std::size_t i = 0; i < spec.dev_size; ++i) data.dev_source.sentences.push_back(sample());
  for (std::size_t i = 0; i < spec.dev_size; ++i)
    data.dev_target.sentences.push_back(apply_cipher(data, sample()));
  for (std::size_t i = 0; i < spec.test_size; ++i) {
    TokenSequence s = sample();
    TokenSequence t = apply_cipher(data, s);
    data.test.pairs.push_back({std::move(s), std::move(t)});
  }

  // Shared space by construction: a gold pair starts from the same vector.
  std::mt19937_64 emb_rng(spec.embedding_seed);
  std::normal_distribution<Real> noise(0.0, spec.embedding_noise /
                                                std::sqrt(static_cast<Real>(spec.embedding_dim)));
  const std::size_t k = spec.embedding_dim;
  std::vector<Real> src(spec.vocab_size * k, 0.0), tgt(spec.vocab_size * k, 0.0);
  for (int id = 1; id < static_cast<int>(Vocab::kReserved); ++id) {
    auto v = fallback_vector(data.vocab_source.token(id), k, spec.embedding_seed);
    std::copy(v.begin(), v.end(), src.begin() + id * static_cast<int>(k));
    std::copy(v.begin(), v.end(), tgt.begin() + id * static_cast<int>(k));
  }
  for (std::size_t c = 0; c < content; ++c) {
    auto v = unit_gaussian(k, emb_rng);
    const std::size_t s_row = c + Vocab::kReserved, t_row = perm[c] + Vocab::kReserved;
    for (std::size_t j = 0; j < k; ++j) {
      src[s_row * k + j] = v[j];
      tgt[t_row * k + j] = v[j] + (spec.embedding_noise > 0 ? noise(emb_rng) : 0.0);
    }
  }
  EmbeddingTable es, et;
  es.matrix = Tensor::from_values({spec.vocab_size, k}, std::move(src));
  et.matrix = Tensor::from_values({spec.vocab_size, k}, std::move(tgt));
  data.embeddings_source = normalize_embeddings(es);
  data.embeddings_target = normalize_embeddings(et);
  return data;
}

}  // namespace unmt
