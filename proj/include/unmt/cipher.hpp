#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "unmt/corpus.hpp"
#include "unmt/embeddings.hpp"

namespace unmt {

// A synthetic language pair. Source sentences come from a seeded bigram
// grammar; the target language is a token substitution of it, optionally with
// local reordering so that word-by-word translation is not already perfect.
struct CipherSpec {
  // Per-language vocabulary size, reserved ids included.
  std::size_t vocab_size = 100;
  std::size_t min_length = 4;
  std::size_t max_length = 12;
  // Out-degree of the bigram grammar.
  std::size_t successors = 6;
  std::uint64_t grammar_seed = 11;
  std::uint64_t substitution_seed = 12;
  std::uint64_t sample_seed = 13;
  std::size_t train_size = 20000;
  std::size_t dev_size = 300;
  std::size_t test_size = 300;
  // Fraction of source content tokens that swap places with the following
  // token on the target side. 0 gives a pure substitution cipher.
  double reorder_rate = 0.0;
  std::size_t embedding_dim = 64;
  // Expected norm of the Gaussian noise added to each target vector; source
  // vectors have unit norm.
  double embedding_noise = 0.0;
  std::uint64_t embedding_seed = 14;

  void validate() const;
};

struct CipherData {
  Vocab vocab_source;
  Vocab vocab_target;
  MonolingualCorpus train_source;
  MonolingualCorpus train_target;
  MonolingualCorpus dev_source;
  MonolingualCorpus dev_target;
  // Gold-aligned test pairs (source sentence, its cipher).
  ParallelCorpus test;
  // Gold dictionary: source content id -> target content id.
  std::vector<std::pair<int, int>> dictionary;
  EmbeddingTable embeddings_source;
  EmbeddingTable embeddings_target;
  // Source content ids that trigger a swap on the target side.
  std::vector<bool> reorder_trigger;
};

CipherData gen_cipher_pair(const CipherSpec& spec);

// Maps a source sentence onto the target language with the data's gold
// substitution and reordering rule.
TokenSequence apply_cipher(const CipherData& data, const TokenSequence& source);

}  // namespace unmt
