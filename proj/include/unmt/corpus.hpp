#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unmt/vocab.hpp"

namespace unmt {

std::vector<std::string> tokenize(std::string_view line);

struct TextCorpus {
  std::vector<std::vector<std::string>> sentences;
  std::size_t dropped_long = 0;
  std::size_t dropped_empty = 0;
};

// One sentence per line, whitespace-tokenised. Lines with more than
// `max_length` tokens are dropped and counted.
TextCorpus read_text_corpus(const std::filesystem::path& path, std::size_t max_length = 50);

// Monolingual sentences of one language. Unsupervised training only ever sees
// this type, so no alignment can leak in.
struct MonolingualCorpus {
  Lang lang = Lang::Source;
  std::vector<TokenSequence> sentences;
  std::size_t dropped_long = 0;

  std::size_t size() const { return sentences.size(); }
  bool empty() const { return sentences.empty(); }
};

struct SentencePair {
  TokenSequence source;
  TokenSequence target;
};

// Aligned pairs; used by the supervised baseline, test sets and split
// construction only.
struct ParallelCorpus {
  std::vector<SentencePair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  std::vector<TokenSequence> side(Lang lang) const;
};

MonolingualCorpus encode_corpus(const TextCorpus& text, const Vocab& vocab, Lang lang);
MonolingualCorpus load_monolingual(const std::filesystem::path& path, const Vocab& vocab, Lang lang,
                                   std::size_t max_length = 50);
void write_sentences(const std::filesystem::path& path, const std::vector<TokenSequence>& sentences,
                     const Vocab& vocab);

// Source sides of a seeded random `fraction` of the pairs and target sides of
// the complement, so no pair contributes both sides.
std::pair<MonolingualCorpus, MonolingualCorpus> make_nonparallel_split(const ParallelCorpus& pairs,
                                                                        double fraction,
                                                                        std::uint64_t seed);

// Moves `count` seeded-random sentences out of `corpus` into the returned
// held-out corpus.
MonolingualCorpus hold_out(MonolingualCorpus& corpus, std::size_t count, std::uint64_t seed);

}  // namespace unmt
