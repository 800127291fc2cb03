#include "unmt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "unmt/errors.hpp"

namespace unmt {

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) tokens.emplace_back(line.substr(start, i - start));
  }
  return tokens;
}

std::vector<TokenSequence> ParallelCorpus::side(Lang lang) const {
  std::vector<TokenSequence> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(lang == Lang::Source ? p.source : p.target);
  return out;
}

TextCorpus read_text_corpus(const std::filesystem::path& path, std::size_t max_length) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read corpus " + path.string());
  TextCorpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    auto tokens = tokenize(line);
    if (tokens.empty()) {
      ++corpus.dropped_empty;
    } else if (tokens.size() > max_length) {
      ++corpus.dropped_long;
    } else {
      corpus.sentences.push_back(std::move(tokens));
    }
  }
  if (in.bad()) throw IoError("error reading " + path.string());
  return corpus;
}

MonolingualCorpus encode_corpus(const TextCorpus& text, const Vocab& vocab, Lang lang) {
  MonolingualCorpus corpus;
  corpus.lang = lang;
  corpus.dropped_long = text.dropped_long;
  corpus.sentences.reserve(text.sentences.size());
  for (const auto& s : text.sentences) corpus.sentences.push_back(vocab.encode(s));
  return corpus;
}

MonolingualCorpus load_monolingual(const std::filesystem::path& path, const Vocab& vocab, Lang lang,
                                   std::size_t max_length) {
  return encode_corpus(read_text_corpus(path, max_length), vocab, lang);
}

void write_sentences(const std::filesystem::path& path, const std::vector<TokenSequence>& sentences,
                     const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& s : sentences) out << vocab.decode_line(s) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::pair<MonolingualCorpus, MonolingualCorpus> make_nonparallel_split(const ParallelCorpus& pairs,
                                                                        double fraction,
                                                                        std::uint64_t seed) {
  if (pairs.empty()) throw DataError("cannot split an empty parallel corpus");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto cut = static_cast<std::size_t>(fraction * static_cast<double>(pairs.size()) + 0.5);
  MonolingualCorpus source, target;
  source.lang = Lang::Source;
  target.lang = Lang::Target;
  std::vector<std::size_t> first(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  std::sort(first.begin(), first.end());
  std::sort(rest.begin(), rest.end());
  for (auto i : first) source.sentences.push_back(pairs.pairs[i].source);
  for (auto i : rest) target.sentences.push_back(pairs.pairs[i].target);
  return {std::move(source), std::move(target)};
}

MonolingualCorpus hold_out(MonolingualCorpus& corpus, std::size_t count, std::uint64_t seed) {
  if (count > corpus.size()) throw ConfigError("held-out size exceeds the corpus");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> taken(corpus.size(), false);
  for (std::size_t i = 0; i < count; ++i) taken[order[i]] = true;
  MonolingualCorpus held;
  held.lang = corpus.lang;
  std::vector<TokenSequence> kept;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    (taken[i] ? held.sentences : kept).push_back(std::move(corpus.sentences[i]));
  }
  corpus.sentences = std::move(kept);
  return held;
}

}  // namespace unmt
