#include "unmt/vocab.hpp"

#include <algorithm>
#include <map>

#include "unmt/errors.hpp"

namespace unmt {

const char* lang_name(Lang lang) { return lang == Lang::Source ? "s" : "t"; }

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<unk>", "<s>", "</s>"}) add(t, 0);
}

void Vocab::add(const std::string& token, std::size_t count) {
  if (ids_.count(token)) throw DataError("duplicate vocabulary token '" + token + "'");
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
  counts_.push_back(count);
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& sentences, std::size_t min_count) {
  std::map<std::string, std::size_t> freq;
  for (const auto& s : sentences)
    for (const auto& t : s) ++freq[t];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [token, n] : freq) {
    if (n >= min_count) kept.emplace_back(token, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [token, n] : kept) {
    if (v.contains(token)) continue;  // a corpus may literally contain "<unk>"
    v.add(token, n);
  }
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  for (const auto& t : tokens) v.add(t, 0);
  return v;
}

int Vocab::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of " +
                    std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::size_t Vocab::count(int id) const {
  token(id);
  return counts_[static_cast<std::size_t>(id)];
}

TokenSequence Vocab::encode(const std::vector<std::string>& tokens) const {
  TokenSequence ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::vector<std::string> Vocab::decode(const TokenSequence& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

std::string Vocab::decode_line(const TokenSequence& ids) const {
  std::string line;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) line += ' ';
    line += token(ids[i]);
  }
  return line;
}

}  // namespace unmt
