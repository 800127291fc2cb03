#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace unmt {

enum class Lang { Source = 0, Target = 1 };

constexpr Lang other(Lang lang) { return lang == Lang::Source ? Lang::Target : Lang::Source; }
constexpr std::size_t index_of(Lang lang) { return static_cast<std::size_t>(lang); }
const char* lang_name(Lang lang);

using TokenSequence = std::vector<int>;

// Token <-> id bijection. Ids 0..3 are reserved for padding, unknown,
// begin-of-sentence and end-of-sentence.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr std::size_t kReserved = 4;

  Vocab();

  // Keeps tokens seen at least `min_count` times, ordered by descending
  // frequency then lexicographically.
  static Vocab build(const std::vector<std::vector<std::string>>& sentences, std::size_t min_count);
  // Content tokens in the given order, after the reserved ids.
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  int id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t count(int id) const;

  TokenSequence encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const TokenSequence& ids) const;
  std::string decode_line(const TokenSequence& ids) const;

  static bool is_reserved(int id) { return id >= 0 && id < static_cast<int>(kReserved); }

 private:
  void add(const std::string& token, std::size_t count);

  std::vector<std::string> tokens_;
  std::vector<std::size_t> counts_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace unmt
