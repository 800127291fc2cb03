#include "unmt/embeddings.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <unordered_map>

#include "unmt/errors.hpp"

namespace unmt {
namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::span<const Real> EmbeddingTable::row(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= size()) {
    throw DataError("embedding row " + std::to_string(id) + " out of range");
  }
  return matrix.values().subspan(static_cast<std::size_t>(id) * dim(), dim());
}

std::vector<Real> fallback_vector(const std::string& token, std::size_t dim, std::uint64_t seed,
                                  Real scale) {
  std::mt19937_64 rng(seed ^ fnv1a(token));
  std::normal_distribution<Real> normal(0.0, scale);
  std::vector<Real> v(dim);
  for (auto& x : v) x = normal(rng);
  return v;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, const Vocab& vocab,
                               std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read embeddings " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("missing \"count dim\" header", line_no);
  std::size_t declared = 0, dim = 0;
  {
    std::istringstream header(line);
    if (!(header >> declared >> dim) || dim == 0) {
      throw ParseError("expected \"count dim\" header", line_no);
    }
  }
  std::vector<Real> values(vocab.size() * dim, 0.0);
  std::vector<bool> seen(vocab.size(), false);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    std::vector<Real> row;
    std::string field;
    while (fields >> field) {
      char* end = nullptr;
      const Real v = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0') {
        throw ParseError("non-numeric value '" + field + "'", line_no);
      }
      row.push_back(v);
    }
    if (row.size() != dim) {
      throw ParseError("expected " + std::to_string(dim) + " values for '" + token + "', got " +
                           std::to_string(row.size()),
                       line_no);
    }
    ++rows;
    if (!vocab.contains(token)) continue;
    const auto id = static_cast<std::size_t>(vocab.id(token));
    std::copy(row.begin(), row.end(), values.begin() + static_cast<std::ptrdiff_t>(id * dim));
    seen[id] = true;
  }
  if (rows != declared) {
    throw ParseError("header declares " + std::to_string(declared) + " rows, file has " +
                         std::to_string(rows),
                     line_no);
  }
  EmbeddingTable table;
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    if (seen[id] || static_cast<int>(id) == Vocab::kPad) continue;
    auto v = fallback_vector(vocab.token(static_cast<int>(id)), dim, seed);
    std::copy(v.begin(), v.end(), values.begin() + static_cast<std::ptrdiff_t>(id * dim));
    if (!Vocab::is_reserved(static_cast<int>(id))) ++table.missing;
  }
  table.matrix = Tensor::from_values({vocab.size(), dim}, std::move(values));
  return table;
}

void write_embeddings(const std::filesystem::path& path,
                      const std::vector<std::pair<const Vocab*, const EmbeddingTable*>>& tables) {
  std::size_t count = 0, dim = 0;
  for (const auto& [vocab, table] : tables) {
    count += vocab->size() - Vocab::kReserved;
    if (dim && table->dim() != dim) throw DimensionError("embedding tables of different widths");
    dim = table->dim();
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << count << ' ' << dim << '\n';
  out.precision(17);
  for (const auto& [vocab, table] : tables) {
    for (std::size_t id = Vocab::kReserved; id < vocab->size(); ++id) {
      out << vocab->token(static_cast<int>(id));
      for (Real v : table->row(static_cast<int>(id))) out << ' ' << v;
      out << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

EmbeddingTable normalize_embeddings(const EmbeddingTable& table) {
  if (!table.matrix.defined() || table.size() == 0) {
    throw DataError("cannot normalise an empty embedding table");
  }
  const std::size_t n = table.size(), k = table.dim();
  auto src = table.matrix.values();
  std::vector<Real> values(src.begin(), src.end());
  EmbeddingTable out;
  out.missing = table.missing;
  for (std::size_t i = 0; i < n; ++i) {
    Real norm = 0;
    for (std::size_t j = 0; j < k; ++j) norm += values[i * k + j] * values[i * k + j];
    norm = std::sqrt(norm);
    if (norm == 0) {
      ++out.zero_rows;
      continue;
    }
    for (std::size_t j = 0; j < k; ++j) values[i * k + j] /= norm;
  }
  for (std::size_t j = 0; j < k; ++j) {
    Real mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += values[i * k + j];
    mu /= static_cast<Real>(n);
    for (std::size_t i = 0; i < n; ++i) values[i * k + j] -= mu;
  }
  out.matrix = Tensor::from_values({n, k}, std::move(values));
  out.normalized = true;
  return out;
}

}  // namespace unmt
