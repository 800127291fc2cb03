#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "unmt/tensor.hpp"
#include "unmt/vocab.hpp"

namespace unmt {

// Fixed |V| x k embedding matrix aligned with a vocabulary. Never trained.
struct EmbeddingTable {
  Tensor matrix;
  bool normalized = false;
  // Content tokens absent from the source file (given random vectors).
  std::size_t missing = 0;
  // Rows left at zero by normalisation.
  std::size_t zero_rows = 0;

  std::size_t size() const { return matrix.dim(0); }
  std::size_t dim() const { return matrix.dim(1); }
  std::span<const Real> row(int id) const;
};

// Random vector for a token absent from an embedding file. Seeded by the token
// string, so shared tokens (the reserved ones) agree across languages.
std::vector<Real> fallback_vector(const std::string& token, std::size_t dim, std::uint64_t seed,
                                  Real scale = 0.01);

// word2vec text format: header "count dim", then "token v1 ... vk" lines.
// The padding row is all zeros.
EmbeddingTable load_embeddings(const std::filesystem::path& path, const Vocab& vocab,
                               std::uint64_t seed = 7);

// Writes the non-reserved rows of each (vocab, table) pair into one file.
void write_embeddings(const std::filesystem::path& path,
                      const std::vector<std::pair<const Vocab*, const EmbeddingTable*>>& tables);

// Scales every row to unit length, then subtracts the column means. Zero rows
// stay zero through the first step and are counted.
EmbeddingTable normalize_embeddings(const EmbeddingTable& table);

}  // namespace unmt
