// Bilinear arc scorer over fixed word embeddings: r_u = e_p^T U_u e_c.
#pragma once

#include <cstdint>
#include <istream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace depht {

// Frozen word vectors. Unknown words (and the root token) map to the zero
// vector.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(int dim) : dim_(dim), zero_(static_cast<std::size_t>(dim), 0.0) {}

  // `word v1 ... vd` per line; dimension taken from the first line.
  static EmbeddingTable load(std::istream& in);
  static EmbeddingTable load_file(const std::string& path);

  void add(const std::string& word, std::span<const double> vec);

  int dim() const { return dim_; }
  std::size_t vocabulary_size() const { return index_.size(); }
  bool contains(const std::string& word) const { return index_.contains(word); }
  // Exact match first, then lowercase, else the zero vector.
  std::span<const double> lookup(const std::string& word) const;

 private:
  int dim_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> data_;
  std::vector<double> zero_;
};

// One d x d matrix per semantic unit, row-major, stored contiguously.
class BilinearBank {
 public:
  BilinearBank() = default;
  BilinearBank(int units, int dim);

  // Uniform in [-scale, scale] from a seeded generator.
  void randomize(std::uint64_t seed, double scale = 0.01);
  void zero();

  int units() const { return units_; }
  int dim() const { return dim_; }
  std::span<double> matrix(int unit);
  std::span<const double> matrix(int unit) const;
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

 private:
  int units_ = 0;
  int dim_ = 0;
  std::vector<double> data_;
};

double arc_score(std::span<const double> parent, std::span<const double> child, std::span<const double> u);

// Adds scale * e_p e_c^T into grad (d x d, row-major).
void arc_score_gradient(double scale, std::span<const double> parent, std::span<const double> child,
                        std::span<double> grad);

// (e_p + e_c) / 2
std::vector<double> embedding_features(std::span<const double> parent, std::span<const double> child);

}  // namespace depht
