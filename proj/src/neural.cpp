#include "depht/neural.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace depht {

EmbeddingTable EmbeddingTable::load(std::istream& in) {
  EmbeddingTable table;
  std::string line;
  std::vector<double> vec;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    vec.clear();
    for (double v; fields >> v;) vec.push_back(v);
    if (table.dim_ == 0) {
      if (vec.empty()) throw std::runtime_error("embedding line " + std::to_string(lineno) + " has no values");
      table = EmbeddingTable(static_cast<int>(vec.size()));
    }
    if (static_cast<int>(vec.size()) != table.dim_) {
      throw std::runtime_error("embedding line " + std::to_string(lineno) + " has dimension " +
                               std::to_string(vec.size()) + ", expected " + std::to_string(table.dim_));
    }
    table.add(word, vec);
  }
  return table;
}

EmbeddingTable EmbeddingTable::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file " + path);
  return load(in);
}

void EmbeddingTable::add(const std::string& word, std::span<const double> vec) {
  if (static_cast<int>(vec.size()) != dim_) throw std::invalid_argument("embedding dimension mismatch");
  const auto [it, fresh] = index_.emplace(word, data_.size() / static_cast<std::size_t>(std::max(dim_, 1)));
  if (!fresh) {
    std::copy(vec.begin(), vec.end(), data_.begin() + static_cast<std::ptrdiff_t>(it->second * static_cast<std::size_t>(dim_)));
    return;
  }
  data_.insert(data_.end(), vec.begin(), vec.end());
}

std::span<const double> EmbeddingTable::lookup(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) {
    std::string lower = word;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    it = index_.find(lower);
  }
  if (it == index_.end()) return zero_;
  return std::span<const double>(data_).subspan(it->second * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_));
}

BilinearBank::BilinearBank(int units, int dim)
    : units_(units), dim_(dim), data_(static_cast<std::size_t>(units) * dim * dim, 0.0) {}

void BilinearBank::randomize(std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (double& x : data_) x = dist(rng);
}

void BilinearBank::zero() { std::fill(data_.begin(), data_.end(), 0.0); }

std::span<double> BilinearBank::matrix(int unit) {
  const auto block = static_cast<std::size_t>(dim_) * dim_;
  return std::span<double>(data_).subspan(static_cast<std::size_t>(unit) * block, block);
}

std::span<const double> BilinearBank::matrix(int unit) const {
  const auto block = static_cast<std::size_t>(dim_) * dim_;
  return std::span<const double>(data_).subspan(static_cast<std::size_t>(unit) * block, block);
}

double arc_score(std::span<const double> parent, std::span<const double> child, std::span<const double> u) {
  const std::size_t d = parent.size();
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    if (parent[i] == 0.0) continue;
    double row = 0.0;
    for (std::size_t j = 0; j < d; ++j) row += u[i * d + j] * child[j];
    total += parent[i] * row;
  }
  return total;
}

void arc_score_gradient(double scale, std::span<const double> parent, std::span<const double> child,
                        std::span<double> grad) {
  if (scale == 0.0) return;
  const std::size_t d = parent.size();
  for (std::size_t i = 0; i < d; ++i) {
    const double pi = scale * parent[i];
    if (pi == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) grad[i * d + j] += pi * child[j];
  }
}

std::vector<double> embedding_features(std::span<const double> parent, std::span<const double> child) {
  std::vector<double> out(parent.size());
  for (std::size_t i = 0; i < parent.size(); ++i) out[i] = 0.5 * (parent[i] + child[i]);
  return out;
}

}  // namespace depht
