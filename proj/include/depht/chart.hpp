// Exact inference over dependency-based hybrid trees.
//
// The chart is materialized per sentence as an acyclic hypergraph. Node
// kinds and what they sum over:
//
//   Goal                 root arcs 0 -> k for every root label
//   ArcRight(h, e, l)    arc h -> k labeled l whose region is [h+1, e]
//   ArcLeft(h, s, l)     arc h -> k labeled l whose region is [s, h-1]
//   Anchored(k,s,e,l,d)  label l anchored at k over [s, e] after d self-loops
//                        on k; either its own pattern (Core) or pattern X
//                        and a self-loop to a child label at depth d+1
//   Core(k, s, e, l)     WW / WX / XW / XY / YX for l at k over [s, e]
//   SlotRight(k, e, l, a)  argument a of l filled by an arc k -> (k, e]
//   SlotLeft(k, s, l, a)   argument a of l filled by an arc k -> [s, k)
//
// Nodes are created top-down from Goal with memoization and stored in
// post-order, so tails always precede heads. Labels are either MR nodes
// (clamped chart) or grammar units (unclamped chart).
#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "depht/funql.hpp"
#include "depht/hybrid_tree.hpp"

namespace depht {

class NoDerivation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();
inline constexpr int kMaxSelfLoopCap = 63;
inline constexpr int kMaxChartTokens = 511;

struct LabelSet {
  std::vector<int> unit;  // grammar unit id of each label
  std::vector<int> arity;
  std::vector<std::array<std::vector<int>, 2>> children;  // child labels per argument slot
  std::vector<int> roots;

  std::size_t size() const { return unit.size(); }

  // One label per MR node; throws std::out_of_range for units the grammar lacks.
  static LabelSet clamped(const MeaningRepresentation& m, const SemanticGrammar& g);
  static LabelSet unclamped(const SemanticGrammar& g);
};

// Log-potentials of the local parts a derivation is made of.
struct Potentials {
  int n = 0;
  std::vector<double> word_prefix;  // label x (n+1): sum of word scores of tokens 1..t
  std::vector<double> arc;          // label x (n+1) x (n+1), head x modifier
  std::vector<double> pattern;      // label x kNumPatterns
  std::vector<std::array<std::vector<double>, 2>> transition;  // label x slot x child index

  static Potentials zeros(int n_tokens, const LabelSet& labels);

  double words(int label, int lo, int hi) const {
    const auto row = static_cast<std::size_t>(label) * static_cast<std::size_t>(n + 1);
    return word_prefix[row + static_cast<std::size_t>(hi)] - word_prefix[row + static_cast<std::size_t>(lo - 1)];
  }
  double& arc_at(int label, int head, int mod) {
    return arc[(static_cast<std::size_t>(label) * static_cast<std::size_t>(n + 1) + static_cast<std::size_t>(head)) *
                   static_cast<std::size_t>(n + 1) +
               static_cast<std::size_t>(mod)];
  }
  double arc_at(int label, int head, int mod) const {
    return arc[(static_cast<std::size_t>(label) * static_cast<std::size_t>(n + 1) + static_cast<std::size_t>(head)) *
                   static_cast<std::size_t>(n + 1) +
               static_cast<std::size_t>(mod)];
  }
};

// Parts scored by one hyperedge; -1 labels mark absent parts. Positions fit
// in 16 bits (kMaxChartTokens).
struct EdgeParts {
  int arc_label = -1;
  int pattern_label = -1;
  int trans_label = -1;
  int trans_index = 0;
  std::int16_t head = 0;
  std::int16_t modifier = 0;
  std::int16_t begin = 0;
  std::int16_t end = 0;
  std::int16_t anchor = 0;
  Pattern pattern = Pattern::WW;
  std::uint8_t trans_slot = 0;
};

struct Hyperedge {
  int head = -1;
  std::array<int, 2> tails{-1, -1};
  EdgeParts parts;
};

// Append-only edge storage in fixed blocks, so a growing forest never copies
// what it already holds.
class EdgeStore {
 public:
  static constexpr std::size_t kBlockBits = 11;
  static constexpr std::size_t kBlock = std::size_t{1} << kBlockBits;

  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  const Hyperedge& operator[](std::size_t e) const { return blocks_[e >> kBlockBits][e & (kBlock - 1)]; }
  Hyperedge& operator[](std::size_t e) { return blocks_[e >> kBlockBits][e & (kBlock - 1)]; }

  void push_back(const Hyperedge& edge) {
    if ((size_ & (kBlock - 1)) == 0) {
      blocks_.emplace_back();
      blocks_.back().reserve(kBlock);
    }
    blocks_.back().push_back(edge);
    ++size_;
  }

 private:
  std::vector<std::vector<Hyperedge>> blocks_;
  std::size_t size_ = 0;
};

enum class NodeKind : std::uint8_t { Goal, ArcRight, ArcLeft, Anchored, Core, SlotRight, SlotLeft };

struct ChartNode {
  NodeKind kind = NodeKind::Goal;
  int i = 0;  // head / anchor word
  int j = 0;  // region start or end
  int k = 0;  // region end (Anchored, Core)
  int label = -1;
  int aux = 0;  // self-loop depth (Anchored) or argument slot (Slot*)
  int first_edge = 0;
  int edge_count = 0;
};

class Forest {
 public:
  static Forest build(int n_tokens, const LabelSet& labels, int max_self_loops);

  int n_tokens() const { return n_; }
  int max_self_loops() const { return cap_; }
  const std::vector<ChartNode>& nodes() const { return nodes_; }
  const EdgeStore& edges() const { return edges_; }
  // -1 when no derivation exists.
  int goal() const { return goal_; }
  bool has_derivation() const { return goal_ >= 0; }

 private:
  friend class ForestBuilder;
  int n_ = 0;
  int cap_ = 0;
  int goal_ = -1;
  std::vector<ChartNode> nodes_;
  EdgeStore edges_;
};

double edge_score(const EdgeParts& parts, const Potentials& pot);

struct Chart {
  std::vector<double> edge_weight;
  std::vector<double> inside;
  std::vector<double> outside;  // empty until compute_outside
  double log_z = kLogZero;
};

Chart compute_inside(const Forest& forest, const Potentials& pot);
void compute_outside(const Forest& forest, Chart& chart);

// Expected counts of every local part under the chart's distribution.
struct PartMarginals {
  int n = 0;
  std::vector<double> word;     // label x (n+1), token-level
  std::vector<double> arc;      // label x (n+1) x (n+1)
  std::vector<double> pattern;  // label x kNumPatterns
  std::vector<std::array<std::vector<double>, 2>> transition;

  static PartMarginals zeros(int n_tokens, const LabelSet& labels);
};

PartMarginals expectations(const Forest& forest, const Chart& chart, const LabelSet& labels);

// log(inside * outside / Z) per edge; kLogZero where unreachable.
std::vector<double> edge_log_marginals(const Forest& forest, const Chart& chart);

struct Derivation {
  HybridTree tree;
  MeaningRepresentation mr;
  double score = kLogZero;
};

// Max-score derivation. Ties keep the earliest edge: lower unit id, then
// lower split index.
Derivation viterbi(const Forest& forest, const Potentials& pot, const LabelSet& labels, const SemanticGrammar& grammar);

// Source of potentials for a sentence under a label set.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual Potentials potentials(const Sentence& n, const LabelSet& labels) const = 0;
};

struct InsideResult {
  LabelSet labels;
  Forest forest;
  Potentials potentials;
  Chart chart;
};

// log of the summed weight of T(n, m); chart.log_z is kLogZero when empty.
InsideResult inside_clamped(const Sentence& n, const MeaningRepresentation& m, const SemanticGrammar& g,
                            const Scorer& scorer, int max_self_loops);
// Sum over every MR derivable from the grammar's root type and all its trees.
InsideResult inside_unclamped(const Sentence& n, const SemanticGrammar& g, const Scorer& scorer, int max_self_loops);
// Throws NoDerivation when nothing covers the sentence.
Derivation viterbi(const Sentence& n, const SemanticGrammar& g, const Scorer& scorer, int max_self_loops);

// `i j k direction pattern unit log_marginal` rows for arc and pattern parts.
std::string marginals_tsv(const Forest& forest, const Chart& chart, const LabelSet& labels, const SemanticGrammar& g);

// Charts are rebuilt sentence after sentence. With glibc's defaults every
// large free goes back to the kernel and is page-faulted in again by the
// next build; this raises the trim / mmap thresholds for the process.
void retain_freed_memory();

}  // namespace depht
