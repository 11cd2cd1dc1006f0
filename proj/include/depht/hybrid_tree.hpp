// Dependency-based hybrid trees: projective word-to-word arcs labeled with
// semantic units, the dependency patterns that license them, validation,
// recovery of the meaning representation, and a brute-force enumerator.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "depht/funql.hpp"

namespace depht {

// A -> WW; B -> X | WX | XW; C -> XY | YX.
enum class Pattern : std::uint8_t { WW = 0, X, WX, XW, XY, YX };
inline constexpr int kNumPatterns = 6;

std::string_view to_string(Pattern p);
std::optional<Pattern> pattern_from_string(std::string_view s);
std::span<const Pattern> patterns_for(int arity);
inline int arity_of(Pattern p) {
  switch (p) {
    case Pattern::WW: return 0;
    case Pattern::X:
    case Pattern::WX:
    case Pattern::XW: return 1;
    default: return 2;
  }
}

// Words directly under a unit anchored at `anchor` whose region is
// [begin, end]: the W parts plus the anchor itself (none for X).
std::optional<std::pair<int, int>> owned_words(Pattern p, int begin, int end, int anchor);

inline constexpr std::string_view kRootToken = "<ROOT>";

// Tokens w_1..w_N; index 0 is the implicit root token.
class Sentence {
 public:
  Sentence() = default;
  explicit Sentence(std::vector<std::string> tokens);
  static Sentence from_text(std::string_view whitespace_tokenized);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int i) const;  // i in [0, N]
  const std::vector<std::string>& words() const { return tokens_; }
  std::string text() const;

 private:
  std::vector<std::string> tokens_;
};

// depth is 0 for an ordinary arc and 1..c for the d-th self-loop on a token.
struct Arc {
  int parent = 0;
  int child = 0;
  SemanticUnit unit;
  Pattern pattern = Pattern::WW;
  int depth = 0;

  bool self_loop() const { return parent == child; }
  friend bool operator==(const Arc&, const Arc&) = default;
};

class HybridTree {
 public:
  HybridTree() = default;
  explicit HybridTree(std::vector<Arc> arcs);

  const std::vector<Arc>& arcs() const { return arcs_; }
  std::size_t size() const { return arcs_.size(); }

  // Arcs and patterns only; order of construction is irrelevant.
  friend bool operator==(const HybridTree& a, const HybridTree& b) { return a.arcs_ == b.arcs_; }
  friend bool operator<(const HybridTree& a, const HybridTree& b);

 private:
  std::vector<Arc> arcs_;  // kept sorted
};

class InconsistentTree : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BoundExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Violation {
  enum class Kind { Structure, Root, Adjacency, Pattern, Arity, SelfLoopDepth, Projectivity, Region, Mismatch };
  Kind kind;
  std::string message;
};
std::string_view to_string(Violation::Kind k);

struct ValidationResult {
  bool valid = true;
  std::optional<Violation> first;
  explicit operator bool() const { return valid; }
};

ValidationResult validate(const HybridTree& t, const Sentence& n, const MeaningRepresentation& m,
                          int max_self_loops);

// Follows arcs from the root; throws InconsistentTree when labels cannot
// compose type-correctly or the arcs do not form a hybrid tree.
MeaningRepresentation recover_mr(const HybridTree& t);

// Non-crossing check over ordinary arcs (self-loops never cross).
bool is_projective(const HybridTree& t);

// Region [begin, end] of every arc, in arcs() order. Requires a tree that
// recover_mr accepts.
std::vector<std::pair<int, int>> arc_regions(const HybridTree& t, const Sentence& n);

struct EnumerationLimits {
  int max_tokens = 6;
};

// T(n, m) under self-loop cap c, by exhaustive assignment of anchors and
// patterns filtered through validate().
std::vector<HybridTree> enumerate_trees(const Sentence& n, const MeaningRepresentation& m, int max_self_loops,
                                        EnumerationLimits limits = {});

// `parent_idx -> child_idx : unit : pattern` per arc.
std::string format_arcs(const HybridTree& t);
// Arcs drawn as brackets above the sentence, one row per arc.
std::string draw_tree(const HybridTree& t, const Sentence& n);

}  // namespace depht
