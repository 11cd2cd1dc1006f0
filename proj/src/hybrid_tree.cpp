#include "depht/hybrid_tree.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace depht {

namespace {

constexpr std::array<Pattern, 1> kArity0{Pattern::WW};
constexpr std::array<Pattern, 3> kArity1{Pattern::X, Pattern::WX, Pattern::XW};
constexpr std::array<Pattern, 2> kArity2{Pattern::XY, Pattern::YX};

bool arc_less(const Arc& a, const Arc& b) {
  if (a.parent != b.parent) return a.parent < b.parent;
  if (a.child != b.child) return a.child < b.child;
  if (a.depth != b.depth) return a.depth < b.depth;
  if (a.pattern != b.pattern) return a.pattern < b.pattern;
  return a.unit < b.unit;
}

}  // namespace

std::string_view to_string(Pattern p) {
  switch (p) {
    case Pattern::WW: return "WW";
    case Pattern::X: return "X";
    case Pattern::WX: return "WX";
    case Pattern::XW: return "XW";
    case Pattern::XY: return "XY";
    case Pattern::YX: return "YX";
  }
  return "?";
}

std::optional<Pattern> pattern_from_string(std::string_view s) {
  for (int i = 0; i < kNumPatterns; ++i) {
    if (to_string(static_cast<Pattern>(i)) == s) return static_cast<Pattern>(i);
  }
  return std::nullopt;
}

std::span<const Pattern> patterns_for(int arity) {
  switch (arity) {
    case 0: return kArity0;
    case 1: return kArity1;
    case 2: return kArity2;
    default: throw std::invalid_argument("arity must be 0, 1 or 2");
  }
}

std::optional<std::pair<int, int>> owned_words(Pattern p, int begin, int end, int anchor) {
  switch (p) {
    case Pattern::WW: return std::pair{begin, end};
    case Pattern::WX: return std::pair{begin, anchor};
    case Pattern::XW: return std::pair{anchor, end};
    case Pattern::XY:
    case Pattern::YX: return std::pair{anchor, anchor};
    case Pattern::X: return std::nullopt;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

Sentence::Sentence(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty()) throw std::invalid_argument("a sentence needs at least one token");
}

Sentence Sentence::from_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> toks;
  for (std::string w; in >> w;) toks.push_back(std::move(w));
  return Sentence(std::move(toks));
}

const std::string& Sentence::token(int i) const {
  static const std::string root(kRootToken);
  if (i == 0) return root;
  return tokens_.at(static_cast<std::size_t>(i - 1));
}

std::string Sentence::text() const {
  std::string out;
  for (const auto& t : tokens_) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

HybridTree::HybridTree(std::vector<Arc> arcs) : arcs_(std::move(arcs)) {
  std::sort(arcs_.begin(), arcs_.end(), arc_less);
}

bool operator<(const HybridTree& a, const HybridTree& b) {
  return std::lexicographical_compare(a.arcs_.begin(), a.arcs_.end(), b.arcs_.begin(), b.arcs_.end(), arc_less);
}

std::string_view to_string(Violation::Kind k) {
  switch (k) {
    case Violation::Kind::Structure: return "structure";
    case Violation::Kind::Root: return "root";
    case Violation::Kind::Adjacency: return "adjacency";
    case Violation::Kind::Pattern: return "pattern";
    case Violation::Kind::Arity: return "arity";
    case Violation::Kind::SelfLoopDepth: return "self-loop-depth";
    case Violation::Kind::Projectivity: return "projectivity";
    case Violation::Kind::Region: return "region";
    case Violation::Kind::Mismatch: return "mismatch";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Arc index shared by validation and recovery.

namespace {

struct ArcIndex {
  int root_arc = -1;
  std::map<int, int> incoming;                // word -> ordinary arc into it
  std::map<int, std::vector<int>> loops;      // word -> self-loops by depth
  std::map<int, std::vector<int>> outgoing;   // word -> ordinary arcs leaving it
  std::optional<Violation> error;

  // Last arc of the chain anchored at word k.
  int chain_end(int k) const {
    const auto it = loops.find(k);
    if (it != loops.end() && !it->second.empty()) return it->second.back();
    return incoming.at(k);
  }

  // Arc whose unit is the MR parent of arc i's unit, -1 for the root arc.
  int parent_arc(const std::vector<Arc>& arcs, int i) const {
    const Arc& a = arcs[static_cast<std::size_t>(i)];
    if (a.self_loop()) {
      return a.depth == 1 ? incoming.at(a.child) : loops.at(a.child)[static_cast<std::size_t>(a.depth - 2)];
    }
    if (a.parent == 0) return -1;
    return chain_end(a.parent);
  }
};

ArcIndex index_arcs(const std::vector<Arc>& arcs, int n_tokens) {
  ArcIndex idx;
  auto fail = [&](Violation::Kind k, std::string msg) {
    if (!idx.error) idx.error = Violation{k, std::move(msg)};
  };
  for (std::size_t i = 0; i < arcs.size(); ++i) {
    const Arc& a = arcs[i];
    const int ai = static_cast<int>(i);
    const bool in_range = a.child >= 1 && a.parent >= 0 && (n_tokens < 0 || (a.child <= n_tokens && a.parent <= n_tokens));
    if (!in_range) {
      fail(Violation::Kind::Structure, "arc " + std::to_string(a.parent) + "->" + std::to_string(a.child) + " out of range");
      continue;
    }
    if (a.self_loop() != (a.depth > 0)) {
      fail(Violation::Kind::Structure, "self-loop depth inconsistent on arc " + std::to_string(a.parent) + "->" +
                                           std::to_string(a.child));
      continue;
    }
    if (a.self_loop()) {
      idx.loops[a.child].push_back(ai);
      continue;
    }
    if (!idx.incoming.emplace(a.child, ai).second) {
      fail(Violation::Kind::Structure, "word " + std::to_string(a.child) + " has two parents");
    }
    if (a.parent == 0) {
      if (idx.root_arc >= 0) fail(Violation::Kind::Root, "more than one arc leaves the root");
      idx.root_arc = ai;
    } else {
      idx.outgoing[a.parent].push_back(ai);
    }
  }
  if (idx.root_arc < 0) fail(Violation::Kind::Root, "no arc leaves the root");
  for (auto& [k, loops] : idx.loops) {
    std::sort(loops.begin(), loops.end(), [&](int x, int y) { return arcs[static_cast<std::size_t>(x)].depth < arcs[static_cast<std::size_t>(y)].depth; });
    for (std::size_t d = 0; d < loops.size(); ++d) {
      if (arcs[static_cast<std::size_t>(loops[d])].depth != static_cast<int>(d) + 1) {
        fail(Violation::Kind::Structure, "self-loop depths on word " + std::to_string(k) + " are not 1..D");
      }
    }
    if (!idx.incoming.contains(k)) fail(Violation::Kind::Structure, "self-loop on unattached word " + std::to_string(k));
  }
  for (const auto& [k, out] : idx.outgoing) {
    if (!idx.incoming.contains(k)) fail(Violation::Kind::Structure, "word " + std::to_string(k) + " has dependents but no parent");
  }
  return idx;
}

// Child arcs of arc i in argument order, or a violation.
std::optional<Violation> arc_children(const std::vector<Arc>& arcs, const ArcIndex& idx, int i, std::vector<int>& out) {
  out.clear();
  const Arc& a = arcs[static_cast<std::size_t>(i)];
  const int k = a.child;
  const auto loops_it = idx.loops.find(k);
  const int n_loops = loops_it == idx.loops.end() ? 0 : static_cast<int>(loops_it->second.size());
  auto where = [&] { return " at arc " + std::to_string(a.parent) + "->" + std::to_string(k) + " (" + a.unit.to_string() + ")"; };

  if (a.pattern == Pattern::X) {
    if (a.depth + 1 > n_loops) return Violation{Violation::Kind::Arity, "pattern X without a following self-loop" + where()};
    out.push_back(loops_it->second[static_cast<std::size_t>(a.depth)]);
    return std::nullopt;
  }
  if (a.depth < n_loops) return Violation{Violation::Kind::Arity, "self-loop below a non-X pattern" + where()};

  int left = -1, right = -1, n_left = 0, n_right = 0;
  if (const auto it = idx.outgoing.find(k); it != idx.outgoing.end()) {
    for (int c : it->second) {
      if (arcs[static_cast<std::size_t>(c)].child < k) {
        left = c;
        ++n_left;
      } else {
        right = c;
        ++n_right;
      }
    }
  }
  int want_left = 0, want_right = 0;
  switch (a.pattern) {
    case Pattern::WW: break;
    case Pattern::WX: want_right = 1; break;
    case Pattern::XW: want_left = 1; break;
    case Pattern::XY:
    case Pattern::YX: want_left = want_right = 1; break;
    case Pattern::X: break;
  }
  if (n_left != want_left || n_right != want_right) {
    return Violation{Violation::Kind::Arity, "word " + std::to_string(k) + " has " + std::to_string(n_left) + " left and " +
                                                 std::to_string(n_right) + " right dependents, pattern " +
                                                 std::string(to_string(a.pattern)) + " wants " + std::to_string(want_left) +
                                                 "/" + std::to_string(want_right) + where()};
  }
  switch (a.pattern) {
    case Pattern::WX: out.push_back(right); break;
    case Pattern::XW: out.push_back(left); break;
    case Pattern::XY: out = {left, right}; break;
    case Pattern::YX: out = {right, left}; break;
    default: break;
  }
  return std::nullopt;
}

MeaningRepresentation recover_from(const std::vector<Arc>& arcs, const ArcIndex& idx, int i, int& visited) {
  ++visited;
  if (visited > static_cast<int>(arcs.size())) throw InconsistentTree("arcs do not form a tree");
  std::vector<int> kids;
  if (auto v = arc_children(arcs, idx, i, kids)) throw InconsistentTree(v->message);
  const SemanticUnit& unit = arcs[static_cast<std::size_t>(i)].unit;
  if (arity_of(arcs[static_cast<std::size_t>(i)].pattern) != unit.arity()) {
    throw InconsistentTree("pattern " + std::string(to_string(arcs[static_cast<std::size_t>(i)].pattern)) +
                           " does not fit " + unit.to_string());
  }
  std::vector<MeaningRepresentation> sub;
  for (int c : kids) sub.push_back(recover_from(arcs, idx, c, visited));
  try {
    if (sub.empty()) return MeaningRepresentation::leaf(unit);
    return MeaningRepresentation::compose(unit, std::move(sub));
  } catch (const TypeError& e) {
    throw InconsistentTree(e.what());
  }
}

bool mr_has_edge(const MeaningRepresentation& m, const SemanticUnit& parent, const SemanticUnit& child) {
  for (const auto& node : m.nodes()) {
    if (node.unit != parent) continue;
    for (int c : node.children) {
      if (m.node(c).unit == child) return true;
    }
  }
  return false;
}

void collect_regions(const std::vector<Arc>& arcs, const ArcIndex& idx, int i, int begin, int end,
                     std::vector<std::pair<int, int>>& regions, std::optional<Violation>& error) {
  const Arc& a = arcs[static_cast<std::size_t>(i)];
  regions[static_cast<std::size_t>(i)] = {begin, end};
  const int k = a.child;
  if (k < begin || k > end) {
    if (!error) {
      error = Violation{Violation::Kind::Region, "modifier " + std::to_string(k) + " of " + a.unit.to_string() +
                                                     " lies outside its region [" + std::to_string(begin) + "," +
                                                     std::to_string(end) + "]"};
    }
    return;
  }
  std::vector<int> kids;
  if (auto v = arc_children(arcs, idx, i, kids)) {
    if (!error) error = v;
    return;
  }
  auto left = [&](int c) { collect_regions(arcs, idx, c, begin, k - 1, regions, error); };
  auto right = [&](int c) { collect_regions(arcs, idx, c, k + 1, end, regions, error); };
  switch (a.pattern) {
    case Pattern::WW: break;
    case Pattern::X: collect_regions(arcs, idx, kids[0], begin, end, regions, error); break;
    case Pattern::WX: right(kids[0]); break;
    case Pattern::XW: left(kids[0]); break;
    case Pattern::XY: left(kids[0]); right(kids[1]); break;
    case Pattern::YX: right(kids[0]); left(kids[1]); break;
  }
}

}  // namespace

// ---------------------------------------------------------------------------

bool is_projective(const HybridTree& t) {
  std::vector<std::pair<int, int>> spans;
  for (const auto& a : t.arcs()) {
    if (!a.self_loop()) spans.emplace_back(std::min(a.parent, a.child), std::max(a.parent, a.child));
  }
  for (std::size_t i = 0; i < spans.size(); ++i) {
    for (std::size_t j = 0; j < spans.size(); ++j) {
      const auto [a1, b1] = spans[i];
      const auto [a2, b2] = spans[j];
      if (a1 < a2 && a2 < b1 && b1 < b2) return false;
    }
  }
  return true;
}

MeaningRepresentation recover_mr(const HybridTree& t) {
  const auto& arcs = t.arcs();
  const ArcIndex idx = index_arcs(arcs, -1);
  if (idx.error) throw InconsistentTree(idx.error->message);
  int visited = 0;
  auto mr = recover_from(arcs, idx, idx.root_arc, visited);
  if (visited != static_cast<int>(arcs.size())) throw InconsistentTree("arcs unreachable from the root");
  return mr;
}

std::vector<std::pair<int, int>> arc_regions(const HybridTree& t, const Sentence& n) {
  const auto& arcs = t.arcs();
  const ArcIndex idx = index_arcs(arcs, n.size());
  if (idx.error) throw InconsistentTree(idx.error->message);
  std::vector<std::pair<int, int>> regions(arcs.size(), {-1, -1});
  std::optional<Violation> error;
  collect_regions(arcs, idx, idx.root_arc, 1, n.size(), regions, error);
  if (error) throw InconsistentTree(error->message);
  return regions;
}

ValidationResult validate(const HybridTree& t, const Sentence& n, const MeaningRepresentation& m, int max_self_loops) {
  auto reject = [](Violation::Kind k, std::string msg) {
    return ValidationResult{false, Violation{k, std::move(msg)}};
  };
  const auto& arcs = t.arcs();
  if (m.empty()) return reject(Violation::Kind::Mismatch, "empty meaning representation");
  const ArcIndex idx = index_arcs(arcs, n.size());
  if (idx.error) return {false, idx.error};

  if (arcs[static_cast<std::size_t>(idx.root_arc)].unit != m.root_unit()) {
    return reject(Violation::Kind::Root, "root arc carries " + arcs[static_cast<std::size_t>(idx.root_arc)].unit.to_string() +
                                             ", expected " + m.root_unit().to_string());
  }

  for (std::size_t i = 0; i < arcs.size(); ++i) {
    const int p = idx.parent_arc(arcs, static_cast<int>(i));
    if (p < 0) continue;
    const auto& pu = arcs[static_cast<std::size_t>(p)].unit;
    if (!mr_has_edge(m, pu, arcs[i].unit)) {
      return reject(Violation::Kind::Adjacency, arcs[i].unit.to_string() + " is not a child of " + pu.to_string());
    }
  }

  for (const auto& a : arcs) {
    const auto allowed = patterns_for(a.unit.arity());
    if (std::find(allowed.begin(), allowed.end(), a.pattern) == allowed.end()) {
      return reject(Violation::Kind::Pattern, "pattern " + std::string(to_string(a.pattern)) + " not allowed for " +
                                                  a.unit.to_string());
    }
  }

  std::vector<int> kids;
  for (std::size_t i = 0; i < arcs.size(); ++i) {
    if (auto v = arc_children(arcs, idx, static_cast<int>(i), kids)) return {false, v};
  }

  for (const auto& [k, loops] : idx.loops) {
    if (static_cast<int>(loops.size()) > max_self_loops) {
      return reject(Violation::Kind::SelfLoopDepth, std::to_string(loops.size()) + " self-loops on word " + std::to_string(k) +
                                                        " exceed the cap " + std::to_string(max_self_loops));
    }
  }

  if (!is_projective(t)) return reject(Violation::Kind::Projectivity, "crossing arcs");

  std::vector<std::pair<int, int>> regions(arcs.size(), {-1, -1});
  std::optional<Violation> region_error;
  collect_regions(arcs, idx, idx.root_arc, 1, n.size(), regions, region_error);
  if (region_error) return {false, region_error};

  try {
    if (recover_mr(t) != m) return reject(Violation::Kind::Mismatch, "recovered meaning representation differs");
  } catch (const InconsistentTree& e) {
    return reject(Violation::Kind::Mismatch, e.what());
  }
  return {};
}

// ---------------------------------------------------------------------------
// Enumeration oracle

namespace {

struct Assignment {
  int anchor = 0;
  Pattern pattern = Pattern::WW;
  int depth = 0;
  int begin = 0;
  int end = 0;
};

class TreeEnumerator {
 public:
  TreeEnumerator(const Sentence& n, const MeaningRepresentation& m, int cap) : n_(n), m_(m), cap_(cap) {
    slot_.assign(m.size(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const auto& kids = m.node(static_cast<int>(i)).children;
      for (std::size_t j = 0; j < kids.size(); ++j) slot_[static_cast<std::size_t>(kids[j])] = static_cast<int>(j);
    }
    assign_.resize(m.size());
  }

  std::vector<HybridTree> run() {
    visit(0);
    return {found_.begin(), found_.end()};
  }

 private:
  void visit(int i) {
    if (i == static_cast<int>(m_.size())) {
      emit();
      return;
    }
    const SemanticUnit& unit = m_.node(i).unit;
    const int p = m_.parent(i);
    int begin = 1, end = n_.size(), depth = 0, forced = -1;
    if (p >= 0) {
      const Assignment& pa = assign_[static_cast<std::size_t>(p)];
      const int j = slot_[static_cast<std::size_t>(i)];
      bool to_right = false;
      switch (pa.pattern) {
        case Pattern::X:
          begin = pa.begin;
          end = pa.end;
          depth = pa.depth + 1;
          forced = pa.anchor;
          break;
        case Pattern::WX: to_right = true; break;
        case Pattern::XW: to_right = false; break;
        case Pattern::XY: to_right = (j == 1); break;
        case Pattern::YX: to_right = (j == 0); break;
        case Pattern::WW: return;
      }
      if (pa.pattern != Pattern::X) {
        begin = to_right ? pa.anchor + 1 : pa.begin;
        end = to_right ? pa.end : pa.anchor - 1;
      }
      if (depth > cap_ || begin > end) return;
    }
    for (int k = begin; k <= end; ++k) {
      if (forced >= 0 && k != forced) continue;
      for (Pattern pat : patterns_for(unit.arity())) {
        assign_[static_cast<std::size_t>(i)] = {k, pat, depth, begin, end};
        visit(i + 1);
      }
    }
  }

  void emit() {
    std::vector<Arc> arcs;
    arcs.reserve(m_.size());
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const Assignment& a = assign_[i];
      const int p = m_.parent(static_cast<int>(i));
      const int head = p < 0 ? 0 : assign_[static_cast<std::size_t>(p)].anchor;
      arcs.push_back({head, a.anchor, m_.node(static_cast<int>(i)).unit, a.pattern, a.depth});
    }
    HybridTree t(std::move(arcs));
    if (validate(t, n_, m_, cap_)) found_.insert(std::move(t));
  }

  const Sentence& n_;
  const MeaningRepresentation& m_;
  int cap_;
  std::vector<int> slot_;
  std::vector<Assignment> assign_;
  std::set<HybridTree> found_;
};

}  // namespace

std::vector<HybridTree> enumerate_trees(const Sentence& n, const MeaningRepresentation& m, int max_self_loops,
                                        EnumerationLimits limits) {
  if (n.size() > limits.max_tokens) {
    throw BoundExceeded("enumeration limited to " + std::to_string(limits.max_tokens) + " tokens, sentence has " +
                        std::to_string(n.size()));
  }
  if (m.empty()) return {};
  return TreeEnumerator(n, m, max_self_loops).run();
}

// ---------------------------------------------------------------------------
// Text output

std::string format_arcs(const HybridTree& t) {
  std::string out;
  for (const auto& a : t.arcs()) {
    out += std::to_string(a.parent) + " -> " + std::to_string(a.child) + " : " + a.unit.to_string() + " : " +
           std::string(to_string(a.pattern)) + "\n";
  }
  return out;
}

std::string draw_tree(const HybridTree& t, const Sentence& n) {
  std::vector<int> center(static_cast<std::size_t>(n.size()) + 1);
  std::string words;
  for (int i = 0; i <= n.size(); ++i) {
    const std::string& w = n.token(i);
    center[static_cast<std::size_t>(i)] = static_cast<int>(words.size() + w.size() / 2);
    words += w;
    words += "  ";
  }
  std::vector<const Arc*> order;
  for (const auto& a : t.arcs()) order.push_back(&a);
  std::stable_sort(order.begin(), order.end(), [](const Arc* a, const Arc* b) {
    return std::abs(a->parent - a->child) > std::abs(b->parent - b->child);
  });
  std::string out;
  const std::size_t width = words.size();
  for (const Arc* a : order) {
    std::string row(width, ' ');
    const int pc = center[static_cast<std::size_t>(a->parent)];
    const int cc = center[static_cast<std::size_t>(a->child)];
    if (a->self_loop()) {
      row[static_cast<std::size_t>(cc)] = '@';
    } else {
      for (int x = std::min(pc, cc); x <= std::max(pc, cc); ++x) row[static_cast<std::size_t>(x)] = '-';
      row[static_cast<std::size_t>(pc)] = '+';
      row[static_cast<std::size_t>(cc)] = pc < cc ? '>' : '<';
    }
    while (!row.empty() && row.back() == ' ') row.pop_back();
    row += "    " + a->unit.to_string() + " [" + std::string(to_string(a->pattern)) + "]";
    out += row + "\n";
  }
  while (!words.empty() && words.back() == ' ') words.pop_back();
  out += words + "\n";
  return out;
}

}  // namespace depht
