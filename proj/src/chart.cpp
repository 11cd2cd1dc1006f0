#include "depht/chart.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace depht {

LabelSet LabelSet::clamped(const MeaningRepresentation& m, const SemanticGrammar& g) {
  LabelSet ls;
  const auto size = m.size();
  ls.unit.resize(size);
  ls.arity.resize(size);
  ls.children.resize(size);
  for (std::size_t i = 0; i < size; ++i) {
    const auto& node = m.node(static_cast<int>(i));
    const auto id = g.id_of(node.unit);
    if (!id) throw std::out_of_range("unit " + node.unit.to_string() + " is not in the grammar");
    ls.unit[i] = *id;
    ls.arity[i] = node.unit.arity();
    for (std::size_t a = 0; a < node.children.size(); ++a) ls.children[i][a] = {node.children[a]};
  }
  if (size > 0) ls.roots = {0};
  return ls;
}

LabelSet LabelSet::unclamped(const SemanticGrammar& g) {
  LabelSet ls;
  const auto size = g.size();
  ls.unit.resize(size);
  ls.arity.resize(size);
  ls.children.resize(size);
  for (std::size_t u = 0; u < size; ++u) {
    ls.unit[u] = static_cast<int>(u);
    ls.arity[u] = g.unit(static_cast<int>(u)).arity();
    for (int a = 0; a < ls.arity[u]; ++a) ls.children[u][static_cast<std::size_t>(a)] = g.allowed_children(static_cast<int>(u), a);
  }
  ls.roots = g.roots();
  return ls;
}

Potentials Potentials::zeros(int n_tokens, const LabelSet& labels) {
  Potentials p;
  p.n = n_tokens;
  const auto L = labels.size();
  const auto n1 = static_cast<std::size_t>(n_tokens + 1);
  p.word_prefix.assign(L * n1, 0.0);
  p.arc.assign(L * n1 * n1, 0.0);
  p.pattern.assign(L * kNumPatterns, 0.0);
  p.transition.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    for (int a = 0; a < 2; ++a) p.transition[l][static_cast<std::size_t>(a)].assign(labels.children[l][static_cast<std::size_t>(a)].size(), 0.0);
  }
  return p;
}

PartMarginals PartMarginals::zeros(int n_tokens, const LabelSet& labels) {
  PartMarginals m;
  m.n = n_tokens;
  const auto L = labels.size();
  const auto n1 = static_cast<std::size_t>(n_tokens + 1);
  m.word.assign(L * n1, 0.0);
  m.arc.assign(L * n1 * n1, 0.0);
  m.pattern.assign(L * kNumPatterns, 0.0);
  m.transition.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    for (int a = 0; a < 2; ++a) m.transition[l][static_cast<std::size_t>(a)].assign(labels.children[l][static_cast<std::size_t>(a)].size(), 0.0);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forest construction

// Open addressing, linear probing; keys are never 0.
class MemoTable {
 public:
  MemoTable() : slots_(1024) {}

  const int* find(std::uint64_t key) const {
    for (std::size_t i = slot(key);; i = (i + 1) & mask()) {
      if (slots_[i].key == key) return &slots_[i].value;
      if (slots_[i].key == 0) return nullptr;
    }
  }

  void insert(std::uint64_t key, int value) {
    if (2 * (size_ + 1) > slots_.size()) grow();
    place(key, value);
    ++size_;
  }

 private:
  struct Slot {
    std::uint64_t key = 0;
    int value = 0;
  };

  std::size_t mask() const { return slots_.size() - 1; }
  std::size_t slot(std::uint64_t key) const {
    key ^= key >> 31;
    key *= 0x9e3779b97f4a7c15ULL;
    key ^= key >> 29;
    return static_cast<std::size_t>(key) & mask();
  }
  void place(std::uint64_t key, int value) {
    std::size_t i = slot(key);
    while (slots_[i].key != 0) i = (i + 1) & mask();
    slots_[i] = {key, value};
  }
  void grow() {
    std::vector<Slot> old(slots_.size() * 2);
    old.swap(slots_);
    for (const Slot& s : old) {
      if (s.key != 0) place(s.key, s.value);
    }
  }

  std::vector<Slot> slots_;
  std::size_t size_ = 0;
};

class ForestBuilder {
 public:
  ForestBuilder(int n, const LabelSet& labels, int cap) : labels_(labels) {
    if (n < 1 || n > kMaxChartTokens) throw std::invalid_argument("sentence length out of chart range");
    if (cap < 0 || cap > kMaxSelfLoopCap) throw std::invalid_argument("self-loop cap out of range");
    if (labels.size() >= (1u << 21)) throw std::invalid_argument("too many labels");
    f_.n_ = n;
    f_.cap_ = cap;
  }

  Forest run() {
    const std::size_t mark = scratch_.size();
    for (int l : labels_.roots) {
      const int t = arc_right(0, f_.n_, l);
      if (t >= 0) push({t, -1}, {});
    }
    f_.goal_ = finish({NodeKind::Goal, 0, 0, 0, -1, 0}, mark);
    return std::move(f_);
  }

 private:
  static std::uint64_t key(NodeKind kind, int i, int j, int k, int label, int aux) {
    return static_cast<std::uint64_t>(kind) | static_cast<std::uint64_t>(i) << 3 | static_cast<std::uint64_t>(j) << 12 |
           static_cast<std::uint64_t>(k) << 21 | static_cast<std::uint64_t>(aux) << 30 |
           static_cast<std::uint64_t>(label) << 36;
  }

  template <typename Build>
  int memo(std::uint64_t k, Build&& build) {
    if (const int* hit = memo_.find(k)) return *hit;
    const int id = build();
    memo_.insert(k, id);
    return id;
  }

  void push(std::array<int, 2> tails, const EdgeParts& parts) { scratch_.push_back({-1, tails, parts}); }

  // Materializes the node if any edge survived; -1 marks a dead node.
  int finish(ChartNode node, std::size_t mark) {
    if (scratch_.size() == mark) return -1;
    const int id = static_cast<int>(f_.nodes_.size());
    node.first_edge = static_cast<int>(f_.edges_.size());
    node.edge_count = static_cast<int>(scratch_.size() - mark);
    for (std::size_t e = mark; e < scratch_.size(); ++e) {
      scratch_[e].head = id;
      f_.edges_.push_back(scratch_[e]);
    }
    scratch_.resize(mark);
    f_.nodes_.push_back(node);
    return id;
  }

  static EdgeParts arc_part(int label, int head, int mod) {
    EdgeParts p;
    p.arc_label = label;
    p.head = static_cast<std::int16_t>(head);
    p.modifier = static_cast<std::int16_t>(mod);
    return p;
  }

  static EdgeParts pattern_part(EdgeParts p, int label, Pattern pat, int begin, int end, int anchor) {
    p.pattern_label = label;
    p.pattern = pat;
    p.begin = static_cast<std::int16_t>(begin);
    p.end = static_cast<std::int16_t>(end);
    p.anchor = static_cast<std::int16_t>(anchor);
    return p;
  }

  static EdgeParts trans_part(EdgeParts p, int label, int slot, int index) {
    p.trans_label = label;
    p.trans_slot = static_cast<std::uint8_t>(slot);
    p.trans_index = index;
    return p;
  }

  int arc_right(int h, int e, int l) {
    return memo(key(NodeKind::ArcRight, h, e, 0, l, 0), [&] {
      const std::size_t mark = scratch_.size();
      for (int k = h + 1; k <= e; ++k) {
        const int t = anchored(k, h + 1, e, l, 0);
        if (t >= 0) push({t, -1}, arc_part(l, h, k));
      }
      return finish({NodeKind::ArcRight, h, e, 0, l, 0}, mark);
    });
  }

  int arc_left(int h, int s, int l) {
    return memo(key(NodeKind::ArcLeft, h, s, 0, l, 0), [&] {
      const std::size_t mark = scratch_.size();
      for (int k = s; k <= h - 1; ++k) {
        const int t = anchored(k, s, h - 1, l, 0);
        if (t >= 0) push({t, -1}, arc_part(l, h, k));
      }
      return finish({NodeKind::ArcLeft, h, s, 0, l, 0}, mark);
    });
  }

  int anchored(int k, int s, int e, int l, int d) {
    const auto ul = static_cast<std::size_t>(l);
    if (labels_.arity[ul] != 1 || d >= f_.cap_) return core(k, s, e, l);
    return memo(key(NodeKind::Anchored, k, s, e, l, d), [&] {
      const std::size_t mark = scratch_.size();
      if (const int c = core(k, s, e, l); c >= 0) push({c, -1}, {});
      const auto& kids = labels_.children[ul][0];
      for (std::size_t idx = 0; idx < kids.size(); ++idx) {
        const int t = anchored(k, s, e, kids[idx], d + 1);
        if (t < 0) continue;
        EdgeParts p = arc_part(kids[idx], k, k);
        p = pattern_part(p, l, Pattern::X, s, e, k);
        p = trans_part(p, l, 0, static_cast<int>(idx));
        push({t, -1}, p);
      }
      return finish({NodeKind::Anchored, k, s, e, l, d}, mark);
    });
  }

  int core(int k, int s, int e, int l) {
    return memo(key(NodeKind::Core, k, s, e, l, 0), [&] {
      const std::size_t mark = scratch_.size();
      switch (labels_.arity[static_cast<std::size_t>(l)]) {
        case 0:
          push({-1, -1}, pattern_part({}, l, Pattern::WW, s, e, k));
          break;
        case 1:
          if (k < e) {
            if (const int t = slot_right(k, e, l, 0); t >= 0) push({t, -1}, pattern_part({}, l, Pattern::WX, s, e, k));
          }
          if (s < k) {
            if (const int t = slot_left(k, s, l, 0); t >= 0) push({t, -1}, pattern_part({}, l, Pattern::XW, s, e, k));
          }
          break;
        case 2:
          if (s < k && k < e) {
            const int l0 = slot_left(k, s, l, 0), r1 = slot_right(k, e, l, 1);
            if (l0 >= 0 && r1 >= 0) push({l0, r1}, pattern_part({}, l, Pattern::XY, s, e, k));
            const int l1 = slot_left(k, s, l, 1), r0 = slot_right(k, e, l, 0);
            if (l1 >= 0 && r0 >= 0) push({l1, r0}, pattern_part({}, l, Pattern::YX, s, e, k));
          }
          break;
        default:
          break;
      }
      return finish({NodeKind::Core, k, s, e, l, 0}, mark);
    });
  }

  int slot_right(int k, int e, int l, int a) {
    return memo(key(NodeKind::SlotRight, k, e, 0, l, a), [&] {
      const std::size_t mark = scratch_.size();
      const auto& kids = labels_.children[static_cast<std::size_t>(l)][static_cast<std::size_t>(a)];
      for (std::size_t idx = 0; idx < kids.size(); ++idx) {
        const int t = arc_right(k, e, kids[idx]);
        if (t >= 0) push({t, -1}, trans_part({}, l, a, static_cast<int>(idx)));
      }
      return finish({NodeKind::SlotRight, k, e, 0, l, a}, mark);
    });
  }

  int slot_left(int k, int s, int l, int a) {
    return memo(key(NodeKind::SlotLeft, k, s, 0, l, a), [&] {
      const std::size_t mark = scratch_.size();
      const auto& kids = labels_.children[static_cast<std::size_t>(l)][static_cast<std::size_t>(a)];
      for (std::size_t idx = 0; idx < kids.size(); ++idx) {
        const int t = arc_left(k, s, kids[idx]);
        if (t >= 0) push({t, -1}, trans_part({}, l, a, static_cast<int>(idx)));
      }
      return finish({NodeKind::SlotLeft, k, s, 0, l, a}, mark);
    });
  }

  const LabelSet& labels_;
  Forest f_;
  MemoTable memo_;
  std::vector<Hyperedge> scratch_;
};

Forest Forest::build(int n_tokens, const LabelSet& labels, int max_self_loops) {
  return ForestBuilder(n_tokens, labels, max_self_loops).run();
}

// ---------------------------------------------------------------------------
// Inside / outside

double edge_score(const EdgeParts& p, const Potentials& pot) {
  double s = 0.0;
  if (p.arc_label >= 0) s += pot.arc_at(p.arc_label, p.head, p.modifier);
  if (p.pattern_label >= 0) {
    s += pot.pattern[static_cast<std::size_t>(p.pattern_label) * kNumPatterns + static_cast<std::size_t>(p.pattern)];
    if (const auto owned = owned_words(p.pattern, p.begin, p.end, p.anchor)) {
      s += pot.words(p.pattern_label, owned->first, owned->second);
    }
  }
  if (p.trans_label >= 0) {
    s += pot.transition[static_cast<std::size_t>(p.trans_label)][static_cast<std::size_t>(p.trans_slot)]
                       [static_cast<std::size_t>(p.trans_index)];
  }
  return s;
}

namespace {

double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double tails_inside(const Hyperedge& e, const std::vector<double>& inside) {
  double s = 0.0;
  for (int t : e.tails) {
    if (t >= 0) s += inside[static_cast<std::size_t>(t)];
  }
  return s;
}

}  // namespace

Chart compute_inside(const Forest& forest, const Potentials& pot) {
  Chart chart;
  const auto& edges = forest.edges();
  const auto& nodes = forest.nodes();
  chart.edge_weight.resize(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) chart.edge_weight[e] = edge_score(edges[e].parts, pot);
  chart.inside.assign(nodes.size(), kLogZero);
  std::vector<double> terms;
  for (std::size_t v = 0; v < nodes.size(); ++v) {
    const auto& node = nodes[v];
    terms.clear();
    double hi = kLogZero;
    for (int e = node.first_edge; e < node.first_edge + node.edge_count; ++e) {
      const double x = chart.edge_weight[static_cast<std::size_t>(e)] + tails_inside(edges[static_cast<std::size_t>(e)], chart.inside);
      terms.push_back(x);
      hi = std::max(hi, x);
    }
    if (hi == kLogZero || !std::isfinite(hi)) {
      chart.inside[v] = hi;
      continue;
    }
    double sum = 0.0;
    for (double x : terms) sum += std::exp(x - hi);
    chart.inside[v] = hi + std::log(sum);
  }
  chart.log_z = forest.has_derivation() ? chart.inside[static_cast<std::size_t>(forest.goal())] : kLogZero;
  return chart;
}

void compute_outside(const Forest& forest, Chart& chart) {
  const auto& edges = forest.edges();
  const auto& nodes = forest.nodes();
  chart.outside.assign(nodes.size(), kLogZero);
  if (!forest.has_derivation()) return;
  chart.outside[static_cast<std::size_t>(forest.goal())] = 0.0;
  for (std::size_t v = nodes.size(); v-- > 0;) {
    const double out = chart.outside[v];
    if (out == kLogZero) continue;
    const auto& node = nodes[v];
    for (int e = node.first_edge; e < node.first_edge + node.edge_count; ++e) {
      const auto& edge = edges[static_cast<std::size_t>(e)];
      const double base = out + chart.edge_weight[static_cast<std::size_t>(e)];
      for (std::size_t t = 0; t < 2; ++t) {
        const int tail = edge.tails[t];
        if (tail < 0) continue;
        const int other = edge.tails[1 - t];
        const double val = base + (other >= 0 ? chart.inside[static_cast<std::size_t>(other)] : 0.0);
        chart.outside[static_cast<std::size_t>(tail)] = log_add(chart.outside[static_cast<std::size_t>(tail)], val);
      }
    }
  }
}

std::vector<double> edge_log_marginals(const Forest& forest, const Chart& chart) {
  const auto& edges = forest.edges();
  std::vector<double> out(edges.size(), kLogZero);
  if (!forest.has_derivation() || chart.outside.empty()) return out;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const double o = chart.outside[static_cast<std::size_t>(edges[e].head)];
    if (o == kLogZero) continue;
    out[e] = o + chart.edge_weight[e] + tails_inside(edges[e], chart.inside) - chart.log_z;
  }
  return out;
}

PartMarginals expectations(const Forest& forest, const Chart& chart, const LabelSet& labels) {
  const int n = forest.n_tokens();
  PartMarginals m = PartMarginals::zeros(n, labels);
  const auto n1 = static_cast<std::size_t>(n + 1);
  // Word marginals accumulate as a difference array over [lo, hi].
  std::vector<double> word_diff(labels.size() * (n1 + 1), 0.0);
  const auto log_mu = edge_log_marginals(forest, chart);
  const auto& edges = forest.edges();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (log_mu[e] == kLogZero) continue;
    const double mu = std::exp(log_mu[e]);
    const auto& p = edges[e].parts;
    if (p.arc_label >= 0) {
      m.arc[(static_cast<std::size_t>(p.arc_label) * n1 + static_cast<std::size_t>(p.head)) * n1 + static_cast<std::size_t>(p.modifier)] += mu;
    }
    if (p.pattern_label >= 0) {
      m.pattern[static_cast<std::size_t>(p.pattern_label) * kNumPatterns + static_cast<std::size_t>(p.pattern)] += mu;
      if (const auto owned = owned_words(p.pattern, p.begin, p.end, p.anchor)) {
        const auto row = static_cast<std::size_t>(p.pattern_label) * (n1 + 1);
        word_diff[row + static_cast<std::size_t>(owned->first)] += mu;
        word_diff[row + static_cast<std::size_t>(owned->second) + 1] -= mu;
      }
    }
    if (p.trans_label >= 0) {
      m.transition[static_cast<std::size_t>(p.trans_label)][static_cast<std::size_t>(p.trans_slot)]
                  [static_cast<std::size_t>(p.trans_index)] += mu;
    }
  }
  for (std::size_t l = 0; l < labels.size(); ++l) {
    double run = 0.0;
    for (std::size_t t = 1; t <= static_cast<std::size_t>(n); ++t) {
      run += word_diff[l * (n1 + 1) + t];
      m.word[l * n1 + t] = run;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Viterbi

namespace {

struct Pending {
  int head;
  int modifier;
  int label;
  int depth;
};

class DerivationWalker {
 public:
  DerivationWalker(const Forest& f, const std::vector<int>& best_edge, const LabelSet& labels, const SemanticGrammar& g)
      : f_(f), best_(best_edge), labels_(labels), g_(g) {}

  std::vector<Arc> run() {
    walk(f_.goal(), std::nullopt);
    return std::move(arcs_);
  }

 private:
  void walk(int node, std::optional<Pending> pending) {
    const auto& edge = f_.edges()[static_cast<std::size_t>(best_[static_cast<std::size_t>(node)])];
    const auto& p = edge.parts;
    if (p.pattern_label >= 0) {
      if (!pending || pending->label != p.pattern_label) throw std::logic_error("derivation lost its arc");
      arcs_.push_back({pending->head, pending->modifier, unit(p.pattern_label), p.pattern, pending->depth});
      pending.reset();
    }
    if (p.arc_label >= 0) {
      const int depth = p.head == p.modifier ? arcs_.back().depth + 1 : 0;
      pending = Pending{p.head, p.modifier, p.arc_label, depth};
    }
    for (int t : edge.tails) {
      if (t >= 0) walk(t, pending);
    }
  }

  const SemanticUnit& unit(int label) const { return g_.unit(labels_.unit[static_cast<std::size_t>(label)]); }

  const Forest& f_;
  const std::vector<int>& best_;
  const LabelSet& labels_;
  const SemanticGrammar& g_;
  std::vector<Arc> arcs_;
};

}  // namespace

Derivation viterbi(const Forest& forest, const Potentials& pot, const LabelSet& labels, const SemanticGrammar& grammar) {
  if (!forest.has_derivation()) throw NoDerivation("no derivation covers the sentence");
  const auto& nodes = forest.nodes();
  const auto& edges = forest.edges();
  std::vector<double> best(nodes.size(), kLogZero);
  std::vector<int> best_edge(nodes.size(), -1);
  for (std::size_t v = 0; v < nodes.size(); ++v) {
    const auto& node = nodes[v];
    for (int e = node.first_edge; e < node.first_edge + node.edge_count; ++e) {
      const auto& edge = edges[static_cast<std::size_t>(e)];
      double s = edge_score(edge.parts, pot);
      for (int t : edge.tails) {
        if (t >= 0) s += best[static_cast<std::size_t>(t)];
      }
      if (best_edge[v] < 0 || s > best[v]) {
        best[v] = s;
        best_edge[v] = e;
      }
    }
  }
  Derivation d;
  d.tree = HybridTree(DerivationWalker(forest, best_edge, labels, grammar).run());
  d.mr = recover_mr(d.tree);
  d.score = best[static_cast<std::size_t>(forest.goal())];
  return d;
}

// ---------------------------------------------------------------------------

InsideResult inside_clamped(const Sentence& n, const MeaningRepresentation& m, const SemanticGrammar& g,
                            const Scorer& scorer, int max_self_loops) {
  InsideResult r;
  r.labels = LabelSet::clamped(m, g);
  r.forest = Forest::build(n.size(), r.labels, max_self_loops);
  r.potentials = scorer.potentials(n, r.labels);
  r.chart = compute_inside(r.forest, r.potentials);
  return r;
}

InsideResult inside_unclamped(const Sentence& n, const SemanticGrammar& g, const Scorer& scorer, int max_self_loops) {
  InsideResult r;
  r.labels = LabelSet::unclamped(g);
  r.forest = Forest::build(n.size(), r.labels, max_self_loops);
  r.potentials = scorer.potentials(n, r.labels);
  r.chart = compute_inside(r.forest, r.potentials);
  return r;
}

Derivation viterbi(const Sentence& n, const SemanticGrammar& g, const Scorer& scorer, int max_self_loops) {
  const LabelSet labels = LabelSet::unclamped(g);
  const Forest forest = Forest::build(n.size(), labels, max_self_loops);
  return viterbi(forest, scorer.potentials(n, labels), labels, g);
}

std::string marginals_tsv(const Forest& forest, const Chart& chart, const LabelSet& labels, const SemanticGrammar& g) {
  std::ostringstream out;
  out.precision(12);
  out << "i\tj\tk\tdirection\tpattern\tunit\tlog_marginal\n";
  const auto log_mu = edge_log_marginals(forest, chart);
  const auto& edges = forest.edges();
  auto unit = [&](int label) { return g.unit(labels.unit[static_cast<std::size_t>(label)]).to_string(); };
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (log_mu[e] == kLogZero) continue;
    const auto& p = edges[e].parts;
    const auto& node = forest.nodes()[static_cast<std::size_t>(edges[e].head)];
    if (p.pattern_label >= 0) {
      out << p.begin << '\t' << p.end << '\t' << p.anchor << "\t-\t" << to_string(p.pattern) << '\t'
          << unit(p.pattern_label) << '\t' << log_mu[e] << '\n';
    }
    if (p.arc_label >= 0) {
      const char* dir = p.head == p.modifier ? "self" : (p.head < p.modifier ? "right" : "left");
      const int far = p.head == p.modifier ? p.modifier : node.j;
      out << p.head << '\t' << far << '\t' << p.modifier << '\t' << dir << "\tarc\t" << unit(p.arc_label) << '\t'
          << log_mu[e] << '\n';
    }
  }
  return out.str();
}

void retain_freed_memory() {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

}  // namespace depht
