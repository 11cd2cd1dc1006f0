#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "depht/features.hpp"

namespace oracle {

namespace {

SemanticUnit unit(const std::string& ret, const std::string& fn, std::vector<std::string> args = {}) {
  SemanticUnit u{SemanticType(ret), fn, {}};
  for (auto& a : args) u.arg_types.emplace_back(a);
  return u;
}

}  // namespace

std::vector<SemanticGrammar> grid_grammars() {
  std::vector<SemanticGrammar> out;
  // answer / exclude / river(all) / traverse, loosely after the running example
  out.emplace_back(std::vector<SemanticUnit>{unit("Q", "answer", {"A"}), unit("A", "exclude", {"A", "A"}),
                                             unit("A", "river(all)"), unit("A", "traverse", {"A"})},
                   SemanticType("Q"));
  // two leaves under a binary node
  out.emplace_back(std::vector<SemanticUnit>{unit("Q", "answer", {"A"}), unit("A", "pair", {"B", "B"}),
                                             unit("B", "'x'"), unit("B", "'y'")},
                   SemanticType("Q"));
  // every unit is a root
  out.emplace_back(std::vector<SemanticUnit>{unit("A", "f", {"A"}), unit("A", "g", {"A", "A"}), unit("A", "'a'"),
                                             unit("A", "'b'")},
                   SemanticType("A"));
  // mixed argument types
  out.emplace_back(std::vector<SemanticUnit>{unit("Q", "answer", {"A"}), unit("A", "h", {"A", "B"}),
                                             unit("A", "'a'"), unit("B", "'b'")},
                   SemanticType("Q"));
  // three units only, no self-typed unary
  out.emplace_back(std::vector<SemanticUnit>{unit("Q", "answer", {"A"}), unit("A", "g", {"B", "B"}),
                                             unit("B", "'b'")},
                   SemanticType("Q"));
  return out;
}

Sentence random_sentence(std::mt19937_64& rng, int n) {
  static const char* vocab[] = {"a", "b", "c", "d"};
  std::uniform_int_distribution<int> pick(0, 3);
  std::vector<std::string> toks;
  for (int i = 0; i < n; ++i) toks.emplace_back(vocab[pick(rng)]);
  return Sentence(std::move(toks));
}

Model random_model(const SemanticGrammar& g, const std::vector<Sentence>& sentences, int c, bool neural,
                   Weights kind, std::mt19937_64& rng) {
  FeatureFlags flags;
  flags.embedding = neural;
  Model model(g, flags, c, 0.0);
  auto draw = [&](double dyadic_scale) {
    if (kind == Weights::Gaussian) return std::normal_distribution<double>(0.0, 1.0)(rng);
    return std::uniform_int_distribution<int>(-1024, 1024)(rng) / dyadic_scale;
  };
  if (neural) {
    auto table = std::make_shared<EmbeddingTable>(3);
    for (const char* w : {"a", "b", "c", "d"}) {
      std::vector<double> v(3);
      for (double& x : v) x = draw(512.0);
      table->add(w, v);
    }
    model.set_embeddings(table);
  }
  std::vector<Instance> data;
  for (const auto& s : sentences) data.push_back({s, {}, "en"});
  model.index_features(data);
  for (double& w : model.weights()) w = draw(1024.0);
  if (neural) {
    model.enable_bilinear(1);
    for (double& x : model.bilinear().data()) x = draw(256.0);
  }
  return model;
}

double naive_bilinear(std::span<const double> p, std::span<const double> c, std::span<const double> u) {
  const std::size_t d = p.size();
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) s += p[i] * u[i * d + j] * c[j];
  }
  return s;
}

double tree_score(const Model& model, const HybridTree& t, const Sentence& n) {
  double s = 0.0;
  for (const auto& [key, count] : tree_features(t, n, model.flags(), model.embeddings())) {
    const int id = model.index().lookup(key);
    if (id < 0) throw std::logic_error("tree fires unindexed feature " + key);
    s += count * model.weights()[static_cast<std::size_t>(id)];
  }
  if (model.neural()) {
    for (const auto& a : t.arcs()) {
      const int u = *model.grammar().id_of(a.unit);
      s += naive_bilinear(model.embeddings()->lookup(n.token(a.parent)), model.embeddings()->lookup(n.token(a.child)),
                          model.bilinear().matrix(u));
    }
  }
  return s;
}

double log_sum_exp(const std::vector<double>& xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double hi = *std::max_element(xs.begin(), xs.end());
  double sum = 0.0;
  for (double x : xs) sum += std::exp(x - hi);
  return hi + std::log(sum);
}

namespace {

// An MR fragment with the fewest word-owning nodes it can get away with and,
// for that count, how many more self-loops its top token still allows.
struct Partial {
  MeaningRepresentation mr;
  int owners;
  int slack;
};

class Expander {
 public:
  Expander(const SemanticGrammar& g, int n, int c) : g_(g), n_(n), c_(c) {}

  const std::vector<Partial>& expand(const SemanticType& type, int budget) {
    const auto key = std::make_pair(type.name(), budget);
    if (const auto it = memo_.find(key); it != memo_.end()) return it->second;
    std::vector<Partial> out;
    if (budget > 0) {
      for (const auto& u : g_.units()) {
        if (u.return_type != type) continue;
        if (u.arity() == 0) {
          out.push_back({MeaningRepresentation::leaf(u), 1, c_});
        } else if (u.arity() == 1) {
          for (const auto& kid : expand(u.arg_types[0], budget - 1)) {
            auto mr = MeaningRepresentation::compose(u, {kid.mr});
            if (kid.slack > 0) {
              out.push_back({std::move(mr), kid.owners, kid.slack - 1});
            } else if (kid.owners + 1 <= n_) {
              out.push_back({std::move(mr), kid.owners + 1, c_});
            }
          }
        } else {
          for (const auto& left : expand(u.arg_types[0], budget - 2)) {
            const int rest = budget - 1 - static_cast<int>(left.mr.size());
            for (const auto& right : expand(u.arg_types[1], rest)) {
              const int owners = 1 + left.owners + right.owners;
              if (owners <= n_) out.push_back({MeaningRepresentation::compose(u, {left.mr, right.mr}), owners, c_});
            }
          }
        }
      }
    }
    return memo_.emplace(key, std::move(out)).first->second;
  }

 private:
  const SemanticGrammar& g_;
  int n_;
  int c_;
  std::map<std::pair<std::string, int>, std::vector<Partial>> memo_;
};

}  // namespace

std::vector<MeaningRepresentation> candidate_mrs(const SemanticGrammar& g, int n_tokens, int c) {
  Expander ex(g, n_tokens, c);
  std::vector<MeaningRepresentation> out;
  for (const auto& p : ex.expand(g.root_type(), n_tokens * (c + 1))) out.push_back(p.mr);
  return out;
}

std::vector<Scored> all_derivations(const Model& model, const Sentence& n) {
  std::vector<Scored> out;
  for (const auto& m : candidate_mrs(model.grammar(), n.size(), model.max_self_loops())) {
    for (auto& t : enumerate_trees(n, m, model.max_self_loops())) {
      const double s = tree_score(model, t, n);
      out.push_back({m, std::move(t), s});
    }
  }
  return out;
}

double brute_log_z(const Model& model, const Sentence& n, const MeaningRepresentation& m) {
  std::vector<double> scores;
  for (const auto& t : enumerate_trees(n, m, model.max_self_loops())) scores.push_back(tree_score(model, t, n));
  return log_sum_exp(scores);
}

double brute_log_z(const std::vector<Scored>& all) {
  std::vector<double> scores;
  for (const auto& d : all) scores.push_back(d.score);
  return log_sum_exp(scores);
}

}  // namespace oracle
