// Latent-variable CRF over hybrid trees: parameters, potentials, the
// regularized negative log-likelihood and its gradient, the two optimizers,
// and the model file.
#pragma once

#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "depht/chart.hpp"
#include "depht/corpus.hpp"
#include "depht/features.hpp"
#include "depht/funql.hpp"
#include "depht/neural.hpp"

namespace depht {

class DivergedLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Feature ids of one sentence for every grammar unit, unit-major over token
// positions 0..N. -1 where the feature is unknown or its family is off.
struct TokenFeatureIds {
  int n = 0;
  std::vector<int> word;
  std::vector<int> head;
  std::vector<int> mod;
  std::vector<int> bow;
  std::vector<std::span<const double>> vectors;  // embedding per position, empty without embeddings

  int at(const std::vector<int>& table, int unit, int t) const {
    return table[static_cast<std::size_t>(unit) * static_cast<std::size_t>(n + 1) + static_cast<std::size_t>(t)];
  }
};

class Model {
 public:
  Model() = default;
  Model(SemanticGrammar grammar, FeatureFlags flags, int max_self_loops, double l2);

  const SemanticGrammar& grammar() const { return *grammar_; }
  const FeatureFlags& flags() const { return flags_; }
  int max_self_loops() const { return c_; }
  double l2() const { return l2_; }
  void set_l2(double l2) { l2_ = l2; }

  // Indexes every feature an unclamped chart over these sentences can fire,
  // then freezes the index. Weights are reset to zero.
  void index_features(std::span<const Instance> data);
  const FeatureIndex& index() const { return index_; }
  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }

  void set_embeddings(std::shared_ptr<const EmbeddingTable> table, std::string source = {});
  const EmbeddingTable* embeddings() const { return embeddings_.get(); }
  const std::string& embedding_source() const { return embedding_source_; }

  // One d x d matrix per grammar unit, uniform in [-scale, scale].
  void enable_bilinear(std::uint64_t seed, double scale = 0.01);
  bool neural() const { return bilinear_.has_value(); }
  BilinearBank& bilinear() { return *bilinear_; }
  const BilinearBank& bilinear() const { return *bilinear_; }

  // Linear weights followed by the bilinear bank.
  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> theta);

  TokenFeatureIds token_features(const Sentence& n) const;
  Potentials potentials(const Sentence& n, const TokenFeatureIds& ids, const LabelSet& labels) const;
  // grad += sign * sum over parts of marginal * d(part score)/d(theta)
  void accumulate_gradient(const PartMarginals& mu, const TokenFeatureIds& ids, const LabelSet& labels, double sign,
                           std::span<double> grad) const;

  const LabelSet& unclamped_labels() const { return unclamped_; }

  Derivation decode(const Sentence& n) const;  // throws NoDerivation
  Prediction parse(const Sentence& n) const;   // nullopt when nothing covers n

  void save(std::ostream& out) const;
  void save_file(const std::string& path) const;
  // Embeddings are re-read from the recorded source unless given here.
  static Model load(std::istream& in, std::shared_ptr<const EmbeddingTable> embeddings = nullptr);
  static Model load_file(const std::string& path, std::shared_ptr<const EmbeddingTable> embeddings = nullptr);

 private:
  void rebuild_tables();
  int transition_id(int parent_unit, int child_unit) const;

  std::shared_ptr<const SemanticGrammar> grammar_;
  FeatureFlags flags_;
  int c_ = 20;
  double l2_ = 0.0;
  LabelSet unclamped_;
  FeatureIndex index_;
  std::vector<double> weights_;
  std::vector<int> pattern_ids_;     // unit x kNumPatterns
  std::vector<int> embedding_ids_;   // unit x dim
  std::unordered_map<std::uint64_t, int> transition_ids_;
  std::shared_ptr<const EmbeddingTable> embeddings_;
  std::string embedding_source_;
  std::optional<BilinearBank> bilinear_;
};

class ModelScorer : public Scorer {
 public:
  explicit ModelScorer(const Model& model) : model_(model) {}
  Potentials potentials(const Sentence& n, const LabelSet& labels) const override;

 private:
  const Model& model_;
};

std::vector<Prediction> parse_all(const Model& model, std::span<const Instance> data, int threads = 1);

// Regularized negative log-likelihood over a fixed training set. Instances
// whose gold cannot be derived are dropped at construction.
class Objective {
 public:
  struct Options {
    int threads = 1;
    std::size_t forest_cache_edges = 4'000'000;  // cache unclamped forests up to this many edges in total
    std::ostream* warnings = nullptr;
  };

  Objective(const Model& model, std::span<const Instance> data, Options options);
  Objective(const Model& model, std::span<const Instance> data) : Objective(model, data, Options{}) {}
  ~Objective();

  std::size_t size() const;
  const std::vector<std::size_t>& dropped() const { return dropped_; }

  // Loss at the model's current parameters, L2 included. Fills grad (same
  // size as the parameter vector) when non-empty.
  double evaluate(std::span<double> grad) const;
  // Data term of one usable instance; adds its gradient to grad when non-empty.
  double instance(std::size_t i, std::span<double> grad) const;

 private:
  struct Prepared;
  const Model& model_;
  Options options_;
  std::vector<std::unique_ptr<Prepared>> items_;
  std::vector<std::size_t> dropped_;
};

enum class Optimizer { LBFGS, SGD };

struct TrainOptions {
  Optimizer optimizer = Optimizer::LBFGS;
  double learning_rate = 0.05;
  int epochs = 30;             // SGD
  int max_iterations = 500;    // L-BFGS
  double function_tolerance = 1e-6;
  double gradient_tolerance = 1e-10;
  std::uint64_t seed = 1;
  int threads = 1;
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::vector<double> loss_trace;  // L-BFGS: per iteration, starting at the initial point; SGD: per epoch
  std::size_t used = 0;
  std::vector<std::size_t> dropped;
  std::string termination;
};

TrainResult train(Model& model, std::span<const Instance> data, const TrainOptions& options);

struct CrossValidation {
  double best_l2 = 0.0;
  std::vector<std::pair<double, double>> mean_f1;  // (l2, mean held-out F1)
};

// k-fold sweep; the model's index must already cover `data`. Ties go to the
// smaller coefficient.
CrossValidation select_l2(const Model& prototype, std::span<const Instance> data, std::span<const double> grid,
                          int folds, const TrainOptions& options);

}  // namespace depht
