// Feature templates over chart-local structures (word / pattern / transition,
// head word / modifier word / bag of words, optional averaged embeddings) and
// the dense feature index.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "depht/funql.hpp"
#include "depht/hybrid_tree.hpp"
#include "depht/neural.hpp"

namespace depht {

enum class FeatureFamily { Word, Pattern, Transition, HeadWord, ModifierWord, BagOfWords, Embedding };

struct FeatureFlags {
  bool word = true;
  bool pattern = true;
  bool transition = true;
  bool head_word = true;
  bool modifier_word = true;
  bool bag_of_words = true;
  bool embedding = false;
  bool lowercase = false;

  bool enabled(FeatureFamily f) const;

  // "basic", "basic+hm", "basic+bow", "full"
  static FeatureFlags preset(std::string_view name);
  // Inverse of preset() for the four named regimes, "custom" otherwise.
  std::string preset_name() const;

  friend bool operator==(const FeatureFlags&, const FeatureFlags&) = default;
};

// Keys are `family&unit&token`; '&' and '\' inside fields are escaped so
// distinct triples never share a key.
std::string feature_key(FeatureFamily family, const SemanticUnit& unit, std::string_view value);
std::string transition_key(const SemanticUnit& parent, const SemanticUnit& child);
std::string pattern_key(const SemanticUnit& unit, Pattern p);
std::string embedding_key(const SemanticUnit& unit, int dim);
// Token as it appears inside keys (lowercased when the flag says so).
std::string normalize_token(const std::string& token, const FeatureFlags& flags);

// String key -> dense id. Ids follow sorted key order once frozen.
class FeatureIndex {
 public:
  static constexpr int kNull = -1;

  int add(const std::string& key);  // throws once frozen
  int lookup(const std::string& key) const;  // kNull when unseen
  // Re-number in sorted key order and stop growing.
  void freeze();
  bool frozen() const { return frozen_; }

  std::size_t size() const { return keys_.size(); }
  const std::string& key(int id) const { return keys_.at(static_cast<std::size_t>(id)); }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> keys_;
  bool frozen_ = false;
};

// An arc (head -> modifier) labeled with a unit.
struct ArcContext {
  const Sentence& sentence;
  int head;
  int modifier;
  const SemanticUnit& unit;
};

// A unit anchored at `anchor` with region [begin, end] and its pattern.
struct PatternContext {
  const Sentence& sentence;
  const SemanticUnit& unit;
  Pattern pattern;
  int begin;
  int end;
  int anchor;
};

struct TransitionContext {
  const SemanticUnit& parent;
  const SemanticUnit& child;
};

// Keys fired by one chart-local part, with multiplicity.
std::vector<std::string> extract(const ArcContext& ctx, const FeatureFlags& flags);
std::vector<std::string> extract(const PatternContext& ctx, const FeatureFlags& flags);
std::vector<std::string> extract(const TransitionContext& ctx, const FeatureFlags& flags);

// Real-valued (unit, dimension) features for an arc.
std::vector<std::pair<std::string, double>> extract_embedding(const ArcContext& ctx, const EmbeddingTable& table);

// Feature counts of a whole hybrid tree, computed from its arcs and regions.
std::map<std::string, double> tree_features(const HybridTree& t, const Sentence& n, const FeatureFlags& flags,
                                            const EmbeddingTable* embeddings = nullptr);

}  // namespace depht
