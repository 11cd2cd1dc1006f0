#include "depht/features.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace depht {

bool FeatureFlags::enabled(FeatureFamily f) const {
  switch (f) {
    case FeatureFamily::Word: return word;
    case FeatureFamily::Pattern: return pattern;
    case FeatureFamily::Transition: return transition;
    case FeatureFamily::HeadWord: return head_word;
    case FeatureFamily::ModifierWord: return modifier_word;
    case FeatureFamily::BagOfWords: return bag_of_words;
    case FeatureFamily::Embedding: return embedding;
  }
  return false;
}

FeatureFlags FeatureFlags::preset(std::string_view name) {
  FeatureFlags f;
  if (name == "full") return f;
  f.head_word = f.modifier_word = f.bag_of_words = false;
  if (name == "basic") return f;
  if (name == "basic+hm") {
    f.head_word = f.modifier_word = true;
    return f;
  }
  if (name == "basic+bow") {
    f.bag_of_words = true;
    return f;
  }
  throw std::invalid_argument("unknown feature set '" + std::string(name) + "' (basic, basic+hm, basic+bow, full)");
}

std::string FeatureFlags::preset_name() const {
  for (const char* name : {"full", "basic", "basic+hm", "basic+bow"}) {
    FeatureFlags p = preset(name);
    p.embedding = embedding;
    p.lowercase = lowercase;
    if (p == *this) return name;
  }
  return "custom";
}

namespace {

void append_escaped(std::string& out, std::string_view field) {
  for (char c : field) {
    if (c == '&' || c == '\\') out += '\\';
    out += c;
  }
}

std::string_view family_tag(FeatureFamily f) {
  switch (f) {
    case FeatureFamily::Word: return "word";
    case FeatureFamily::Pattern: return "pat";
    case FeatureFamily::Transition: return "trans";
    case FeatureFamily::HeadWord: return "head";
    case FeatureFamily::ModifierWord: return "mod";
    case FeatureFamily::BagOfWords: return "bow";
    case FeatureFamily::Embedding: return "emb";
  }
  return "?";
}

}  // namespace

std::string normalize_token(const std::string& token, const FeatureFlags& flags) {
  if (!flags.lowercase) return token;
  std::string out = token;
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string feature_key(FeatureFamily family, const SemanticUnit& unit, std::string_view value) {
  std::string key(family_tag(family));
  key += '&';
  append_escaped(key, unit.to_string());
  key += '&';
  append_escaped(key, value);
  return key;
}

std::string transition_key(const SemanticUnit& parent, const SemanticUnit& child) {
  return feature_key(FeatureFamily::Transition, parent, child.to_string());
}

std::string pattern_key(const SemanticUnit& unit, Pattern p) {
  return feature_key(FeatureFamily::Pattern, unit, to_string(p));
}

std::string embedding_key(const SemanticUnit& unit, int dim) {
  return feature_key(FeatureFamily::Embedding, unit, std::to_string(dim));
}

// ---------------------------------------------------------------------------

int FeatureIndex::add(const std::string& key) {
  if (const auto it = ids_.find(key); it != ids_.end()) return it->second;
  if (frozen_) throw std::logic_error("feature index is frozen");
  const int id = static_cast<int>(keys_.size());
  ids_.emplace(key, id);
  keys_.push_back(key);
  return id;
}

int FeatureIndex::lookup(const std::string& key) const {
  const auto it = ids_.find(key);
  return it == ids_.end() ? kNull : it->second;
}

void FeatureIndex::freeze() {
  std::sort(keys_.begin(), keys_.end());
  for (std::size_t i = 0; i < keys_.size(); ++i) ids_[keys_[i]] = static_cast<int>(i);
  frozen_ = true;
}

// ---------------------------------------------------------------------------

std::vector<std::string> extract(const ArcContext& ctx, const FeatureFlags& flags) {
  std::vector<std::string> keys;
  const Sentence& n = ctx.sentence;
  if (flags.head_word) {
    keys.push_back(feature_key(FeatureFamily::HeadWord, ctx.unit, normalize_token(n.token(ctx.head), flags)));
  }
  if (flags.modifier_word) {
    keys.push_back(feature_key(FeatureFamily::ModifierWord, ctx.unit, normalize_token(n.token(ctx.modifier), flags)));
  }
  if (flags.bag_of_words) {
    for (int t = std::min(ctx.head, ctx.modifier); t <= std::max(ctx.head, ctx.modifier); ++t) {
      keys.push_back(feature_key(FeatureFamily::BagOfWords, ctx.unit, normalize_token(n.token(t), flags)));
    }
  }
  return keys;
}

std::vector<std::string> extract(const PatternContext& ctx, const FeatureFlags& flags) {
  std::vector<std::string> keys;
  if (flags.pattern) keys.push_back(pattern_key(ctx.unit, ctx.pattern));
  if (flags.word) {
    if (const auto owned = owned_words(ctx.pattern, ctx.begin, ctx.end, ctx.anchor)) {
      for (int t = owned->first; t <= owned->second; ++t) {
        keys.push_back(feature_key(FeatureFamily::Word, ctx.unit, normalize_token(ctx.sentence.token(t), flags)));
      }
    }
  }
  return keys;
}

std::vector<std::string> extract(const TransitionContext& ctx, const FeatureFlags& flags) {
  if (!flags.transition) return {};
  return {transition_key(ctx.parent, ctx.child)};
}

std::vector<std::pair<std::string, double>> extract_embedding(const ArcContext& ctx, const EmbeddingTable& table) {
  const auto avg = embedding_features(table.lookup(ctx.sentence.token(ctx.head)),
                                      table.lookup(ctx.sentence.token(ctx.modifier)));
  std::vector<std::pair<std::string, double>> out;
  out.reserve(avg.size());
  for (std::size_t d = 0; d < avg.size(); ++d) out.emplace_back(embedding_key(ctx.unit, static_cast<int>(d)), avg[d]);
  return out;
}

std::map<std::string, double> tree_features(const HybridTree& t, const Sentence& n, const FeatureFlags& flags,
                                            const EmbeddingTable* embeddings) {
  const auto& arcs = t.arcs();
  const auto regions = arc_regions(t, n);
  std::map<std::string, double> counts;
  auto bump = [&](const std::vector<std::string>& keys) {
    for (const auto& k : keys) counts[k] += 1.0;
  };

  for (std::size_t i = 0; i < arcs.size(); ++i) {
    const Arc& a = arcs[i];
    const ArcContext arc{n, a.parent, a.child, a.unit};
    bump(extract(arc, flags));
    if (flags.embedding && embeddings) {
      for (const auto& [k, v] : extract_embedding(arc, *embeddings)) counts[k] += v;
    }
    bump(extract(PatternContext{n, a.unit, a.pattern, regions[i].first, regions[i].second, a.child}, flags));

    // The MR parent of this arc's unit: previous link of the self-loop
    // chain, or the last unit anchored at the head word.
    const Arc* parent = nullptr;
    for (const Arc& b : arcs) {
      if (a.self_loop()) {
        if (b.child == a.child && b.depth == a.depth - 1 && (b.depth > 0 || !b.self_loop())) parent = &b;
      } else if (a.parent != 0 && b.child == a.parent && (!parent || b.depth > parent->depth)) {
        parent = &b;
      }
    }
    if (parent) bump(extract(TransitionContext{parent->unit, a.unit}, flags));
  }
  return counts;
}

}  // namespace depht
