#include <algorithm>

#include "depht/features.hpp"
#include "doctest.h"

using namespace depht;

namespace {

const Sentence kRivers = Sentence::from_text("What rivers do not run through Tennessee ?");

struct Example {
  MeaningRepresentation m;
  HybridTree t;
};

Example rivers() {
  const auto s = SignatureTable::from_string(
      "answer\tQUERY\tRIVER\nexclude\tRIVER\tRIVER,RIVER\nriver(all)\tRIVER\ntraverse\tRIVER\tSTATE\n"
      "stateid\tSTATE\tSTATENAME\n");
  auto m = parse_mr("answer(exclude(river(all), traverse(stateid('tn'))))", s);
  const auto u = [&](int i) { return m.node(i).unit; };
  HybridTree t({
      {0, 1, u(0), Pattern::WX, 0},
      {1, 4, u(1), Pattern::XY, 0},
      {4, 2, u(2), Pattern::WW, 0},
      {4, 6, u(3), Pattern::WX, 0},
      {6, 7, u(4), Pattern::X, 0},
      {7, 7, u(5), Pattern::WW, 1},
  });
  return {std::move(m), std::move(t)};
}

double count(const std::map<std::string, double>& f, const std::string& key) {
  const auto it = f.find(key);
  return it == f.end() ? 0.0 : it->second;
}

}  // namespace

TEST_CASE("features of the running example") {
  const auto [m, t] = rivers();
  const auto f = tree_features(t, kRivers, FeatureFlags::preset("full"));
  const std::string traverse = "RIVER:traverse(STATE)", exclude = "RIVER:exclude(RIVER,RIVER)";

  CHECK(count(f, "word&" + traverse + "&run") == 1);
  CHECK(count(f, "word&" + traverse + "&through") == 1);
  CHECK(count(f, "word&" + traverse + "&not") == 0);
  CHECK(count(f, "head&" + traverse + "&not") == 1);
  CHECK(count(f, "mod&" + traverse + "&through") == 1);
  CHECK(count(f, "bow&" + traverse + "&not") == 1);
  CHECK(count(f, "bow&" + traverse + "&run") == 1);
  CHECK(count(f, "bow&" + traverse + "&through") == 1);
  CHECK(count(f, "pat&" + exclude + "&XY") == 1);
  CHECK(count(f, "pat&" + traverse + "&WX") == 1);
  CHECK(count(f, "trans&" + exclude + "&RIVER:river(all)") == 1);
  CHECK(count(f, "trans&" + exclude + "&" + traverse) == 1);
  CHECK(count(f, "trans&QUERY:answer(RIVER)&" + exclude) == 1);
  CHECK(count(f, "trans&STATE:stateid(STATENAME)&STATENAME:'tn'") == 1);

  // exclude owns only its anchor; river(all) owns "rivers do"
  CHECK(count(f, "word&" + exclude + "&not") == 1);
  CHECK(count(f, "word&RIVER:river(all)&rivers") == 1);
  CHECK(count(f, "word&RIVER:river(all)&do") == 1);
  // X owns nothing, the self-loop owns the rest
  CHECK(count(f, "word&STATE:stateid(STATENAME)&Tennessee") == 0);
  CHECK(count(f, "word&STATENAME:'tn'&Tennessee") == 1);
  CHECK(count(f, "word&STATENAME:'tn'&?") == 1);
  // self-loop: head and modifier coincide
  CHECK(count(f, "head&STATENAME:'tn'&Tennessee") == 1);
  CHECK(count(f, "bow&STATENAME:'tn'&Tennessee") == 1);
  // root arc head is the root token
  CHECK(count(f, "head&QUERY:answer(RIVER)&<ROOT>") == 1);

  double words = 0;
  for (const auto& [k, v] : f) {
    if (k.rfind("word&", 0) == 0) words += v;
  }
  CHECK(words == 8);  // each token owned once
}

TEST_CASE("presets switch families") {
  const auto [m, t] = rivers();
  const auto basic = tree_features(t, kRivers, FeatureFlags::preset("basic"));
  for (const auto& [k, v] : basic) {
    CHECK((k.rfind("word&", 0) == 0 || k.rfind("pat&", 0) == 0 || k.rfind("trans&", 0) == 0));
  }
  const auto hm = tree_features(t, kRivers, FeatureFlags::preset("basic+hm"));
  const auto bow = tree_features(t, kRivers, FeatureFlags::preset("basic+bow"));
  CHECK(hm.size() > basic.size());
  CHECK(bow.size() > basic.size());
  CHECK(std::none_of(hm.begin(), hm.end(), [](const auto& kv) { return kv.first.rfind("bow&", 0) == 0; }));
  CHECK(std::none_of(bow.begin(), bow.end(), [](const auto& kv) { return kv.first.rfind("head&", 0) == 0; }));

  for (const char* name : {"basic", "basic+hm", "basic+bow", "full"}) CHECK(FeatureFlags::preset(name).preset_name() == name);
  CHECK_THROWS_AS(FeatureFlags::preset("everything"), std::invalid_argument);
  FeatureFlags odd = FeatureFlags::preset("basic");
  odd.transition = false;
  CHECK(odd.preset_name() == "custom");
  CHECK_FALSE(odd.enabled(FeatureFamily::Transition));
}

TEST_CASE("lowercasing") {
  FeatureFlags f = FeatureFlags::preset("basic");
  CHECK(normalize_token("Tennessee", f) == "Tennessee");
  f.lowercase = true;
  CHECK(normalize_token("Tennessee", f) == "tennessee");
  const auto [m, t] = rivers();
  const auto feats = tree_features(t, kRivers, f);
  CHECK(count(feats, "word&STATENAME:'tn'&tennessee") == 1);
}

TEST_CASE("patterns without words") {
  const SemanticUnit u{SemanticType("S"), "stateid", {SemanticType("N")}};
  FeatureFlags f = FeatureFlags::preset("basic");
  const auto keys = extract(PatternContext{kRivers, u, Pattern::X, 7, 8, 7}, f);
  REQUIRE(keys.size() == 1);
  CHECK(keys[0] == "pat&S:stateid(N)&X");
  f.pattern = false;
  CHECK(extract(PatternContext{kRivers, u, Pattern::X, 7, 8, 7}, f).empty());
}

TEST_CASE("keys escape separators") {
  const SemanticUnit amp{SemanticType("A"), "'a&b'", {}};
  const SemanticUnit plain{SemanticType("A"), "'a'", {}};
  const auto k1 = feature_key(FeatureFamily::Word, amp, "c");
  const auto k2 = feature_key(FeatureFamily::Word, plain, "b&c");
  CHECK(k1 != k2);
  CHECK(k1 == "word&A:'a\\&b'&c");
  CHECK(feature_key(FeatureFamily::Word, plain, "x\\") != feature_key(FeatureFamily::Word, plain, "x\\\\"));
  CHECK(embedding_key(plain, 3) == "emb&A:'a'&3");
}

TEST_CASE("feature index") {
  FeatureIndex idx;
  CHECK(idx.add("b") == 0);
  CHECK(idx.add("a") == 1);
  CHECK(idx.add("b") == 0);
  CHECK(idx.size() == 2);
  CHECK(idx.lookup("zzz") == FeatureIndex::kNull);
  idx.freeze();
  CHECK(idx.frozen());
  CHECK(idx.lookup("a") == 0);
  CHECK(idx.lookup("b") == 1);
  CHECK(idx.key(1) == "b");
  CHECK(idx.add("a") == 0);
  CHECK_THROWS_AS(idx.add("c"), std::logic_error);
  CHECK(idx.lookup("c") == FeatureIndex::kNull);
}

TEST_CASE("embedding features average head and modifier") {
  EmbeddingTable table(2);
  table.add("run", std::vector<double>{1.0, 2.0});
  table.add("through", std::vector<double>{3.0, -2.0});
  const SemanticUnit u{SemanticType("R"), "traverse", {SemanticType("S")}};
  const auto feats = extract_embedding(ArcContext{kRivers, 5, 6, u}, table);
  REQUIRE(feats.size() == 2);
  CHECK(feats[0].first == "emb&R:traverse(S)&0");
  CHECK(feats[0].second == 2.0);
  CHECK(feats[1].second == 0.0);
  // unknown modifier falls back to zeros
  const auto half = extract_embedding(ArcContext{kRivers, 5, 7, u}, table);
  CHECK(half[0].second == 0.5);
  CHECK(half[1].second == 1.0);
}
