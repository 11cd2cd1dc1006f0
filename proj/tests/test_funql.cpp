#include <algorithm>
#include <random>

#include "depht/funql.hpp"
#include "doctest.h"

using namespace depht;

namespace {

const char* kSignatures =
    "answer\tQUERY\tRIVER\n"
    "answer\tQUERY\tSTATE\n"
    "exclude\tRIVER\tRIVER,RIVER\n"
    "river(all)\tRIVER\n"
    "traverse\tRIVER\tSTATE\n"
    "stateid\tSTATE\tSTATENAME\n"
    "loc\tSTATE\tCITY\n"
    "cityid\tCITY\tCITYNAME\n"
    "state(all)\tSTATE\n";

const std::string kFig1 = "answer(exclude(river(all), traverse(stateid('tn'))))";

SignatureTable sigs() { return SignatureTable::from_string(kSignatures); }

// Random type-correct tree: pick among units returning `type`, leaves once
// the budget runs out.
MeaningRepresentation sample(const SemanticGrammar& g, const SemanticType& type, int budget, std::mt19937_64& rng) {
  std::vector<int> ids, leaves;
  for (int u = 0; u < static_cast<int>(g.size()); ++u) {
    if (g.unit(u).return_type != type) continue;
    ids.push_back(u);
    if (g.unit(u).arity() == 0) leaves.push_back(u);
  }
  const auto& pool = budget <= 0 && !leaves.empty() ? leaves : ids;
  const SemanticUnit& u = g.unit(pool[rng() % pool.size()]);
  std::vector<MeaningRepresentation> kids;
  for (const auto& t : u.arg_types) kids.push_back(sample(g, t, budget - 1, rng));
  return MeaningRepresentation::compose(u, std::move(kids));
}

}  // namespace

TEST_CASE("running example parses into six units") {
  const auto m = parse_mr(kFig1, sigs());
  REQUIRE(m.size() == 6);
  const std::vector<int> arities = {1, 2, 0, 1, 1, 0};
  for (int i = 0; i < 6; ++i) CHECK(m.node(i).unit.arity() == arities[static_cast<std::size_t>(i)]);
  CHECK(m.node(0).unit.to_string() == "QUERY:answer(RIVER)");
  CHECK(m.node(1).unit.to_string() == "RIVER:exclude(RIVER,RIVER)");
  CHECK(m.node(5).unit.to_string() == "STATENAME:'tn'");
  CHECK(m.node(5).unit.is_constant());
  CHECK(m.depth() == 5);
  CHECK(serialize_mr(m) == kFig1);
}

TEST_CASE("leaf unit") {
  const auto m = parse_mr("river(all)", sigs());
  REQUIRE(m.size() == 1);
  CHECK(m.root_unit().to_string() == "RIVER:river(all)");
  CHECK(m.root_unit().arity() == 0);
  CHECK(serialize_mr(m) == "river(all)");
}

TEST_CASE("multi-word constant chain") {
  const auto m = parse_mr("answer(loc(cityid('san antonio')))", sigs());
  REQUIRE(m.size() == 4);
  CHECK(m.node(3).unit.function == "'san antonio'");
  CHECK(m.node(3).unit.return_type.name() == "CITYNAME");
  for (int i = 1; i < 4; ++i) CHECK(m.parent(i) == i - 1);
}

TEST_CASE("parse errors") {
  const auto s = sigs();
  CHECK_THROWS_AS(parse_mr("answer(river(all)", s), SyntaxError);
  CHECK_THROWS_AS(parse_mr("answer(river(all)))", s), SyntaxError);
  CHECK_THROWS_AS(parse_mr("answer(stateid('tn)", s), SyntaxError);
  CHECK_THROWS_AS(parse_mr("", s), SyntaxError);
  CHECK_THROWS_AS(parse_mr("exclude(river(all))", s), TypeError);
  CHECK_THROWS_AS(parse_mr("traverse(river(all))", s), TypeError);
  CHECK_THROWS_AS(parse_mr("answer(mountain(all))", s), UnknownSymbol);
}

TEST_CASE("composition checks types") {
  const auto m = parse_mr("river(all)", sigs());
  const SemanticUnit traverse{SemanticType("RIVER"), "traverse", {SemanticType("STATE")}};
  CHECK_THROWS_AS(MeaningRepresentation::compose(traverse, {m}), TypeError);
  CHECK_THROWS_AS(MeaningRepresentation::compose(traverse, {}), TypeError);
}

TEST_CASE("grammar from the running example") {
  const auto m = parse_mr(kFig1, sigs());
  const auto g = build_grammar({m}, SemanticType("QUERY"));
  CHECK(g.size() == 6);
  const int answer = *g.id_of(m.node(0).unit);
  std::vector<std::string> kids;
  for (int id : g.allowed_children(answer, 0)) kids.push_back(g.unit(id).to_string());
  std::sort(kids.begin(), kids.end());
  CHECK(kids == std::vector<std::string>{"RIVER:exclude(RIVER,RIVER)", "RIVER:river(all)", "RIVER:traverse(STATE)"});
  CHECK(g.roots() == std::vector<int>{answer});
  for (int u = 0; u < static_cast<int>(g.size()); ++u) {
    for (int a = 0; a < g.unit(u).arity(); ++a) {
      for (int v = 0; v < static_cast<int>(g.size()); ++v) {
        const auto& allowed = g.allowed_children(u, a);
        const bool listed = std::find(allowed.begin(), allowed.end(), v) != allowed.end();
        CHECK(listed == (g.unit(v).return_type == g.unit(u).arg_types[static_cast<std::size_t>(a)]));
      }
    }
  }
}

TEST_CASE("grammar edge cases") {
  const auto leaf = parse_mr("river(all)", sigs());
  const auto g = build_grammar({leaf}, SemanticType("RIVER"));
  CHECK(g.size() == 1);
  CHECK(g.unit(0).arity() == 0);
  CHECK_THROWS_AS(build_grammar({}, SemanticType("QUERY")), EmptyCorpus);

  // The two answer units differ in argument type, so nothing is shared.
  const auto both = build_grammar({parse_mr(kFig1, sigs()), parse_mr("answer(loc(cityid('san antonio')))", sigs())},
                                  SemanticType("QUERY"));
  CHECK(both.size() == 10);
  CHECK(both.roots().size() == 2);
}

TEST_CASE("round trip over random grammar trees") {
  const auto s = sigs();
  const auto g = build_grammar({parse_mr(kFig1, s), parse_mr("answer(loc(cityid('san antonio')))", s),
                                parse_mr("answer(state(all))", SignatureTable::from_string(kSignatures))},
                               SemanticType("QUERY"));
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto m = sample(g, SemanticType("QUERY"), 1 + static_cast<int>(rng() % 6), rng);
    const auto text = serialize_mr(m);
    REQUIRE_MESSAGE(parse_mr(text, s) == m, text);
  }
}

TEST_CASE("mutated strings are rejected or reparse consistently") {
  const auto s = sigs();
  std::mt19937_64 rng(12);
  int rejected = 0;
  for (int i = 0; i < 500; ++i) {
    std::string text = kFig1;
    const auto pos = rng() % text.size();
    if (rng() % 2) {
      text.erase(pos, 1);
    } else {
      text.insert(pos, 1, "(),'x"[rng() % 5]);
    }
    try {
      const auto m = parse_mr(text, s);
      CHECK(parse_mr(serialize_mr(m), s) == m);
    } catch (const FunqlError&) {
      ++rejected;
    }
  }
  CHECK(rejected > 400);
}

TEST_CASE("signature file format") {
  const auto s = SignatureTable::from_string("# comment\n\nfoo\tA\tB,C\nfoo\tD\tB,C\nbar\tB\n");
  REQUIRE(s.find("foo") != nullptr);
  CHECK(s.find("foo")->size() == 2);
  CHECK(s.find("bar")->front().arg_types.empty());
  CHECK(s.find("baz") == nullptr);
  CHECK_THROWS(SignatureTable::from_string("broken line without tabs\n"));
}
