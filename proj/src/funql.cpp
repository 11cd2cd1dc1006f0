#include "depht/funql.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <utility>

namespace depht {

SemanticType::SemanticType(std::string name) : name_(std::move(name)) {
  if (name_.empty()) throw std::invalid_argument("semantic type name must be non-empty");
}

std::string SemanticUnit::to_string() const {
  std::string out = return_type.name() + ":" + function;
  if (!arg_types.empty()) {
    out += '(';
    for (std::size_t i = 0; i < arg_types.size(); ++i) {
      if (i) out += ',';
      out += arg_types[i].name();
    }
    out += ')';
  }
  return out;
}

namespace {

std::string unit_key(const SemanticUnit& u) {
  std::string key = u.return_type.name();
  key += '\x1f';
  key += u.function;
  for (const auto& a : u.arg_types) {
    key += '\x1f';
    key += a.name();
  }
  return key;
}

}  // namespace

// ---------------------------------------------------------------------------
// MeaningRepresentation

MeaningRepresentation MeaningRepresentation::leaf(SemanticUnit unit) {
  if (unit.arity() != 0) {
    throw TypeError("unit " + unit.to_string() + " has arity " + std::to_string(unit.arity()) +
                    " but no arguments were given");
  }
  MeaningRepresentation mr;
  mr.nodes_.push_back({std::move(unit), {}});
  mr.parents_.push_back(-1);
  return mr;
}

MeaningRepresentation MeaningRepresentation::compose(SemanticUnit unit,
                                                     std::vector<MeaningRepresentation> children) {
  if (static_cast<int>(children.size()) != unit.arity()) {
    throw TypeError("unit " + unit.to_string() + " expects " + std::to_string(unit.arity()) +
                    " arguments, got " + std::to_string(children.size()));
  }
  for (std::size_t i = 0; i < children.size(); ++i) {
    if (children[i].empty()) throw TypeError("empty argument tree");
    if (children[i].root_unit().return_type != unit.arg_types[i]) {
      throw TypeError("argument " + std::to_string(i) + " of " + unit.to_string() + " has type " +
                      children[i].root_unit().return_type.name() + ", expected " +
                      unit.arg_types[i].name());
    }
  }
  MeaningRepresentation mr;
  mr.nodes_.push_back({std::move(unit), {}});
  mr.parents_.push_back(-1);
  for (const auto& child : children) mr.append(child, 0);
  return mr;
}

void MeaningRepresentation::append(const MeaningRepresentation& child, int parent) {
  const int offset = static_cast<int>(nodes_.size());
  nodes_[static_cast<std::size_t>(parent)].children.push_back(offset);
  for (std::size_t i = 0; i < child.nodes_.size(); ++i) {
    Node n = child.nodes_[i];
    for (int& c : n.children) c += offset;
    nodes_.push_back(std::move(n));
    parents_.push_back(i == 0 ? parent : child.parents_[i] + offset);
  }
}

int MeaningRepresentation::depth() const {
  if (nodes_.empty()) return 0;
  std::vector<int> d(nodes_.size(), 1);
  int best = 1;
  for (std::size_t i = 1; i < nodes_.size(); ++i) {
    d[i] = d[static_cast<std::size_t>(parents_[i])] + 1;
    best = std::max(best, d[i]);
  }
  return best;
}

MeaningRepresentation MeaningRepresentation::subtree(int i) const {
  const Node& n = node(i);
  std::vector<MeaningRepresentation> kids;
  kids.reserve(n.children.size());
  for (int c : n.children) kids.push_back(subtree(c));
  if (kids.empty()) {
    MeaningRepresentation mr;
    mr.nodes_.push_back({n.unit, {}});
    mr.parents_.push_back(-1);
    return mr;
  }
  return compose(n.unit, std::move(kids));
}

// ---------------------------------------------------------------------------
// SignatureTable

namespace {

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

SignatureTable SignatureTable::load(std::istream& in) {
  SignatureTable table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line).front() == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() < 2 || fields.size() > 3) {
      throw SyntaxError("signature line " + std::to_string(lineno) +
                        ": expected function<TAB>return_type<TAB>arg_types");
    }
    Signature sig{SemanticType(trim(fields[1])), {}};
    if (fields.size() == 3 && !trim(fields[2]).empty()) {
      for (const auto& a : split(fields[2], ',')) sig.arg_types.emplace_back(trim(a));
    }
    if (sig.arg_types.size() > 2) {
      throw TypeError("signature line " + std::to_string(lineno) + ": arity above 2 is not supported");
    }
    table.add(trim(fields[0]), std::move(sig));
  }
  return table;
}

SignatureTable SignatureTable::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open signature file " + path);
  return load(in);
}

SignatureTable SignatureTable::from_string(std::string_view text) {
  std::istringstream in{std::string(text)};
  return load(in);
}

void SignatureTable::add(std::string function, Signature signature) {
  table_[std::move(function)].push_back(std::move(signature));
}

const std::vector<SignatureTable::Signature>* SignatureTable::find(const std::string& function) const {
  const auto it = table_.find(function);
  return it == table_.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// parse / serialize

namespace {

struct Term {
  std::string name;
  bool quoted = false;
  bool call = false;
  std::vector<Term> args;

  std::string canonical() const {
    if (quoted) return "'" + name + "'";
    if (!call) return name;
    std::string out = name + "(";
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (i) out += ", ";
      out += args[i].canonical();
    }
    return out + ")";
  }
};

class TermParser {
 public:
  explicit TermParser(std::string_view text) : text_(text) {}

  Term parse() {
    Term t = term();
    skip_space();
    if (pos_ != text_.size()) fail("trailing input");
    return t;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw SyntaxError(what + " at offset " + std::to_string(pos_) + " in \"" + std::string(text_) + "\"");
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  static bool is_name_char(char c) {
    return !std::isspace(static_cast<unsigned char>(c)) && c != '(' && c != ')' && c != ',' && c != '\'';
  }

  Term term() {
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    Term t;
    if (text_[pos_] == '\'') {
      const auto close = text_.find('\'', pos_ + 1);
      if (close == std::string_view::npos) fail("unterminated quoted constant");
      t.quoted = true;
      t.name = std::string(text_.substr(pos_ + 1, close - pos_ - 1));
      pos_ = close + 1;
      return t;
    }
    const std::size_t start = pos_;
    while (pos_ < text_.size() && is_name_char(text_[pos_])) ++pos_;
    if (pos_ == start) fail("expected a symbol");
    t.name = std::string(text_.substr(start, pos_ - start));
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == '(') {
      ++pos_;
      t.call = true;
      while (true) {
        t.args.push_back(term());
        skip_space();
        if (pos_ >= text_.size()) fail("unbalanced parentheses");
        if (text_[pos_] == ',') {
          ++pos_;
          continue;
        }
        if (text_[pos_] == ')') {
          ++pos_;
          break;
        }
        fail("expected ',' or ')'");
      }
    }
    return t;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

MeaningRepresentation resolve(const Term& term, const SemanticType* expected,
                              const SignatureTable& table) {
  if (term.quoted) {
    if (!expected) throw TypeError("constant " + term.canonical() + " has no argument slot to type it");
    return MeaningRepresentation::leaf({*expected, term.canonical(), {}});
  }

  const std::string folded = term.canonical();
  const auto* folded_sigs = term.call ? table.find(folded) : nullptr;
  if (folded_sigs) {
    for (const auto& sig : *folded_sigs) {
      if (sig.arg_types.empty() && (!expected || sig.return_type == *expected)) {
        return MeaningRepresentation::leaf({sig.return_type, folded, {}});
      }
    }
  }

  const auto* sigs = table.find(term.name);
  if (!sigs) {
    if (folded_sigs) {
      throw TypeError(folded + " does not return " + (expected ? expected->name() : std::string("?")));
    }
    throw UnknownSymbol("unknown function symbol '" + term.name + "'");
  }

  std::vector<const SignatureTable::Signature*> candidates;
  for (const auto& sig : *sigs) {
    if (sig.arg_types.size() == term.args.size()) candidates.push_back(&sig);
  }
  if (candidates.empty()) {
    throw TypeError("arity mismatch: '" + term.name + "' applied to " + std::to_string(term.args.size()) +
                    " arguments");
  }
  std::erase_if(candidates, [&](const auto* sig) { return expected && sig->return_type != *expected; });
  if (candidates.empty()) {
    throw TypeError("type mismatch: '" + term.name + "' cannot return " + expected->name());
  }

  std::optional<TypeError> last;
  for (const auto* sig : candidates) {
    try {
      std::vector<MeaningRepresentation> kids;
      kids.reserve(term.args.size());
      for (std::size_t i = 0; i < term.args.size(); ++i) {
        kids.push_back(resolve(term.args[i], &sig->arg_types[i], table));
      }
      return MeaningRepresentation::compose({sig->return_type, term.name, sig->arg_types}, std::move(kids));
    } catch (const TypeError& e) {
      last = e;
    }
  }
  throw *last;
}

void serialize_node(const MeaningRepresentation& mr, int i, std::string& out) {
  const auto& n = mr.node(i);
  out += n.unit.function;
  if (n.children.empty()) return;
  out += '(';
  for (std::size_t c = 0; c < n.children.size(); ++c) {
    if (c) out += ", ";
    serialize_node(mr, n.children[c], out);
  }
  out += ')';
}

}  // namespace

MeaningRepresentation parse_mr(std::string_view text, const SignatureTable& signatures) {
  const Term term = TermParser(text).parse();
  return resolve(term, nullptr, signatures);
}

std::string serialize_mr(const MeaningRepresentation& mr) {
  std::string out;
  if (!mr.empty()) serialize_node(mr, 0, out);
  return out;
}

// ---------------------------------------------------------------------------
// SemanticGrammar

SemanticGrammar::SemanticGrammar(std::vector<SemanticUnit> units, SemanticType root_type)
    : units_(std::move(units)), root_type_(std::move(root_type)) {
  for (std::size_t i = 0; i < units_.size(); ++i) {
    if (!by_key_.emplace(unit_key(units_[i]), static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate unit " + units_[i].to_string());
    }
  }
  children_.resize(units_.size());
  for (std::size_t u = 0; u < units_.size(); ++u) {
    children_[u].resize(units_[u].arg_types.size());
    for (std::size_t k = 0; k < units_[u].arg_types.size(); ++k) {
      for (std::size_t v = 0; v < units_.size(); ++v) {
        if (units_[v].return_type == units_[u].arg_types[k]) children_[u][k].push_back(static_cast<int>(v));
      }
    }
    if (units_[u].return_type == root_type_) roots_.push_back(static_cast<int>(u));
  }
}

std::optional<int> SemanticGrammar::id_of(const SemanticUnit& unit) const {
  const auto it = by_key_.find(unit_key(unit));
  if (it == by_key_.end()) return std::nullopt;
  return it->second;
}

const std::vector<int>& SemanticGrammar::allowed_children(int unit, int position) const {
  return children_.at(static_cast<std::size_t>(unit)).at(static_cast<std::size_t>(position));
}

SemanticGrammar build_grammar(const std::vector<MeaningRepresentation>& corpus,
                              const SemanticType& root_type) {
  if (corpus.empty()) throw EmptyCorpus("cannot build a grammar from an empty corpus");
  std::vector<SemanticUnit> units;
  std::unordered_map<std::string, int> seen;
  for (const auto& mr : corpus) {
    for (const auto& node : mr.nodes()) {
      if (seen.emplace(unit_key(node.unit), static_cast<int>(units.size())).second) {
        units.push_back(node.unit);
      }
    }
  }
  return SemanticGrammar(std::move(units), root_type);
}

}  // namespace depht
