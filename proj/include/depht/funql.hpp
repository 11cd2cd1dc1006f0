// Variable-free (FunQL) meaning representations: typed semantic units,
// trees built from them, the signature table that types them, and the
// semantic grammar derived from a training corpus.
#pragma once

#include <compare>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace depht {

class FunqlError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SyntaxError : public FunqlError {
 public:
  using FunqlError::FunqlError;
};

class TypeError : public FunqlError {
 public:
  using FunqlError::FunqlError;
};

class UnknownSymbol : public FunqlError {
 public:
  using FunqlError::FunqlError;
};

class EmptyCorpus : public FunqlError {
 public:
  using FunqlError::FunqlError;
};

class SemanticType {
 public:
  SemanticType() = default;
  explicit SemanticType(std::string name);

  const std::string& name() const { return name_; }

  friend bool operator==(const SemanticType&, const SemanticType&) = default;
  friend auto operator<=>(const SemanticType&, const SemanticType&) = default;

 private:
  std::string name_;
};

// tau_a : p_a(tau_b*). Quoted constants carry their quotes in `function`
// ("'tn'"); bare atoms folded into a call keep the call text ("river(all)").
struct SemanticUnit {
  SemanticType return_type;
  std::string function;
  std::vector<SemanticType> arg_types;

  int arity() const { return static_cast<int>(arg_types.size()); }
  bool is_constant() const { return !function.empty() && function.front() == '\''; }

  // "RIVER:exclude(RIVER,RIVER)", "STATENAME:'tn'"
  std::string to_string() const;

  friend bool operator==(const SemanticUnit&, const SemanticUnit&) = default;
  friend auto operator<=>(const SemanticUnit&, const SemanticUnit&) = default;
};

// Tree of units stored in preorder; node 0 is the root.
class MeaningRepresentation {
 public:
  struct Node {
    SemanticUnit unit;
    std::vector<int> children;

    friend bool operator==(const Node&, const Node&) = default;
  };

  MeaningRepresentation() = default;

  // Leaf or composed tree. Children must already be type-correct; the
  // composition itself is checked and TypeError thrown on mismatch.
  static MeaningRepresentation leaf(SemanticUnit unit);
  static MeaningRepresentation compose(SemanticUnit unit,
                                       std::vector<MeaningRepresentation> children);

  bool empty() const { return nodes_.empty(); }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const SemanticUnit& root_unit() const { return nodes_.front().unit; }
  int parent(int i) const { return parents_.at(static_cast<std::size_t>(i)); }

  // Longest root-to-leaf path counted in nodes.
  int depth() const;

  // Subtree rooted at node i, re-indexed.
  MeaningRepresentation subtree(int i) const;

  friend bool operator==(const MeaningRepresentation& a, const MeaningRepresentation& b) {
    return a.nodes_ == b.nodes_;
  }

 private:
  void append(const MeaningRepresentation& child, int parent);

  std::vector<Node> nodes_;
  std::vector<int> parents_;
};

// function symbol -> candidate signatures, in file order.
class SignatureTable {
 public:
  struct Signature {
    SemanticType return_type;
    std::vector<SemanticType> arg_types;
  };

  // `function<TAB>return_type<TAB>arg_type[,arg_type]`, blank lines and
  // lines starting with '#' ignored.
  static SignatureTable load(std::istream& in);
  static SignatureTable load_file(const std::string& path);
  static SignatureTable from_string(std::string_view text);

  void add(std::string function, Signature signature);
  const std::vector<Signature>* find(const std::string& function) const;
  std::size_t size() const { return table_.size(); }

 private:
  std::map<std::string, std::vector<Signature>> table_;
};

MeaningRepresentation parse_mr(std::string_view text, const SignatureTable& signatures);
std::string serialize_mr(const MeaningRepresentation& mr);

// Unit inventory plus type-compatible transitions over the whole inventory.
class SemanticGrammar {
 public:
  SemanticGrammar() = default;
  SemanticGrammar(std::vector<SemanticUnit> units, SemanticType root_type);

  std::size_t size() const { return units_.size(); }
  const std::vector<SemanticUnit>& units() const { return units_; }
  const SemanticUnit& unit(int id) const { return units_.at(static_cast<std::size_t>(id)); }
  std::optional<int> id_of(const SemanticUnit& unit) const;

  const SemanticType& root_type() const { return root_type_; }
  // Units returning root_type, ascending id.
  const std::vector<int>& roots() const { return roots_; }
  // Units whose return type equals arg_types[position] of `unit`, ascending id.
  const std::vector<int>& allowed_children(int unit, int position) const;

 private:
  std::vector<SemanticUnit> units_;
  std::unordered_map<std::string, int> by_key_;
  std::vector<std::vector<std::vector<int>>> children_;
  std::vector<int> roots_;
  SemanticType root_type_;
};

SemanticGrammar build_grammar(const std::vector<MeaningRepresentation>& corpus,
                              const SemanticType& root_type);

}  // namespace depht
