#include "depht/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace depht {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

LoadResult load_corpus(std::istream& in, const SignatureTable& signatures, const std::string& language) {
  LoadResult result;
  std::vector<std::pair<int, std::string>> record;
  auto flush = [&] {
    if (record.empty()) return;
    const int first = record.front().first;
    if (record.size() != 2) {
      result.errors.push_back({first, "record has " + std::to_string(record.size()) + " lines, expected 2"});
    } else {
      try {
        Instance inst;
        inst.sentence = Sentence::from_text(record[0].second);
        if (inst.sentence.size() == 0) throw SyntaxError("empty sentence");
        inst.gold = parse_mr(record[1].second, signatures);
        inst.language = language;
        result.instances.push_back(std::move(inst));
      } catch (const std::exception& e) {
        result.errors.push_back({first, e.what()});
      }
    }
    record.clear();
  };
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) {
      flush();
      continue;
    }
    record.emplace_back(lineno, line);
  }
  flush();
  return result;
}

LoadResult load_corpus_file(const std::string& path, const SignatureTable& signatures, const std::string& language) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open corpus " + path);
  return load_corpus(in, signatures, language);
}

void save_corpus(std::ostream& out, std::span<const Instance> instances) {
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (i) out << '\n';
    out << instances[i].sentence.text() << '\n' << serialize_mr(instances[i].gold) << '\n';
  }
}

void write_predictions(std::ostream& out, std::span<const Prediction> predictions) {
  for (const auto& p : predictions) {
    if (p) out << serialize_mr(*p);
    out << '\n';
  }
}

PredictionFile read_predictions(std::istream& in, const SignatureTable& signatures) {
  PredictionFile f;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) {
      f.predictions.emplace_back();
      f.unparsed.push_back(false);
      continue;
    }
    try {
      f.predictions.emplace_back(parse_mr(line, signatures));
      f.unparsed.push_back(false);
    } catch (const FunqlError&) {
      f.predictions.emplace_back();
      f.unparsed.push_back(true);
    }
  }
  return f;
}

Metrics score_counts(int correct, int produced, int total) {
  Metrics m;
  m.n = total;
  m.produced = produced;
  m.correct = correct;
  m.accuracy = total ? static_cast<double>(correct) / total : 0.0;
  m.precision = produced ? static_cast<double>(correct) / produced : 0.0;
  m.recall = m.accuracy;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

Metrics evaluate(std::span<const Prediction> predictions, std::span<const MeaningRepresentation> golds) {
  if (predictions.size() != golds.size()) {
    throw LengthMismatch(std::to_string(predictions.size()) + " predictions for " + std::to_string(golds.size()) +
                         " gold MRs");
  }
  int produced = 0, correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (!predictions[i]) continue;
    ++produced;
    if (*predictions[i] == golds[i]) ++correct;
  }
  return score_counts(correct, produced, static_cast<int>(golds.size()));
}

Metrics evaluate(const PredictionFile& f, std::span<const MeaningRepresentation> golds) {
  if (f.predictions.size() != golds.size()) {
    throw LengthMismatch(std::to_string(f.predictions.size()) + " predictions for " + std::to_string(golds.size()) +
                         " gold MRs");
  }
  int produced = 0, correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    if (f.unparsed[i]) {
      ++produced;
    } else if (f.predictions[i]) {
      ++produced;
      if (*f.predictions[i] == golds[i]) ++correct;
    }
  }
  return score_counts(correct, produced, static_cast<int>(golds.size()));
}

// ---------------------------------------------------------------------------
// FunQL -> Prolog

namespace {

const std::set<std::string, std::less<>> kConstants = {"cityid", "stateid", "riverid", "countryid", "placeid"};
const std::set<std::string, std::less<>> kFilters = {"city", "state", "river", "lake", "mountain", "place",
                                                     "capital", "major", "town"};
const std::set<std::string, std::less<>> kSuperlatives = {"largest", "smallest", "highest", "lowest",
                                                          "longest", "shortest", "most", "fewest"};
const std::set<std::string, std::less<>> kAggregates = {"count", "sum"};

class PrologWriter {
 public:
  explicit PrologWriter(const MeaningRepresentation& mr) : mr_(mr) {}

  std::string run() {
    const std::string v = fresh();
    const auto body = emit(0, v);
    if (name(0) == "answer") return body.front();
    return "answer(" + v + "," + conj(body) + ")";
  }

 private:
  std::string fresh() {
    std::string v;
    int i = next_++;
    do {
      v.insert(v.begin(), static_cast<char>('A' + i % 26));
      i = i / 26 - 1;
    } while (i >= 0);
    return v;
  }

  static std::string conj(const std::vector<std::string>& goals) {
    if (goals.empty()) return "true";
    if (goals.size() == 1) return goals.front();
    std::string out = "(";
    for (std::size_t i = 0; i < goals.size(); ++i) out += (i ? "," : "") + goals[i];
    return out + ")";
  }

  std::string name(int i) const {
    const auto& f = mr_.node(i).unit.function;
    return f.substr(0, f.find('('));
  }

  // Leaf arguments of a constant: quotes kept only around multi-word names.
  std::string atom(int i) const {
    std::string f = mr_.node(i).unit.function;
    if (f.size() >= 2 && f.front() == '\'' && f.back() == '\'' && f.find(' ') == std::string::npos) {
      f = f.substr(1, f.size() - 2);
    }
    return f;
  }

  std::string constant(int i) const {
    std::string out = name(i) + "(";
    const auto& kids = mr_.node(i).children;
    for (std::size_t a = 0; a < kids.size(); ++a) out += (a ? "," : "") + atom(kids[a]);
    if (kids.empty()) {
      const auto& f = mr_.node(i).unit.function;
      if (const auto open = f.find('('); open != std::string::npos) return f;
    }
    return out + ")";
  }

  std::vector<std::string> emit(int i, const std::string& v) {
    const auto& node = mr_.node(i);
    const std::string f = name(i);
    const auto& kids = node.children;
    std::vector<std::string> out;
    auto splice = [&](std::vector<std::string> goals) { out.insert(out.end(), goals.begin(), goals.end()); };

    if (kConstants.contains(f)) return {"const(" + v + "," + constant(i) + ")"};
    if (f == "all" || node.unit.is_constant()) return {};
    if (f == "answer" && kids.size() == 1) return {"answer(" + v + "," + conj(emit(kids[0], v)) + ")"};
    if (kFilters.contains(f) && kids.size() <= 1) {
      if (!kids.empty()) splice(emit(kids[0], v));
      out.push_back(f + "(" + v + ")");
      return out;
    }
    if ((f == "largest_one" || f == "smallest_one") && kids.size() == 1) {
      // largest_one(population_1(X)): the X with the largest population.
      const int rel = kids[0];
      const std::string rn = name(rel);
      const std::string m = fresh();
      std::vector<std::string> inner;
      if (rn.size() > 2 && rn.ends_with("_1") && mr_.node(rel).children.size() == 1) {
        inner = emit(mr_.node(rel).children[0], v);
        inner.push_back(rn.substr(0, rn.size() - 2) + "(" + v + "," + m + ")");
      } else {
        inner = emit(rel, v);
      }
      return {(f == "largest_one" ? "largest(" : "smallest(") + m + "," + conj(inner) + ")"};
    }
    if (kSuperlatives.contains(f) && kids.size() == 1) return {f + "(" + v + "," + conj(emit(kids[0], v)) + ")"};
    if (kAggregates.contains(f) && kids.size() == 1) {
      const std::string w = fresh();
      return {f + "(" + w + "," + conj(emit(kids[0], w)) + "," + v + ")"};
    }
    if (f == "exclude" && kids.size() == 2) {
      splice(emit(kids[0], v));
      out.push_back("\\+ " + conj(emit(kids[1], v)));
      return out;
    }
    if (f == "intersection" && kids.size() == 2) {
      splice(emit(kids[0], v));
      splice(emit(kids[1], v));
      return out;
    }
    if (f.size() > 2 && (f.ends_with("_1") || f.ends_with("_2")) && kids.size() == 1) {
      const std::string w = fresh();
      splice(emit(kids[0], w));
      const std::string pred = f.substr(0, f.size() - 2);
      out.push_back(f.back() == '1' ? pred + "(" + w + "," + v + ")" : pred + "(" + v + "," + w + ")");
      return out;
    }
    // Anything else: f(V, W1, ...) with each argument bound to a fresh variable.
    std::string head = f + "(" + v;
    for (int k : kids) {
      const std::string w = fresh();
      splice(emit(k, w));
      head += "," + w;
    }
    out.push_back(head + ")");
    return out;
  }

  const MeaningRepresentation& mr_;
  int next_ = 0;
};

}  // namespace

std::string to_prolog(const MeaningRepresentation& mr) {
  if (mr.empty()) return {};
  return PrologWriter(mr).run();
}

}  // namespace depht
