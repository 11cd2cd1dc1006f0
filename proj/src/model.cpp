#include "depht/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>

namespace depht {

namespace {

double weight_or_zero(const std::vector<double>& w, int id) { return id < 0 ? 0.0 : w[static_cast<std::size_t>(id)]; }

template <typename Fn>
void run_chunks(std::size_t count, int threads, Fn&& fn) {
  const std::size_t t = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), count));
  if (t <= 1) {
    if (count) fn(0, 0, count);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(t);
  for (std::size_t c = 0; c < t; ++c) {
    const std::size_t lo = count * c / t, hi = count * (c + 1) / t;
    pool.emplace_back([&, c, lo, hi] {
      try {
        fn(c, lo, hi);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

Model::Model(SemanticGrammar grammar, FeatureFlags flags, int max_self_loops, double l2)
    : grammar_(std::make_shared<const SemanticGrammar>(std::move(grammar))), flags_(flags), c_(max_self_loops), l2_(l2) {
  if (c_ < 1 || c_ > kMaxSelfLoopCap) {
    throw std::invalid_argument("self-loop cap must be in [1, " + std::to_string(kMaxSelfLoopCap) + "]");
  }
  unclamped_ = LabelSet::unclamped(*grammar_);
  rebuild_tables();
}

void Model::set_embeddings(std::shared_ptr<const EmbeddingTable> table, std::string source) {
  embeddings_ = std::move(table);
  embedding_source_ = std::move(source);
  rebuild_tables();
}

void Model::enable_bilinear(std::uint64_t seed, double scale) {
  if (!embeddings_ || embeddings_->dim() <= 0) throw std::logic_error("bilinear scorer needs embeddings");
  bilinear_.emplace(static_cast<int>(grammar_->size()), embeddings_->dim());
  bilinear_->randomize(seed, scale);
}

void Model::index_features(std::span<const Instance> data) {
  if (flags_.embedding && !embeddings_) throw std::logic_error("embedding features need an embedding table");
  index_ = FeatureIndex{};
  const auto& g = *grammar_;
  std::set<std::string> vocab;
  for (const auto& inst : data) {
    for (int t = 1; t <= inst.sentence.size(); ++t) vocab.insert(normalize_token(inst.sentence.token(t), flags_));
  }
  const std::string root = normalize_token(std::string(kRootToken), flags_);
  for (int u = 0; u < static_cast<int>(g.size()); ++u) {
    const auto& unit = g.unit(u);
    if (flags_.pattern) {
      for (Pattern p : patterns_for(unit.arity())) index_.add(pattern_key(unit, p));
    }
    if (flags_.transition) {
      for (int a = 0; a < unit.arity(); ++a) {
        for (int c : g.allowed_children(u, a)) index_.add(transition_key(unit, g.unit(c)));
      }
    }
    if (flags_.embedding) {
      for (int d = 0; d < embeddings_->dim(); ++d) index_.add(embedding_key(unit, d));
    }
    for (const auto& tok : vocab) {
      if (flags_.word) index_.add(feature_key(FeatureFamily::Word, unit, tok));
      if (flags_.head_word) index_.add(feature_key(FeatureFamily::HeadWord, unit, tok));
      if (flags_.modifier_word) index_.add(feature_key(FeatureFamily::ModifierWord, unit, tok));
      if (flags_.bag_of_words) index_.add(feature_key(FeatureFamily::BagOfWords, unit, tok));
    }
    if (flags_.head_word) index_.add(feature_key(FeatureFamily::HeadWord, unit, root));
    if (flags_.bag_of_words) index_.add(feature_key(FeatureFamily::BagOfWords, unit, root));
  }
  index_.freeze();
  weights_.assign(index_.size(), 0.0);
  rebuild_tables();
}

void Model::rebuild_tables() {
  if (!grammar_) return;
  const auto& g = *grammar_;
  const auto U = g.size();
  pattern_ids_.assign(U * kNumPatterns, FeatureIndex::kNull);
  transition_ids_.clear();
  embedding_ids_.clear();
  const int dim = embeddings_ && flags_.embedding ? embeddings_->dim() : 0;
  embedding_ids_.assign(U * static_cast<std::size_t>(dim), FeatureIndex::kNull);
  for (int u = 0; u < static_cast<int>(U); ++u) {
    const auto& unit = g.unit(u);
    if (flags_.pattern) {
      for (Pattern p : patterns_for(unit.arity())) {
        pattern_ids_[static_cast<std::size_t>(u) * kNumPatterns + static_cast<std::size_t>(p)] = index_.lookup(pattern_key(unit, p));
      }
    }
    if (flags_.transition) {
      for (int a = 0; a < unit.arity(); ++a) {
        for (int c : g.allowed_children(u, a)) {
          const int id = index_.lookup(transition_key(unit, g.unit(c)));
          if (id >= 0) transition_ids_[static_cast<std::uint64_t>(u) * U + static_cast<std::uint64_t>(c)] = id;
        }
      }
    }
    for (int d = 0; d < dim; ++d) {
      embedding_ids_[static_cast<std::size_t>(u) * static_cast<std::size_t>(dim) + static_cast<std::size_t>(d)] =
          index_.lookup(embedding_key(unit, d));
    }
  }
}

int Model::transition_id(int parent_unit, int child_unit) const {
  const auto it = transition_ids_.find(static_cast<std::uint64_t>(parent_unit) * grammar_->size() +
                                       static_cast<std::uint64_t>(child_unit));
  return it == transition_ids_.end() ? FeatureIndex::kNull : it->second;
}

std::size_t Model::parameter_count() const {
  return weights_.size() + (bilinear_ ? bilinear_->data().size() : 0);
}

std::vector<double> Model::parameters() const {
  std::vector<double> theta(weights_);
  if (bilinear_) theta.insert(theta.end(), bilinear_->data().begin(), bilinear_->data().end());
  return theta;
}

void Model::set_parameters(std::span<const double> theta) {
  if (theta.size() != parameter_count()) throw std::invalid_argument("parameter vector has the wrong size");
  std::copy(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(weights_.size()), weights_.begin());
  if (bilinear_) {
    std::copy(theta.begin() + static_cast<std::ptrdiff_t>(weights_.size()), theta.end(), bilinear_->data().begin());
  }
}

TokenFeatureIds Model::token_features(const Sentence& n) const {
  TokenFeatureIds ids;
  ids.n = n.size();
  const auto n1 = static_cast<std::size_t>(ids.n + 1);
  const auto U = grammar_->size();
  ids.word.assign(U * n1, FeatureIndex::kNull);
  ids.head.assign(U * n1, FeatureIndex::kNull);
  ids.mod.assign(U * n1, FeatureIndex::kNull);
  ids.bow.assign(U * n1, FeatureIndex::kNull);
  std::vector<std::string> toks(n1);
  for (int t = 0; t <= ids.n; ++t) toks[static_cast<std::size_t>(t)] = normalize_token(n.token(t), flags_);
  for (std::size_t u = 0; u < U; ++u) {
    const auto& unit = grammar_->unit(static_cast<int>(u));
    for (std::size_t t = 0; t < n1; ++t) {
      const auto at = u * n1 + t;
      if (flags_.word && t > 0) ids.word[at] = index_.lookup(feature_key(FeatureFamily::Word, unit, toks[t]));
      if (flags_.head_word) ids.head[at] = index_.lookup(feature_key(FeatureFamily::HeadWord, unit, toks[t]));
      if (flags_.modifier_word && t > 0) ids.mod[at] = index_.lookup(feature_key(FeatureFamily::ModifierWord, unit, toks[t]));
      if (flags_.bag_of_words) ids.bow[at] = index_.lookup(feature_key(FeatureFamily::BagOfWords, unit, toks[t]));
    }
  }
  if (embeddings_) {
    for (int t = 0; t <= ids.n; ++t) ids.vectors.push_back(embeddings_->lookup(n.token(t)));
  }
  return ids;
}

Potentials Model::potentials(const Sentence& n, const TokenFeatureIds& ids, const LabelSet& labels) const {
  const int N = n.size();
  if (ids.n != N) throw std::invalid_argument("feature ids belong to another sentence");
  Potentials pot = Potentials::zeros(N, labels);
  const auto n1 = static_cast<std::size_t>(N + 1);
  const int dim = embeddings_ ? embeddings_->dim() : 0;
  const bool emb = flags_.embedding && dim > 0;
  std::vector<double> bow_prefix(n1 + 1), emb_dot(n1), head_w(n1), mod_w(n1);
  std::vector<double> projected;  // U e_k per position
  for (std::size_t l = 0; l < labels.size(); ++l) {
    const int u = labels.unit[l];
    double run = 0.0;
    for (int t = 1; t <= N; ++t) {
      run += weight_or_zero(weights_, ids.at(ids.word, u, t));
      pot.word_prefix[l * n1 + static_cast<std::size_t>(t)] = run;
    }
    for (int p = 0; p < kNumPatterns; ++p) {
      pot.pattern[l * kNumPatterns + static_cast<std::size_t>(p)] =
          weight_or_zero(weights_, pattern_ids_[static_cast<std::size_t>(u) * kNumPatterns + static_cast<std::size_t>(p)]);
    }
    for (std::size_t a = 0; a < 2; ++a) {
      const auto& kids = labels.children[l][a];
      for (std::size_t i = 0; i < kids.size(); ++i) {
        pot.transition[l][a][i] = weight_or_zero(weights_, transition_id(u, labels.unit[static_cast<std::size_t>(kids[i])]));
      }
    }

    bow_prefix[0] = 0.0;
    for (int t = 0; t <= N; ++t) {
      const auto ut = static_cast<std::size_t>(t);
      bow_prefix[ut + 1] = bow_prefix[ut] + weight_or_zero(weights_, ids.at(ids.bow, u, t));
      head_w[ut] = weight_or_zero(weights_, ids.at(ids.head, u, t));
      mod_w[ut] = weight_or_zero(weights_, ids.at(ids.mod, u, t));
      emb_dot[ut] = 0.0;
      if (emb) {
        const auto& e = ids.vectors[ut];
        for (int d = 0; d < dim; ++d) {
          emb_dot[ut] += weight_or_zero(weights_, embedding_ids_[static_cast<std::size_t>(u * dim + d)]) * e[static_cast<std::size_t>(d)];
        }
      }
    }
    const bool bilinear = bilinear_ && dim > 0;
    if (bilinear) {
      const auto U = bilinear_->matrix(u);
      const auto ud = static_cast<std::size_t>(dim);
      projected.assign(n1 * ud, 0.0);
      for (std::size_t k = 1; k < n1; ++k) {
        const auto& e = ids.vectors[k];
        for (std::size_t i = 0; i < ud; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < ud; ++j) s += U[i * ud + j] * e[j];
          projected[k * ud + i] = s;
        }
      }
    }
    for (int h = 0; h <= N; ++h) {
      for (int k = 1; k <= N; ++k) {
        const auto uh = static_cast<std::size_t>(h), uk = static_cast<std::size_t>(k);
        const auto lo = static_cast<std::size_t>(std::min(h, k)), hi = static_cast<std::size_t>(std::max(h, k));
        double s = head_w[uh] + mod_w[uk] + (bow_prefix[hi + 1] - bow_prefix[lo]);
        if (emb) s += 0.5 * (emb_dot[uh] + emb_dot[uk]);
        if (bilinear) {
          const auto& e = ids.vectors[uh];
          const auto ud = static_cast<std::size_t>(dim);
          double r = 0.0;
          for (std::size_t i = 0; i < ud; ++i) r += e[i] * projected[uk * ud + i];
          s += r;
        }
        pot.arc[(l * n1 + uh) * n1 + uk] = s;
      }
    }
  }
  return pot;
}

void Model::accumulate_gradient(const PartMarginals& mu, const TokenFeatureIds& ids, const LabelSet& labels,
                                double sign, std::span<double> grad) const {
  const int N = ids.n;
  const auto n1 = static_cast<std::size_t>(N + 1);
  const int dim = embeddings_ ? embeddings_->dim() : 0;
  const bool emb = flags_.embedding && dim > 0;
  const bool bilinear = bilinear_ && dim > 0;
  const auto ud = static_cast<std::size_t>(dim);
  auto bump = [&](int id, double v) {
    if (id >= 0 && v != 0.0) grad[static_cast<std::size_t>(id)] += sign * v;
  };
  std::vector<double> rows(n1), cols(n1), cover(n1 + 1), r(ud);
  for (std::size_t l = 0; l < labels.size(); ++l) {
    const int u = labels.unit[l];
    for (int t = 1; t <= N; ++t) bump(ids.at(ids.word, u, t), mu.word[l * n1 + static_cast<std::size_t>(t)]);
    for (int p = 0; p < kNumPatterns; ++p) {
      bump(pattern_ids_[static_cast<std::size_t>(u) * kNumPatterns + static_cast<std::size_t>(p)],
           mu.pattern[l * kNumPatterns + static_cast<std::size_t>(p)]);
    }
    for (std::size_t a = 0; a < 2; ++a) {
      const auto& kids = labels.children[l][a];
      for (std::size_t i = 0; i < kids.size(); ++i) {
        bump(transition_id(u, labels.unit[static_cast<std::size_t>(kids[i])]), mu.transition[l][a][i]);
      }
    }

    std::fill(rows.begin(), rows.end(), 0.0);
    std::fill(cols.begin(), cols.end(), 0.0);
    std::fill(cover.begin(), cover.end(), 0.0);
    bool any = false;
    for (std::size_t h = 0; h < n1; ++h) {
      for (std::size_t k = 1; k < n1; ++k) {
        const double m = mu.arc[(l * n1 + h) * n1 + k];
        if (m == 0.0) continue;
        any = true;
        rows[h] += m;
        cols[k] += m;
        cover[std::min(h, k)] += m;
        cover[std::max(h, k) + 1] -= m;
      }
    }
    if (!any) continue;
    double run = 0.0;
    for (std::size_t t = 0; t < n1; ++t) {
      run += cover[t];
      bump(ids.at(ids.head, u, static_cast<int>(t)), rows[t]);
      bump(ids.at(ids.mod, u, static_cast<int>(t)), cols[t]);
      bump(ids.at(ids.bow, u, static_cast<int>(t)), run);
    }
    if (emb) {
      for (std::size_t d = 0; d < ud; ++d) {
        double v = 0.0;
        for (std::size_t t = 0; t < n1; ++t) v += (rows[t] + cols[t]) * ids.vectors[t][d];
        bump(embedding_ids_[static_cast<std::size_t>(u) * ud + d], 0.5 * v);
      }
    }
    if (bilinear) {
      auto G = grad.subspan(weights_.size() + static_cast<std::size_t>(u) * ud * ud, ud * ud);
      for (std::size_t h = 0; h < n1; ++h) {
        if (rows[h] == 0.0) continue;
        std::fill(r.begin(), r.end(), 0.0);
        for (std::size_t k = 1; k < n1; ++k) {
          const double m = mu.arc[(l * n1 + h) * n1 + k];
          if (m == 0.0) continue;
          for (std::size_t j = 0; j < ud; ++j) r[j] += m * ids.vectors[k][j];
        }
        arc_score_gradient(sign, ids.vectors[h], r, G);
      }
    }
  }
}

Derivation Model::decode(const Sentence& n) const {
  const Forest forest = Forest::build(n.size(), unclamped_, c_);
  return viterbi(forest, potentials(n, token_features(n), unclamped_), unclamped_, *grammar_);
}

Prediction Model::parse(const Sentence& n) const {
  try {
    return decode(n).mr;
  } catch (const NoDerivation&) {
    return std::nullopt;
  }
}

Potentials ModelScorer::potentials(const Sentence& n, const LabelSet& labels) const {
  return model_.potentials(n, model_.token_features(n), labels);
}

std::vector<Prediction> parse_all(const Model& model, std::span<const Instance> data, int threads) {
  std::vector<Prediction> out(data.size());
  run_chunks(data.size(), threads, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) out[i] = model.parse(data[i].sentence);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Model file

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string expect_line(std::istream& in, const std::string& tag) {
  std::string line;
  if (!std::getline(in, line)) throw ModelFormatError("model file ends before '" + tag + "'");
  if (line.rfind(tag + " ", 0) != 0 && line != tag) throw ModelFormatError("expected '" + tag + "', got '" + line + "'");
  return line.size() > tag.size() ? line.substr(tag.size() + 1) : std::string{};
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

void Model::save(std::ostream& out) const {
  static_assert(std::endian::native == std::endian::little, "model files are little-endian");
  out << "depht-model 1\n";
  out << "c " << c_ << '\n';
  out << "l2 " << format_double(l2_) << '\n';
  out << "flags";
  const std::pair<const char*, bool> named[] = {{"word", flags_.word},           {"pattern", flags_.pattern},
                                                {"transition", flags_.transition}, {"head", flags_.head_word},
                                                {"mod", flags_.modifier_word},     {"bow", flags_.bag_of_words},
                                                {"embedding", flags_.embedding},   {"lowercase", flags_.lowercase}};
  for (const auto& [name, on] : named) {
    if (on) out << ' ' << name;
  }
  out << '\n';
  out << "embedding " << (embeddings_ ? embeddings_->dim() : 0) << ' '
      << (embedding_source_.empty() ? "-" : embedding_source_) << '\n';
  out << "root_type " << grammar_->root_type().name() << '\n';
  out << "units " << grammar_->size() << '\n';
  for (const auto& u : grammar_->units()) {
    out << u.return_type.name() << '\t' << u.function << '\t';
    for (std::size_t a = 0; a < u.arg_types.size(); ++a) out << (a ? "," : "") << u.arg_types[a].name();
    out << '\n';
  }
  out << "feature_count " << index_.size() << '\n';
  for (std::size_t i = 0; i < index_.size(); ++i) {
    out << index_.key(static_cast<int>(i)) << '\t' << i << '\t' << format_double(weights_[i]) << '\n';
  }
  if (bilinear_) {
    const auto data = bilinear_->data();
    out << "bilinear " << bilinear_->units() << ' ' << bilinear_->dim() << ' ' << data.size() * sizeof(double) << '\n';
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    out << '\n';
  }
  out << "end\n";
}

void Model::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write model file " + path);
  save(out);
  if (!out) throw IOError("failed writing model file " + path);
}

Model Model::load(std::istream& in, std::shared_ptr<const EmbeddingTable> embeddings) {
  if (expect_line(in, "depht-model") != "1") throw ModelFormatError("unsupported model version");
  const int c = std::stoi(expect_line(in, "c"));
  const double l2 = std::stod(expect_line(in, "l2"));
  FeatureFlags flags;
  flags.word = flags.pattern = flags.transition = flags.head_word = flags.modifier_word = flags.bag_of_words = false;
  {
    std::istringstream names(expect_line(in, "flags"));
    for (std::string f; names >> f;) {
      if (f == "word") flags.word = true;
      else if (f == "pattern") flags.pattern = true;
      else if (f == "transition") flags.transition = true;
      else if (f == "head") flags.head_word = true;
      else if (f == "mod") flags.modifier_word = true;
      else if (f == "bow") flags.bag_of_words = true;
      else if (f == "embedding") flags.embedding = true;
      else if (f == "lowercase") flags.lowercase = true;
      else throw ModelFormatError("unknown feature flag " + f);
    }
  }
  int dim = 0;
  std::string source;
  {
    std::istringstream emb(expect_line(in, "embedding"));
    emb >> dim >> source;
    if (source == "-") source.clear();
  }
  const SemanticType root_type(expect_line(in, "root_type"));
  const std::size_t units = std::stoul(expect_line(in, "units"));
  std::vector<SemanticUnit> inventory;
  std::string line;
  for (std::size_t i = 0; i < units; ++i) {
    if (!std::getline(in, line)) throw ModelFormatError("model file ends inside the unit list");
    const auto fields = split(line, '\t');
    if (fields.size() != 3) throw ModelFormatError("bad unit line '" + line + "'");
    SemanticUnit u{SemanticType(fields[0]), fields[1], {}};
    if (!fields[2].empty()) {
      for (const auto& a : split(fields[2], ',')) u.arg_types.emplace_back(a);
    }
    inventory.push_back(std::move(u));
  }
  Model model(SemanticGrammar(std::move(inventory), root_type), flags, c, l2);
  if (dim > 0) {
    if (!embeddings) {
      if (source.empty()) throw ModelFormatError("model needs embeddings but records no source");
      embeddings = std::make_shared<const EmbeddingTable>(EmbeddingTable::load_file(source));
    }
    if (embeddings->dim() != dim) throw ModelFormatError("embedding dimension does not match the model");
    model.embeddings_ = std::move(embeddings);
    model.embedding_source_ = source;
  }
  const std::size_t count = std::stoul(expect_line(in, "feature_count"));
  std::vector<double> weights(count);
  std::vector<std::string> keys(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw ModelFormatError("model file ends inside the feature block");
    const auto tab2 = line.rfind('\t');
    const auto tab1 = tab2 == std::string::npos ? std::string::npos : line.rfind('\t', tab2 - 1);
    if (tab1 == std::string::npos) throw ModelFormatError("bad feature line '" + line + "'");
    if (std::stoul(line.substr(tab1 + 1, tab2 - tab1 - 1)) != i) throw ModelFormatError("feature ids out of order");
    keys[i] = line.substr(0, tab1);
    weights[i] = std::stod(line.substr(tab2 + 1));
  }
  for (const auto& k : keys) model.index_.add(k);
  model.index_.freeze();
  for (std::size_t i = 0; i < count; ++i) {
    if (model.index_.key(static_cast<int>(i)) != keys[i]) throw ModelFormatError("feature keys are not sorted");
  }
  model.weights_ = std::move(weights);
  if (!std::getline(in, line)) throw ModelFormatError("model file is truncated");
  if (line.rfind("bilinear ", 0) == 0) {
    std::istringstream head(line.substr(9));
    int bu = 0, bd = 0;
    std::size_t bytes = 0;
    head >> bu >> bd >> bytes;
    if (bu != static_cast<int>(units) || bd != dim || bytes != static_cast<std::size_t>(bu) * bd * bd * sizeof(double)) {
      throw ModelFormatError("bilinear block does not match the model");
    }
    model.bilinear_.emplace(bu, bd);
    in.read(reinterpret_cast<char*>(model.bilinear_->data().data()), static_cast<std::streamsize>(bytes));
    if (!in) throw ModelFormatError("bilinear block is truncated");
    std::getline(in, line);  // newline after the block
    if (!std::getline(in, line)) throw ModelFormatError("model file is truncated");
  }
  if (line != "end") throw ModelFormatError("expected 'end', got '" + line + "'");
  model.rebuild_tables();
  return model;
}

Model Model::load_file(const std::string& path, std::shared_ptr<const EmbeddingTable> embeddings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open model file " + path);
  return load(in, std::move(embeddings));
}

// ---------------------------------------------------------------------------
// Objective

struct Objective::Prepared {
  const Instance* inst = nullptr;
  TokenFeatureIds ids;
  LabelSet clamped;
  Forest clamped_forest;
  std::optional<Forest> unclamped_forest;
};

Objective::Objective(const Model& model, std::span<const Instance> data, Options options)
    : model_(model), options_(options) {
  std::size_t cached = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto p = std::make_unique<Prepared>();
    p->inst = &data[i];
    std::string reason;
    try {
      p->clamped = LabelSet::clamped(data[i].gold, model.grammar());
      p->clamped_forest = Forest::build(data[i].sentence.size(), p->clamped, model.max_self_loops());
      if (!p->clamped_forest.has_derivation()) reason = "no hybrid tree covers the gold MR";
    } catch (const std::exception& e) {
      reason = e.what();
    }
    if (!reason.empty()) {
      if (options_.warnings) *options_.warnings << "warning: dropping instance " << i << ": " << reason << '\n';
      dropped_.push_back(i);
      continue;
    }
    p->ids = model.token_features(data[i].sentence);
    if (cached < options_.forest_cache_edges) {
      p->unclamped_forest = Forest::build(data[i].sentence.size(), model.unclamped_labels(), model.max_self_loops());
      cached += p->unclamped_forest->edges().size();
      if (cached > options_.forest_cache_edges) p->unclamped_forest.reset();
    }
    items_.push_back(std::move(p));
  }
}

Objective::~Objective() = default;

std::size_t Objective::size() const { return items_.size(); }

double Objective::instance(std::size_t i, std::span<double> grad) const {
  const Prepared& p = *items_.at(i);
  const Sentence& n = p.inst->sentence;
  const Potentials pc = model_.potentials(n, p.ids, p.clamped);
  Chart cc = compute_inside(p.clamped_forest, pc);

  std::optional<Forest> local;
  const Forest& fu = p.unclamped_forest ? *p.unclamped_forest
                                        : local.emplace(Forest::build(n.size(), model_.unclamped_labels(), model_.max_self_loops()));
  const Potentials pu = model_.potentials(n, p.ids, model_.unclamped_labels());
  Chart cu = compute_inside(fu, pu);
  const double loss = cu.log_z - cc.log_z;
  if (!grad.empty() && std::isfinite(loss)) {
    compute_outside(p.clamped_forest, cc);
    compute_outside(fu, cu);
    model_.accumulate_gradient(expectations(fu, cu, model_.unclamped_labels()), p.ids, model_.unclamped_labels(), 1.0, grad);
    model_.accumulate_gradient(expectations(p.clamped_forest, cc, p.clamped), p.ids, p.clamped, -1.0, grad);
  }
  return loss;
}

double Objective::evaluate(std::span<double> grad) const {
  const std::size_t P = model_.parameter_count();
  const bool want = !grad.empty();
  if (want && grad.size() != P) throw std::invalid_argument("gradient buffer has the wrong size");
  if (want) std::fill(grad.begin(), grad.end(), 0.0);

  const int threads = std::max(1, options_.threads);
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(threads), items_.size()));
  std::vector<double> losses(chunks, 0.0);
  std::vector<std::vector<double>> grads(chunks > 1 && want ? chunks : 0);
  run_chunks(items_.size(), threads, [&](std::size_t c, std::size_t lo, std::size_t hi) {
    std::span<double> g = grad;
    if (!grads.empty()) {
      grads[c].assign(P, 0.0);
      g = grads[c];
    }
    double sum = 0.0;
    for (std::size_t i = lo; i < hi; ++i) sum += instance(i, g);
    losses[c] = sum;
  });
  double loss = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    loss += losses[c];
    if (!grads.empty()) {
      for (std::size_t j = 0; j < P; ++j) grad[j] += grads[c][j];
    }
  }
  const auto theta = model_.parameters();
  const double l2 = model_.l2();
  for (std::size_t j = 0; j < P; ++j) {
    loss += l2 * theta[j] * theta[j];
    if (want) grad[j] += 2.0 * l2 * theta[j];
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Training

namespace {

class NllFunction : public ceres::FirstOrderFunction {
 public:
  NllFunction(Model& model, const Objective& objective) : model_(model), objective_(objective) {}

  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    const auto P = model_.parameter_count();
    model_.set_parameters(std::span<const double>(parameters, P));
    *cost = objective_.evaluate(gradient ? std::span<double>(gradient, P) : std::span<double>{});
    if (!std::isfinite(*cost)) {
      diverged = true;
      return false;
    }
    if (gradient) {
      for (std::size_t j = 0; j < P; ++j) {
        if (!std::isfinite(gradient[j])) {
          diverged = true;
          return false;
        }
      }
    }
    return true;
  }

  int NumParameters() const override { return static_cast<int>(model_.parameter_count()); }

  mutable bool diverged = false;

 private:
  Model& model_;
  const Objective& objective_;
};

TrainResult train_lbfgs(Model& model, const Objective& objective, const TrainOptions& opt) {
  TrainResult result;
  auto* fn = new NllFunction(model, objective);
  ceres::GradientProblem problem(fn);
  ceres::GradientProblemSolver::Options o;
  o.line_search_direction_type = ceres::LBFGS;
  o.max_lbfgs_rank = 10;
  o.line_search_type = ceres::WOLFE;
  o.max_num_iterations = opt.max_iterations;
  o.function_tolerance = opt.function_tolerance;
  o.gradient_tolerance = opt.gradient_tolerance;
  o.parameter_tolerance = 1e-12;
  o.logging_type = ceres::SILENT;
  o.minimizer_progress_to_stdout = false;
  std::vector<double> theta = model.parameters();
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(o, problem, theta.data(), &summary);
  if (!std::isfinite(summary.final_cost) || (summary.termination_type == ceres::FAILURE && fn->diverged)) {
    throw DivergedLoss("training loss is not finite (" + summary.message + ")");
  }
  model.set_parameters(theta);
  for (const auto& it : summary.iterations) {
    result.loss_trace.push_back(it.cost);
    if (opt.log) *opt.log << "iteration " << it.iteration << " loss " << format_double(it.cost) << '\n';
  }
  result.termination = summary.message;
  return result;
}

TrainResult train_sgd(Model& model, const Objective& objective, const TrainOptions& opt) {
  if (!(opt.learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
  TrainResult result;
  const std::size_t m = objective.size();
  const std::size_t P = model.parameter_count();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opt.seed);
  std::vector<double> theta = model.parameters(), g(P);
  const double decay = model.l2() / static_cast<double>(m);
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t i : order) {
      std::fill(g.begin(), g.end(), 0.0);
      const double loss = objective.instance(i, g);
      if (!std::isfinite(loss)) throw DivergedLoss("loss became non-finite in epoch " + std::to_string(epoch + 1));
      total += loss;
      for (std::size_t j = 0; j < P; ++j) theta[j] -= opt.learning_rate * (g[j] + 2.0 * decay * theta[j]);
      model.set_parameters(theta);
    }
    double reg = 0.0;
    for (double x : theta) reg += x * x;
    total += model.l2() * reg;
    if (!std::isfinite(total)) throw DivergedLoss("loss became non-finite in epoch " + std::to_string(epoch + 1));
    result.loss_trace.push_back(total);
    if (opt.log) *opt.log << "epoch " << epoch + 1 << " loss " << format_double(total) << '\n';
  }
  result.termination = "completed " + std::to_string(opt.epochs) + " epochs";
  return result;
}

}  // namespace

TrainResult train(Model& model, std::span<const Instance> data, const TrainOptions& options) {
  Objective::Options oo;
  oo.threads = options.threads;
  oo.warnings = options.log;
  const Objective objective(model, data, oo);
  if (objective.size() == 0) throw EmptyCorpus("no usable training instances");
  TrainResult result = options.optimizer == Optimizer::LBFGS ? train_lbfgs(model, objective, options)
                                                             : train_sgd(model, objective, options);
  result.used = objective.size();
  result.dropped = objective.dropped();
  return result;
}

CrossValidation select_l2(const Model& prototype, std::span<const Instance> data, std::span<const double> grid,
                          int folds, const TrainOptions& options) {
  if (grid.empty()) throw std::invalid_argument("empty regularization grid");
  if (folds < 2 || static_cast<std::size_t>(folds) > data.size()) throw std::invalid_argument("bad fold count");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(options.seed);
  std::shuffle(order.begin(), order.end(), rng);
  TrainOptions quiet = options;
  quiet.log = nullptr;

  CrossValidation cv;
  double best = -1.0;
  for (double l2 : grid) {
    double sum = 0.0;
    for (int f = 0; f < folds; ++f) {
      std::vector<Instance> train_part, held;
      for (std::size_t i = 0; i < order.size(); ++i) {
        (static_cast<int>(i % static_cast<std::size_t>(folds)) == f ? held : train_part).push_back(data[order[i]]);
      }
      Model m = prototype;
      m.set_l2(l2);
      train(m, train_part, quiet);
      std::vector<MeaningRepresentation> golds;
      for (const auto& inst : held) golds.push_back(inst.gold);
      sum += evaluate(parse_all(m, held, options.threads), golds).f1;
    }
    const double mean = sum / folds;
    cv.mean_f1.emplace_back(l2, mean);
    if (options.log) *options.log << "l2 " << format_double(l2) << " mean F1 " << format_double(mean) << '\n';
    if (mean > best) {
      best = mean;
      cv.best_l2 = l2;
    }
  }
  return cv;
}

}  // namespace depht
