// depht: train / decode / eval / inspect.
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "depht/chart.hpp"
#include "depht/corpus.hpp"
#include "depht/features.hpp"
#include "depht/funql.hpp"
#include "depht/hybrid_tree.hpp"
#include "depht/model.hpp"
#include "depht/neural.hpp"

namespace fs = std::filesystem;
using namespace depht;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kDiverged = 4 };

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int fail(int code, const std::string& kind, const std::string& message) {
  nlohmann::json j{{"error", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << j.dump() << '\n';
  return code;
}

void require_readable(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path is required");
  std::ifstream probe(path);
  if (!probe) throw ConfigError(what + " '" + path + "' is not readable");
}

struct TrainArgs {
  std::string train_path, signatures, embeddings, out_dir = "out", root_type, language = "en";
  int c = 20;
  std::string l2 = "0.03";
  std::string optimizer = "lbfgs";
  double lr = 0.05;
  int epochs = 30;
  int max_iterations = 500;
  std::string features = "full";
  bool lowercase = false, neural = false, embedding_features = false;
  std::uint64_t seed = 1;
  int threads = 1;
  int folds = 5;
};

struct DecodeArgs {
  std::string model, test, sentences, signatures, out = "predictions.txt", prolog, embeddings, language = "en";
  int threads = 1;
};

struct EvalArgs {
  std::string predictions, gold, signatures;
};

struct InspectArgs {
  std::string model, sentence, marginals, embeddings;
};

SignatureTable load_signatures(const std::string& path) {
  require_readable(path, "signature file");
  return SignatureTable::load_file(path);
}

std::vector<Instance> load_instances(const std::string& path, const SignatureTable& sigs, const std::string& lang) {
  require_readable(path, "corpus");
  auto loaded = load_corpus_file(path, sigs, lang);
  for (const auto& e : loaded.errors) {
    std::cerr << nlohmann::json{{"warning", "bad_record"}, {"file", path}, {"line", e.line}, {"message", e.message}}.dump()
              << '\n';
  }
  if (loaded.instances.empty()) throw DataError("no usable records in " + path);
  return std::move(loaded.instances);
}

std::shared_ptr<const EmbeddingTable> maybe_embeddings(const std::string& path) {
  if (path.empty()) return nullptr;
  require_readable(path, "embedding file");
  return std::make_shared<const EmbeddingTable>(EmbeddingTable::load_file(path));
}

int cmd_train(const TrainArgs& a) {
  if (a.c < 1) throw ConfigError("c must be at least 1");
  if (a.optimizer != "lbfgs" && a.optimizer != "sgd") throw ConfigError("optimizer must be lbfgs or sgd");
  if (a.optimizer == "sgd" && !(a.lr > 0)) throw ConfigError("lr must be positive for sgd");
  if (a.threads < 1) throw ConfigError("threads must be at least 1");
  FeatureFlags flags;
  try {
    flags = FeatureFlags::preset(a.features);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  flags.lowercase = a.lowercase;
  flags.embedding = a.embedding_features;
  if ((a.neural || a.embedding_features) && a.embeddings.empty()) throw ConfigError("--neural and --embedding-features need --embeddings");

  const auto sigs = load_signatures(a.signatures);
  const auto data = load_instances(a.train_path, sigs, a.language);
  const auto emb = maybe_embeddings(a.embeddings);

  const SemanticType root = a.root_type.empty() ? data.front().gold.root_unit().return_type : SemanticType(a.root_type);
  std::vector<MeaningRepresentation> golds;
  for (const auto& inst : data) golds.push_back(inst.gold);
  Model model(build_grammar(golds, root), flags, a.c, 0.0);
  if (emb) model.set_embeddings(emb, fs::absolute(a.embeddings).string());
  model.index_features(data);
  if (a.neural) model.enable_bilinear(a.seed);

  TrainOptions opt;
  opt.optimizer = a.optimizer == "sgd" ? Optimizer::SGD : Optimizer::LBFGS;
  opt.learning_rate = a.lr;
  opt.epochs = a.epochs;
  opt.max_iterations = a.max_iterations;
  opt.seed = a.seed;
  opt.threads = a.threads;
  opt.log = &std::cerr;

  if (a.l2 == "auto") {
    const std::vector<double> grid{0.01, 0.02, 0.03, 0.04, 0.05};
    const auto cv = select_l2(model, data, grid, a.folds, opt);
    model.set_l2(cv.best_l2);
  } else {
    try {
      std::size_t used = 0;
      const double l2 = std::stod(a.l2, &used);
      if (used != a.l2.size() || l2 < 0) throw std::invalid_argument("");
      model.set_l2(l2);
    } catch (const std::exception&) {
      throw ConfigError("l2 must be a non-negative number or 'auto'");
    }
  }

  const auto result = train(model, data, opt);
  fs::create_directories(a.out_dir);
  model.save_file((fs::path(a.out_dir) / "model.depht").string());
  std::ofstream trace(fs::path(a.out_dir) / "loss.tsv");
  trace << "step\tloss\n";
  trace.precision(17);
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) trace << i << '\t' << result.loss_trace[i] << '\n';
  std::cout << nlohmann::json{{"model", (fs::path(a.out_dir) / "model.depht").string()},
                              {"instances", result.used},
                              {"dropped", result.dropped.size()},
                              {"l2", model.l2()},
                              {"features", model.index().size()},
                              {"final_loss", result.loss_trace.empty() ? 0.0 : result.loss_trace.back()},
                              {"termination", result.termination}}
                   .dump()
            << '\n';
  return kOk;
}

int cmd_decode(const DecodeArgs& a) {
  require_readable(a.model, "model file");
  const auto model = Model::load_file(a.model, maybe_embeddings(a.embeddings));
  std::vector<Instance> inputs;
  if (!a.test.empty()) {
    inputs = load_instances(a.test, load_signatures(a.signatures), a.language);
  } else {
    require_readable(a.sentences, "sentence file");
    std::ifstream in(a.sentences);
    for (std::string line; std::getline(in, line);) {
      Instance inst;
      inst.sentence = Sentence::from_text(line);
      if (inst.sentence.size() > 0) inputs.push_back(std::move(inst));
    }
  }
  const auto predictions = parse_all(model, inputs, a.threads);
  std::ofstream out(a.out);
  if (!out) throw ConfigError("cannot write " + a.out);
  write_predictions(out, predictions);
  if (!a.prolog.empty()) {
    std::ofstream pl(a.prolog);
    if (!pl) throw ConfigError("cannot write " + a.prolog);
    for (const auto& p : predictions) pl << (p ? to_prolog(*p) : std::string{}) << '\n';
  }
  int produced = 0;
  for (const auto& p : predictions) produced += p.has_value();
  std::cout << nlohmann::json{{"predictions", a.out}, {"n", predictions.size()}, {"produced", produced}}.dump() << '\n';
  return kOk;
}

int cmd_eval(const EvalArgs& a) {
  const auto sigs = load_signatures(a.signatures);
  const auto gold = load_instances(a.gold, sigs, "en");
  require_readable(a.predictions, "predictions file");
  std::ifstream in(a.predictions);
  auto file = read_predictions(in, sigs);
  std::vector<MeaningRepresentation> golds;
  for (const auto& inst : gold) golds.push_back(inst.gold);
  const auto m = evaluate(file, golds);
  std::cout << nlohmann::json{{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
                              {"f1", m.f1}, {"n", m.n}}
                   .dump()
            << '\n';
  return kOk;
}

int cmd_inspect(const InspectArgs& a) {
  require_readable(a.model, "model file");
  const auto model = Model::load_file(a.model, maybe_embeddings(a.embeddings));
  const Sentence n = Sentence::from_text(a.sentence);
  if (n.size() == 0) throw ConfigError("empty sentence");
  const auto& labels = model.unclamped_labels();
  const Forest forest = Forest::build(n.size(), labels, model.max_self_loops());
  const Potentials pot = model.potentials(n, model.token_features(n), labels);
  Chart chart = compute_inside(forest, pot);
  if (!forest.has_derivation()) throw DataError("no hybrid tree covers the sentence");
  compute_outside(forest, chart);
  const auto best = viterbi(forest, pot, labels, model.grammar());
  std::cout << serialize_mr(best.mr) << "\n\n" << draw_tree(best.tree, n) << '\n' << format_arcs(best.tree);
  std::cout << "score " << best.score << "  logZ " << chart.log_z << '\n';
  const std::string tsv = marginals_tsv(forest, chart, labels, model.grammar());
  if (a.marginals.empty()) {
    std::cout << '\n' << tsv;
  } else {
    std::ofstream out(a.marginals);
    if (!out) throw ConfigError("cannot write " + a.marginals);
    out << tsv;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  depht::retain_freed_memory();
  CLI::App app{"DepHT semantic parser"};
  app.set_config("--config", "", "TOML file with [train] / [decode] / [eval] / [inspect] sections");
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--train", ta.train_path, "training corpus")->required();
  train_cmd->add_option("--signatures", ta.signatures, "unit signature file")->required();
  train_cmd->add_option("--embeddings", ta.embeddings, "word vectors, `word v1 .. vd` per line");
  train_cmd->add_option("--out", ta.out_dir, "output directory")->capture_default_str();
  train_cmd->add_option("--root-type", ta.root_type, "root semantic type (default: type of the first gold root)");
  train_cmd->add_option("--language", ta.language)->capture_default_str();
  train_cmd->add_option("--c", ta.c, "self-loop depth cap")->capture_default_str();
  train_cmd->add_option("--l2", ta.l2, "L2 coefficient or 'auto' for a 5-fold sweep")->capture_default_str();
  train_cmd->add_option("--optimizer", ta.optimizer, "lbfgs | sgd")->capture_default_str();
  train_cmd->add_option("--lr", ta.lr, "sgd learning rate")->capture_default_str();
  train_cmd->add_option("--epochs", ta.epochs, "sgd epochs")->capture_default_str();
  train_cmd->add_option("--max-iterations", ta.max_iterations, "lbfgs iterations")->capture_default_str();
  train_cmd->add_option("--features", ta.features, "basic | basic+hm | basic+bow | full")->capture_default_str();
  train_cmd->add_flag("--lowercase", ta.lowercase);
  train_cmd->add_flag("--neural", ta.neural, "bilinear arc scorer");
  train_cmd->add_flag("--embedding-features", ta.embedding_features, "averaged embeddings as features");
  train_cmd->add_option("--seed", ta.seed)->capture_default_str();
  train_cmd->add_option("--threads", ta.threads)->capture_default_str();
  train_cmd->add_option("--folds", ta.folds, "folds for --l2 auto")->capture_default_str();

  DecodeArgs da;
  auto* decode_cmd = app.add_subcommand("decode", "parse sentences with a trained model");
  decode_cmd->add_option("--model", da.model)->required();
  auto* test_opt = decode_cmd->add_option("--test", da.test, "corpus file (needs --signatures)");
  auto* sent_opt = decode_cmd->add_option("--sentences", da.sentences, "one tokenized sentence per line");
  test_opt->excludes(sent_opt);
  decode_cmd->add_option("--signatures", da.signatures);
  decode_cmd->add_option("--embeddings", da.embeddings, "override the embedding file recorded in the model");
  decode_cmd->add_option("--out", da.out)->capture_default_str();
  decode_cmd->add_option("--emit-prolog", da.prolog, "also write Prolog queries here");
  decode_cmd->add_option("--threads", da.threads)->capture_default_str();

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "exact-match accuracy and F1");
  eval_cmd->add_option("--predictions", ea.predictions)->required();
  eval_cmd->add_option("--gold", ea.gold)->required();
  eval_cmd->add_option("--signatures", ea.signatures)->required();

  InspectArgs ia;
  auto* inspect_cmd = app.add_subcommand("inspect", "Viterbi tree and chart marginals for one sentence");
  inspect_cmd->add_option("--model", ia.model)->required();
  inspect_cmd->add_option("--sentence", ia.sentence)->required();
  inspect_cmd->add_option("--marginals", ia.marginals, "write the marginal TSV here instead of stdout");
  inspect_cmd->add_option("--embeddings", ia.embeddings);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kConfig, "config", e.what());
  }

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*decode_cmd) {
      if (da.test.empty() && da.sentences.empty()) throw ConfigError("decode needs --test or --sentences");
      return cmd_decode(da);
    }
    if (*eval_cmd) return cmd_eval(ea);
    if (*inspect_cmd) return cmd_inspect(ia);
  } catch (const ConfigError& e) {
    return fail(kConfig, "config", e.what());
  } catch (const DivergedLoss& e) {
    return fail(kDiverged, "diverged", e.what());
  } catch (const FunqlError& e) {
    return fail(kData, "data", e.what());
  } catch (const DataError& e) {
    return fail(kData, "data", e.what());
  } catch (const IOError& e) {
    return fail(kData, "io", e.what());
  } catch (const ModelFormatError& e) {
    return fail(kData, "model_format", e.what());
  } catch (const LengthMismatch& e) {
    return fail(kData, "length_mismatch", e.what());
  } catch (const std::exception& e) {
    return fail(kData, "data", e.what());
  }
  return kOk;
}
