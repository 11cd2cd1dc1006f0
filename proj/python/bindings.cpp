#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "depht/corpus.hpp"
#include "depht/funql.hpp"
#include "depht/hybrid_tree.hpp"
#include "depht/model.hpp"

namespace py = pybind11;
using namespace depht;

namespace {

// Grammar, feature index and weights for one training set.
class PyModel {
 public:
  explicit PyModel(Model m) : model_(std::move(m)) {}

  static PyModel create(const std::vector<Instance>& data, const std::string& features, int c, double l2,
                        bool lowercase) {
    if (data.empty()) throw EmptyCorpus("no training instances");
    auto flags = FeatureFlags::preset(features);
    flags.lowercase = lowercase;
    std::vector<MeaningRepresentation> golds;
    for (const auto& inst : data) golds.push_back(inst.gold);
    Model m(build_grammar(golds, golds.front().root_unit().return_type), flags, c, l2);
    m.index_features(data);
    return PyModel(std::move(m));
  }

  std::vector<double> train(const std::vector<Instance>& data, const std::string& optimizer, double lr, int epochs,
                            int max_iterations, std::uint64_t seed, int threads) {
    TrainOptions opt;
    if (optimizer == "sgd") {
      opt.optimizer = Optimizer::SGD;
    } else if (optimizer != "lbfgs") {
      throw std::invalid_argument("optimizer must be lbfgs or sgd");
    }
    opt.learning_rate = lr;
    opt.epochs = epochs;
    opt.max_iterations = max_iterations;
    opt.seed = seed;
    opt.threads = threads;
    py::gil_scoped_release unlock;
    return depht::train(model_, data, opt).loss_trace;
  }

  std::optional<std::string> parse(const std::string& sentence) const {
    const auto p = model_.parse(Sentence::from_text(sentence));
    if (!p) return std::nullopt;
    return serialize_mr(*p);
  }

  py::dict decode(const std::string& sentence) const {
    const Sentence n = Sentence::from_text(sentence);
    const auto d = model_.decode(n);
    py::dict out;
    out["mr"] = serialize_mr(d.mr);
    out["score"] = d.score;
    out["arcs"] = format_arcs(d.tree);
    out["drawing"] = draw_tree(d.tree, n);
    return out;
  }

  double log_partition(const std::string& sentence) const {
    const Sentence n = Sentence::from_text(sentence);
    return inside_unclamped(n, model_.grammar(), ModelScorer(model_), model_.max_self_loops()).chart.log_z;
  }

  double log_probability(const Instance& inst) const {
    const ModelScorer s(model_);
    const double num =
        inside_clamped(inst.sentence, inst.gold, model_.grammar(), s, model_.max_self_loops()).chart.log_z;
    return num - log_partition(inst.sentence.text());
  }

  void save(const std::string& path) const { model_.save_file(path); }
  static PyModel load(const std::string& path) { return PyModel(Model::load_file(path)); }

  std::size_t num_features() const { return model_.index().size(); }
  std::size_t num_units() const { return model_.grammar().size(); }
  int c() const { return model_.max_self_loops(); }
  double l2() const { return model_.l2(); }

 private:
  Model model_;
};

}  // namespace

PYBIND11_MODULE(_depht, m) {
  m.doc() = "Semantic parsing with dependency-based hybrid trees";

  py::register_exception<FunqlError>(m, "FunqlError", PyExc_ValueError);
  py::register_exception<IOError>(m, "CorpusIOError", PyExc_OSError);
  py::register_exception<NoDerivation>(m, "NoDerivation", PyExc_RuntimeError);

  py::class_<SignatureTable>(m, "SignatureTable")
      .def_static("from_string", &SignatureTable::from_string)
      .def_static("load_file", &SignatureTable::load_file);

  py::class_<MeaningRepresentation>(m, "MeaningRepresentation")
      .def("__len__", &MeaningRepresentation::size)
      .def("__str__", [](const MeaningRepresentation& mr) { return serialize_mr(mr); })
      .def("__repr__", [](const MeaningRepresentation& mr) { return "MeaningRepresentation(" + serialize_mr(mr) + ")"; })
      .def("__eq__", [](const MeaningRepresentation& a, const MeaningRepresentation& b) { return a == b; })
      .def("depth", &MeaningRepresentation::depth)
      .def("units", [](const MeaningRepresentation& mr) {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < mr.size(); ++i) out.push_back(mr.node(static_cast<int>(i)).unit.to_string());
        return out;
      });

  m.def("parse_mr", &parse_mr, py::arg("text"), py::arg("signatures"));
  m.def("to_prolog", &to_prolog);

  py::class_<Instance>(m, "Instance")
      .def(py::init([](const std::string& sentence, const MeaningRepresentation& gold, const std::string& language) {
             return Instance{Sentence::from_text(sentence), gold, language};
           }),
           py::arg("sentence"), py::arg("gold"), py::arg("language") = "en")
      .def_property_readonly("sentence", [](const Instance& i) { return i.sentence.text(); })
      .def_property_readonly("tokens", [](const Instance& i) { return i.sentence.words(); })
      .def_readonly("gold", &Instance::gold)
      .def_readonly("language", &Instance::language);

  m.def(
      "load_corpus",
      [](const std::string& path, const SignatureTable& sigs, const std::string& language) {
        auto r = load_corpus_file(path, sigs, language);
        std::vector<std::pair<int, std::string>> errors;
        for (auto& e : r.errors) errors.emplace_back(e.line, e.message);
        return py::make_tuple(std::move(r.instances), std::move(errors));
      },
      py::arg("path"), py::arg("signatures"), py::arg("language") = "en");

  m.def(
      "count_trees",
      [](const std::string& sentence, const MeaningRepresentation& mr, int c, int max_tokens) {
        return enumerate_trees(Sentence::from_text(sentence), mr, c, {max_tokens}).size();
      },
      py::arg("sentence"), py::arg("mr"), py::arg("c"), py::arg("max_tokens") = 6);

  m.def(
      "evaluate",
      [](const std::vector<std::optional<MeaningRepresentation>>& predictions,
         const std::vector<MeaningRepresentation>& golds) {
        const auto r = depht::evaluate(predictions, golds);
        py::dict out;
        out["n"] = r.n;
        out["produced"] = r.produced;
        out["correct"] = r.correct;
        out["accuracy"] = r.accuracy;
        out["precision"] = r.precision;
        out["recall"] = r.recall;
        out["f1"] = r.f1;
        return out;
      },
      py::arg("predictions"), py::arg("golds"));

  py::class_<PyModel>(m, "Model")
      .def_static("create", &PyModel::create, py::arg("data"), py::arg("features") = "full", py::arg("c") = 20,
                  py::arg("l2") = 0.03, py::arg("lowercase") = false)
      .def_static("load", &PyModel::load)
      .def("train", &PyModel::train, py::arg("data"), py::arg("optimizer") = "lbfgs", py::arg("lr") = 0.05,
           py::arg("epochs") = 30, py::arg("max_iterations") = 500, py::arg("seed") = 1, py::arg("threads") = 1)
      .def("parse", &PyModel::parse)
      .def("decode", &PyModel::decode)
      .def("log_partition", &PyModel::log_partition)
      .def("log_probability", &PyModel::log_probability)
      .def("save", &PyModel::save)
      .def_property_readonly("num_features", &PyModel::num_features)
      .def_property_readonly("num_units", &PyModel::num_units)
      .def_property_readonly("c", &PyModel::c)
      .def_property_readonly("l2", &PyModel::l2);
}
