#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "kfv/cli.hpp"
#include "kfv/pipeline.hpp"

namespace py = pybind11;
using namespace kfv;

namespace {

using TripletTuple = std::tuple<std::string, std::string, std::string, std::string>;

std::vector<TripletTuple> to_tuples(const std::vector<ExtractedTriplet>& ts) {
  std::vector<TripletTuple> out;
  for (const auto& t : ts) out.emplace_back(t.subject, t.predicate, t.object, t.source);
  return out;
}

std::vector<ExtractedTriplet> from_tuples(const std::vector<TripletTuple>& ts) {
  std::vector<ExtractedTriplet> out;
  for (const auto& [s, p, o, src] : ts) out.push_back({s, p, o, src});
  return out;
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict report_dict(const MetricsReport& r) { return json_to_py(r.to_json()); }

}  // namespace

PYBIND11_MODULE(_kfv, m) {
  m.doc() = "Few-shot visual relation detection with knowledge fusion";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_RuntimeError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

  py::class_<Lexicon>(m, "Lexicon")
      .def_static("load", &Lexicon::load, py::arg("path"))
      .def_static("parse", [](const std::string& text) { return Lexicon::parse(text); }, py::arg("text"))
      .def("tag", [](const Lexicon& l, const std::string& w) -> std::optional<std::string> {
        if (auto t = l.find(w)) return std::string(tag_name(*t));
        return std::nullopt;
      })
      .def("__len__", &Lexicon::size);

  m.def("tokenize", [](const std::string& text) { return tokenize(text); });
  m.def(
      "parse_caption",
      [](const std::string& text, const Lexicon& lex, const std::string& id) {
        return to_tuples(parse_caption({id, text}, lex));
      },
      py::arg("text"), py::arg("lexicon"), py::arg("id") = "");
  m.def(
      "parse_captions_jsonl",
      [](const std::string& jsonl, const Lexicon& lex) {
        const auto caps = read_captions_jsonl(jsonl);
        return to_tuples(parse_corpus(caps, lex));
      },
      py::arg("jsonl"), py::arg("lexicon"));

  py::class_<VisualRelationKG>(m, "KnowledgeGraph")
      .def(py::init<>())
      .def_static(
          "from_triplets", [](const std::vector<TripletTuple>& ts) { return build_graph(from_tuples(ts)); },
          py::arg("triplets"))
      .def_static(
          "deserialize", [](const std::string& tsv) { return deserialize(tsv); }, py::arg("tsv"))
      .def("serialize", [](const VisualRelationKG& g) { return serialize(g); })
      .def_property_readonly("nodes", &VisualRelationKG::nodes)
      .def_property_readonly("relations", &VisualRelationKG::relations)
      .def_property_readonly("edges",
                             [](const VisualRelationKG& g) {
                               std::vector<std::tuple<std::string, std::string, std::string, std::uint64_t>> out;
                               for (const auto& e : g.edges()) out.emplace_back(e.subject, e.relation, e.object, e.count);
                               return out;
                             })
      .def(
          "filter",
          [](const VisualRelationKG& g, const std::string& mode, const std::set<std::string>& anchors,
             std::size_t top_k_relations) {
            FilterSpec spec;
            spec.node_mode = parse_node_mode(mode);
            spec.anchor_classes = anchors;
            spec.top_k_relations = top_k_relations;
            return apply_filter(g, spec);
          },
          py::arg("mode") = "all", py::arg("anchors") = std::set<std::string>{}, py::arg("top_k_relations") = 0)
      .def("__len__", &VisualRelationKG::edge_count)
      .def("__eq__", [](const VisualRelationKG& a, const VisualRelationKG& b) { return a == b; });

  py::class_<SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("num_classes", &SyntheticSpec::num_classes)
      .def_readwrite("num_relations", &SyntheticSpec::num_relations)
      .def_readwrite("feature_dim", &SyntheticSpec::feature_dim)
      .def_readwrite("groups", &SyntheticSpec::groups)
      .def_readwrite("sigma", &SyntheticSpec::sigma)
      .def_readwrite("holdout", &SyntheticSpec::holdout)
      .def_readwrite("train_images", &SyntheticSpec::train_images)
      .def_readwrite("test_images", &SyntheticSpec::test_images)
      .def_readwrite("objects_per_image", &SyntheticSpec::objects_per_image)
      .def_readwrite("text_dim", &SyntheticSpec::text_dim)
      .def_readwrite("text_noise", &SyntheticSpec::text_noise)
      .def_readwrite("kg_coverage", &SyntheticSpec::kg_coverage)
      .def_readwrite("kg_noise", &SyntheticSpec::kg_noise)
      .def_readwrite("seed", &SyntheticSpec::seed);

  py::class_<SyntheticDataset>(m, "SyntheticDataset")
      .def_readonly("classes", &SyntheticDataset::classes)
      .def_readonly("relations", &SyntheticDataset::relations)
      .def_readonly("seen_pairs", &SyntheticDataset::seen_pairs)
      .def_readonly("unseen_pairs", &SyntheticDataset::unseen_pairs)
      .def_property_readonly("train_images", [](const SyntheticDataset& d) { return d.train.size(); })
      .def_property_readonly("test_images", [](const SyntheticDataset& d) { return d.test.size(); })
      .def_property_readonly("captions",
                             [](const SyntheticDataset& d) {
                               std::vector<std::pair<std::string, std::string>> out;
                               for (const auto& c : d.captions) out.emplace_back(c.id, c.text);
                               return out;
                             })
      .def_property_readonly("lexicon", [](const SyntheticDataset& d) { return Lexicon::parse(d.lexicon_tsv); });

  m.def("generate_synthetic", &generate_synthetic, py::arg("spec") = SyntheticSpec{});
  m.def(
      "knowledge_graph",
      [](const SyntheticDataset& d) { return knowledge_graph(d.captions, Lexicon::parse(d.lexicon_tsv)); },
      py::arg("dataset"));

  m.def(
      "run_experiment",
      [](const SyntheticDataset& data, std::uint64_t seed, int epochs, int vrk_epochs, int shots, bool use_textual,
         bool use_vrk, bool graph_constraint) {
        ExperimentConfig cfg;
        cfg.seed = seed;
        cfg.train.epochs = epochs;
        cfg.vrk.epochs = vrk_epochs;
        cfg.episode.shots = shots;
        cfg.train.use_textual = use_textual;
        cfg.train.use_vrk = use_vrk;
        cfg.graph_constraint = graph_constraint;
        ExperimentResult res;
        {
          py::gil_scoped_release release;
          res = run_experiment(data, cfg);
        }
        py::dict out = report_dict(res.report);
        out["train_accuracy"] = res.training.train_accuracy;
        out["vrk_accuracy"] = res.vrk_accuracy;
        out["support_instances"] = res.support_instances;
        std::vector<double> curve;
        for (const auto& p : res.training.curve) curve.push_back(p.loss);
        out["loss_curve"] = curve;
        return out;
      },
      py::arg("dataset"), py::arg("seed") = 1, py::arg("epochs") = TrainConfig{}.epochs,
      py::arg("vrk_epochs") = ReconstructionConfig{}.epochs, py::arg("shots") = EpisodeConfig{}.shots,
      py::arg("use_textual") = true, py::arg("use_vrk") = true, py::arg("graph_constraint") = false);

  m.def("ordered_pairs", &ordered_pairs, py::arg("n_objects"));
  m.def(
      "rank_from_scores",
      [](std::size_t n_objects, const std::vector<Vec>& pair_scores, bool graph_constraint) {
        std::vector<std::tuple<std::size_t, std::size_t, std::size_t, double>> out;
        for (const auto& p : rank_from_scores("", n_objects, pair_scores, graph_constraint))
          out.emplace_back(p.triplet.subject, p.triplet.predicate, p.triplet.object, p.score);
        return out;
      },
      py::arg("n_objects"), py::arg("pair_scores"), py::arg("graph_constraint") = false);
  m.def(
      "recall_at_k",
      [](const std::vector<std::vector<Vec>>& pair_scores, const std::vector<std::size_t>& n_objects,
         const std::vector<std::vector<std::tuple<std::size_t, std::size_t, std::size_t>>>& gt, std::size_t k,
         bool graph_constraint) {
        if (pair_scores.size() != n_objects.size() || gt.size() != n_objects.size())
          throw ContractViolation("pair_scores, n_objects and gt need one entry per image");
        std::vector<std::vector<RankedPrediction>> preds;
        std::vector<EvalImage> images;
        for (std::size_t i = 0; i < n_objects.size(); ++i) {
          const std::string id = std::to_string(i);
          preds.push_back(rank_from_scores(id, n_objects[i], pair_scores[i], graph_constraint));
          EvalImage img{id, std::vector<int>(n_objects[i], 0), {}};
          for (const auto& [s, p, o] : gt[i]) img.gt.push_back({s, p, o});
          images.push_back(std::move(img));
        }
        return recall_at_k(preds, images, k);
      },
      py::arg("pair_scores"), py::arg("n_objects"), py::arg("gt"), py::arg("k"), py::arg("graph_constraint") = false);
  m.def("sha256_hex", [](const std::string& b) { return sha256_hex(b); });
  m.def(
      "cli_main",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "kfv");
        std::ostringstream out, err;
        const int code = cli_main(args, out, err);
        return std::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
