#include "kfv/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "kfv/binary_io.hpp"
#include "kfv/caption_parser.hpp"
#include "kfv/corpus_io.hpp"
#include "kfv/eval_metrics.hpp"
#include "kfv/fewshot_trainer.hpp"
#include "kfv/fusion_core.hpp"
#include "kfv/pipeline.hpp"
#include "kfv/relation_kg.hpp"
#include "kfv/vrk_encoder.hpp"

namespace kfv {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Collects what a run read and wrote, then writes the manifest.
class Run {
 public:
  Run(std::string command, std::vector<std::string> argv)
      : command_(std::move(command)), argv_(std::move(argv)) {}

  std::string read(const std::string& path) {
    if (!fs::is_regular_file(path)) throw UsageError("input file not found: " + path);
    std::string bytes = bin::read_file(path);
    inputs_[path] = sha256_hex(bytes);
    return bytes;
  }
  void note_input(const std::string& path) {
    if (!fs::is_regular_file(path)) throw UsageError("input file not found: " + path);
    inputs_[path] = sha256_hex(bin::read_file(path));
  }
  void write(const std::string& path, std::string_view bytes) {
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    bin::write_file(path, bytes);
    outputs_[path] = sha256_hex(bytes);
  }
  void note_output(const std::string& path) { outputs_[path] = sha256_hex(bin::read_file(path)); }

  json config = json::object();
  json seeds = json::object();
  json result = json::object();

  void write_manifest(const std::string& path) {
    json m;
    m["command"] = command_;
    m["argv"] = argv_;
    m["config"] = config;
    m["seeds"] = seeds;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    m["result"] = result;
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    bin::write_file(path, m.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

std::string manifest_for(const std::string& output) { return output + ".manifest.json"; }

void load_features(Run& run, const std::string& prefix, FeatureStore& store) {
  const std::string bin = prefix + ".bin", idx = prefix + ".idx";
  run.note_input(bin);
  run.note_input(idx);
  store = FeatureStore::load(bin, idx);
}

std::vector<std::string> relation_list(Run& run, const std::string& benchmark) {
  if (benchmark.rfind("custom:", 0) == 0) run.note_input(benchmark.substr(7));
  return benchmark_relations(benchmark);
}

json seen_to_json(const SeenSets& seen, const KfvModel& model) {
  json pairs = json::array(), triplets = json::array();
  for (const auto& [s, o] : seen.pairs) pairs.push_back({model.class_name(s), model.class_name(o)});
  for (const auto& [s, p, o] : seen.triplets)
    triplets.push_back({model.class_name(s), model.candidates.name(p), model.class_name(o)});
  return {{"pairs", pairs}, {"triplets", triplets}};
}

SeenSets seen_from_json(const json& j, const KfvModel& model) {
  std::map<std::string, int> cls;
  for (std::size_t i = 0; i < model.class_names.size(); ++i) cls[model.class_names[i]] = static_cast<int>(i);
  auto class_id = [&](const json& v) {
    auto it = cls.find(v.get<std::string>());
    if (it == cls.end()) throw ConfigError("seen-set class '" + v.get<std::string>() + "' unknown to the model");
    return it->second;
  };
  SeenSets seen;
  try {
    for (const auto& p : j.at("pairs")) seen.pairs.emplace(class_id(p.at(0)), class_id(p.at(1)));
    for (const auto& t : j.at("triplets")) {
      auto p = model.candidates.index_of(t.at(1).get<std::string>());
      if (!p) throw ConfigError("seen-set predicate '" + t.at(1).get<std::string>() + "' not a candidate");
      seen.triplets.emplace(class_id(t.at(0)), *p, class_id(t.at(2)));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed seen-set file: ") + e.what());
  }
  return seen;
}

json parse_json_file(Run& run, const std::string& path) {
  const std::string text = run.read(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(path + ": malformed JSON: " + e.what());
  }
}

void add_seed(CLI::App* app, std::uint64_t& seed) {
  app->add_option("--seed", seed, "Random seed")->capture_default_str();
}

int run_replay(const std::string& manifest_path, std::ostream& out, std::ostream& err);

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<std::string> argv = args;
  if (argv.empty()) argv.push_back("kfv");
  argv[0] = "kfv";

  CLI::App app{"Few-shot visual relation detection toolkit", "kfv"};
  app.require_subcommand(1);

  // parse-captions
  std::string pc_in, pc_lex, pc_out;
  auto* pc = app.add_subcommand("parse-captions", "Extract subject-predicate-object triplets from captions");
  pc->add_option("--in", pc_in, "Captions JSONL")->required();
  pc->add_option("--lexicon", pc_lex, "Lexicon TSV")->required();
  pc->add_option("--out", pc_out, "Triplet TSV")->required();

  // build-kg
  std::vector<std::string> bk_in;
  std::string bk_out;
  auto* bk = app.add_subcommand("build-kg", "Build a counted relation graph from triplet files");
  bk->add_option("--in", bk_in, "Triplet TSV (repeatable)")->required();
  bk->add_option("--out", bk_out, "Graph TSV")->required();

  // filter-kg
  std::string fk_in, fk_out, fk_mode = "all", fk_anchors;
  std::size_t fk_topk = 0;
  auto* fk = app.add_subcommand("filter-kg", "Filter a relation graph by nodes and relation frequency");
  fk->add_option("--in", fk_in, "Graph TSV")->required();
  fk->add_option("--mode", fk_mode, "Node filter: 0hop, 1hop, all")->capture_default_str();
  fk->add_option("--anchors", fk_anchors, "Anchor class list, one per line");
  fk->add_option("--top-k-relations", fk_topk, "Keep the k most frequent relations (0 = all)");
  fk->add_option("--out", fk_out, "Graph TSV")->required();

  // train-vrk
  std::string tv_kg, tv_out, tv_sampling = "count";
  VrkDims tv_dims;
  ReconstructionConfig tv_cfg;
  auto* tv = app.add_subcommand("train-vrk", "Train the relation knowledge encoder on a graph");
  tv->add_option("--kg", tv_kg, "Graph TSV")->required();
  tv->add_option("--out", tv_out, "Encoder file")->required();
  tv->add_option("--epochs", tv_cfg.epochs)->capture_default_str();
  tv->add_option("--lr", tv_cfg.learning_rate)->capture_default_str();
  tv->add_option("--batch", tv_cfg.batch_size)->capture_default_str();
  tv->add_option("--sampling", tv_sampling, "uniform or count")->capture_default_str();
  tv->add_option("--input-dim", tv_dims.input_dim)->capture_default_str();
  tv->add_option("--hidden-dim", tv_dims.hidden_dim)->capture_default_str();
  tv->add_option("--mask-dim", tv_dims.mask_dim)->capture_default_str();
  add_seed(tv, tv_cfg.seed);

  // gen-synth
  SyntheticSpec gs;
  std::string gs_out, gs_rules;
  auto* gsc = app.add_subcommand("gen-synth", "Generate a compositional synthetic benchmark");
  gsc->add_option("--out-dir", gs_out, "Output directory")->required();
  gsc->add_option("--classes", gs.num_classes)->capture_default_str();
  gsc->add_option("--relations", gs.num_relations)->capture_default_str();
  gsc->add_option("--feature-dim", gs.feature_dim)->capture_default_str();
  gsc->add_option("--groups", gs.groups)->capture_default_str();
  gsc->add_option("--sigma", gs.sigma)->capture_default_str();
  gsc->add_option("--holdout", gs.holdout)->capture_default_str();
  gsc->add_option("--train-images", gs.train_images)->capture_default_str();
  gsc->add_option("--test-images", gs.test_images)->capture_default_str();
  gsc->add_option("--objects", gs.objects_per_image)->capture_default_str();
  gsc->add_option("--visual-group-weight", gs.visual_group_weight)->capture_default_str();
  gsc->add_option("--text-dim", gs.text_dim)->capture_default_str();
  gsc->add_option("--text-noise", gs.text_noise)->capture_default_str();
  gsc->add_option("--kg-coverage", gs.kg_coverage)->capture_default_str();
  gsc->add_option("--kg-noise", gs.kg_noise)->capture_default_str();
  gsc->add_option("--captions-per-pair", gs.captions_per_pair)->capture_default_str();
  gsc->add_option("--rules", gs_rules, "Rule table: 'subject_group object_group relation_index' rows, -1 for none");
  add_seed(gsc, gs.seed);

  // train
  std::string tr_data, tr_features, tr_emb, tr_vrk, tr_out, tr_benchmark = "50way", tr_classes,
                                                             tr_config, tr_template = "triplet",
                                                             tr_polarity = "similarity",
                                                             tr_optimizer = "adam";
  TrainConfig tr_cfg;
  EpisodeConfig tr_ep;
  int tr_hidden = 32;
  bool tr_no_textual = false, tr_no_vrk = false;
  std::uint64_t tr_seed = 1;
  auto* tr = app.add_subcommand("train", "Few-shot training of the fused relation classifier");
  tr->add_option("--data", tr_data, "Training dataset JSONL")->required();
  tr->add_option("--features", tr_features, "Feature store prefix (PREFIX.bin, PREFIX.idx)")->required();
  tr->add_option("--embeddings", tr_emb, "Token embedding table")->required();
  tr->add_option("--vrk", tr_vrk, "Trained knowledge encoder");
  tr->add_option("--out", tr_out, "Model checkpoint")->required();
  tr->add_option("--benchmark", tr_benchmark, "50way, 25way, 20way or custom:<file>")->capture_default_str();
  tr->add_option("--classes", tr_classes, "Class list (default: classes in the data)");
  tr->add_option("--config", tr_config, "key=value training config file");
  tr->add_option("--shots", tr_ep.shots)->capture_default_str();
  tr->add_option("--negative-ratio", tr_ep.negative_ratio)->capture_default_str();
  tr->add_option("--epochs", tr_cfg.epochs)->capture_default_str();
  tr->add_option("--lr", tr_cfg.learning_rate)->capture_default_str();
  tr->add_option("--batch", tr_cfg.batch_size)->capture_default_str();
  tr->add_option("--optimizer", tr_optimizer, "adam or sgd")->capture_default_str();
  tr->add_option("--hidden-dim", tr_hidden)->capture_default_str();
  tr->add_option("--template", tr_template, "cloze, t5, triplet")->capture_default_str();
  tr->add_option("--metric-polarity", tr_polarity, "similarity or distance")->capture_default_str();
  tr->add_flag("--no-textual", tr_no_textual, "Static word vectors for predicates");
  tr->add_flag("--no-vrk", tr_no_vrk, "Disable the knowledge prior");
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "Random seed")->capture_default_str();

  // eval
  std::string ev_model, ev_data, ev_features, ev_seen, ev_out;
  bool ev_gc = false;
  auto* ev = app.add_subcommand("eval", "Rank relations on test images and compute recall metrics");
  ev->add_option("--model", ev_model, "Model checkpoint")->required();
  ev->add_option("--data", ev_data, "Test dataset JSONL")->required();
  ev->add_option("--features", ev_features, "Feature store prefix")->required();
  ev->add_option("--seen", ev_seen, "Seen-set file (default: <model>.seen.json)");
  ev->add_option("--out", ev_out, "Metrics report JSON")->required();
  ev->add_flag("--graph-constraint", ev_gc, "At most one predicate per object pair");

  // report
  std::string rp_in, rp_out;
  auto* rp = app.add_subcommand("report", "Render a metrics report as a text table");
  rp->add_option("--in", rp_in, "Metrics report JSON")->required();
  rp->add_option("--out", rp_out, "Text table (default: stdout only)");

  // replay
  std::string rl_manifest;
  auto* rl = app.add_subcommand("replay", "Re-run a manifest and check its outputs are identical");
  rl->add_option("--manifest", rl_manifest, "Manifest JSON")->required();

  try {
    std::vector<std::string> rev(argv.rbegin(), argv.rend() - 1);
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "kfv: error: usage: " << msg << "\n";
    return 2;
  }

  auto fail = [&](const char* kind, std::string msg, int code) {
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "kfv: error: " << kind << ": " << msg << "\n";
    return code;
  };

  try {
    if (*pc) {
      Run run("parse-captions", argv);
      const auto captions = read_captions_jsonl(run.read(pc_in));
      run.note_input(pc_lex);
      const Lexicon lex = Lexicon::load(pc_lex);
      const auto triplets = parse_corpus(captions, lex);
      run.write(pc_out, triplets_to_tsv(triplets));
      run.result = {{"captions", captions.size()}, {"triplets", triplets.size()}};
      run.write_manifest(manifest_for(pc_out));
      out << "parsed " << captions.size() << " captions into " << triplets.size() << " triplets\n";
    } else if (*bk) {
      Run run("build-kg", argv);
      VisualRelationKG g;
      for (const auto& path : bk_in) {
        const auto triplets = triplets_from_tsv(run.read(path));
        g = VisualRelationKG::merge(g, build_graph(triplets));
      }
      run.write(bk_out, serialize(g));
      const auto st = graph_stats(g);
      run.result = {{"nodes", st.nodes}, {"relations", st.relations}, {"edges", st.edges}};
      run.write_manifest(manifest_for(bk_out));
      out << "graph: " << st.nodes << " nodes, " << st.relations << " relations, " << st.edges << " edges\n";
    } else if (*fk) {
      Run run("filter-kg", argv);
      const auto g = deserialize(run.read(fk_in));
      FilterSpec spec;
      spec.node_mode = parse_node_mode(fk_mode);
      spec.top_k_relations = fk_topk;
      if (!fk_anchors.empty()) {
        run.note_input(fk_anchors);
        for (auto& a : read_name_list(fk_anchors)) spec.anchor_classes.insert(a);
      }
      spec.validate();
      const auto f = apply_filter(g, spec);
      run.write(fk_out, serialize(f));
      const auto st = graph_stats(f);
      run.config = {{"mode", fk_mode}, {"top_k_relations", fk_topk}};
      run.result = {{"nodes", st.nodes}, {"relations", st.relations}, {"edges", st.edges}};
      run.write_manifest(manifest_for(fk_out));
      out << "filtered graph: " << st.nodes << " nodes, " << st.relations << " relations, " << st.edges
          << " edges\n";
    } else if (*tv) {
      Run run("train-vrk", argv);
      const auto g = deserialize(run.read(tv_kg));
      tv_cfg.sampling = parse_edge_sampling(tv_sampling);
      tv_cfg.validate();
      auto enc = RelationEncoder::for_graph(g, tv_dims, seeds::vrk_init(tv_cfg.seed));
      const auto res = train_reconstruction(enc, g, tv_cfg);
      run.write(tv_out, enc.serialize());
      run.config = {{"epochs", tv_cfg.epochs},      {"lr", tv_cfg.learning_rate},
                    {"batch", tv_cfg.batch_size},   {"sampling", tv_sampling},
                    {"input_dim", tv_dims.input_dim}, {"hidden_dim", tv_dims.hidden_dim},
                    {"mask_dim", tv_dims.mask_dim}};
      run.seeds = {{"seed", tv_cfg.seed}};
      run.result = {{"reconstruction_accuracy", res.accuracy},
                    {"final_loss", res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back()}};
      run.write_manifest(manifest_for(tv_out));
      out << "reconstruction accuracy " << res.accuracy << " over " << g.edge_count() << " edges\n";
    } else if (*gsc) {
      Run run("gen-synth", argv);
      if (!gs_rules.empty()) {
        std::istringstream in(run.read(gs_rules));
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
          ++lineno;
          if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t")] == '#')
            continue;
          std::istringstream row(line);
          int a, b, r;
          if (!(row >> a >> b >> r)) throw ParseError("rule row needs three integers", lineno);
          gs.rules[{a, b}] = r;
        }
      }
      const auto ds = generate_synthetic(gs);
      const fs::path dir(gs_out);
      auto p = [&](const char* name) { return (dir / name).string(); };
      run.write(p("train.jsonl"), dataset_to_jsonl(ds.train));
      run.write(p("test.jsonl"), dataset_to_jsonl(ds.test));
      ds.features.save(p("features.bin"), p("features.idx"));
      run.note_output(p("features.bin"));
      run.note_output(p("features.idx"));
      std::string classes, relations;
      for (const auto& c : ds.classes) classes += c + "\n";
      for (const auto& r : ds.relations) relations += r + "\n";
      run.write(p("classes.txt"), classes);
      run.write(p("relations.txt"), relations);
      run.write(p("embeddings.tsv"), ds.embeddings.serialize());
      run.write(p("captions.jsonl"), captions_to_jsonl(ds.captions));
      run.write(p("lexicon.tsv"), ds.lexicon_tsv);
      json part;
      part["seen_pairs"] = json::array();
      part["unseen_pairs"] = json::array();
      for (const auto& [a, b] : ds.seen_pairs) part["seen_pairs"].push_back({ds.classes[a], ds.classes[b]});
      for (const auto& [a, b] : ds.unseen_pairs) part["unseen_pairs"].push_back({ds.classes[a], ds.classes[b]});
      json rules = json::array();
      for (const auto& [gp, r] : ds.rules)
        rules.push_back({gp.first, gp.second, r < 0 ? json(nullptr) : json(ds.relations[r])});
      part["rules"] = rules;
      run.write(p("partition.json"), part.dump(2) + "\n");
      run.config = {{"classes", gs.num_classes},
                    {"relations", gs.num_relations},
                    {"feature_dim", gs.feature_dim},
                    {"groups", gs.groups},
                    {"sigma", gs.sigma},
                    {"holdout", gs.holdout},
                    {"train_images", gs.train_images},
                    {"test_images", gs.test_images},
                    {"objects", gs.objects_per_image},
                    {"visual_group_weight", gs.visual_group_weight},
                    {"text_dim", gs.text_dim},
                    {"text_noise", gs.text_noise},
                    {"kg_coverage", gs.kg_coverage},
                    {"kg_noise", gs.kg_noise},
                    {"captions_per_pair", gs.captions_per_pair}};
      run.seeds = {{"seed", gs.seed}};
      run.result = {{"seen_pairs", ds.seen_pairs.size()},
                    {"unseen_pairs", ds.unseen_pairs.size()},
                    {"captions", ds.captions.size()}};
      run.write_manifest(p("manifest.json"));
      out << "generated " << ds.train.size() << " train and " << ds.test.size() << " test images, "
          << ds.seen_pairs.size() << " seen and " << ds.unseen_pairs.size() << " unseen related pairs\n";
    } else if (*tr) {
      Run run("train", argv);
      if (!tr_config.empty()) {
        // File values first; flags given explicitly on the command line win.
        TrainConfig file_cfg = tr_cfg;
        EpisodeConfig file_ep = tr_ep;
        file_cfg.seed = file_ep.seed = tr_seed;
        apply_config_text(run.read(tr_config), file_cfg, file_ep);
        if (!tr->count("--epochs")) tr_cfg.epochs = file_cfg.epochs;
        if (!tr->count("--lr")) tr_cfg.learning_rate = file_cfg.learning_rate;
        if (!tr->count("--batch")) tr_cfg.batch_size = file_cfg.batch_size;
        if (!tr->count("--optimizer")) tr_optimizer = std::string(optimizer_kind_name(file_cfg.optimizer));
        if (!tr->count("--no-textual")) tr_no_textual = !file_cfg.use_textual;
        if (!tr->count("--no-vrk")) tr_no_vrk = !file_cfg.use_vrk;
        if (!tr->count("--shots")) tr_ep.shots = file_ep.shots;
        if (!tr->count("--negative-ratio")) tr_ep.negative_ratio = file_ep.negative_ratio;
        if (!tr_seed_opt->count()) tr_seed = file_cfg.seed;
      }
      tr_cfg.optimizer = parse_optimizer_kind(tr_optimizer);
      tr_cfg.use_textual = !tr_no_textual;
      tr_cfg.use_vrk = !tr_no_vrk;
      tr_cfg.seed = seeds::train(tr_seed);
      tr_ep.seed = seeds::episode(tr_seed);
      tr_cfg.validate();
      tr_ep.validate();
      if (tr_hidden < 1) throw ConfigError("hidden dimension must be positive");
      ModelOptions opts;
      opts.template_kind = parse_template_kind(tr_template);
      opts.polarity = parse_metric_polarity(tr_polarity);
      opts.use_textual = tr_cfg.use_textual;
      opts.use_vrk = tr_cfg.use_vrk;

      FeatureStore store;
      load_features(run, tr_features, store);
      auto records = parse_dataset(run.read(tr_data), store);
      if (records.empty()) throw ConfigError("training dataset is empty");
      std::vector<std::string> classes;
      if (!tr_classes.empty()) {
        run.note_input(tr_classes);
        classes = read_name_list(tr_classes);
      } else {
        classes = collect_classes(records);
      }
      bind_classes(records, classes);
      const auto relations = relation_list(run, tr_benchmark);
      auto candidates = CandidateSet::from_relations(relations);
      run.note_input(tr_emb);
      auto table = TokenEmbeddingTable::load(tr_emb);
      std::shared_ptr<const RelationEncoder> vrk;
      if (!tr_vrk.empty()) vrk = std::make_shared<const RelationEncoder>(RelationEncoder::deserialize(run.read(tr_vrk)));
      if (opts.use_vrk && !vrk) throw ConfigError("--vrk is required unless --no-vrk is given");
      if (!opts.use_vrk) vrk.reset();

      const int feature_dim = static_cast<int>(records.front().objects.empty() ? 0 : records.front().objects[0].feature.size());
      auto model = KfvModel::create(candidates, classes, std::move(table), vrk, opts, feature_dim, tr_hidden,
                                    seeds::init(tr_seed));
      const auto support = sample_support(records, model.candidates, tr_ep);
      const auto res = train(model, support, tr_cfg);
      run.write(tr_out, model.serialize());
      run.write(tr_out + ".loss.csv", loss_curve_csv(res.curve));
      run.write(tr_out + ".seen.json", seen_to_json(seen_sets(support), model).dump(2) + "\n");
      run.config = {{"benchmark", tr_benchmark},
                    {"relations", relations.size()},
                    {"classes", classes.size()},
                    {"shots", tr_ep.shots},
                    {"negative_ratio", tr_ep.negative_ratio},
                    {"epochs", tr_cfg.epochs},
                    {"lr", tr_cfg.learning_rate},
                    {"batch", tr_cfg.batch_size},
                    {"optimizer", tr_optimizer},
                    {"hidden_dim", tr_hidden},
                    {"feature_dim", feature_dim},
                    {"template", std::string(template_kind_name(opts.template_kind))},
                    {"metric_polarity", std::string(metric_polarity_name(opts.polarity))},
                    {"use_textual", opts.use_textual},
                    {"use_vrk", opts.use_vrk},
                    {"vrk_frozen", true},
                    {"text_encoder", "joint"}};
      run.seeds = {{"seed", tr_seed},
                   {"train", tr_cfg.seed},
                   {"episode", tr_ep.seed},
                   {"init", seeds::init(tr_seed)}};
      run.result = {{"support_instances", support.instances.size()},
                    {"support_positives", support.positives},
                    {"steps", res.curve.size()},
                    {"final_loss", res.curve.empty() ? 0.0 : res.curve.back().loss},
                    {"train_accuracy", res.train_accuracy}};
      run.write_manifest(manifest_for(tr_out));
      out << "trained on " << support.instances.size() << " support instances (" << support.positives
          << " positive), " << res.curve.size() << " steps, final loss "
          << (res.curve.empty() ? 0.0 : res.curve.back().loss) << ", train accuracy " << res.train_accuracy
          << "\n";
    } else if (*ev) {
      Run run("eval", argv);
      const KfvModel model = KfvModel::deserialize(run.read(ev_model));
      FeatureStore store;
      load_features(run, ev_features, store);
      auto records = parse_dataset(run.read(ev_data), store);
      bind_classes(records, model.class_names);
      for (const auto& r : records)
        for (const auto& o : r.objects)
          if (o.feature.size() != model.feature_dim())
            throw ConfigError("image " + r.image_id + ": feature dimension does not match the model");
      const std::string seen_path = ev_seen.empty() ? ev_model + ".seen.json" : ev_seen;
      const SeenSets seen = seen_from_json(parse_json_file(run, seen_path), model);
      auto report = evaluate(model, records, seen, ev_gc);
      report.config = {{"graph_constraint", ev_gc},
                       {"candidates", model.candidates.size() - 1},
                       {"template", std::string(template_kind_name(model.options.template_kind))},
                       {"metric_polarity", std::string(metric_polarity_name(model.options.polarity))},
                       {"use_textual", model.options.use_textual},
                       {"use_vrk", model.options.use_vrk},
                       {"vrk_frozen", true},
                       {"text_encoder", "joint"},
                       {"seen_pairs", seen.pairs.size()},
                       {"seen_triplets", seen.triplets.size()},
                       {"top_k", "per image"},
                       {"mean_recall", "predicates without ground truth excluded"}};
      run.write(ev_out, report.to_json().dump(2) + "\n");
      run.config = report.config;
      run.write_manifest(manifest_for(ev_out));
      out << report.to_text();
    } else if (*rp) {
      Run run("report", argv);
      const auto j = parse_json_file(run, rp_in);
      const auto report = MetricsReport::from_json(j);
      if (!rp_out.empty()) {
        run.write(rp_out, report.to_text());
        run.write_manifest(manifest_for(rp_out));
      }
      out << report.to_text();
    } else if (*rl) {
      return run_replay(rl_manifest, out, err);
    }
  } catch (const UsageError& e) {
    return fail("usage", e.what(), 2);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const ParseError& e) {
    return fail("parse", e.what(), 1);
  } catch (const DivergenceError& e) {
    return fail("divergence", e.what(), 1);
  } catch (const ContractViolation& e) {
    return fail("contract", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}

namespace {

int run_replay(const std::string& manifest_path, std::ostream& out, std::ostream& err) {
  if (!fs::is_regular_file(manifest_path)) {
    err << "kfv: error: usage: manifest not found: " << manifest_path << "\n";
    return 2;
  }
  const std::string before = bin::read_file(manifest_path);
  json m;
  try {
    m = json::parse(before);
  } catch (const json::exception& e) {
    err << "kfv: error: parse: malformed manifest: " << e.what() << "\n";
    return 1;
  }
  if (!m.contains("argv") || !m["argv"].is_array() || !m.contains("outputs")) {
    err << "kfv: error: parse: manifest lacks argv or outputs\n";
    return 1;
  }
  const auto argv = m["argv"].get<std::vector<std::string>>();
  if (argv.size() >= 2 && argv[1] == "replay") {
    err << "kfv: error: usage: a replay manifest cannot be replayed\n";
    return 2;
  }
  std::ostringstream sink;
  const int code = cli_main(argv, sink, err);
  if (code != 0) return code;
  std::size_t mismatched = 0;
  for (const auto& [path, digest] : m["outputs"].items()) {
    const std::string now = fs::is_regular_file(path) ? sha256_hex(bin::read_file(path)) : "";
    if (now != digest.get<std::string>()) {
      err << "kfv: error: replay: output differs: " << path << "\n";
      ++mismatched;
    }
  }
  if (bin::read_file(manifest_path) != before) {
    err << "kfv: error: replay: manifest differs: " << manifest_path << "\n";
    ++mismatched;
  }
  if (mismatched) return 1;
  out << "replay ok: " << m["outputs"].size() << " outputs identical\n";
  return 0;
}

}  // namespace

}  // namespace kfv
