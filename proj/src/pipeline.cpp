#include "kfv/pipeline.hpp"

namespace kfv {

VisualRelationKG knowledge_graph(const std::vector<Caption>& captions, const Lexicon& lexicon) {
  return build_graph(parse_corpus(captions, lexicon));
}

std::shared_ptr<const RelationEncoder> train_knowledge_encoder(const VisualRelationKG& graph,
                                                               const VrkDims& dims,
                                                               const ReconstructionConfig& config,
                                                               double* accuracy) {
  config.validate();
  auto enc = RelationEncoder::for_graph(graph, dims, seeds::vrk_init(config.seed));
  const auto res = train_reconstruction(enc, graph, config);
  if (accuracy) *accuracy = res.accuracy;
  return std::make_shared<const RelationEncoder>(std::move(enc));
}

MetricsReport evaluate(const KfvModel& model, const std::vector<DatasetRecord>& records, const SeenSets& seen,
                       bool graph_constraint) {
  const auto images = eval_images(records, model.candidates);
  ImageRanker ranker(model);
  std::vector<std::vector<RankedPrediction>> preds;
  preds.reserve(records.size());
  for (const auto& r : records) {
    std::vector<ObjectDescriptor> objs;
    for (std::size_t i = 0; i < r.objects.size(); ++i) objs.push_back(r.descriptor(i));
    preds.push_back(ranker.rank(r.image_id, objs, graph_constraint));
  }
  return compute_report(preds, images, seen, model.candidates.size() - 1);
}

ExperimentResult run_experiment(const SyntheticDataset& data, const ExperimentConfig& config,
                                std::shared_ptr<const RelationEncoder> vrk) {
  ExperimentResult out;
  TrainConfig tr = config.train;
  tr.seed = seeds::train(config.seed);
  EpisodeConfig ep = config.episode;
  ep.seed = seeds::episode(config.seed);
  tr.validate();
  ep.validate();
  ModelOptions opts = config.options;
  opts.use_textual = tr.use_textual;
  opts.use_vrk = tr.use_vrk;

  if (opts.use_vrk && !vrk) {
    ReconstructionConfig rc = config.vrk;
    rc.seed = config.seed;
    const auto graph = knowledge_graph(data.captions, Lexicon::parse(data.lexicon_tsv));
    vrk = train_knowledge_encoder(graph, config.vrk_dims, rc, &out.vrk_accuracy);
  }
  if (!opts.use_vrk) vrk.reset();

  auto train_records = data.train;
  auto test_records = data.test;
  bind_classes(train_records, data.classes);
  bind_classes(test_records, data.classes);
  if (train_records.empty() || train_records.front().objects.empty())
    throw ConfigError("synthetic training split is empty");
  const int feature_dim = static_cast<int>(train_records.front().objects.front().feature.size());
  auto model = KfvModel::create(CandidateSet::from_relations(data.relations), data.classes, data.embeddings, vrk,
                                opts, feature_dim, config.hidden_dim, seeds::init(config.seed));
  const auto support = sample_support(train_records, model.candidates, ep);
  out.support_instances = support.instances.size();
  out.training = train(model, support, tr);
  out.report = evaluate(model, test_records, seen_sets(support), config.graph_constraint);
  return out;
}

}  // namespace kfv
