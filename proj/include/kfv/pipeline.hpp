#pragma once

#include <memory>
#include <vector>

#include "kfv/corpus_io.hpp"
#include "kfv/eval_metrics.hpp"
#include "kfv/fewshot_trainer.hpp"
#include "kfv/relation_kg.hpp"
#include "kfv/vrk_encoder.hpp"

namespace kfv {

// Seed streams shared by the CLI and the in-memory pipeline.
namespace seeds {
inline std::uint64_t train(std::uint64_t s) { return derive_seed(s, 0x7472); }
inline std::uint64_t episode(std::uint64_t s) { return derive_seed(s, 0x6570); }
inline std::uint64_t init(std::uint64_t s) { return derive_seed(s, 0x696e); }
inline std::uint64_t vrk_init(std::uint64_t s) { return derive_seed(s, 0x494e); }
}  // namespace seeds

// Caption corpus to deduplicated graph.
VisualRelationKG knowledge_graph(const std::vector<Caption>& captions, const Lexicon& lexicon);

// Knowledge encoder trained by reconstruction; config.seed drives both
// initialization and sampling.
std::shared_ptr<const RelationEncoder> train_knowledge_encoder(const VisualRelationKG& graph,
                                                               const VrkDims& dims,
                                                               const ReconstructionConfig& config,
                                                               double* accuracy = nullptr);

MetricsReport evaluate(const KfvModel& model, const std::vector<DatasetRecord>& records, const SeenSets& seen,
                       bool graph_constraint = false);

struct ExperimentConfig {
  std::uint64_t seed = 1;
  VrkDims vrk_dims;
  ReconstructionConfig vrk;  // seed is overwritten by the experiment seed
  EpisodeConfig episode;     // seed derived
  TrainConfig train;         // seed derived
  ModelOptions options;      // switches follow train.use_textual / use_vrk
  int hidden_dim = 32;
  bool graph_constraint = false;
};

struct ExperimentResult {
  MetricsReport report;
  TrainResult training;
  double vrk_accuracy = 0.0;
  std::size_t support_instances = 0;
};

// Whole synthetic pipeline in memory, mirroring the CLI stage by stage.
ExperimentResult run_experiment(const SyntheticDataset& data, const ExperimentConfig& config,
                                std::shared_ptr<const RelationEncoder> vrk = nullptr);

}  // namespace kfv
