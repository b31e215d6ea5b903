#pragma once

#include <map>
#include <string>
#include <vector>

#include "kfv/dataset.hpp"
#include "kfv/eval_metrics.hpp"
#include "kfv/fusion_core.hpp"
#include "kfv/optimizer.hpp"

namespace kfv {

struct RelationInstance {
  std::string image_id;
  ObjectDescriptor subject;
  ObjectDescriptor object;
  std::size_t predicate = 0;  // may be the no-relation index
};

// A target relationship has fewer than K instances in the pool.
class InsufficientInstances : public ConfigError {
 public:
  InsufficientInstances(const std::string& relation, std::size_t have, int need)
      : ConfigError("relation '" + relation + "' has " + std::to_string(have) +
                    " instances, " + std::to_string(need) + " shots requested"),
        relation_(relation) {}
  const std::string& relation() const { return relation_; }

 private:
  std::string relation_;
};

struct EpisodeConfig {
  int shots = 5;
  double negative_ratio = 1.0;  // no-relation samples per positive
  std::uint64_t seed = 1;

  void validate() const;
};

struct SupportSet {
  std::vector<RelationInstance> instances;  // positives in candidate order, then negatives
  std::size_t positives = 0;
};

// K positives per relation in the candidate set, drawn without replacement,
// plus ceil(ratio * N * K) no-relation pairs from unlabeled ordered pairs of
// the images that supplied positives. Objects must have bound class tags.
SupportSet sample_support(const std::vector<DatasetRecord>& pool, const CandidateSet& candidates,
                          const EpisodeConfig& config);

// Class pairs and triplets of the positive support instances.
SeenSets seen_sets(const SupportSet& support);

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  int batch_size = 32;
  std::uint64_t seed = 1;
  bool use_textual = true;
  bool use_vrk = true;

  void validate() const;
};

// Flat "key=value" lines; '#' starts a comment. Unknown keys raise ConfigError.
// Keys: epochs, lr, optimizer, batch, seed, use_textual, use_vrk, shots,
// negative_ratio.
void apply_config_text(std::string_view text, TrainConfig& train, EpisodeConfig& episode);

struct LossPoint {
  long step = 0;
  double loss = 0.0;
};

struct TrainResult {
  std::vector<LossPoint> curve;  // mean batch loss before each update
  double train_accuracy = 0.0;
};

// Trains every trainable tensor of the model in place. The switches in config
// are written into model.options before training.
TrainResult train(KfvModel& model, const SupportSet& support, const TrainConfig& config);

double support_accuracy(const KfvModel& model, const SupportSet& support);

std::string loss_curve_csv(const std::vector<LossPoint>& curve);

void save_checkpoint(const KfvModel& model, const std::string& path);
KfvModel load_checkpoint(const std::string& path);

}  // namespace kfv
