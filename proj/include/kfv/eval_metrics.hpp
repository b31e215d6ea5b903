#pragma once

#include <compare>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "kfv/dataset.hpp"
#include "kfv/fusion_core.hpp"

namespace kfv {

// Instance-level triplet: object indices within one image and a predicate index.
struct TripletIdx {
  std::size_t subject = 0;
  std::size_t predicate = 0;
  std::size_t object = 0;
  auto operator<=>(const TripletIdx&) const = default;
};

struct RankedPrediction {
  std::string image_id;
  TripletIdx triplet;
  double score = 0.0;
};

struct EvalImage {
  std::string image_id;
  std::vector<int> object_classes;
  std::vector<TripletIdx> gt;  // GT(I)
};

// Class pairs and class triplets observed in the training support set.
struct SeenSets {
  std::set<std::pair<int, int>> pairs;
  std::set<std::tuple<int, std::size_t, int>> triplets;

  void add(int subject_class, std::size_t predicate, int object_class);
};

enum class SeenMode { Pair, Triplet };
enum class Subset { Seen, Unseen };

// Collects warnings such as empty denominators.
using Warnings = std::vector<std::string>;

// Ordered pairs are enumerated subject-major: (0,1), (0,2), ..., (1,0), ...
std::vector<std::pair<std::size_t, std::size_t>> ordered_pairs(std::size_t n_objects);

// pair_scores[q] holds the fused distribution for ordered pair q. The last
// entry (no-relation) is never ranked. With graph_constraint each pair keeps
// only its best predicate.
std::vector<RankedPrediction> rank_from_scores(const std::string& image_id, std::size_t n_objects,
                                               const std::vector<Vec>& pair_scores,
                                               bool graph_constraint = false);

// Class-pair pieces are cached so repeated pairs are scored cheaply.
class ImageRanker {
 public:
  explicit ImageRanker(const KfvModel& model) : model_(model) {}
  std::vector<RankedPrediction> rank(const std::string& image_id,
                                     const std::vector<ObjectDescriptor>& objects,
                                     bool graph_constraint = false);

 private:
  struct PairParts {
    std::vector<Vec> reps;
    Vec prior;
  };
  const KfvModel& model_;
  std::map<std::pair<int, int>, PairParts> cache_;
};

std::vector<RankedPrediction> rank_image(const KfvModel& model, const std::string& image_id,
                                         const std::vector<ObjectDescriptor>& objects,
                                         bool graph_constraint = false);

struct RecallCounts {
  std::size_t recalled = 0;
  std::size_t total = 0;
  double value() const;  // NaN when total is 0
};

using GtFilter = std::function<bool(const EvalImage&, const TripletIdx&)>;

// predictions[i] is the ranking for images[i]. Counts GT triplets passing the
// filter and those among the image's top-k predictions.
RecallCounts recall_counts(const std::vector<std::vector<RankedPrediction>>& predictions,
                           const std::vector<EvalImage>& images, std::size_t k,
                           const GtFilter& filter = {});

double recall_at_k(const std::vector<std::vector<RankedPrediction>>& predictions,
                   const std::vector<EvalImage>& images, std::size_t k, Warnings* warnings = nullptr);

// Unweighted mean of per-predicate recall over predicates with at least one GT triplet.
double mean_recall_at_k(const std::vector<std::vector<RankedPrediction>>& predictions,
                        const std::vector<EvalImage>& images, std::size_t k,
                        std::size_t n_predicates, Warnings* warnings = nullptr);

bool is_seen(const SeenSets& seen, SeenMode mode, int subject_class, std::size_t predicate,
             int object_class);

RecallCounts seen_unseen_counts(const std::vector<std::vector<RankedPrediction>>& predictions,
                                const std::vector<EvalImage>& images, const SeenSets& seen,
                                SeenMode mode, Subset subset, std::size_t k);

double seen_unseen_recall(const std::vector<std::vector<RankedPrediction>>& predictions,
                          const std::vector<EvalImage>& images, const SeenSets& seen, SeenMode mode,
                          Subset subset, std::size_t k, Warnings* warnings = nullptr);

// GT from dataset records; predicates outside the candidate set are dropped.
std::vector<EvalImage> eval_images(const std::vector<DatasetRecord>& records,
                                   const CandidateSet& candidates);

inline const std::vector<std::size_t> kReportKs = {20, 50, 100};

struct MetricsReport {
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> mean_recall;
  std::map<std::size_t, double> seen_pair, seen_triplet, unseen_pair, unseen_triplet;
  std::size_t images = 0;
  std::size_t gt_triplets = 0;
  Warnings warnings;
  nlohmann::json config;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  std::string to_text() const;
};

MetricsReport compute_report(const std::vector<std::vector<RankedPrediction>>& predictions,
                             const std::vector<EvalImage>& images, const SeenSets& seen,
                             std::size_t n_predicates);

}  // namespace kfv
