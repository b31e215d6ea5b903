#pragma once

#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "kfv/caption_parser.hpp"
#include "kfv/dataset.hpp"
#include "kfv/text_knowledge.hpp"

namespace kfv {

// Sidecar of little-endian doubles plus an index "ref<TAB>byte offset<TAB>dim".
class FeatureStore {
 public:
  void add(const std::string& ref, const Vec& feature);
  bool contains(const std::string& ref) const { return index_.count(ref) > 0; }
  const Vec& get(const std::string& ref) const;
  std::size_t size() const { return refs_.size(); }

  static FeatureStore load(const std::string& bin_path, const std::string& index_path);
  void save(const std::string& bin_path, const std::string& index_path) const;

 private:
  std::vector<std::string> refs_;
  std::vector<Vec> features_;
  std::unordered_map<std::string, std::size_t> index_;
};

// JSONL, one image per line:
//   {"image_id": "...", "objects": [{"box": [x1,y1,x2,y2], "class": "dog", "feature": "ref"}],
//    "relations": [{"subject": 0, "predicate": "on", "object": 1}]}
// Errors name the line and image id.
std::vector<DatasetRecord> parse_dataset(std::string_view jsonl, const FeatureStore& features);
std::vector<DatasetRecord> load_dataset(const std::string& path, const FeatureStore& features);
std::string dataset_to_jsonl(const std::vector<DatasetRecord>& records);

// Relation lists for the benchmark flag. "custom:<file>" reads one relation per line.
std::vector<std::string> benchmark_relations(const std::string& spec);
std::vector<std::string> read_name_list(const std::string& path);

struct SyntheticSpec {
  int num_classes = 12;
  int num_relations = 10;
  int feature_dim = 16;
  int groups = 4;  // class c belongs to group c % groups
  double sigma = 0.1;
  double holdout = 0.3;  // per relation, fraction of its class pairs kept out of training
  // (subject group, object group) -> relation index, or -1 for none. Empty
  // means a seeded table is drawn; otherwise it must cover every group pair.
  std::map<std::pair<int, int>, int> rules;
  int train_images = 150;
  int test_images = 100;
  int objects_per_image = 4;
  // Mixing weight of the group centroid in each class's feature mean.
  double visual_group_weight = 0.0;
  int text_dim = 32;
  double text_noise = 0.3;  // spread of class word vectors around their group centroid
  double kg_coverage = 0.7;  // fraction of related pairs described in the caption corpus
  double kg_noise = 0.1;     // probability a caption names a random relation
  int captions_per_pair = 3;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SyntheticDataset {
  std::vector<std::string> classes;
  std::vector<std::string> relations;
  std::map<std::pair<int, int>, int> rules;
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> test;
  FeatureStore features;
  std::set<std::pair<int, int>> seen_pairs;    // related pairs that may appear in training
  std::set<std::pair<int, int>> unseen_pairs;  // held out, test only
  std::vector<Caption> captions;
  std::string lexicon_tsv;
  TokenEmbeddingTable embeddings;
};

// Related class pairs (a != b) whose group pair has a relation.
std::vector<std::pair<int, int>> related_pairs(int num_classes, int groups,
                                               const std::map<std::pair<int, int>, int>& rules);

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

std::string captions_to_jsonl(const std::vector<Caption>& captions);

}  // namespace kfv
