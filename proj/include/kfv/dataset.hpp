#pragma once

#include <string>
#include <vector>

#include "kfv/fusion_core.hpp"

namespace kfv {

struct ObjectRecord {
  Box box;
  std::string class_name;
  int class_tag = -1;  // index into the bound class list
  std::string feature_ref;
  Vec feature;
};

struct RelationRecord {
  std::size_t subject = 0;
  std::string predicate;
  std::size_t object = 0;
};

// One image: ground-truth boxes, classes, features, and labeled relations.
// Unlabeled ordered pairs are implicit no-relation candidates.
struct DatasetRecord {
  std::string image_id;
  std::vector<ObjectRecord> objects;
  std::vector<RelationRecord> relations;

  ObjectDescriptor descriptor(std::size_t i) const;
};

// Sorted distinct class names over the records.
std::vector<std::string> collect_classes(const std::vector<DatasetRecord>& records);

// Sets class_tag on every object from its name; unknown names raise ConfigError.
void bind_classes(std::vector<DatasetRecord>& records, const std::vector<std::string>& class_names);

}  // namespace kfv
