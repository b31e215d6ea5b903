#include "kfv/corpus_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kfv/binary_io.hpp"
#include "kfv/eval_metrics.hpp"

namespace kfv {

ObjectDescriptor DatasetRecord::descriptor(std::size_t i) const {
  const auto& o = objects.at(i);
  return {o.box, o.class_tag, o.feature};
}

std::vector<std::string> collect_classes(const std::vector<DatasetRecord>& records) {
  std::set<std::string> names;
  for (const auto& r : records)
    for (const auto& o : r.objects) names.insert(o.class_name);
  return {names.begin(), names.end()};
}

void bind_classes(std::vector<DatasetRecord>& records, const std::vector<std::string>& class_names) {
  std::unordered_map<std::string, int> ids;
  for (std::size_t i = 0; i < class_names.size(); ++i) ids[class_names[i]] = static_cast<int>(i);
  for (auto& r : records)
    for (auto& o : r.objects) {
      auto it = ids.find(o.class_name);
      if (it == ids.end())
        throw ConfigError("image " + r.image_id + ": class '" + o.class_name + "' is not known to the model");
      o.class_tag = it->second;
    }
}

void FeatureStore::add(const std::string& ref, const Vec& feature) {
  if (ref.empty() || ref.find_first_of("\t\n") != std::string::npos)
    throw ContractViolation("invalid feature reference");
  if (index_.count(ref)) throw ContractViolation("duplicate feature reference '" + ref + "'");
  index_[ref] = refs_.size();
  refs_.push_back(ref);
  features_.push_back(feature);
}

const Vec& FeatureStore::get(const std::string& ref) const {
  auto it = index_.find(ref);
  if (it == index_.end()) throw ConfigError("unknown feature reference '" + ref + "'");
  return features_[it->second];
}

FeatureStore FeatureStore::load(const std::string& bin_path, const std::string& index_path) {
  const std::string data = bin::read_file(bin_path);
  const std::string index = bin::read_file(index_path);
  FeatureStore fs;
  std::istringstream in(index);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string ref, off_s, dim_s;
    if (!std::getline(row, ref, '\t') || !std::getline(row, off_s, '\t') || !std::getline(row, dim_s))
      throw ParseError("feature index row needs ref, offset, dim", lineno);
    std::size_t offset = 0, dim = 0;
    try {
      std::size_t used = 0;
      offset = std::stoull(off_s, &used);
      if (used != off_s.size()) throw std::invalid_argument("offset");
      dim = std::stoull(dim_s, &used);
      if (used != dim_s.size()) throw std::invalid_argument("dim");
    } catch (const std::exception&) {
      throw ParseError("bad offset or dimension in feature index", lineno);
    }
    if (dim == 0 || offset > data.size() || dim > (data.size() - offset) / 8)
      throw ParseError("feature '" + ref + "' lies outside the feature file", lineno);
    bin::Reader r(std::string_view(data).substr(offset, dim * 8));
    Vec v(static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < dim; ++i) v[static_cast<Eigen::Index>(i)] = r.f64();
    if (fs.contains(ref)) throw ParseError("duplicate feature reference '" + ref + "'", lineno);
    fs.add(ref, v);
  }
  return fs;
}

void FeatureStore::save(const std::string& bin_path, const std::string& index_path) const {
  bin::Writer w;
  std::ostringstream idx;
  for (std::size_t i = 0; i < refs_.size(); ++i) {
    idx << refs_[i] << '\t' << w.bytes().size() << '\t' << features_[i].size() << '\n';
    for (Eigen::Index k = 0; k < features_[i].size(); ++k) w.f64(features_[i][k]);
  }
  bin::write_file(bin_path, w.bytes());
  bin::write_file(index_path, idx.str());
}

namespace {

std::size_t get_index(const nlohmann::json& j, const char* key, std::size_t lineno, const std::string& id) {
  if (!j.contains(key) || !j[key].is_number_integer() || j[key].get<long long>() < 0)
    throw ParseError("image " + id + ": relation field '" + key + "' must be a non-negative integer",
                     lineno);
  return j[key].get<std::size_t>();
}

}  // namespace

std::vector<DatasetRecord> parse_dataset(std::string_view jsonl, const FeatureStore& features) {
  std::vector<DatasetRecord> out;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t lineno = 0;
  Eigen::Index dim = -1;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    if (!j.is_object() || !j.contains("image_id") || !j["image_id"].is_string())
      throw ParseError("record needs a string image_id", lineno);
    DatasetRecord rec;
    rec.image_id = j["image_id"].get<std::string>();
    if (!ids.insert(rec.image_id).second)
      throw ParseError("duplicate image id " + rec.image_id, lineno);
    if (!j.contains("objects") || !j["objects"].is_array())
      throw ParseError("image " + rec.image_id + ": objects must be an array", lineno);
    for (const auto& o : j["objects"]) {
      ObjectRecord obj;
      if (!o.is_object() || !o.contains("box") || !o["box"].is_array() || o["box"].size() != 4)
        throw ParseError("image " + rec.image_id + ": object box must be 4 numbers", lineno);
      for (const auto& x : o["box"])
        if (!x.is_number()) throw ParseError("image " + rec.image_id + ": box values must be numbers", lineno);
      obj.box = {o["box"][0].get<double>(), o["box"][1].get<double>(), o["box"][2].get<double>(),
                 o["box"][3].get<double>()};
      try {
        obj.box.validate();
      } catch (const ContractViolation& e) {
        throw ParseError("image " + rec.image_id + ": " + e.what(), lineno);
      }
      if (!o.contains("class") || !o["class"].is_string() || o["class"].get<std::string>().empty())
        throw ParseError("image " + rec.image_id + ": object class must be a string", lineno);
      obj.class_name = o["class"].get<std::string>();
      if (!o.contains("feature") || !o["feature"].is_string())
        throw ParseError("image " + rec.image_id + ": object feature reference missing", lineno);
      obj.feature_ref = o["feature"].get<std::string>();
      if (!features.contains(obj.feature_ref))
        throw ParseError("image " + rec.image_id + ": unknown feature reference '" + obj.feature_ref + "'",
                         lineno);
      obj.feature = features.get(obj.feature_ref);
      if (dim < 0) dim = obj.feature.size();
      if (obj.feature.size() != dim)
        throw ParseError("image " + rec.image_id + ": feature '" + obj.feature_ref + "' has dimension " +
                             std::to_string(obj.feature.size()) + ", expected " + std::to_string(dim),
                         lineno);
      rec.objects.push_back(std::move(obj));
    }
    if (j.contains("relations")) {
      if (!j["relations"].is_array())
        throw ParseError("image " + rec.image_id + ": relations must be an array", lineno);
      for (const auto& r : j["relations"]) {
        if (!r.is_object()) throw ParseError("image " + rec.image_id + ": bad relation entry", lineno);
        RelationRecord rel;
        rel.subject = get_index(r, "subject", lineno, rec.image_id);
        rel.object = get_index(r, "object", lineno, rec.image_id);
        if (!r.contains("predicate") || !r["predicate"].is_string() ||
            r["predicate"].get<std::string>().empty())
          throw ParseError("image " + rec.image_id + ": relation predicate must be a string", lineno);
        rel.predicate = r["predicate"].get<std::string>();
        if (rel.subject >= rec.objects.size() || rel.object >= rec.objects.size())
          throw ParseError("image " + rec.image_id + ": relation object index out of range", lineno);
        if (rel.subject == rel.object)
          throw ParseError("image " + rec.image_id + ": relation links an object to itself", lineno);
        rec.relations.push_back(std::move(rel));
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<DatasetRecord> load_dataset(const std::string& path, const FeatureStore& features) {
  return parse_dataset(bin::read_file(path), features);
}

std::string dataset_to_jsonl(const std::vector<DatasetRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::json j;
    j["image_id"] = r.image_id;
    j["objects"] = nlohmann::json::array();
    for (const auto& o : r.objects)
      j["objects"].push_back({{"box", {o.box.x1, o.box.y1, o.box.x2, o.box.y2}},
                              {"class", o.class_name},
                              {"feature", o.feature_ref}});
    j["relations"] = nlohmann::json::array();
    for (const auto& rel : r.relations)
      j["relations"].push_back({{"subject", rel.subject}, {"predicate", rel.predicate}, {"object", rel.object}});
    out += j.dump() + '\n';
  }
  return out;
}

std::vector<std::string> read_name_list(const std::string& path) {
  std::istringstream in(bin::read_file(path));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    out.push_back(line.substr(b));
  }
  return out;
}

namespace {

const std::vector<std::string> kVg50 = {
    "above",       "across",        "against",     "along",      "and",         "at",
    "attached_to", "behind",        "belonging_to", "between",   "carrying",    "covered_in",
    "covering",    "eating",        "flying_in",   "for",        "from",        "growing_on",
    "hanging_from", "has",          "holding",     "in",         "in_front_of", "laying_on",
    "looking_at",  "lying_on",      "made_of",     "mounted_on", "near",        "of",
    "on",          "on_back_of",    "over",        "painted_on", "parked_on",   "part_of",
    "playing",     "riding",        "says",        "sitting_on", "standing_on", "to",
    "under",       "using",         "walking_in",  "walking_on", "watching",    "wearing",
    "wears",       "with"};

}  // namespace

std::vector<std::string> benchmark_relations(const std::string& spec) {
  if (spec == "50way") return kVg50;
  if (spec == "25way" || spec == "20way")
    throw ConfigError("benchmark " + spec +
                      " has no bundled relation list; pass custom:<file> with one relation per line");
  if (spec.rfind("custom:", 0) == 0) {
    auto names = read_name_list(spec.substr(7));
    if (names.empty()) throw ConfigError("relation list " + spec.substr(7) + " is empty");
    std::set<std::string> uniq(names.begin(), names.end());
    if (uniq.size() != names.size()) throw ConfigError("relation list " + spec.substr(7) + " has duplicates");
    return names;
  }
  throw ConfigError("unknown benchmark '" + spec + "' (expected 50way, 25way, 20way, custom:<file>)");
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic spec needs at least 2 classes");
  if (num_relations < 1) throw ConfigError("synthetic spec needs at least 1 relation");
  if (feature_dim < 1 || text_dim < 1) throw ConfigError("synthetic dimensions must be positive");
  if (groups < 1 || groups > num_classes) throw ConfigError("groups must be in [1, num_classes]");
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
  if (!(holdout >= 0.0 && holdout < 1.0)) throw ConfigError("holdout must be in [0, 1)");
  if (objects_per_image < 2 || objects_per_image > num_classes)
    throw ConfigError("objects_per_image must be in [2, num_classes]");
  if (train_images < 0 || test_images < 0) throw ConfigError("image counts must be >= 0");
  if (!(kg_coverage >= 0.0 && kg_coverage <= 1.0) || !(kg_noise >= 0.0 && kg_noise <= 1.0))
    throw ConfigError("kg_coverage and kg_noise must be in [0, 1]");
  if (captions_per_pair < 0) throw ConfigError("captions_per_pair must be >= 0");
  if (!(visual_group_weight >= 0.0 && visual_group_weight <= 1.0))
    throw ConfigError("visual_group_weight must be in [0, 1]");
  if (!(text_noise >= 0.0)) throw ConfigError("text_noise must be >= 0");
  if (!rules.empty()) {
    for (int a = 0; a < groups; ++a)
      for (int b = 0; b < groups; ++b) {
        auto it = rules.find({a, b});
        if (it == rules.end())
          throw ConfigError("rule table has no entry for group pair (" + std::to_string(a) + ", " +
                            std::to_string(b) + ")");
        if (it->second < -1 || it->second >= num_relations)
          throw ConfigError("rule table relation index out of range");
      }
    if (rules.size() != static_cast<std::size_t>(groups * groups))
      throw ConfigError("rule table has entries for unknown groups");
  } else if (groups * groups < num_relations) {
    throw ConfigError("too few group pairs to assign every relation");
  }
}

std::vector<std::pair<int, int>> related_pairs(int num_classes, int groups,
                                               const std::map<std::pair<int, int>, int>& rules) {
  std::vector<std::pair<int, int>> out;
  for (int a = 0; a < num_classes; ++a)
    for (int b = 0; b < num_classes; ++b) {
      if (a == b) continue;
      auto it = rules.find({a % groups, b % groups});
      if (it != rules.end() && it->second >= 0) out.emplace_back(a, b);
    }
  return out;
}

namespace {

const std::vector<std::string> kClassNouns = {
    "dog",   "cat",    "man",    "woman",  "horse", "car",    "tree",   "chair",  "table",  "cup",
    "bottle", "bird",  "boat",   "kite",   "plate", "sheep",  "cow",    "bike",   "lamp",   "shelf",
    "book",  "phone",  "bag",    "hat",    "shirt", "bench",  "fence",  "clock",  "train",  "truck",
    "plane", "pillow", "laptop", "bowl",   "towel", "sink",   "window", "door",   "wheel",  "flower"};

struct RelWord {
  const char* name;
  Tag tag;
};

const std::vector<RelWord> kRelationWords = {
    {"on", Tag::Adp},         {"under", Tag::Adp},     {"near", Tag::Adp},
    {"behind", Tag::Adp},     {"above", Tag::Adp},     {"holding", Tag::Verb},
    {"riding", Tag::Verb},    {"eating", Tag::Verb},   {"wearing", Tag::Verb},
    {"carrying", Tag::Verb},  {"watching", Tag::Verb}, {"pulling", Tag::Verb},
    {"beside", Tag::Adp},     {"inside", Tag::Adp},    {"against", Tag::Adp},
    {"along", Tag::Adp},      {"covering", Tag::Verb}, {"touching", Tag::Verb},
    {"facing", Tag::Verb},    {"chasing", Tag::Verb}};

const std::vector<std::string> kTemplateWords = {"the", "relationship", "between", "and", "is",
                                                 "are", "no",           "relation"};

Vec random_vec(Rng& rng, int dim, double scale) {
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = scale * rng.normal();
  return v;
}

Box random_box(Rng& rng) {
  Box b;
  b.x1 = 0.5 * rng.uniform();
  b.y1 = 0.5 * rng.uniform();
  b.x2 = b.x1 + 0.1 + 0.4 * rng.uniform();
  b.y2 = b.y1 + 0.1 + 0.4 * rng.uniform();
  return b;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  if (static_cast<std::size_t>(spec.num_relations) > kRelationWords.size())
    throw ConfigError("synthetic generator supports at most " + std::to_string(kRelationWords.size()) +
                      " relations");
  SyntheticDataset ds;
  for (int c = 0; c < spec.num_classes; ++c)
    ds.classes.push_back(static_cast<std::size_t>(c) < kClassNouns.size() ? kClassNouns[c]
                                                                          : "thing" + std::to_string(c));
  for (int r = 0; r < spec.num_relations; ++r) ds.relations.push_back(kRelationWords[r].name);

  Rng rule_rng(derive_seed(spec.seed, 1));
  if (spec.rules.empty()) {
    std::vector<std::pair<int, int>> gp;
    for (int a = 0; a < spec.groups; ++a)
      for (int b = 0; b < spec.groups; ++b) gp.emplace_back(a, b);
    rule_rng.shuffle(gp);
    for (std::size_t i = 0; i < gp.size(); ++i)
      ds.rules[gp[i]] = i < static_cast<std::size_t>(spec.num_relations) ? static_cast<int>(i) : -1;
  } else {
    ds.rules = spec.rules;
  }

  auto universe = related_pairs(spec.num_classes, spec.groups, ds.rules);
  // Holdout is drawn per relation so every relation keeps seen pairs.
  Rng hold_rng(derive_seed(spec.seed, 2));
  std::map<int, std::vector<std::pair<int, int>>> by_relation;
  for (const auto& pr : universe) by_relation[ds.rules.at({pr.first % spec.groups, pr.second % spec.groups})].push_back(pr);
  for (auto& [r, pairs] : by_relation) {
    hold_rng.shuffle(pairs);
    const auto n_hold = static_cast<std::size_t>(std::floor(spec.holdout * static_cast<double>(pairs.size())));
    ds.unseen_pairs.insert(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n_hold));
    ds.seen_pairs.insert(pairs.begin() + static_cast<std::ptrdiff_t>(n_hold), pairs.end());
  }

  Rng feat_rng(derive_seed(spec.seed, 3));
  std::vector<Vec> group_means, class_means;
  for (int g = 0; g < spec.groups; ++g) group_means.push_back(random_vec(feat_rng, spec.feature_dim, 1.0));
  for (int c = 0; c < spec.num_classes; ++c) {
    const Vec own = random_vec(feat_rng, spec.feature_dim, 1.0);
    class_means.push_back(spec.visual_group_weight * group_means[c % spec.groups] +
                          (1.0 - spec.visual_group_weight) * own);
  }

  Rng img_rng(derive_seed(spec.seed, 4));
  std::vector<int> class_ids(spec.num_classes);
  for (int c = 0; c < spec.num_classes; ++c) class_ids[c] = c;
  auto make_image = [&](const std::string& id, bool avoid_unseen) {
    std::vector<int> chosen;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100000)
        throw ConfigError("cannot draw a training image free of held-out pairs; lower holdout or objects_per_image");
      auto perm = class_ids;
      img_rng.shuffle(perm);
      chosen.assign(perm.begin(), perm.begin() + spec.objects_per_image);
      if (!avoid_unseen) break;
      bool clean = true;
      for (int a : chosen)
        for (int b : chosen)
          if (a != b && ds.unseen_pairs.count({a, b})) clean = false;
      if (clean) break;
    }
    DatasetRecord rec;
    rec.image_id = id;
    for (std::size_t j = 0; j < chosen.size(); ++j) {
      ObjectRecord o;
      o.box = random_box(img_rng);
      o.class_name = ds.classes[chosen[j]];
      o.class_tag = chosen[j];
      o.feature_ref = id + "_o" + std::to_string(j);
      o.feature = class_means[chosen[j]] + spec.sigma * random_vec(img_rng, spec.feature_dim, 1.0);
      ds.features.add(o.feature_ref, o.feature);
      rec.objects.push_back(std::move(o));
    }
    for (const auto& [i, j] : ordered_pairs(chosen.size())) {
      const int r = ds.rules.at({chosen[i] % spec.groups, chosen[j] % spec.groups});
      if (r >= 0) rec.relations.push_back({i, ds.relations[r], j});
    }
    return rec;
  };
  auto image_id = [](const char* prefix, int i) {
    std::string n = std::to_string(i);
    return std::string(prefix) + std::string(n.size() < 4 ? 4 - n.size() : 0, '0') + n;
  };
  for (int i = 0; i < spec.train_images; ++i) ds.train.push_back(make_image(image_id("train_", i), true));
  for (int i = 0; i < spec.test_images; ++i) ds.test.push_back(make_image(image_id("test_", i), false));

  Rng cap_rng(derive_seed(spec.seed, 5));
  std::size_t cap_no = 0;
  for (const auto& [a, b] : universe) {
    if (cap_rng.uniform() >= spec.kg_coverage) continue;
    const int r = ds.rules.at({a % spec.groups, b % spec.groups});
    for (int n = 0; n < spec.captions_per_pair; ++n) {
      int rel = r;
      if (cap_rng.uniform() < spec.kg_noise) rel = static_cast<int>(cap_rng.below(ds.relations.size()));
      std::string words = ds.relations[rel];
      std::replace(words.begin(), words.end(), '_', ' ');
      ds.captions.push_back({"cap" + std::to_string(cap_no++), "a " + ds.classes[a] + " " + words + " a " +
                                                                   ds.classes[b]});
    }
  }

  std::ostringstream lex;
  lex << "# synthetic lexicon\n";
  lex << "a\tDET\n";
  for (const auto& c : ds.classes) lex << c << "\tNOUN\n";
  for (int r = 0; r < spec.num_relations; ++r)
    lex << kRelationWords[r].name << '\t' << tag_name(kRelationWords[r].tag) << '\n';
  ds.lexicon_tsv = lex.str();

  Rng text_rng(derive_seed(spec.seed, 6));
  const double unit = 1.0 / std::sqrt(static_cast<double>(spec.text_dim));
  ds.embeddings = TokenEmbeddingTable(spec.text_dim, Vec::Zero(spec.text_dim));
  std::vector<Vec> centroids;
  for (int g = 0; g < spec.groups; ++g) centroids.push_back(random_vec(text_rng, spec.text_dim, unit));
  for (int c = 0; c < spec.num_classes; ++c)
    ds.embeddings.set(ds.classes[c], centroids[c % spec.groups] +
                                         random_vec(text_rng, spec.text_dim, spec.text_noise * unit));
  for (const auto& r : ds.relations)
    for (const auto& tok : predicate_tokens(r))
      if (!ds.embeddings.contains(tok)) ds.embeddings.set(tok, random_vec(text_rng, spec.text_dim, unit));
  for (const auto& w : kTemplateWords)
    if (!ds.embeddings.contains(w)) ds.embeddings.set(w, random_vec(text_rng, spec.text_dim, unit));
  return ds;
}

std::string captions_to_jsonl(const std::vector<Caption>& captions) {
  std::string out;
  for (const auto& c : captions) out += nlohmann::json{{"id", c.id}, {"text", c.text}}.dump() + '\n';
  return out;
}

}  // namespace kfv
