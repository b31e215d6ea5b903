#include "kfv/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace kfv {

void SeenSets::add(int subject_class, std::size_t predicate, int object_class) {
  pairs.emplace(subject_class, object_class);
  triplets.emplace(subject_class, predicate, object_class);
}

std::vector<std::pair<std::size_t, std::size_t>> ordered_pairs(std::size_t n_objects) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (n_objects < 2) return out;
  out.reserve(n_objects * (n_objects - 1));
  for (std::size_t i = 0; i < n_objects; ++i)
    for (std::size_t j = 0; j < n_objects; ++j)
      if (i != j) out.emplace_back(i, j);
  return out;
}

std::vector<RankedPrediction> rank_from_scores(const std::string& image_id, std::size_t n_objects,
                                               const std::vector<Vec>& pair_scores,
                                               bool graph_constraint) {
  const auto pairs = ordered_pairs(n_objects);
  if (pairs.size() != pair_scores.size())
    throw ContractViolation("expected " + std::to_string(pairs.size()) + " pair score vectors, got " +
                            std::to_string(pair_scores.size()));
  struct Entry {
    std::size_t pair, pred;
    double score;
  };
  std::vector<Entry> entries;
  for (std::size_t q = 0; q < pairs.size(); ++q) {
    const Vec& s = pair_scores[q];
    if (s.size() < 2) throw ContractViolation("score vector needs a relation and no-relation entry");
    const auto m = static_cast<std::size_t>(s.size()) - 1;
    if (graph_constraint) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < m; ++k)
        if (s[static_cast<Eigen::Index>(k)] > s[static_cast<Eigen::Index>(best)]) best = k;
      entries.push_back({q, best, s[static_cast<Eigen::Index>(best)]});
    } else {
      for (std::size_t k = 0; k < m; ++k) entries.push_back({q, k, s[static_cast<Eigen::Index>(k)]});
    }
  }
  for (const auto& e : entries)
    if (!std::isfinite(e.score)) throw ContractViolation("non-finite score in ranking");
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.pair != b.pair) return a.pair < b.pair;
    return a.pred < b.pred;
  });
  std::vector<RankedPrediction> out;
  out.reserve(entries.size());
  for (const auto& e : entries)
    out.push_back({image_id, {pairs[e.pair].first, e.pred, pairs[e.pair].second}, e.score});
  return out;
}

std::vector<RankedPrediction> ImageRanker::rank(const std::string& image_id,
                                                const std::vector<ObjectDescriptor>& objects,
                                                bool graph_constraint) {
  const auto pairs = ordered_pairs(objects.size());
  std::vector<Vec> scores;
  scores.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    const auto key = std::make_pair(objects[i].class_tag, objects[j].class_tag);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      PairParts parts;
      for (auto& t : predicate_traces(model_, key.first, key.second))
        parts.reps.push_back(std::move(t.rep.projected));
      parts.prior = prior_vector(model_, key.first, key.second);
      it = cache_.emplace(key, std::move(parts)).first;
    }
    const Vec v = encode_pair(objects[i], objects[j], model_.pair);
    scores.push_back(score_from_parts(model_, v, it->second.reps, it->second.prior).s);
  }
  return rank_from_scores(image_id, objects.size(), scores, graph_constraint);
}

std::vector<RankedPrediction> rank_image(const KfvModel& model, const std::string& image_id,
                                         const std::vector<ObjectDescriptor>& objects,
                                         bool graph_constraint) {
  ImageRanker ranker(model);
  return ranker.rank(image_id, objects, graph_constraint);
}

double RecallCounts::value() const {
  if (total == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(recalled) / static_cast<double>(total);
}

RecallCounts recall_counts(const std::vector<std::vector<RankedPrediction>>& predictions,
                           const std::vector<EvalImage>& images, std::size_t k,
                           const GtFilter& filter) {
  if (k < 1) throw ContractViolation("k must be at least 1");
  if (predictions.size() != images.size())
    throw ContractViolation("one ranking per image is required");
  RecallCounts c;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& ranked = predictions[i];
    std::set<TripletIdx> top;
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) top.insert(ranked[r].triplet);
    const std::set<TripletIdx> gt(images[i].gt.begin(), images[i].gt.end());
    for (const auto& t : gt) {
      if (filter && !filter(images[i], t)) continue;
      ++c.total;
      if (top.count(t)) ++c.recalled;
    }
  }
  return c;
}

namespace {

double checked(const RecallCounts& c, const std::string& what, Warnings* warnings) {
  if (c.total == 0 && warnings) warnings->push_back(what + ": no ground-truth triplets, value undefined");
  return c.value();
}

}  // namespace

double recall_at_k(const std::vector<std::vector<RankedPrediction>>& predictions,
                   const std::vector<EvalImage>& images, std::size_t k, Warnings* warnings) {
  return checked(recall_counts(predictions, images, k), "R@" + std::to_string(k), warnings);
}

double mean_recall_at_k(const std::vector<std::vector<RankedPrediction>>& predictions,
                        const std::vector<EvalImage>& images, std::size_t k,
                        std::size_t n_predicates, Warnings* warnings) {
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t p = 0; p < n_predicates; ++p) {
    const auto c = recall_counts(predictions, images, k,
                                 [p](const EvalImage&, const TripletIdx& t) { return t.predicate == p; });
    if (c.total == 0) continue;
    sum += c.value();
    ++used;
  }
  if (used == 0) {
    if (warnings) warnings->push_back("mR@" + std::to_string(k) + ": no ground-truth triplets, value undefined");
    return std::numeric_limits<double>::quiet_NaN();
  }
  return sum / static_cast<double>(used);
}

bool is_seen(const SeenSets& seen, SeenMode mode, int subject_class, std::size_t predicate,
             int object_class) {
  if (mode == SeenMode::Pair) return seen.pairs.count({subject_class, object_class}) > 0;
  return seen.triplets.count({subject_class, predicate, object_class}) > 0;
}

RecallCounts seen_unseen_counts(const std::vector<std::vector<RankedPrediction>>& predictions,
                                const std::vector<EvalImage>& images, const SeenSets& seen,
                                SeenMode mode, Subset subset, std::size_t k) {
  return recall_counts(predictions, images, k, [&](const EvalImage& img, const TripletIdx& t) {
    const bool s = is_seen(seen, mode, img.object_classes.at(t.subject), t.predicate,
                           img.object_classes.at(t.object));
    return subset == Subset::Seen ? s : !s;
  });
}

double seen_unseen_recall(const std::vector<std::vector<RankedPrediction>>& predictions,
                          const std::vector<EvalImage>& images, const SeenSets& seen, SeenMode mode,
                          Subset subset, std::size_t k, Warnings* warnings) {
  const std::string name = std::string(mode == SeenMode::Pair ? "p" : "t") +
                           (subset == Subset::Seen ? "sR@" : "uR@") + std::to_string(k);
  return checked(seen_unseen_counts(predictions, images, seen, mode, subset, k), name, warnings);
}

std::vector<EvalImage> eval_images(const std::vector<DatasetRecord>& records,
                                   const CandidateSet& candidates) {
  std::vector<EvalImage> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    EvalImage img;
    img.image_id = r.image_id;
    for (const auto& o : r.objects) img.object_classes.push_back(o.class_tag);
    std::set<TripletIdx> gt;
    for (const auto& rel : r.relations) {
      auto p = candidates.index_of(rel.predicate);
      if (!p || *p == candidates.no_relation_index()) continue;
      gt.insert({rel.subject, *p, rel.object});
    }
    img.gt.assign(gt.begin(), gt.end());
    out.push_back(std::move(img));
  }
  return out;
}

MetricsReport compute_report(const std::vector<std::vector<RankedPrediction>>& predictions,
                             const std::vector<EvalImage>& images, const SeenSets& seen,
                             std::size_t n_predicates) {
  MetricsReport rep;
  rep.images = images.size();
  for (const auto& img : images) rep.gt_triplets += img.gt.size();
  Warnings* w = &rep.warnings;
  for (std::size_t k : kReportKs) {
    rep.recall[k] = recall_at_k(predictions, images, k, w);
    rep.mean_recall[k] = mean_recall_at_k(predictions, images, k, n_predicates, w);
    rep.seen_pair[k] = seen_unseen_recall(predictions, images, seen, SeenMode::Pair, Subset::Seen, k, w);
    rep.seen_triplet[k] =
        seen_unseen_recall(predictions, images, seen, SeenMode::Triplet, Subset::Seen, k, w);
    rep.unseen_pair[k] =
        seen_unseen_recall(predictions, images, seen, SeenMode::Pair, Subset::Unseen, k, w);
    rep.unseen_triplet[k] =
        seen_unseen_recall(predictions, images, seen, SeenMode::Triplet, Subset::Unseen, k, w);
  }
  return rep;
}

namespace {

nlohmann::json by_k(const std::map<std::size_t, double>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : m) {
    if (std::isfinite(v))
      j[std::to_string(k)] = v;
    else
      j[std::to_string(k)] = nullptr;
  }
  return j;
}

std::string cell(double v) {
  if (!std::isfinite(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v;
  return os.str();
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["recall"] = by_k(recall);
  j["mean_recall"] = by_k(mean_recall);
  j["seen"] = {{"pair", by_k(seen_pair)}, {"triplet", by_k(seen_triplet)}};
  j["unseen"] = {{"pair", by_k(unseen_pair)}, {"triplet", by_k(unseen_triplet)}};
  j["images"] = images;
  j["gt_triplets"] = gt_triplets;
  j["warnings"] = warnings;
  j["config"] = config.is_null() ? nlohmann::json::object() : config;
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  auto read = [](const nlohmann::json& o) {
    std::map<std::size_t, double> m;
    for (const auto& [k, v] : o.items())
      m[std::stoul(k)] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    return m;
  };
  MetricsReport r;
  try {
    r.recall = read(j.at("recall"));
    r.mean_recall = read(j.at("mean_recall"));
    r.seen_pair = read(j.at("seen").at("pair"));
    r.seen_triplet = read(j.at("seen").at("triplet"));
    r.unseen_pair = read(j.at("unseen").at("pair"));
    r.unseen_triplet = read(j.at("unseen").at("triplet"));
    r.images = j.value("images", std::size_t{0});
    r.gt_triplets = j.value("gt_triplets", std::size_t{0});
    if (j.contains("warnings")) r.warnings = j["warnings"].get<Warnings>();
    if (j.contains("config")) r.config = j["config"];
  } catch (const std::exception& e) {
    throw ParseError(std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

std::string MetricsReport::to_text() const {
  std::vector<std::string> head = {"k", "R@k", "mR@k", "psR", "tsR", "puR", "tuR"};
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k : kReportKs) {
    auto get = [k](const std::map<std::size_t, double>& m) {
      auto it = m.find(k);
      return it == m.end() ? std::string("n/a") : cell(it->second);
    };
    rows.push_back({std::to_string(k), get(recall), get(mean_recall), get(seen_pair),
                    get(seen_triplet), get(unseen_pair), get(unseen_triplet)});
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    width[c] = head[c].size();
    for (const auto& r : rows) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) os << "  ";
      os << std::setw(static_cast<int>(width[c])) << r[c];
    }
    os << '\n';
  };
  line(head);
  for (const auto& r : rows) line(r);
  os << "images " << images << ", ground-truth triplets " << gt_triplets << '\n';
  for (const auto& w : warnings) os << "warning: " << w << '\n';
  return os.str();
}

}  // namespace kfv
