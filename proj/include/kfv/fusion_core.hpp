#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kfv/common.hpp"
#include "kfv/optimizer.hpp"
#include "kfv/text_knowledge.hpp"
#include "kfv/vrk_encoder.hpp"

namespace kfv {

// Normalized to [0, 1], x1 < x2 and y1 < y2.
struct Box {
  double x1 = 0, y1 = 0, x2 = 1, y2 = 1;
  void validate() const;
  bool operator==(const Box&) const = default;
};

struct ObjectDescriptor {
  Box box;
  int class_tag = 0;
  Vec raw_feature;  // D_v
};

// Candidate predicates P. The no-relation label is always the last entry.
class CandidateSet {
 public:
  CandidateSet() = default;
  static CandidateSet from_relations(std::vector<std::string> relations);

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::optional<std::size_t> index_of(const std::string& name) const;
  std::size_t no_relation_index() const { return names_.size() - 1; }
  const std::vector<std::string>& names() const { return names_; }
  bool operator==(const CandidateSet& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

// v_ij = W_v concat(o_i^r, b_i, o_j^r, b_j) + b_v, W_v of shape H x 2(D_v + 4).
struct PairEncoder {
  Mat W;
  Vec b;
};

Vec pair_input(const ObjectDescriptor& subject, const ObjectDescriptor& object);
Vec encode_pair(const ObjectDescriptor& subject, const ObjectDescriptor& object,
                const PairEncoder& enc);

enum class MetricPolarity { Similarity, Distance };
MetricPolarity parse_metric_polarity(std::string_view name);  // similarity | distance
std::string_view metric_polarity_name(MetricPolarity p);

struct MetricDiagnostics {
  std::size_t zero_norm = 0;  // scores forced to zero because a vector had no length
};

// Similarity: cos(v, p_k). Distance: 1 - cos(v, p_k). A zero-norm vector
// makes the cosine term 0.
Vec metric_scores(const Vec& pair_feature, std::span<const Vec> reps, MetricPolarity polarity,
                  MetricDiagnostics* diag = nullptr);

// s = softmax(W_f concat(s^v, s^t) + b_f), W_f of shape n x 2n.
struct FusionHead {
  Mat W;
  Vec b;
};

Vec softmax(const Vec& logits);
Vec fuse(const Vec& s_v, const Vec& s_t, const FusionHead& head);

inline constexpr double kProbabilityFloor = 1e-12;
// -log(s_gold); s_gold is clamped at kProbabilityFloor and *clamped is set.
double loss(const Vec& s, std::size_t gold, bool* clamped = nullptr);
// argmax, lowest index on ties.
std::size_t predict(const Vec& s);

struct ScoreVector {
  Vec s_t;
  Vec s_v;
  Vec s;
};

struct ModelOptions {
  TemplateKind template_kind = TemplateKind::Triplet;
  MetricPolarity polarity = MetricPolarity::Similarity;
  bool use_textual = true;  // false: static word vectors for p_k
  bool use_vrk = true;      // false: s^v is zero, only the s^t half of W_f acts
};

struct KfvModel {
  CandidateSet candidates;
  std::vector<std::string> class_names;
  ModelOptions options;
  TokenEmbeddingTable table;
  ContextEncoder context;
  Projection projection;  // W_p, b_p
  PairEncoder pair;       // W_v, b_v
  FusionHead head;        // W_f, b_f
  std::shared_ptr<const RelationEncoder> vrk;  // frozen

  static KfvModel create(CandidateSet candidates, std::vector<std::string> class_names,
                         TokenEmbeddingTable table, std::shared_ptr<const RelationEncoder> vrk,
                         const ModelOptions& options, int feature_dim, int hidden_dim,
                         std::uint64_t seed);

  int feature_dim() const { return static_cast<int>(pair.W.cols() / 2 - 4); }
  int hidden_dim() const { return static_cast<int>(pair.b.size()); }
  int text_dim() const { return table.dim(); }
  const std::string& class_name(int tag) const;

  std::string serialize() const;
  static KfvModel deserialize(std::string_view bytes);
  // Parameters, options, candidates, classes, table, and encoder all equal.
  bool same_as(const KfvModel& o) const;
};

struct ModelGrad {
  Mat W_v;
  Vec b_v;
  Mat W_p;
  Vec b_p;
  ContextEncoderGrad context;
  Mat W_f;
  Vec b_f;

  static ModelGrad zeros(const KfvModel& m);
  void set_zero();
  void scale(double f);
  double squared_norm() const;
};

// Trainable tensors in a fixed order, paired with their gradient buffers.
std::vector<ParamView> parameter_views(KfvModel& model, const ModelGrad& grad);

struct CandidateTrace {
  Prompt prompt;
  ContextTrace context;  // empty in static mode
  PredicateRepresentation rep;
};

// Visual-side pass for one ordered pair given its class-pair pieces.
struct PairForward {
  Vec input;  // concat(o_i^aug, o_j^aug)
  Vec v;      // v_ij
  Vec fusion_input;  // concat(s^v, s^t)
  ScoreVector scores;
  MetricDiagnostics diag;
};

struct ForwardRecord : PairForward {
  std::vector<CandidateTrace> candidates;
};

// Per-class-pair pieces; they do not depend on visual features.
std::vector<CandidateTrace> predicate_traces(const KfvModel& model, int subject_class,
                                             int object_class);
Vec prior_vector(const KfvModel& model, int subject_class, int object_class);
std::vector<Vec> projected_reps(const std::vector<CandidateTrace>& traces);

PairForward forward_pair(const KfvModel& model, const ObjectDescriptor& subject,
                         const ObjectDescriptor& object, std::span<const Vec> reps,
                         const Vec& prior);
ForwardRecord forward(const KfvModel& model, const ObjectDescriptor& subject,
                      const ObjectDescriptor& object);

// Adds the gradients of W_f, b_f, W_v, b_v into grad and dL/dp_k into
// d_reps (resized on first use). Returns L = -log s_gold.
double backward_pair(const KfvModel& model, const PairForward& record, std::span<const Vec> reps,
                     std::size_t gold, ModelGrad& grad, std::vector<Vec>& d_reps);
// Pushes dL/dp_k through the projection and, in contextual mode, the context encoder.
void backward_predicates(const KfvModel& model, const std::vector<CandidateTrace>& traces,
                         const std::vector<Vec>& d_reps, ModelGrad& grad);
// Both of the above for a single instance.
double backward(const KfvModel& model, const ForwardRecord& record, std::size_t gold,
                ModelGrad& grad);

// Scores from precomputed class-pair pieces.
ScoreVector score_from_parts(const KfvModel& model, const Vec& v, std::span<const Vec> reps,
                             const Vec& prior);
ScoreVector score_pair(const KfvModel& model, const ObjectDescriptor& subject,
                       const ObjectDescriptor& object);

}  // namespace kfv
