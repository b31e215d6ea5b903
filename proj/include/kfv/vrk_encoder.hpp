#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kfv/common.hpp"
#include "kfv/relation_kg.hpp"

namespace kfv {

// Query "c_i [MASK] c_j".
struct MaskedQuery {
  std::vector<std::string> subject_tokens;
  std::vector<std::string> object_tokens;

  static MaskedQuery from_classes(std::string_view subject_class, std::string_view object_class);
};

// Edge as a sentence: subject tokens, relation tokens, object tokens.
std::vector<std::string> edge_to_sentence(const KGEdge& edge);

struct VrkDims {
  int input_dim = 32;
  int hidden_dim = 64;
  int mask_dim = 64;  // D_k
};

struct RelationEncoderGrad;

// Knowledge encoder answering masked-relation queries.
//   q = [mean input-embed(subject); mean input-embed(object)]
//   m = W2 tanh(W1 q + b1) + b2
//   s^v_k = m . mean_{t in p_k} out-embed(t)
// Token ids 0 and 1 are reserved for unknown tokens and the no-relation label.
class RelationEncoder {
 public:
  static constexpr int kUnknownId = 0;
  static constexpr int kNoRelationId = 1;

  RelationEncoder() = default;
  // Random initialization over the given vocabulary (reserved ids are added).
  static RelationEncoder create(std::span<const std::string> vocabulary, const VrkDims& dims,
                                std::uint64_t seed);
  // Vocabulary drawn from all node and relation tokens of the graph plus extra.
  static RelationEncoder for_graph(const VisualRelationKG& graph, const VrkDims& dims,
                                   std::uint64_t seed,
                                   std::span<const std::string> extra_tokens = {});

  int token_id(const std::string& token) const;
  std::vector<int> phrase_ids(std::string_view phrase) const;
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  int mask_dim() const { return static_cast<int>(b2.size()); }
  int input_dim() const { return static_cast<int>(in_embed.rows()); }

  Vec encode_mask(const MaskedQuery& query) const;
  Vec relation_embedding(std::string_view predicate) const;
  Vec prior_scores(std::string_view subject_class, std::string_view object_class,
                   std::span<const std::string> candidates) const;

  std::string serialize() const;
  static RelationEncoder deserialize(std::string_view bytes);

  bool operator==(const RelationEncoder& o) const;

  // Parameters are public so gradient checks and optimizers can address them.
  Mat in_embed;   // input_dim x |vocab|
  Mat W1;         // hidden x 2*input_dim
  Vec b1;
  Mat W2;         // mask_dim x hidden
  Vec b2;
  Mat out_embed;  // mask_dim x |vocab|  (Embed_KE)

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> ids_;
};

struct RelationEncoderGrad {
  Mat in_embed, W1;
  Vec b1;
  Mat W2;
  Vec b2;
  Mat out_embed;

  static RelationEncoderGrad zeros(const RelationEncoder& enc);
  void set_zero();
  void scale(double f);
};

// Cross-entropy of softmax(s^v over relations) against the edge's relation.
// Adds the gradient into grad when non-null.
double reconstruction_loss(const RelationEncoder& enc, const KGEdge& edge,
                           std::span<const std::string> relations, RelationEncoderGrad* grad);

enum class EdgeSampling { Uniform, CountWeighted };

EdgeSampling parse_edge_sampling(std::string_view name);  // uniform | count

struct ReconstructionConfig {
  int epochs = 300;
  double learning_rate = 0.01;
  std::uint64_t seed = 1;
  EdgeSampling sampling = EdgeSampling::CountWeighted;
  int batch_size = 16;

  void validate() const;
};

struct ReconstructionResult {
  double accuracy = 0.0;
  std::vector<double> epoch_loss;
};

// Top-1 accuracy of relation reconstruction over the graph's edges.
double reconstruction_accuracy(const RelationEncoder& enc, const VisualRelationKG& graph);

ReconstructionResult train_reconstruction(RelationEncoder& enc, const VisualRelationKG& graph,
                                          const ReconstructionConfig& config);

}  // namespace kfv
