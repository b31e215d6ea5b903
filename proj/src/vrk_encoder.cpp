#include "kfv/vrk_encoder.hpp"

#include <cmath>
#include <algorithm>
#include <set>

#include "kfv/binary_io.hpp"
#include "kfv/caption_parser.hpp"
#include "kfv/optimizer.hpp"
#include "kfv/text_knowledge.hpp"

namespace kfv {

namespace {

constexpr std::string_view kMagic = "KFVVRK1";

Vec mean_columns(const Mat& table, const std::vector<int>& ids) {
  Vec acc = Vec::Zero(table.rows());
  for (int id : ids) acc += table.col(id);
  return acc / static_cast<double>(ids.size());
}

struct MaskTrace {
  std::vector<int> subject_ids;
  std::vector<int> object_ids;
  Vec query;   // 2 * input_dim
  Vec hidden;  // tanh activations
  Vec mask;    // m
};

MaskTrace mask_forward(const RelationEncoder& enc, std::vector<int> subj, std::vector<int> obj) {
  if (subj.empty() || obj.empty()) throw ContractViolation("masked query needs subject and object tokens");
  MaskTrace t;
  t.subject_ids = std::move(subj);
  t.object_ids = std::move(obj);
  const int d = enc.input_dim();
  t.query.resize(2 * d);
  t.query.head(d) = mean_columns(enc.in_embed, t.subject_ids);
  t.query.tail(d) = mean_columns(enc.in_embed, t.object_ids);
  t.hidden = (enc.W1 * t.query + enc.b1).array().tanh().matrix();
  t.mask = enc.W2 * t.hidden + enc.b2;
  return t;
}

std::vector<int> relation_ids(const RelationEncoder& enc, std::string_view predicate) {
  if (predicate == kNoRelation) return {RelationEncoder::kNoRelationId};
  auto ids = enc.phrase_ids(predicate);
  if (ids.empty()) throw ContractViolation("predicate has no tokens");
  return ids;
}

}  // namespace

MaskedQuery MaskedQuery::from_classes(std::string_view subject_class, std::string_view object_class) {
  MaskedQuery q{tokenize(predicate_text(subject_class)), tokenize(predicate_text(object_class))};
  if (q.subject_tokens.empty() || q.object_tokens.empty())
    throw ContractViolation("masked query needs non-empty class names");
  return q;
}

std::vector<std::string> edge_to_sentence(const KGEdge& edge) {
  std::vector<std::string> out;
  for (const auto* part : {&edge.subject, &edge.relation, &edge.object}) {
    auto toks = tokenize(predicate_text(*part));
    out.insert(out.end(), toks.begin(), toks.end());
  }
  return out;
}

RelationEncoder RelationEncoder::create(std::span<const std::string> vocabulary, const VrkDims& dims,
                                        std::uint64_t seed) {
  if (dims.input_dim <= 0 || dims.hidden_dim <= 0 || dims.mask_dim <= 0)
    throw ConfigError("encoder dimensions must be positive");
  RelationEncoder enc;
  enc.vocab_ = {"[UNK]", "[NOREL]"};
  for (const auto& t : vocabulary)
    if (t != "[UNK]" && t != "[NOREL]" && std::find(enc.vocab_.begin(), enc.vocab_.end(), t) == enc.vocab_.end())
      enc.vocab_.push_back(t);
  for (std::size_t i = 0; i < enc.vocab_.size(); ++i) enc.ids_[enc.vocab_[i]] = static_cast<int>(i);

  const auto n = static_cast<Eigen::Index>(enc.vocab_.size());
  Rng rng(seed);
  enc.in_embed = rng.normal_matrix(dims.input_dim, n, 1.0);
  enc.W1 = rng.normal_matrix(dims.hidden_dim, 2 * dims.input_dim, 1.0 / std::sqrt(2.0 * dims.input_dim));
  enc.b1 = Vec::Zero(dims.hidden_dim);
  enc.W2 = rng.normal_matrix(dims.mask_dim, dims.hidden_dim, 1.0 / std::sqrt(double(dims.hidden_dim)));
  enc.b2 = Vec::Zero(dims.mask_dim);
  enc.out_embed = rng.normal_matrix(dims.mask_dim, n, 1.0 / std::sqrt(double(dims.mask_dim)));
  return enc;
}

RelationEncoder RelationEncoder::for_graph(const VisualRelationKG& graph, const VrkDims& dims,
                                           std::uint64_t seed, std::span<const std::string> extra_tokens) {
  std::vector<std::string> vocab;
  std::set<std::string> seen;
  auto add_phrase = [&](const std::string& phrase) {
    for (auto& t : tokenize(predicate_text(phrase)))
      if (seen.insert(t).second) vocab.push_back(t);
  };
  for (const auto& n : graph.nodes()) add_phrase(n);
  for (const auto& r : graph.relations()) add_phrase(r);
  for (const auto& t : extra_tokens) add_phrase(t);
  return create(vocab, dims, seed);
}

int RelationEncoder::token_id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnknownId : it->second;
}

std::vector<int> RelationEncoder::phrase_ids(std::string_view phrase) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(predicate_text(phrase))) ids.push_back(token_id(t));
  return ids;
}

Vec RelationEncoder::encode_mask(const MaskedQuery& query) const {
  if (query.subject_tokens.empty() || query.object_tokens.empty())
    throw ContractViolation("masked query needs subject and object tokens");
  std::vector<int> s, o;
  for (const auto& t : query.subject_tokens) s.push_back(token_id(t));
  for (const auto& t : query.object_tokens) o.push_back(token_id(t));
  return mask_forward(*this, std::move(s), std::move(o)).mask;
}

Vec RelationEncoder::relation_embedding(std::string_view predicate) const {
  return mean_columns(out_embed, relation_ids(*this, predicate));
}

Vec RelationEncoder::prior_scores(std::string_view subject_class, std::string_view object_class,
                                  std::span<const std::string> candidates) const {
  if (candidates.empty()) throw ContractViolation("prior_scores needs candidates");
  const Vec m = encode_mask(MaskedQuery::from_classes(subject_class, object_class));
  Vec s(static_cast<Eigen::Index>(candidates.size()));
  for (std::size_t k = 0; k < candidates.size(); ++k)
    s[static_cast<Eigen::Index>(k)] = m.dot(relation_embedding(candidates[k]));
  return s;
}

bool RelationEncoder::operator==(const RelationEncoder& o) const {
  return vocab_ == o.vocab_ && in_embed == o.in_embed && W1 == o.W1 && b1 == o.b1 && W2 == o.W2 &&
         b2 == o.b2 && out_embed == o.out_embed;
}

std::string RelationEncoder::serialize() const {
  bin::Writer w;
  w.magic(kMagic);
  w.u64(static_cast<std::uint64_t>(input_dim()));
  w.u64(static_cast<std::uint64_t>(b1.size()));
  w.u64(static_cast<std::uint64_t>(mask_dim()));
  w.u64(vocab_.size());
  for (const auto& t : vocab_) w.str(t);
  w.matrix(in_embed);
  w.matrix(W1);
  w.vector(b1);
  w.matrix(W2);
  w.vector(b2);
  w.matrix(out_embed);
  return w.bytes();
}

RelationEncoder RelationEncoder::deserialize(std::string_view bytes) {
  bin::Reader r(bytes);
  r.expect_magic(kMagic);
  const auto d_in = static_cast<Eigen::Index>(r.u64());
  const auto hidden = static_cast<Eigen::Index>(r.u64());
  const auto d_k = static_cast<Eigen::Index>(r.u64());
  const auto n = r.u64();
  if (n < 2 || n > (1u << 24)) throw ParseError("bad vocabulary size in encoder checkpoint");
  RelationEncoder enc;
  for (std::uint64_t i = 0; i < n; ++i) enc.vocab_.push_back(r.str());
  if (enc.vocab_[0] != "[UNK]" || enc.vocab_[1] != "[NOREL]")
    throw ParseError("encoder checkpoint is missing reserved tokens");
  for (std::size_t i = 0; i < enc.vocab_.size(); ++i) enc.ids_[enc.vocab_[i]] = static_cast<int>(i);
  enc.in_embed = r.matrix();
  enc.W1 = r.matrix();
  enc.b1 = r.vector();
  enc.W2 = r.matrix();
  enc.b2 = r.vector();
  enc.out_embed = r.matrix();
  const auto V = static_cast<Eigen::Index>(n);
  if (enc.in_embed.rows() != d_in || enc.in_embed.cols() != V || enc.W1.rows() != hidden ||
      enc.W1.cols() != 2 * d_in || enc.b1.size() != hidden || enc.W2.rows() != d_k ||
      enc.W2.cols() != hidden || enc.b2.size() != d_k || enc.out_embed.rows() != d_k ||
      enc.out_embed.cols() != V)
    throw ParseError("encoder checkpoint tensor shapes disagree with header");
  if (!r.at_end()) throw ParseError("trailing bytes in encoder checkpoint");
  return enc;
}

RelationEncoderGrad RelationEncoderGrad::zeros(const RelationEncoder& enc) {
  return {Mat::Zero(enc.in_embed.rows(), enc.in_embed.cols()),
          Mat::Zero(enc.W1.rows(), enc.W1.cols()),
          Vec::Zero(enc.b1.size()),
          Mat::Zero(enc.W2.rows(), enc.W2.cols()),
          Vec::Zero(enc.b2.size()),
          Mat::Zero(enc.out_embed.rows(), enc.out_embed.cols())};
}

void RelationEncoderGrad::set_zero() {
  in_embed.setZero();
  W1.setZero();
  b1.setZero();
  W2.setZero();
  b2.setZero();
  out_embed.setZero();
}

void RelationEncoderGrad::scale(double f) {
  in_embed *= f;
  W1 *= f;
  b1 *= f;
  W2 *= f;
  b2 *= f;
  out_embed *= f;
}

double reconstruction_loss(const RelationEncoder& enc, const KGEdge& edge,
                           std::span<const std::string> relations, RelationEncoderGrad* grad) {
  std::size_t gold = relations.size();
  for (std::size_t k = 0; k < relations.size(); ++k)
    if (relations[k] == edge.relation) gold = k;
  if (gold == relations.size()) throw ContractViolation("edge relation not in candidate set");

  const MaskTrace t = mask_forward(enc, enc.phrase_ids(edge.subject), enc.phrase_ids(edge.object));
  const auto n = static_cast<Eigen::Index>(relations.size());
  std::vector<std::vector<int>> rel_ids(relations.size());
  Mat rel_emb(enc.mask_dim(), n);
  for (Eigen::Index k = 0; k < n; ++k) {
    rel_ids[k] = relation_ids(enc, relations[k]);
    rel_emb.col(k) = mean_columns(enc.out_embed, rel_ids[k]);
  }
  const Vec logits = rel_emb.transpose() * t.mask;
  const double mx = logits.maxCoeff();
  const Vec ex = (logits.array() - mx).exp().matrix();
  const double z = ex.sum();
  const double loss = -(logits[static_cast<Eigen::Index>(gold)] - mx - std::log(z));
  if (!grad) return loss;

  Vec d_logits = ex / z;
  d_logits[static_cast<Eigen::Index>(gold)] -= 1.0;

  const Vec d_mask = rel_emb * d_logits;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double w = d_logits[k] / static_cast<double>(rel_ids[k].size());
    for (int id : rel_ids[k]) grad->out_embed.col(id) += w * t.mask;
  }
  grad->W2.noalias() += d_mask * t.hidden.transpose();
  grad->b2 += d_mask;
  const Vec d_pre = ((enc.W2.transpose() * d_mask).array() * (1.0 - t.hidden.array().square())).matrix();
  grad->W1.noalias() += d_pre * t.query.transpose();
  grad->b1 += d_pre;
  const Vec d_query = enc.W1.transpose() * d_pre;
  const int d = enc.input_dim();
  for (int id : t.subject_ids)
    grad->in_embed.col(id) += d_query.head(d) / static_cast<double>(t.subject_ids.size());
  for (int id : t.object_ids)
    grad->in_embed.col(id) += d_query.tail(d) / static_cast<double>(t.object_ids.size());
  return loss;
}

EdgeSampling parse_edge_sampling(std::string_view name) {
  if (name == "uniform") return EdgeSampling::Uniform;
  if (name == "count" || name == "count_weighted") return EdgeSampling::CountWeighted;
  throw ConfigError("unknown sampling mode '" + std::string(name) + "' (expected uniform, count)");
}

void ReconstructionConfig::validate() const {
  if (epochs < 1) throw ConfigError("reconstruction epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("reconstruction learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("reconstruction batch size must be >= 1");
}

double reconstruction_accuracy(const RelationEncoder& enc, const VisualRelationKG& graph) {
  if (graph.empty()) return 0.0;
  const std::vector<std::string> rels(graph.relations().begin(), graph.relations().end());
  std::size_t hits = 0;
  const auto edges = graph.edges();
  for (const auto& e : edges) {
    const Vec s = enc.prior_scores(e.subject, e.object, rels);
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < s.size(); ++k)
      if (s[k] > s[best]) best = k;
    hits += rels[static_cast<std::size_t>(best)] == e.relation;
  }
  return static_cast<double>(hits) / static_cast<double>(edges.size());
}

ReconstructionResult train_reconstruction(RelationEncoder& enc, const VisualRelationKG& graph,
                                          const ReconstructionConfig& config) {
  config.validate();
  if (graph.empty()) throw ConfigError("cannot train the knowledge encoder on an empty graph");
  const auto edges = graph.edges();
  const std::vector<std::string> rels(graph.relations().begin(), graph.relations().end());
  std::vector<double> weights;
  for (const auto& e : edges) weights.push_back(static_cast<double>(e.count));

  Rng rng(config.seed);
  Optimizer opt(OptimizerKind::Adam, config.learning_rate);
  RelationEncoderGrad grad = RelationEncoderGrad::zeros(enc);
  const std::vector<ParamView> views = {
      param_view(enc.in_embed, grad.in_embed), param_view(enc.W1, grad.W1),
      param_view(enc.b1, grad.b1),             param_view(enc.W2, grad.W2),
      param_view(enc.b2, grad.b2),             param_view(enc.out_embed, grad.out_embed)};

  ReconstructionResult result;
  std::vector<std::size_t> order(edges.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.sampling == EdgeSampling::Uniform) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
    } else {
      for (auto& o : order) o = rng.weighted(weights);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      grad.set_zero();
      for (std::size_t i = start; i < end; ++i)
        epoch_loss += reconstruction_loss(enc, edges[order[i]], rels, &grad);
      grad.scale(1.0 / static_cast<double>(end - start));
      opt.step(views);
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss))
      throw DivergenceError("knowledge encoder loss became non-finite at epoch " + std::to_string(epoch));
    result.epoch_loss.push_back(epoch_loss);
  }
  result.accuracy = reconstruction_accuracy(enc, graph);
  return result;
}

}  // namespace kfv
