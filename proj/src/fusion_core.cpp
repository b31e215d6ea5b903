#include "kfv/fusion_core.hpp"

#include <cmath>

#include "kfv/binary_io.hpp"
#include "kfv/optimizer.hpp"

namespace kfv {

namespace {

constexpr std::string_view kMagic = "KFVFUS1";

struct Cosine {
  double value = 0.0;
  double v_norm = 0.0;
  double p_norm = 0.0;
  bool degenerate = false;
};

Cosine cosine(const Vec& v, const Vec& p) {
  Cosine c;
  c.v_norm = v.norm();
  c.p_norm = p.norm();
  if (c.v_norm == 0.0 || c.p_norm == 0.0) {
    c.degenerate = true;
    return c;
  }
  c.value = v.dot(p) / (c.v_norm * c.p_norm);
  return c;
}

void append_object(Vec& out, Eigen::Index offset, const ObjectDescriptor& o) {
  const auto d = o.raw_feature.size();
  out.segment(offset, d) = o.raw_feature;
  out[offset + d] = o.box.x1;
  out[offset + d + 1] = o.box.y1;
  out[offset + d + 2] = o.box.x2;
  out[offset + d + 3] = o.box.y2;
}

}  // namespace

void Box::validate() const {
  auto in01 = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!(in01(x1) && in01(y1) && in01(x2) && in01(y2)) || !(x1 < x2) || !(y1 < y2))
    throw ContractViolation("box must satisfy 0 <= x1 < x2 <= 1 and 0 <= y1 < y2 <= 1");
}

CandidateSet CandidateSet::from_relations(std::vector<std::string> relations) {
  CandidateSet c;
  for (auto& r : relations) {
    if (r.empty() || r == kNoRelation) throw ConfigError("invalid relation name in candidate set");
    if (c.index_.count(r)) throw ConfigError("duplicate relation '" + r + "' in candidate set");
    c.index_[r] = c.names_.size();
    c.names_.push_back(std::move(r));
  }
  if (c.names_.empty()) throw ConfigError("candidate set needs at least one relation");
  c.index_[std::string(kNoRelation)] = c.names_.size();
  c.names_.emplace_back(kNoRelation);
  return c;
}

std::optional<std::size_t> CandidateSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Vec pair_input(const ObjectDescriptor& subject, const ObjectDescriptor& object) {
  if (subject.raw_feature.size() != object.raw_feature.size())
    throw ContractViolation("object feature dimensions differ");
  const auto d = subject.raw_feature.size();
  Vec x(2 * (d + 4));
  append_object(x, 0, subject);
  append_object(x, d + 4, object);
  return x;
}

Vec encode_pair(const ObjectDescriptor& subject, const ObjectDescriptor& object,
                const PairEncoder& enc) {
  const Vec x = pair_input(subject, object);
  if (enc.W.cols() != x.size() || enc.W.rows() != enc.b.size())
    throw ContractViolation("pair encoder expects input of size " + std::to_string(enc.W.cols()) +
                            ", got " + std::to_string(x.size()));
  return enc.W * x + enc.b;
}

MetricPolarity parse_metric_polarity(std::string_view name) {
  if (name == "similarity") return MetricPolarity::Similarity;
  if (name == "distance") return MetricPolarity::Distance;
  throw ConfigError("unknown metric polarity '" + std::string(name) + "'");
}

std::string_view metric_polarity_name(MetricPolarity p) {
  return p == MetricPolarity::Similarity ? "similarity" : "distance";
}

Vec metric_scores(const Vec& pair_feature, std::span<const Vec> reps, MetricPolarity polarity,
                  MetricDiagnostics* diag) {
  Vec s(static_cast<Eigen::Index>(reps.size()));
  for (std::size_t k = 0; k < reps.size(); ++k) {
    if (reps[k].size() != pair_feature.size())
      throw ContractViolation("predicate representation and pair feature dimensions differ");
    const Cosine c = cosine(pair_feature, reps[k]);
    if (c.degenerate && diag) ++diag->zero_norm;
    s[static_cast<Eigen::Index>(k)] = polarity == MetricPolarity::Similarity ? c.value : 1.0 - c.value;
  }
  return s;
}

Vec softmax(const Vec& logits) {
  const double mx = logits.maxCoeff();
  Vec e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

Vec fuse(const Vec& s_v, const Vec& s_t, const FusionHead& head) {
  if (s_v.size() != s_t.size()) throw ContractViolation("s^v and s^t lengths differ");
  const auto n = s_t.size();
  if (head.W.rows() != n || head.W.cols() != 2 * n || head.b.size() != n)
    throw ContractViolation("fusion head shape does not match score length");
  Vec u(2 * n);
  u << s_v, s_t;
  return softmax(head.W * u + head.b);
}

double loss(const Vec& s, std::size_t gold, bool* clamped) {
  if (gold >= static_cast<std::size_t>(s.size())) throw ContractViolation("gold index out of range");
  double p = s[static_cast<Eigen::Index>(gold)];
  const bool floor = p < kProbabilityFloor;
  if (floor) p = kProbabilityFloor;
  if (clamped) *clamped = floor;
  return -std::log(p);
}

std::size_t predict(const Vec& s) {
  if (s.size() == 0) throw ContractViolation("predict on empty score vector");
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < s.size(); ++k)
    if (s[k] > s[best]) best = k;
  return static_cast<std::size_t>(best);
}

KfvModel KfvModel::create(CandidateSet candidates, std::vector<std::string> class_names,
                          TokenEmbeddingTable table, std::shared_ptr<const RelationEncoder> vrk,
                          const ModelOptions& options, int feature_dim, int hidden_dim,
                          std::uint64_t seed) {
  if (feature_dim <= 0 || hidden_dim <= 0) throw ConfigError("model dimensions must be positive");
  if (table.dim() <= 0) throw ConfigError("model needs a token embedding table");
  if (class_names.empty()) throw ConfigError("model needs object class names");
  if (options.use_vrk && !vrk) throw ConfigError("knowledge prior enabled but no encoder supplied");

  KfvModel m;
  m.candidates = std::move(candidates);
  m.class_names = std::move(class_names);
  m.options = options;
  m.table = std::move(table);
  m.vrk = std::move(vrk);

  const int dt = m.table.dim();
  const int in = 2 * (feature_dim + 4);
  const auto n = static_cast<Eigen::Index>(m.candidates.size());
  Rng rng(seed);
  m.pair.W = rng.normal_matrix(hidden_dim, in, 1.0 / std::sqrt(double(in)));
  m.pair.b = Vec::Zero(hidden_dim);
  m.projection.W = rng.normal_matrix(hidden_dim, dt, 1.0 / std::sqrt(double(dt)));
  m.projection.b = Vec::Zero(hidden_dim);
  m.context = ContextEncoder::random(dt, rng, 0.5 / std::sqrt(double(dt)));
  m.head.W = Mat::Zero(n, 2 * n);
  m.head.W.leftCols(n).setIdentity();
  m.head.W.rightCols(n).setIdentity();
  m.head.b = Vec::Zero(n);
  return m;
}

const std::string& KfvModel::class_name(int tag) const {
  if (tag < 0 || static_cast<std::size_t>(tag) >= class_names.size())
    throw ContractViolation("class tag " + std::to_string(tag) + " out of range");
  return class_names[static_cast<std::size_t>(tag)];
}

std::string KfvModel::serialize() const {
  bin::Writer w;
  w.magic(kMagic);
  w.u64(static_cast<std::uint64_t>(feature_dim()));
  w.u64(static_cast<std::uint64_t>(hidden_dim()));
  w.u64(static_cast<std::uint64_t>(text_dim()));
  w.u64(vrk ? static_cast<std::uint64_t>(vrk->mask_dim()) : 0);
  w.u64(candidates.size());
  for (const auto& c : candidates.names()) w.str(c);
  w.u64(class_names.size());
  for (const auto& c : class_names) w.str(c);
  w.u64(static_cast<std::uint64_t>(options.template_kind));
  w.u64(static_cast<std::uint64_t>(options.polarity));
  w.u64(options.use_textual ? 1 : 0);
  w.u64(options.use_vrk ? 1 : 0);
  w.matrix(pair.W);
  w.vector(pair.b);
  w.matrix(projection.W);
  w.vector(projection.b);
  w.matrix(context.U);
  w.matrix(context.V);
  w.vector(context.b);
  w.matrix(head.W);
  w.vector(head.b);
  w.str(table.serialize());
  w.str(vrk ? vrk->serialize() : std::string());
  return w.bytes();
}

KfvModel KfvModel::deserialize(std::string_view bytes) {
  bin::Reader r(bytes);
  r.expect_magic(kMagic);
  const auto dv = static_cast<Eigen::Index>(r.u64());
  const auto h = static_cast<Eigen::Index>(r.u64());
  const auto dt = static_cast<Eigen::Index>(r.u64());
  const auto dk = static_cast<Eigen::Index>(r.u64());
  const auto n = r.u64();
  if (n < 2 || n > 100000) throw ParseError("bad candidate count in model checkpoint");

  KfvModel m;
  std::vector<std::string> names;
  for (std::uint64_t i = 0; i < n; ++i) names.push_back(r.str());
  if (names.back() != kNoRelation) throw ParseError("candidate set must end with no-relation");
  names.pop_back();
  m.candidates = CandidateSet::from_relations(std::move(names));
  const auto nc = r.u64();
  if (nc > 1000000) throw ParseError("bad class count in model checkpoint");
  for (std::uint64_t i = 0; i < nc; ++i) m.class_names.push_back(r.str());
  const auto tk = r.u64();
  const auto pol = r.u64();
  if (tk > 2 || pol > 1) throw ParseError("bad option values in model checkpoint");
  m.options.template_kind = static_cast<TemplateKind>(tk);
  m.options.polarity = static_cast<MetricPolarity>(pol);
  m.options.use_textual = r.u64() != 0;
  m.options.use_vrk = r.u64() != 0;
  m.pair.W = r.matrix();
  m.pair.b = r.vector();
  m.projection.W = r.matrix();
  m.projection.b = r.vector();
  m.context.U = r.matrix();
  m.context.V = r.matrix();
  m.context.b = r.vector();
  m.head.W = r.matrix();
  m.head.b = r.vector();
  m.table = TokenEmbeddingTable::parse(r.str());
  const std::string vrk_bytes = r.str();
  if (!vrk_bytes.empty())
    m.vrk = std::make_shared<const RelationEncoder>(RelationEncoder::deserialize(vrk_bytes));
  if (!r.at_end()) throw ParseError("trailing bytes in model checkpoint");

  const auto nn = static_cast<Eigen::Index>(n);
  const bool ok = m.pair.W.rows() == h && m.pair.W.cols() == 2 * (dv + 4) && m.pair.b.size() == h &&
                  m.projection.W.rows() == h && m.projection.W.cols() == dt &&
                  m.projection.b.size() == h && m.context.U.rows() == dt &&
                  m.context.U.cols() == dt && m.context.V.rows() == dt && m.context.V.cols() == dt &&
                  m.context.b.size() == dt && m.head.W.rows() == nn && m.head.W.cols() == 2 * nn &&
                  m.head.b.size() == nn && m.table.dim() == dt &&
                  (m.vrk ? m.vrk->mask_dim() == dk : dk == 0);
  if (!ok) throw ParseError("model checkpoint tensor shapes disagree with header");
  if (m.options.use_vrk && !m.vrk) throw ParseError("checkpoint enables the prior but has no encoder");
  return m;
}

bool KfvModel::same_as(const KfvModel& o) const {
  const bool vrk_eq = (!vrk && !o.vrk) || (vrk && o.vrk && *vrk == *o.vrk);
  return candidates == o.candidates && class_names == o.class_names &&
         options.template_kind == o.options.template_kind && options.polarity == o.options.polarity &&
         options.use_textual == o.options.use_textual && options.use_vrk == o.options.use_vrk &&
         table == o.table && context.U == o.context.U && context.V == o.context.V &&
         context.b == o.context.b && projection.W == o.projection.W &&
         projection.b == o.projection.b && pair.W == o.pair.W && pair.b == o.pair.b &&
         head.W == o.head.W && head.b == o.head.b && vrk_eq;
}

ModelGrad ModelGrad::zeros(const KfvModel& m) {
  ModelGrad g;
  g.W_v = Mat::Zero(m.pair.W.rows(), m.pair.W.cols());
  g.b_v = Vec::Zero(m.pair.b.size());
  g.W_p = Mat::Zero(m.projection.W.rows(), m.projection.W.cols());
  g.b_p = Vec::Zero(m.projection.b.size());
  g.context = ContextEncoderGrad::zeros(m.context);
  g.W_f = Mat::Zero(m.head.W.rows(), m.head.W.cols());
  g.b_f = Vec::Zero(m.head.b.size());
  return g;
}

void ModelGrad::set_zero() {
  W_v.setZero();
  b_v.setZero();
  W_p.setZero();
  b_p.setZero();
  context.U.setZero();
  context.V.setZero();
  context.b.setZero();
  W_f.setZero();
  b_f.setZero();
}

void ModelGrad::scale(double f) {
  W_v *= f;
  b_v *= f;
  W_p *= f;
  b_p *= f;
  context.U *= f;
  context.V *= f;
  context.b *= f;
  W_f *= f;
  b_f *= f;
}

double ModelGrad::squared_norm() const {
  return W_v.squaredNorm() + b_v.squaredNorm() + W_p.squaredNorm() + b_p.squaredNorm() +
         context.U.squaredNorm() + context.V.squaredNorm() + context.b.squaredNorm() +
         W_f.squaredNorm() + b_f.squaredNorm();
}

std::vector<ParamView> parameter_views(KfvModel& model, const ModelGrad& grad) {
  return {param_view(model.pair.W, grad.W_v),         param_view(model.pair.b, grad.b_v),
          param_view(model.projection.W, grad.W_p),   param_view(model.projection.b, grad.b_p),
          param_view(model.context.U, grad.context.U), param_view(model.context.V, grad.context.V),
          param_view(model.context.b, grad.context.b), param_view(model.head.W, grad.W_f),
          param_view(model.head.b, grad.b_f)};
}

std::vector<CandidateTrace> predicate_traces(const KfvModel& model, int subject_class,
                                             int object_class) {
  const auto& subj = model.class_name(subject_class);
  const auto& obj = model.class_name(object_class);
  const PromptTemplate tpl = PromptTemplate::builtin(model.options.template_kind);
  std::vector<CandidateTrace> out;
  out.reserve(model.candidates.size());
  for (const auto& pred : model.candidates.names()) {
    CandidateTrace t;
    if (model.options.use_textual) {
      t.prompt = build_prompt(tpl, subj, obj, pred);
      t.context = context_forward(model.context, embed_tokens(model.table, t.prompt.tokens));
      t.rep.raw = predicate_repr(t.context.outputs, t.prompt.predicate_begin, t.prompt.predicate_end);
      t.rep.projected = project(t.rep.raw, model.projection);
    } else {
      t.rep = static_repr(pred, model.table, model.projection);
    }
    out.push_back(std::move(t));
  }
  return out;
}

Vec prior_vector(const KfvModel& model, int subject_class, int object_class) {
  if (!model.options.use_vrk) return Vec::Zero(static_cast<Eigen::Index>(model.candidates.size()));
  return model.vrk->prior_scores(model.class_name(subject_class), model.class_name(object_class),
                                 model.candidates.names());
}

std::vector<Vec> projected_reps(const std::vector<CandidateTrace>& traces) {
  std::vector<Vec> reps;
  reps.reserve(traces.size());
  for (const auto& t : traces) reps.push_back(t.rep.projected);
  return reps;
}

ScoreVector score_from_parts(const KfvModel& model, const Vec& v, std::span<const Vec> reps,
                             const Vec& prior) {
  ScoreVector sv;
  sv.s_t = metric_scores(v, reps, model.options.polarity);
  sv.s_v = prior;
  sv.s = fuse(sv.s_v, sv.s_t, model.head);
  return sv;
}

PairForward forward_pair(const KfvModel& model, const ObjectDescriptor& subject,
                         const ObjectDescriptor& object, std::span<const Vec> reps,
                         const Vec& prior) {
  PairForward r;
  r.input = pair_input(subject, object);
  if (model.pair.W.cols() != r.input.size())
    throw ContractViolation("object features do not match the model's feature dimension");
  r.v = model.pair.W * r.input + model.pair.b;
  r.scores.s_t = metric_scores(r.v, reps, model.options.polarity, &r.diag);
  r.scores.s_v = prior;
  const auto n = r.scores.s_t.size();
  if (prior.size() != n) throw ContractViolation("prior length does not match candidate count");
  r.fusion_input.resize(2 * n);
  r.fusion_input << r.scores.s_v, r.scores.s_t;
  r.scores.s = softmax(model.head.W * r.fusion_input + model.head.b);
  return r;
}

ForwardRecord forward(const KfvModel& model, const ObjectDescriptor& subject,
                      const ObjectDescriptor& object) {
  ForwardRecord r;
  r.candidates = predicate_traces(model, subject.class_tag, object.class_tag);
  const auto reps = projected_reps(r.candidates);
  static_cast<PairForward&>(r) = forward_pair(
      model, subject, object, reps, prior_vector(model, subject.class_tag, object.class_tag));
  return r;
}

double backward_pair(const KfvModel& model, const PairForward& record, std::span<const Vec> reps,
                     std::size_t gold, ModelGrad& grad, std::vector<Vec>& d_reps) {
  const Vec& s = record.scores.s;
  const double L = loss(s, gold);
  const auto n = s.size();
  if (d_reps.size() != reps.size()) {
    d_reps.assign(reps.size(), Vec());
    for (std::size_t k = 0; k < reps.size(); ++k) d_reps[k] = Vec::Zero(reps[k].size());
  }

  Vec d_logits = s;
  d_logits[static_cast<Eigen::Index>(gold)] -= 1.0;
  grad.W_f.noalias() += d_logits * record.fusion_input.transpose();
  grad.b_f += d_logits;
  const Vec d_input = model.head.W.transpose() * d_logits;
  const Vec d_st = d_input.tail(n);
  const double sign = model.options.polarity == MetricPolarity::Similarity ? 1.0 : -1.0;

  Vec d_v = Vec::Zero(record.v.size());
  for (Eigen::Index k = 0; k < n; ++k) {
    const Vec& p = reps[static_cast<std::size_t>(k)];
    const Cosine c = cosine(record.v, p);
    if (c.degenerate) continue;
    const double g = sign * d_st[k];
    const double inv = 1.0 / (c.v_norm * c.p_norm);
    d_v += g * (p * inv - c.value * record.v / (c.v_norm * c.v_norm));
    d_reps[static_cast<std::size_t>(k)] += g * (record.v * inv - c.value * p / (c.p_norm * c.p_norm));
  }
  grad.W_v.noalias() += d_v * record.input.transpose();
  grad.b_v += d_v;
  return L;
}

void backward_predicates(const KfvModel& model, const std::vector<CandidateTrace>& traces,
                         const std::vector<Vec>& d_reps, ModelGrad& grad) {
  if (traces.size() != d_reps.size()) throw ContractViolation("one gradient per candidate required");
  for (std::size_t k = 0; k < traces.size(); ++k) {
    const auto& cand = traces[k];
    const Vec& d_p = d_reps[k];
    grad.W_p.noalias() += d_p * cand.rep.raw.transpose();
    grad.b_p += d_p;
    if (!model.options.use_textual) continue;
    const Vec d_raw = model.projection.W.transpose() * d_p;
    const auto begin = static_cast<Eigen::Index>(cand.prompt.predicate_begin);
    const auto len =
        static_cast<Eigen::Index>(cand.prompt.predicate_end - cand.prompt.predicate_begin);
    Mat d_out = Mat::Zero(cand.context.outputs.rows(), cand.context.outputs.cols());
    for (Eigen::Index i = 0; i < len; ++i) d_out.col(begin + i) = d_raw / static_cast<double>(len);
    context_backward(model.context, cand.context, d_out, grad.context);
  }
}

double backward(const KfvModel& model, const ForwardRecord& record, std::size_t gold,
                ModelGrad& grad) {
  const auto reps = projected_reps(record.candidates);
  std::vector<Vec> d_reps;
  const double L = backward_pair(model, record, reps, gold, grad, d_reps);
  backward_predicates(model, record.candidates, d_reps, grad);
  return L;
}

ScoreVector score_pair(const KfvModel& model, const ObjectDescriptor& subject,
                       const ObjectDescriptor& object) {
  return forward(model, subject, object).scores;
}

}  // namespace kfv
