#include "kfv/text_knowledge.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "kfv/caption_parser.hpp"

namespace kfv {

namespace {

constexpr std::string_view kSubjectSlot = "<S>";
constexpr std::string_view kPredicateSlot = "<P>";
constexpr std::string_view kObjectSlot = "<O>";

std::size_t count_occurrences(std::string_view s, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string_view::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

void check_template(const PromptTemplate& tpl) {
  for (auto slot : {kSubjectSlot, kPredicateSlot, kObjectSlot})
    if (count_occurrences(tpl.pattern, slot) != 1)
      throw ContractViolation("template must contain " + std::string(slot) + " exactly once");
}

void replace_once(std::string& s, std::string_view slot, std::string_view value) {
  auto pos = s.find(slot);
  s.replace(pos, slot.size(), value);
}

}  // namespace

std::string predicate_text(std::string_view predicate) {
  if (predicate == kNoRelation) return "no relation";
  std::string out(predicate);
  for (auto& c : out)
    if (c == '_') c = ' ';
  return out;
}

PromptTemplate PromptTemplate::builtin(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::Cloze:
      return {kind, "The relationship between <S> and <O> is <P>"};
    case TemplateKind::T5Style:
      return {kind, "<S> and <O> are <P>."};
    case TemplateKind::Triplet:
      return {kind, "<S> is <P> <O>"};
  }
  throw ContractViolation("unknown template kind");
}

TemplateKind parse_template_kind(std::string_view name) {
  if (name == "cloze") return TemplateKind::Cloze;
  if (name == "t5") return TemplateKind::T5Style;
  if (name == "triplet") return TemplateKind::Triplet;
  throw ConfigError("unknown template '" + std::string(name) + "' (expected cloze, t5, triplet)");
}

std::string_view template_kind_name(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::Cloze: return "cloze";
    case TemplateKind::T5Style: return "t5";
    case TemplateKind::Triplet: return "triplet";
  }
  return "?";
}

std::string fill_template(const PromptTemplate& tpl, std::string_view subject_class,
                          std::string_view object_class, std::string_view predicate) {
  check_template(tpl);
  if (subject_class.empty() || object_class.empty() || predicate.empty())
    throw ContractViolation("fill_template inputs must be non-empty");
  std::string out = tpl.pattern;
  // Values never contain slot markers, so replacement order does not matter.
  replace_once(out, kSubjectSlot, subject_class);
  replace_once(out, kObjectSlot, object_class);
  replace_once(out, kPredicateSlot, predicate_text(predicate));
  return out;
}

Prompt build_prompt(const PromptTemplate& tpl, std::string_view subject_class,
                    std::string_view object_class, std::string_view predicate) {
  const std::string filled = fill_template(tpl, subject_class, object_class, predicate);
  // Text before the predicate slot, with the other slots filled in.
  std::string prefix = tpl.pattern.substr(0, tpl.pattern.find(kPredicateSlot));
  if (prefix.find(kSubjectSlot) != std::string::npos) replace_once(prefix, kSubjectSlot, subject_class);
  if (prefix.find(kObjectSlot) != std::string::npos) replace_once(prefix, kObjectSlot, object_class);

  Prompt p;
  p.tokens = tokenize(filled);
  p.predicate_begin = tokenize(prefix).size();
  p.predicate_end = p.predicate_begin + tokenize(predicate_text(predicate)).size();
  if (p.predicate_end <= p.predicate_begin || p.predicate_end > p.tokens.size())
    throw ContractViolation("predicate produced no tokens in prompt");
  return p;
}

TokenEmbeddingTable::TokenEmbeddingTable(int dim, Vec fallback)
    : dim_(dim), fallback_(std::move(fallback)) {
  if (dim <= 0) throw ContractViolation("embedding dimension must be positive");
  if (fallback_.size() != dim) throw ContractViolation("fallback vector dimension mismatch");
}

const Vec& TokenEmbeddingTable::lookup(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? fallback_ : vectors_[it->second];
}

void TokenEmbeddingTable::set(const std::string& token, Vec v) {
  if (v.size() != dim_) throw ContractViolation("embedding vector dimension mismatch");
  auto it = index_.find(token);
  if (it != index_.end()) {
    vectors_[it->second] = std::move(v);
    return;
  }
  index_[token] = tokens_.size();
  tokens_.push_back(token);
  vectors_.push_back(std::move(v));
}

bool TokenEmbeddingTable::operator==(const TokenEmbeddingTable& o) const {
  return dim_ == o.dim_ && tokens_ == o.tokens_ && fallback_ == o.fallback_ &&
         vectors_ == o.vectors_;
}

TokenEmbeddingTable TokenEmbeddingTable::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  int dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!line.starts_with("D_t=")) throw ParseError("embedding file must start with D_t=<int>", lineno);
    auto num = std::string_view(line).substr(4);
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), dim);
    if (ec != std::errc() || ptr != num.data() + num.size() || dim <= 0)
      throw ParseError("bad D_t header", lineno);
    break;
  }
  if (dim == 0) throw ParseError("embedding file has no D_t header");

  TokenEmbeddingTable table(dim, Vec::Zero(dim));
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) throw ParseError("expected token<TAB>values", lineno);
    Vec v(dim);
    std::string_view rest = std::string_view(line).substr(tab + 1);
    int i = 0;
    while (true) {
      auto comma = rest.find(',');
      auto field = rest.substr(0, comma);
      if (i >= dim) throw ParseError("too many values", lineno);
      double x = 0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), x);
      if (ec != std::errc() || ptr != field.data() + field.size())
        throw ParseError("bad number '" + std::string(field) + "'", lineno);
      v[i++] = x;
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    if (i != dim) throw ParseError("expected " + std::to_string(dim) + " values", lineno);
    std::string token = line.substr(0, tab);
    if (token == "<unk>") {
      table.fallback_ = v;
    } else {
      table.set(token, std::move(v));
    }
  }
  return table;
}

TokenEmbeddingTable TokenEmbeddingTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("embedding table not found: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string TokenEmbeddingTable::serialize() const {
  auto row = [](std::string_view token, const Vec& v) {
    std::string out(token);
    out += '\t';
    char buf[32];
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v[i]);
      if (i) out += ',';
      out.append(buf, ptr);
    }
    out += '\n';
    return out;
  };
  std::string out = "D_t=" + std::to_string(dim_) + "\n";
  out += row("<unk>", fallback_);
  for (std::size_t i = 0; i < tokens_.size(); ++i) out += row(tokens_[i], vectors_[i]);
  return out;
}

ContextEncoder ContextEncoder::identity(int dim) {
  return {Mat::Zero(dim, dim), Mat::Zero(dim, dim), Vec::Zero(dim)};
}

ContextEncoder ContextEncoder::random(int dim, Rng& rng, double scale) {
  ContextEncoder e;
  e.U = rng.normal_matrix(dim, dim, scale);
  e.V = rng.normal_matrix(dim, dim, scale);
  e.b = rng.normal_matrix(dim, 1, scale);
  return e;
}

ContextEncoderGrad ContextEncoderGrad::zeros(const ContextEncoder& enc) {
  return {Mat::Zero(enc.U.rows(), enc.U.cols()), Mat::Zero(enc.V.rows(), enc.V.cols()),
          Vec::Zero(enc.b.size())};
}

Mat embed_tokens(const TokenEmbeddingTable& table, std::span<const std::string> tokens) {
  Mat e(table.dim(), static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) e.col(static_cast<Eigen::Index>(i)) = table.lookup(tokens[i]);
  return e;
}

ContextTrace context_forward(const ContextEncoder& enc, const Mat& inputs) {
  if (inputs.rows() != enc.dim()) throw ContractViolation("context encoder dimension mismatch");
  if (inputs.cols() == 0) throw ContractViolation("empty prompt");
  ContextTrace t;
  t.inputs = inputs;
  t.context = inputs.rowwise().mean();
  const Vec shared = enc.V * t.context + enc.b;
  t.activation = ((enc.U * inputs).colwise() + shared).array().tanh().matrix();
  t.outputs = inputs + t.activation;
  return t;
}

void context_backward(const ContextEncoder& enc, const ContextTrace& trace, const Mat& d_outputs,
                      ContextEncoderGrad& grad) {
  const Mat d_pre = (d_outputs.array() * (1.0 - trace.activation.array().square())).matrix();
  grad.U.noalias() += d_pre * trace.inputs.transpose();
  const Vec d_shared = d_pre.rowwise().sum();
  grad.V.noalias() += d_shared * trace.context.transpose();
  grad.b += d_shared;
  (void)enc;
}

Mat encode_prompt(const ContextEncoder& enc, const TokenEmbeddingTable& table,
                  std::span<const std::string> tokens) {
  return context_forward(enc, embed_tokens(table, tokens)).outputs;
}

Vec predicate_repr(const Mat& contextual, std::size_t begin, std::size_t end) {
  if (end <= begin) throw ContractViolation("predicate span is empty");
  if (end > static_cast<std::size_t>(contextual.cols()))
    throw ContractViolation("predicate span out of bounds");
  return contextual.middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin))
      .rowwise()
      .mean();
}

Vec project(const Vec& raw, const Projection& proj) {
  if (raw.size() != proj.W.cols() || proj.W.rows() != proj.b.size())
    throw ContractViolation("projection dimension mismatch");
  return proj.W * raw + proj.b;
}

std::vector<std::string> predicate_tokens(std::string_view predicate) {
  return tokenize(predicate_text(predicate));
}

PredicateRepresentation static_repr(std::string_view predicate, const TokenEmbeddingTable& table,
                                    const Projection& proj) {
  const auto tokens = predicate_tokens(predicate);
  if (tokens.empty()) throw ContractViolation("predicate has no tokens");
  const Mat e = embed_tokens(table, tokens);
  PredicateRepresentation r;
  r.raw = e.rowwise().mean();
  r.projected = project(r.raw, proj);
  return r;
}

}  // namespace kfv
