#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kfv/common.hpp"

namespace kfv {

// Reserved predicate name for the no-relation label. Rendered as
// "no relation" inside prompts.
inline constexpr std::string_view kNoRelation = "__no_relation__";

// Predicate as it should read in text: underscores become spaces.
std::string predicate_text(std::string_view predicate);

enum class TemplateKind { Cloze, T5Style, Triplet };

struct PromptTemplate {
  TemplateKind kind;
  // Slots <S>, <P>, <O>, each exactly once, delimited by spaces or punctuation.
  std::string pattern;

  static PromptTemplate builtin(TemplateKind kind);
};

TemplateKind parse_template_kind(std::string_view name);  // cloze | t5 | triplet
std::string_view template_kind_name(TemplateKind kind);

std::string fill_template(const PromptTemplate& tpl, std::string_view subject_class,
                          std::string_view object_class, std::string_view predicate);

// Tokenized prompt and the [begin, end) token range holding the predicate.
struct Prompt {
  std::vector<std::string> tokens;
  std::size_t predicate_begin = 0;
  std::size_t predicate_end = 0;
};

Prompt build_prompt(const PromptTemplate& tpl, std::string_view subject_class,
                    std::string_view object_class, std::string_view predicate);

// Static token vectors of dimension D_t with an out-of-vocabulary fallback.
class TokenEmbeddingTable {
 public:
  TokenEmbeddingTable() = default;
  TokenEmbeddingTable(int dim, Vec fallback);

  int dim() const { return dim_; }
  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  const Vec& lookup(const std::string& token) const;
  const Vec& fallback() const { return fallback_; }
  void set(const std::string& token, Vec v);
  // Insertion order.
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Header "D_t=<int>", then "token<TAB>v1,v2,...". A row for "<unk>" sets
  // the fallback vector; otherwise the fallback is zero.
  static TokenEmbeddingTable parse(std::string_view text);
  static TokenEmbeddingTable load(const std::string& path);
  std::string serialize() const;

  bool operator==(const TokenEmbeddingTable& o) const;

 private:
  int dim_ = 0;
  std::vector<std::string> tokens_;
  std::vector<Vec> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
  Vec fallback_;
};

// Stand-in for the pre-trained language model: one residual self-mixing
// layer over the prompt.
//   c   = mean_j e_j
//   x_i = e_i + tanh(U e_i + V c + b)
// With U = V = 0 and b = 0 the layer is the identity.
struct ContextEncoder {
  Mat U;
  Mat V;
  Vec b;

  static ContextEncoder identity(int dim);
  static ContextEncoder random(int dim, Rng& rng, double scale);
  int dim() const { return static_cast<int>(b.size()); }
};

struct ContextEncoderGrad {
  Mat U;
  Mat V;
  Vec b;

  static ContextEncoderGrad zeros(const ContextEncoder& enc);
};

// Intermediate values kept for backpropagation.
struct ContextTrace {
  Mat inputs;      // D_t x n, column per token
  Vec context;     // D_t
  Mat activation;  // tanh(...), D_t x n
  Mat outputs;     // D_t x n
};

Mat embed_tokens(const TokenEmbeddingTable& table, std::span<const std::string> tokens);
ContextTrace context_forward(const ContextEncoder& enc, const Mat& inputs);
// Accumulates into grad given dL/d outputs.
void context_backward(const ContextEncoder& enc, const ContextTrace& trace, const Mat& d_outputs,
                      ContextEncoderGrad& grad);

// Contextual vectors x_1..x_n, one column per prompt token.
Mat encode_prompt(const ContextEncoder& enc, const TokenEmbeddingTable& table,
                  std::span<const std::string> tokens);

// Mean over columns [begin, end).
Vec predicate_repr(const Mat& contextual, std::size_t begin, std::size_t end);

// p_k = W_p p^r_k + b_p with W_p of shape H x D_t.
struct Projection {
  Mat W;
  Vec b;
};

Vec project(const Vec& raw, const Projection& proj);

struct PredicateRepresentation {
  Vec raw;        // D_t
  Vec projected;  // H
};

// Static word-vector mode: mean of the predicate tokens' table vectors,
// then projected.
PredicateRepresentation static_repr(std::string_view predicate, const TokenEmbeddingTable& table,
                                    const Projection& proj);

// Token list used for the predicate in static mode.
std::vector<std::string> predicate_tokens(std::string_view predicate);

}  // namespace kfv
