#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kfv {

struct Caption {
  std::string id;
  std::string text;
};

enum class Tag { Noun, Verb, Adp, Det, Adj, Aux, Other };

std::string_view tag_name(Tag t);
std::optional<Tag> parse_tag(std::string_view name);

struct TaggedToken {
  std::string surface;
  Tag tag;
  bool operator==(const TaggedToken&) const = default;
};

struct ExtractedTriplet {
  std::string subject;
  std::string predicate;  // tokens joined by '_'
  std::string object;
  std::string source;     // caption id

  auto operator<=>(const ExtractedTriplet&) const = default;
};

// Word -> tag map. Immutable once loaded; safe to share across threads.
class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(std::unordered_map<std::string, Tag> entries)
      : entries_(std::move(entries)) {}

  // Plain text, one "word<TAB>TAG" per line; '#' starts a comment line.
  static Lexicon load(const std::string& path);
  static Lexicon parse(std::string_view text);

  std::optional<Tag> find(std::string_view word) const;
  bool is_noun(std::string_view word) const { return find(word) == Tag::Noun; }
  bool is_verb(std::string_view word) const { return find(word) == Tag::Verb; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::unordered_map<std::string, Tag> entries_;
};

// Lowercase, split on whitespace and punctuation, drop punctuation.
std::vector<std::string> tokenize(std::string_view text);

// Lexicon lookup with suffix fallback: "-ing" -> VERB, plural of a known noun
// -> NOUN, third person "-s" of a known verb -> VERB, else OTHER.
std::vector<TaggedToken> tag_tokens(std::span<const std::string> tokens,
                                    const Lexicon& lexicon);

// Head noun of a phrase (last NOUN), plural-stripped. nullopt when the span
// holds no NOUN.
std::optional<std::string> normalize_phrase(std::span<const TaggedToken> phrase,
                                            const Lexicon& lexicon);

// Singular form of a noun surface string.
std::string singularize(std::string_view word, const Lexicon& lexicon);

// Rule-based triplet extraction:
//  (a) NP REL NP where REL contains a verb; auxiliaries and trailing
//      prepositions are kept in the predicate ("is_eating", "sitting_on").
//  (b) NP REL NP where REL is prepositional only; auxiliaries are dropped.
//  (c) NP <that|which|who> REL NP attaches the relative clause to that NP.
// A finite REL (starting with an auxiliary) whose preceding NP is the object
// of an earlier non-finite match takes that match's subject instead, so
// "dog on the sofa is eating an apple" gives dog-is_eating-apple.
// Results are in left-to-right match order, deduplicated.
std::vector<ExtractedTriplet> extract_triplets(std::span<const TaggedToken> tagged,
                                               const std::string& source,
                                               const Lexicon& lexicon);

// tokenize -> tag_tokens -> extract_triplets.
std::vector<ExtractedTriplet> parse_caption(const Caption& caption, const Lexicon& lexicon);

// Whole corpus, output sorted by (caption id, triplet).
std::vector<ExtractedTriplet> parse_corpus(std::span<const Caption> captions,
                                           const Lexicon& lexicon);

// Line-delimited {"id": ..., "text": ...} records.
std::vector<Caption> read_captions_jsonl(std::string_view text);
std::string triplets_to_tsv(std::span<const ExtractedTriplet> triplets);
std::vector<ExtractedTriplet> triplets_from_tsv(std::string_view text);

}  // namespace kfv
