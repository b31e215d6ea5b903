#include "kfv/caption_parser.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "kfv/common.hpp"

namespace kfv {

namespace {

constexpr std::string_view kTagNames[] = {"NOUN", "VERB", "ADP", "DET", "ADJ", "AUX", "OTHER"};

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

std::string_view chop(std::string_view s, std::size_t n) { return s.substr(0, s.size() - n); }

bool is_relativizer(std::string_view w) { return w == "that" || w == "which" || w == "who"; }

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

enum class ChunkKind { NounPhrase, Relation, Connector, Separator };

struct Chunk {
  ChunkKind kind;
  std::string head;       // NounPhrase
  std::string predicate;  // Relation; empty when the run is auxiliaries only
  bool finite = false;    // Relation starts with an auxiliary
};

bool in_np(Tag t) { return t == Tag::Det || t == Tag::Adj || t == Tag::Noun; }
bool in_rel(Tag t) { return t == Tag::Aux || t == Tag::Verb || t == Tag::Adp; }

std::vector<Chunk> chunk(std::span<const TaggedToken> tagged, const Lexicon& lexicon) {
  std::vector<Chunk> out;
  std::size_t i = 0;
  while (i < tagged.size()) {
    const Tag t = tagged[i].tag;
    std::size_t j = i + 1;
    if (in_np(t)) {
      while (j < tagged.size() && in_np(tagged[j].tag)) ++j;
      auto head = normalize_phrase(tagged.subspan(i, j - i), lexicon);
      if (head) {
        out.push_back({ChunkKind::NounPhrase, *head, {}, false});
      } else {
        out.push_back({ChunkKind::Separator, {}, {}, false});
      }
    } else if (in_rel(t)) {
      while (j < tagged.size() && in_rel(tagged[j].tag)) ++j;
      bool has_verb = false;
      for (std::size_t k = i; k < j; ++k) has_verb |= tagged[k].tag == Tag::Verb;
      std::string pred;
      for (std::size_t k = i; k < j; ++k) {
        // Prepositional relations drop the copula ("is on" -> "on").
        if (!has_verb && tagged[k].tag != Tag::Adp) continue;
        if (!pred.empty()) pred += '_';
        pred += tagged[k].surface;
      }
      out.push_back({ChunkKind::Relation, {}, pred, t == Tag::Aux});
    } else {
      out.push_back({is_relativizer(tagged[i].surface) ? ChunkKind::Connector : ChunkKind::Separator,
                     {}, {}, false});
    }
    i = j;
  }
  return out;
}

}  // namespace

std::string_view tag_name(Tag t) { return kTagNames[static_cast<int>(t)]; }

std::optional<Tag> parse_tag(std::string_view name) {
  for (int i = 0; i < 7; ++i)
    if (kTagNames[i] == name) return static_cast<Tag>(i);
  return std::nullopt;
}

Lexicon Lexicon::parse(std::string_view text) {
  std::unordered_map<std::string, Tag> entries;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("lexicon row needs word<TAB>TAG", lineno);
    auto tag = parse_tag(trim(std::string_view(line).substr(tab + 1)));
    if (!tag) throw ParseError("unknown tag in lexicon", lineno);
    auto word = trim(std::string_view(line).substr(0, tab));
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (word.empty()) throw ParseError("empty lexicon word", lineno);
    entries[word] = *tag;
  }
  return Lexicon(std::move(entries));
}

Lexicon Lexicon::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("lexicon file not found: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::optional<Tag> Lexicon::find(std::string_view word) const {
  auto it = entries_.find(std::string(word));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c) || std::ispunct(c)) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::vector<TaggedToken> tag_tokens(std::span<const std::string> tokens, const Lexicon& lexicon) {
  std::vector<TaggedToken> out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens) {
    Tag tag = Tag::Other;
    if (auto hit = lexicon.find(tok)) {
      tag = *hit;
    } else if (tok.size() >= 5 && ends_with(tok, "ing")) {
      tag = Tag::Verb;
    } else if (ends_with(tok, "es") && lexicon.is_noun(chop(tok, 2))) {
      tag = Tag::Noun;
    } else if (ends_with(tok, "s") && lexicon.is_noun(chop(tok, 1))) {
      tag = Tag::Noun;
    } else if (ends_with(tok, "es") && lexicon.is_verb(chop(tok, 2))) {
      tag = Tag::Verb;
    } else if (ends_with(tok, "s") && lexicon.is_verb(chop(tok, 1))) {
      tag = Tag::Verb;
    }
    out.push_back({tok, tag});
  }
  return out;
}

std::string singularize(std::string_view word, const Lexicon& lexicon) {
  if (ends_with(word, "es") && lexicon.is_noun(chop(word, 2))) return std::string(chop(word, 2));
  if (ends_with(word, "s") && lexicon.is_noun(chop(word, 1))) return std::string(chop(word, 1));
  if (lexicon.is_noun(word)) return std::string(word);
  if (word.size() > 3 && ends_with(word, "s") && !ends_with(word, "ss") && !ends_with(word, "us") &&
      !ends_with(word, "is"))
    return std::string(chop(word, 1));
  return std::string(word);
}

std::optional<std::string> normalize_phrase(std::span<const TaggedToken> phrase,
                                            const Lexicon& lexicon) {
  for (auto it = phrase.rbegin(); it != phrase.rend(); ++it)
    if (it->tag == Tag::Noun) return singularize(it->surface, lexicon);
  return std::nullopt;
}

std::vector<ExtractedTriplet> extract_triplets(std::span<const TaggedToken> tagged,
                                               const std::string& source,
                                               const Lexicon& lexicon) {
  const auto chunks = chunk(tagged, lexicon);
  auto is_np = [&](std::ptrdiff_t i) {
    return i >= 0 && i < static_cast<std::ptrdiff_t>(chunks.size()) &&
           chunks[i].kind == ChunkKind::NounPhrase;
  };

  // object chunk index -> (subject chunk index, match was non-finite)
  std::vector<std::pair<std::ptrdiff_t, bool>> object_of(chunks.size(), {-1, false});
  std::vector<ExtractedTriplet> out;
  std::set<std::tuple<std::string, std::string, std::string>> seen;

  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(chunks.size()); ++i) {
    const Chunk& rel = chunks[i];
    if (rel.kind != ChunkKind::Relation || rel.predicate.empty() || !is_np(i + 1)) continue;

    std::ptrdiff_t subj = -1;
    if (is_np(i - 1)) {
      subj = i - 1;
      if (rel.finite) {
        // Skip over reduced modifiers ("on the sofa", "holding an umbrella").
        while (object_of[subj].first >= 0 && object_of[subj].second) subj = object_of[subj].first;
      }
    } else if (i >= 2 && chunks[i - 1].kind == ChunkKind::Connector && is_np(i - 2)) {
      subj = i - 2;
    } else {
      continue;
    }

    object_of[i + 1] = {subj, !rel.finite};
    auto key = std::make_tuple(chunks[subj].head, rel.predicate, chunks[i + 1].head);
    if (!seen.insert(key).second) continue;
    out.push_back({chunks[subj].head, rel.predicate, chunks[i + 1].head, source});
  }
  return out;
}

std::vector<ExtractedTriplet> parse_caption(const Caption& caption, const Lexicon& lexicon) {
  const auto tokens = tokenize(caption.text);
  const auto tagged = tag_tokens(tokens, lexicon);
  return extract_triplets(tagged, caption.id, lexicon);
}

std::vector<ExtractedTriplet> parse_corpus(std::span<const Caption> captions,
                                           const Lexicon& lexicon) {
  std::vector<ExtractedTriplet> all;
  for (const auto& c : captions) {
    if (trim(c.text).empty()) continue;
    auto t = parse_caption(c, lexicon);
    all.insert(all.end(), t.begin(), t.end());
  }
  std::sort(all.begin(), all.end(), [](const ExtractedTriplet& a, const ExtractedTriplet& b) {
    return std::tie(a.source, a.subject, a.predicate, a.object) <
           std::tie(b.source, b.subject, b.predicate, b.object);
  });
  return all;
}

std::vector<Caption> read_captions_jsonl(std::string_view text) {
  std::vector<Caption> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("text") || !j["id"].is_string() ||
        !j["text"].is_string())
      throw ParseError("caption record needs string fields id and text", lineno);
    out.push_back({j["id"].get<std::string>(), j["text"].get<std::string>()});
  }
  return out;
}

std::string triplets_to_tsv(std::span<const ExtractedTriplet> triplets) {
  std::string out;
  for (const auto& t : triplets)
    out += t.subject + '\t' + t.predicate + '\t' + t.object + '\t' + t.source + '\n';
  return out;
}

std::vector<ExtractedTriplet> triplets_from_tsv(std::string_view text) {
  std::vector<ExtractedTriplet> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() != 4) throw ParseError("triplet row needs 4 fields", lineno);
    for (const auto& x : f)
      if (x.empty()) throw ParseError("empty triplet field", lineno);
    out.push_back({f[0], f[1], f[2], f[3]});
  }
  return out;
}

}  // namespace kfv
