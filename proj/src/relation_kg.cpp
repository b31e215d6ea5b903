#include "kfv/relation_kg.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "kfv/common.hpp"

namespace kfv {

void FilterSpec::validate() const {
  if (node_mode != NodeMode::All && anchor_classes.empty())
    throw ConfigError("0-hop and 1-hop node filters need a non-empty anchor class set");
}

void VisualRelationKG::add(const std::string& s, const std::string& r, const std::string& o,
                           std::uint64_t n) {
  if (s.empty() || r.empty() || o.empty()) throw ContractViolation("empty edge field");
  if (n == 0) throw ContractViolation("edge count must be positive");
  edges_[{s, r, o}] += n;
}

void VisualRelationKG::rederive() {
  nodes_.clear();
  relations_.clear();
  for (const auto& [key, n] : edges_) {
    nodes_.insert(std::get<0>(key));
    relations_.insert(std::get<1>(key));
    nodes_.insert(std::get<2>(key));
  }
}

VisualRelationKG VisualRelationKG::from_triplets(std::span<const ExtractedTriplet> triplets) {
  VisualRelationKG g;
  for (const auto& t : triplets) g.add(t.subject, t.predicate, t.object, 1);
  g.rederive();
  return g;
}

VisualRelationKG VisualRelationKG::from_edges(std::span<const KGEdge> edges) {
  VisualRelationKG g;
  for (const auto& e : edges) g.add(e.subject, e.relation, e.object, e.count);
  g.rederive();
  return g;
}

VisualRelationKG VisualRelationKG::from_parts(std::span<const KGEdge> edges,
                                              const std::set<std::string>& nodes) {
  VisualRelationKG g = from_edges(edges);
  for (const auto& n : nodes) {
    if (n.empty()) throw ContractViolation("empty node name");
    g.nodes_.insert(n);
  }
  return g;
}

VisualRelationKG VisualRelationKG::merge(const VisualRelationKG& a, const VisualRelationKG& b) {
  VisualRelationKG g = a;
  for (const auto& [key, n] : b.edges_) g.edges_[key] += n;
  g.rederive();
  g.nodes_.insert(a.nodes_.begin(), a.nodes_.end());
  g.nodes_.insert(b.nodes_.begin(), b.nodes_.end());
  return g;
}

std::vector<KGEdge> VisualRelationKG::edges() const {
  std::vector<KGEdge> out;
  out.reserve(edges_.size());
  for (const auto& [key, n] : edges_)
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), n});
  return out;
}

std::uint64_t VisualRelationKG::count(const std::string& s, const std::string& r,
                                      const std::string& o) const {
  auto it = edges_.find({s, r, o});
  return it == edges_.end() ? 0 : it->second;
}

std::map<std::string, std::uint64_t> VisualRelationKG::relation_totals() const {
  std::map<std::string, std::uint64_t> totals;
  for (const auto& [key, n] : edges_) totals[std::get<1>(key)] += n;
  return totals;
}

VisualRelationKG build_graph(std::span<const ExtractedTriplet> triplets) {
  return VisualRelationKG::from_triplets(triplets);
}

VisualRelationKG filter_nodes(const VisualRelationKG& graph, const FilterSpec& spec) {
  spec.validate();
  if (spec.node_mode == NodeMode::All) return graph;

  std::set<std::string> keep;
  for (const auto& n : graph.nodes())
    if (spec.anchor_classes.count(n)) keep.insert(n);
  const auto edges = graph.edges();
  if (spec.node_mode == NodeMode::OneHop) {
    const std::set<std::string> zero_hop = keep;
    for (const auto& e : edges) {
      if (zero_hop.count(e.subject)) keep.insert(e.object);
      if (zero_hop.count(e.object)) keep.insert(e.subject);
    }
  }
  std::vector<KGEdge> kept;
  for (const auto& e : edges)
    if (keep.count(e.subject) && keep.count(e.object)) kept.push_back(e);
  return VisualRelationKG::from_parts(kept, keep);
}

VisualRelationKG filter_relations(const VisualRelationKG& graph, const FilterSpec& spec) {
  const std::size_t k = spec.top_k_relations;
  if (k == 0 || k >= graph.relations().size()) return graph;

  const auto totals = graph.relation_totals();
  std::vector<std::pair<std::string, std::uint64_t>> ranked(totals.begin(), totals.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::set<std::string> keep;
  for (std::size_t i = 0; i < k; ++i) keep.insert(ranked[i].first);

  std::vector<KGEdge> kept;
  for (const auto& e : graph.edges())
    if (keep.count(e.relation)) kept.push_back(e);
  return VisualRelationKG::from_edges(kept);
}

VisualRelationKG apply_filter(const VisualRelationKG& graph, const FilterSpec& spec) {
  return filter_relations(filter_nodes(graph, spec), spec);
}

GraphStats graph_stats(const VisualRelationKG& graph) {
  GraphStats s;
  s.nodes = graph.nodes().size();
  s.relations = graph.relations().size();
  s.edges = graph.edge_count();
  for (const auto& e : graph.edges()) s.total_count += e.count;
  return s;
}

std::string serialize(const VisualRelationKG& graph) {
  std::string out;
  for (const auto& e : graph.edges())
    out += e.subject + '\t' + e.relation + '\t' + e.object + '\t' + std::to_string(e.count) + '\n';
  const auto with_edges = VisualRelationKG::from_edges(graph.edges()).nodes();
  for (const auto& n : graph.nodes())
    if (!with_edges.count(n)) out += "#node\t" + n + '\n';
  return out;
}

VisualRelationKG deserialize(std::string_view tsv) {
  std::vector<KGEdge> edges;
  std::set<VisualRelationKG::Key> keys;
  std::set<std::string> isolated;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < tsv.size()) {
    auto nl = tsv.find('\n', pos);
    std::string_view line = tsv.substr(pos, nl == std::string_view::npos ? std::string_view::npos
                                                                         : nl - pos);
    pos = nl == std::string_view::npos ? tsv.size() : nl + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.starts_with("#node\t")) {
      auto name = line.substr(6);
      if (name.empty()) throw ParseError("empty isolated node name", lineno);
      isolated.insert(std::string(name));
      continue;
    }

    std::vector<std::string_view> f;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos
                                                                   : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (f.size() != 4) throw ParseError("expected 4 tab-separated fields", lineno);
    if (f[0].empty() || f[1].empty() || f[2].empty()) throw ParseError("empty field", lineno);
    std::uint64_t count = 0;
    auto [ptr, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), count);
    if (ec != std::errc() || ptr != f[3].data() + f[3].size() || count == 0)
      throw ParseError("count must be a positive integer", lineno);
    VisualRelationKG::Key key{std::string(f[0]), std::string(f[1]), std::string(f[2])};
    if (!keys.insert(key).second) throw ParseError("duplicate edge", lineno);
    edges.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2]), count});
  }
  return VisualRelationKG::from_parts(edges, isolated);
}

NodeMode parse_node_mode(std::string_view s) {
  if (s == "0hop" || s == "zero_hop") return NodeMode::ZeroHop;
  if (s == "1hop" || s == "one_hop") return NodeMode::OneHop;
  if (s == "all") return NodeMode::All;
  throw ConfigError("unknown node mode '" + std::string(s) + "' (expected 0hop, 1hop, all)");
}

}  // namespace kfv
