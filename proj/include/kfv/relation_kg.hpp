#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "kfv/caption_parser.hpp"

namespace kfv {

struct KGEdge {
  std::string subject;
  std::string relation;
  std::string object;
  std::uint64_t count = 1;

  bool operator==(const KGEdge&) const = default;
};

enum class NodeMode { ZeroHop, OneHop, All };

struct FilterSpec {
  NodeMode node_mode = NodeMode::All;
  // 0 keeps every relation; k > 0 keeps the k most frequent.
  std::size_t top_k_relations = 0;
  std::set<std::string> anchor_classes;

  void validate() const;
};

struct GraphStats {
  std::size_t nodes = 0;
  std::size_t relations = 0;
  std::size_t edges = 0;
  std::uint64_t total_count = 0;
  bool operator==(const GraphStats&) const = default;
};

// G = (V, E, R). Immutable value type; every filter returns a new graph.
// The relation set is always derived from the edges. The node set holds every
// edge endpoint and may also hold isolated nodes (a 0-hop filter can leave
// anchors without edges).
class VisualRelationKG {
 public:
  using Key = std::tuple<std::string, std::string, std::string>;  // (s, r, o)

  VisualRelationKG() = default;

  static VisualRelationKG from_triplets(std::span<const ExtractedTriplet> triplets);
  static VisualRelationKG from_edges(std::span<const KGEdge> edges);
  // Edges plus extra (possibly isolated) nodes.
  static VisualRelationKG from_parts(std::span<const KGEdge> edges,
                                     const std::set<std::string>& nodes);

  // Counts add.
  static VisualRelationKG merge(const VisualRelationKG& a, const VisualRelationKG& b);

  const std::set<std::string>& nodes() const { return nodes_; }
  const std::set<std::string>& relations() const { return relations_; }
  // Sorted by (subject, relation, object).
  std::vector<KGEdge> edges() const;
  std::size_t edge_count() const { return edges_.size(); }
  bool empty() const { return edges_.empty(); }
  std::uint64_t count(const std::string& s, const std::string& r, const std::string& o) const;

  // Total edge count per relation.
  std::map<std::string, std::uint64_t> relation_totals() const;

  bool operator==(const VisualRelationKG& o) const {
    return edges_ == o.edges_ && nodes_ == o.nodes_;
  }

 private:
  void add(const std::string& s, const std::string& r, const std::string& o, std::uint64_t n);
  void rederive();

  std::map<Key, std::uint64_t> edges_;
  std::set<std::string> nodes_;
  std::set<std::string> relations_;
};

VisualRelationKG build_graph(std::span<const ExtractedTriplet> triplets);
VisualRelationKG filter_nodes(const VisualRelationKG& graph, const FilterSpec& spec);
VisualRelationKG filter_relations(const VisualRelationKG& graph, const FilterSpec& spec);
// Node filter, then relation filter.
VisualRelationKG apply_filter(const VisualRelationKG& graph, const FilterSpec& spec);
GraphStats graph_stats(const VisualRelationKG& graph);

// "subject<TAB>relation<TAB>object<TAB>count" rows, sorted. Isolated nodes
// follow as "#node<TAB>name" lines.
std::string serialize(const VisualRelationKG& graph);
VisualRelationKG deserialize(std::string_view tsv);

NodeMode parse_node_mode(std::string_view s);

}  // namespace kfv
