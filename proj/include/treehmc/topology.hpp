#ifndef TREEHMC_TOPOLOGY_HPP
#define TREEHMC_TOPOLOGY_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "treehmc/errors.hpp"

namespace treehmc {

using NodeId = int;
inline constexpr NodeId kNoNode = -1;

struct NodeRecord {
  NodeId id = kNoNode;
  NodeId parent = kNoNode;
  NodeId left = kNoNode;
  NodeId right = kNoNode;
  int depth = 0;  // root has depth 0

  bool is_leaf() const { return left == kNoNode; }
};

// Root-to-parent chain of a node plus the branch taken at each ancestor
// (1 = right, 0 = left).
struct PathInfo {
  std::vector<NodeId> ancestors;
  std::vector<uint8_t> directions;
};

// Immutable binary decision tree shape. Structural edits return a new value;
// surviving nodes keep their ids so parameter maps keyed by node id carry
// over without remapping.
class TreeTopology {
 public:
  static TreeTopology root_only();

  NodeId root() const { return root_; }
  bool contains(NodeId id) const { return nodes_.count(id) != 0; }
  const NodeRecord& node(NodeId id) const;

  int node_count() const { return static_cast<int>(nodes_.size()); }
  int internal_count() const { return (node_count() - 1) / 2; }
  int leaf_count() const { return (node_count() + 1) / 2; }

  // Ascending-id listings; iteration order is the canonical parameter order.
  std::vector<NodeId> internal_ids() const;
  std::vector<NodeId> leaf_ids() const;
  // Internal nodes whose two children are both leaves (prune candidates).
  std::vector<NodeId> prunable_ids() const;
  int prunable_count() const;

  PathInfo path_info(NodeId id) const;

  // Converts `leaf` to an internal node with two fresh leaf children.
  // Child ids are next_id() and next_id()+1 (left, right).
  TreeTopology grow(NodeId leaf) const;
  // Removes the two leaf children of `internal`, which becomes a leaf.
  TreeTopology prune(NodeId internal) const;

  NodeId next_id() const { return next_id_; }

  // Shape equality ignoring node ids.
  bool isomorphic_to(const TreeTopology& other) const;

  // Canonical shape string, e.g. "." for a leaf, "(.|.)" for one split.
  std::string shape_string() const;

  // Walks every invariant (single root, two-children rule, depth bookkeeping,
  // acyclicity); throws StructuralEditError on violation. Used by tests and
  // by deserialization.
  void validate() const;

  bool operator==(const TreeTopology& other) const;

 private:
  std::map<NodeId, NodeRecord> nodes_;
  NodeId root_ = 0;
  NodeId next_id_ = 1;

  friend class TopologyBuilder;
};

// Assembles arbitrary valid topologies (deserialization, test fixtures).
class TopologyBuilder {
 public:
  // Adds a root leaf and returns its id.
  NodeId add_root();
  // Splits an existing leaf, returning (left, right) child ids.
  std::pair<NodeId, NodeId> split(NodeId leaf);
  // Splits with explicit child ids (for round-tripping serialized trees).
  std::pair<NodeId, NodeId> split_with_ids(NodeId leaf, NodeId left, NodeId right);
  TreeTopology build() const;

 private:
  TreeTopology topo_;
  bool has_root_ = false;
};

}  // namespace treehmc

#endif  // TREEHMC_TOPOLOGY_HPP
