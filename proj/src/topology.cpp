#include "treehmc/topology.hpp"

#include <algorithm>
#include <functional>
#include <string>

namespace treehmc {

TreeTopology TreeTopology::root_only() {
  TreeTopology t;
  NodeRecord root;
  root.id = 0;
  root.depth = 0;
  t.nodes_[0] = root;
  t.root_ = 0;
  t.next_id_ = 1;
  return t;
}

const NodeRecord& TreeTopology::node(NodeId id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) {
    throw StructuralEditError("unknown node id " + std::to_string(id));
  }
  return it->second;
}

std::vector<NodeId> TreeTopology::internal_ids() const {
  std::vector<NodeId> out;
  for (const auto& [id, rec] : nodes_) {
    if (!rec.is_leaf()) out.push_back(id);
  }
  return out;
}

std::vector<NodeId> TreeTopology::leaf_ids() const {
  std::vector<NodeId> out;
  for (const auto& [id, rec] : nodes_) {
    if (rec.is_leaf()) out.push_back(id);
  }
  return out;
}

std::vector<NodeId> TreeTopology::prunable_ids() const {
  std::vector<NodeId> out;
  for (const auto& [id, rec] : nodes_) {
    if (rec.is_leaf()) continue;
    if (nodes_.at(rec.left).is_leaf() && nodes_.at(rec.right).is_leaf()) {
      out.push_back(id);
    }
  }
  return out;
}

int TreeTopology::prunable_count() const {
  return static_cast<int>(prunable_ids().size());
}

PathInfo TreeTopology::path_info(NodeId id) const {
  const NodeRecord* rec = &node(id);
  PathInfo info;
  while (rec->parent != kNoNode) {
    const NodeRecord& par = nodes_.at(rec->parent);
    info.ancestors.push_back(par.id);
    info.directions.push_back(par.right == rec->id ? 1 : 0);
    rec = &par;
  }
  std::reverse(info.ancestors.begin(), info.ancestors.end());
  std::reverse(info.directions.begin(), info.directions.end());
  return info;
}

TreeTopology TreeTopology::grow(NodeId leaf) const {
  const NodeRecord& rec = node(leaf);
  if (!rec.is_leaf()) {
    throw StructuralEditError("grow target " + std::to_string(leaf) +
                              " is not a leaf");
  }
  TreeTopology out = *this;
  const NodeId left = out.next_id_;
  const NodeId right = out.next_id_ + 1;
  out.next_id_ += 2;

  NodeRecord& parent = out.nodes_[leaf];
  parent.left = left;
  parent.right = right;

  NodeRecord child;
  child.parent = leaf;
  child.depth = parent.depth + 1;
  child.id = left;
  out.nodes_[left] = child;
  child.id = right;
  out.nodes_[right] = child;
  return out;
}

TreeTopology TreeTopology::prune(NodeId internal) const {
  const NodeRecord& rec = node(internal);
  if (rec.is_leaf()) {
    throw StructuralEditError("prune target " + std::to_string(internal) +
                              " is not internal");
  }
  if (!nodes_.at(rec.left).is_leaf() || !nodes_.at(rec.right).is_leaf()) {
    throw StructuralEditError("prune target " + std::to_string(internal) +
                              " has an internal child");
  }
  TreeTopology out = *this;
  out.nodes_.erase(rec.left);
  out.nodes_.erase(rec.right);
  NodeRecord& now_leaf = out.nodes_[internal];
  now_leaf.left = kNoNode;
  now_leaf.right = kNoNode;
  return out;
}

namespace {

void shape_string_rec(const TreeTopology& t, NodeId id, std::string& out) {
  const NodeRecord& rec = t.node(id);
  if (rec.is_leaf()) {
    out.push_back('.');
    return;
  }
  out.push_back('(');
  shape_string_rec(t, rec.left, out);
  out.push_back('|');
  shape_string_rec(t, rec.right, out);
  out.push_back(')');
}

}  // namespace

std::string TreeTopology::shape_string() const {
  std::string out;
  shape_string_rec(*this, root_, out);
  return out;
}

bool TreeTopology::isomorphic_to(const TreeTopology& other) const {
  return shape_string() == other.shape_string();
}

bool TreeTopology::operator==(const TreeTopology& other) const {
  if (root_ != other.root_ || nodes_.size() != other.nodes_.size()) {
    return false;
  }
  for (const auto& [id, rec] : nodes_) {
    auto it = other.nodes_.find(id);
    if (it == other.nodes_.end()) return false;
    const NodeRecord& o = it->second;
    if (rec.parent != o.parent || rec.left != o.left || rec.right != o.right ||
        rec.depth != o.depth) {
      return false;
    }
  }
  return true;
}

void TreeTopology::validate() const {
  if (nodes_.empty()) throw StructuralEditError("empty topology");
  const auto& root = node(root_);
  if (root.parent != kNoNode) throw StructuralEditError("root has a parent");
  if (root.depth != 0) throw StructuralEditError("root depth is not 0");

  size_t visited = 0;
  std::function<void(NodeId)> walk = [&](NodeId id) {
    const NodeRecord& rec = node(id);
    ++visited;
    if (visited > nodes_.size()) {
      throw StructuralEditError("cycle detected");
    }
    const bool has_left = rec.left != kNoNode;
    const bool has_right = rec.right != kNoNode;
    if (has_left != has_right) {
      throw StructuralEditError("node " + std::to_string(id) +
                                " has exactly one child");
    }
    if (has_left) {
      for (NodeId c : {rec.left, rec.right}) {
        const NodeRecord& child = node(c);
        if (child.parent != id) {
          throw StructuralEditError("bad parent link at " + std::to_string(c));
        }
        if (child.depth != rec.depth + 1) {
          throw StructuralEditError("bad depth at " + std::to_string(c));
        }
        walk(c);
      }
    }
  };
  walk(root_);
  if (visited != nodes_.size()) {
    throw StructuralEditError("unreachable nodes present");
  }
}

NodeId TopologyBuilder::add_root() {
  topo_ = TreeTopology::root_only();
  has_root_ = true;
  return topo_.root();
}

std::pair<NodeId, NodeId> TopologyBuilder::split(NodeId leaf) {
  if (!has_root_) throw StructuralEditError("builder has no root");
  const NodeId left = topo_.next_id();
  topo_ = topo_.grow(leaf);
  return {left, left + 1};
}

std::pair<NodeId, NodeId> TopologyBuilder::split_with_ids(NodeId leaf,
                                                          NodeId left,
                                                          NodeId right) {
  if (!has_root_) throw StructuralEditError("builder has no root");
  if (left == right || topo_.contains(left) || topo_.contains(right)) {
    throw StructuralEditError("child ids collide with existing nodes");
  }
  const NodeRecord& rec = topo_.node(leaf);
  if (!rec.is_leaf()) throw StructuralEditError("split target is not a leaf");

  NodeRecord& parent = topo_.nodes_[leaf];
  parent.left = left;
  parent.right = right;
  NodeRecord child;
  child.parent = leaf;
  child.depth = parent.depth + 1;
  child.id = left;
  topo_.nodes_[left] = child;
  child.id = right;
  topo_.nodes_[right] = child;
  topo_.next_id_ = std::max(topo_.next_id_, std::max(left, right) + 1);
  return {left, right};
}

TreeTopology TopologyBuilder::build() const {
  if (!has_root_) throw StructuralEditError("builder has no root");
  topo_.validate();
  return topo_;
}

}  // namespace treehmc
