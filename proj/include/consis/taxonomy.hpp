#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "consis/error.hpp"
#include "consis/serialize.hpp"

namespace consis {

// Rooted tree over class labels. Class leaves carry dense indices 0..K-1;
// pairwise leaf distances are precomputed at parse time.
struct TaxonomyTree {
  struct Node {
    std::string id;
    std::string label;
    int parent = -1;  // root points to itself
    bool is_class_leaf = false;
    int class_index = -1;
    int depth = 0;
  };

  std::vector<Node> nodes;
  int root = -1;
  int class_count = 0;
  std::vector<int> class_to_node;  // class index -> node position
  std::vector<int> distance_matrix;  // K*K edge counts

  int tree_distance(int i, int j) const {
    require(i >= 0 && i < class_count && j >= 0 && j < class_count,
            ErrorCode::unknown_class_index,
            "class index out of range [0," + std::to_string(class_count) + ")");
    return distance_matrix[static_cast<std::size_t>(i) * class_count + j];
  }

  const std::string& class_label(int i) const {
    require(i >= 0 && i < class_count, ErrorCode::unknown_class_index,
            "class index out of range");
    return nodes[class_to_node[i]].label;
  }

  // Lookup by leaf label; -1 when absent.
  int class_index_of(const std::string& label) const {
    for (int i = 0; i < class_count; ++i)
      if (nodes[class_to_node[i]].label == label) return i;
    return -1;
  }
};

// Symmetric K*K matrix a_ij = exp(-d(w_i,w_j)^2 / (2 sigma^2)).
struct CorrelationMatrix {
  int k = 0;
  double sigma = 0.0;
  std::vector<double> entries;

  double at(int i, int j) const {
    return entries[static_cast<std::size_t>(i) * k + j];
  }
};

namespace detail {

inline int resolve_depths_and_check_cycles(TaxonomyTree& tree) {
  // depth via memoized parent walks; a walk longer than the node count means
  // a parent cycle that never reaches the root
  const int n = static_cast<int>(tree.nodes.size());
  std::vector<int> depth(n, -1);
  depth[tree.root] = 0;
  for (int i = 0; i < n; ++i) {
    if (depth[i] >= 0) continue;
    std::vector<int> chain;
    int cur = i;
    while (depth[cur] < 0) {
      chain.push_back(cur);
      cur = tree.nodes[cur].parent;
      if (static_cast<int>(chain.size()) > n)
        raise(ErrorCode::malformed_taxonomy, "parent cycle detected");
    }
    int d = depth[cur];
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) depth[*it] = ++d;
  }
  for (int i = 0; i < n; ++i) tree.nodes[i].depth = depth[i];
  return n;
}

inline int leaf_distance(const TaxonomyTree& tree, int a, int b) {
  int x = a, y = b, steps = 0;
  while (tree.nodes[x].depth > tree.nodes[y].depth) {
    x = tree.nodes[x].parent;
    ++steps;
  }
  while (tree.nodes[y].depth > tree.nodes[x].depth) {
    y = tree.nodes[y].parent;
    ++steps;
  }
  while (x != y) {
    x = tree.nodes[x].parent;
    y = tree.nodes[y].parent;
    steps += 2;
  }
  return steps;
}

}  // namespace detail

// Accepts {"nodes": [{id, parent_id, label, is_class_leaf, class_index}...]}.
// Parsing is order independent; the root is the node whose parent_id is null,
// missing, or its own id.
inline TaxonomyTree parse_taxonomy(const nlohmann::json& doc) {
  require(doc.is_object() && doc.contains("nodes") && doc["nodes"].is_array(),
          ErrorCode::malformed_taxonomy, "document must contain a nodes array");

  TaxonomyTree tree;
  std::map<std::string, int> index_of;
  std::vector<std::string> parent_ids;

  for (const auto& rec : doc["nodes"]) {
    require(rec.is_object() && rec.contains("id") && rec["id"].is_string(),
            ErrorCode::malformed_taxonomy, "node record missing id");
    TaxonomyTree::Node node;
    node.id = rec["id"].get<std::string>();
    node.label = rec.value("label", node.id);
    node.is_class_leaf = rec.value("is_class_leaf", false);
    if (node.is_class_leaf) {
      require(rec.contains("class_index") && rec["class_index"].is_number_integer(),
              ErrorCode::malformed_taxonomy,
              "class leaf '" + node.id + "' missing class_index");
      node.class_index = rec["class_index"].get<int>();
      require(node.class_index >= 0, ErrorCode::malformed_taxonomy,
              "negative class_index on '" + node.id + "'");
    }
    std::string parent;
    if (rec.contains("parent_id") && !rec["parent_id"].is_null())
      parent = rec["parent_id"].get<std::string>();
    require(index_of.emplace(node.id, static_cast<int>(tree.nodes.size())).second,
            ErrorCode::malformed_taxonomy, "duplicate node id '" + node.id + "'");
    tree.nodes.push_back(std::move(node));
    parent_ids.push_back(parent);
  }
  require(!tree.nodes.empty(), ErrorCode::malformed_taxonomy, "empty taxonomy");

  std::vector<bool> has_children(tree.nodes.size(), false);
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const std::string& parent = parent_ids[i];
    if (parent.empty() || parent == tree.nodes[i].id) {
      require(tree.root < 0, ErrorCode::malformed_taxonomy,
              "multiple roots: '" + tree.nodes[tree.root < 0 ? i : tree.root].id +
                  "' and '" + tree.nodes[i].id + "'");
      tree.root = static_cast<int>(i);
      tree.nodes[i].parent = static_cast<int>(i);
    } else {
      auto it = index_of.find(parent);
      require(it != index_of.end(), ErrorCode::malformed_taxonomy,
              "unknown parent '" + parent + "' for node '" + tree.nodes[i].id + "'");
      tree.nodes[i].parent = it->second;
      has_children[it->second] = true;
    }
  }
  require(tree.root >= 0, ErrorCode::malformed_taxonomy, "no root node");

  detail::resolve_depths_and_check_cycles(tree);

  // class leaves: dense indices, actual leaves, distinct labels
  int max_index = -1;
  for (const auto& node : tree.nodes)
    if (node.is_class_leaf) max_index = std::max(max_index, node.class_index);
  tree.class_count = max_index + 1;
  require(tree.class_count > 0, ErrorCode::malformed_taxonomy, "no class leaves");
  tree.class_to_node.assign(tree.class_count, -1);
  std::map<std::string, int> label_seen;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const auto& node = tree.nodes[i];
    if (!node.is_class_leaf) continue;
    require(!has_children[i], ErrorCode::malformed_taxonomy,
            "class node '" + node.id + "' has children");
    require(tree.class_to_node[node.class_index] < 0, ErrorCode::malformed_taxonomy,
            "duplicate class_index " + std::to_string(node.class_index));
    require(label_seen.emplace(node.label, static_cast<int>(i)).second,
            ErrorCode::duplicate_class_label,
            "class label '" + node.label + "' appears twice");
    tree.class_to_node[node.class_index] = static_cast<int>(i);
  }
  for (int c = 0; c < tree.class_count; ++c)
    require(tree.class_to_node[c] >= 0, ErrorCode::malformed_taxonomy,
            "class_index " + std::to_string(c) + " missing");

  const int k = tree.class_count;
  tree.distance_matrix.assign(static_cast<std::size_t>(k) * k, 0);
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      const int d = detail::leaf_distance(tree, tree.class_to_node[i],
                                          tree.class_to_node[j]);
      tree.distance_matrix[static_cast<std::size_t>(i) * k + j] = d;
      tree.distance_matrix[static_cast<std::size_t>(j) * k + i] = d;
    }
  return tree;
}

inline TaxonomyTree load_taxonomy(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::malformed_taxonomy, std::string("parse ") + path + ": " + e.what());
  }
  return parse_taxonomy(doc);
}

inline CorrelationMatrix correlation_matrix(const TaxonomyTree& tree, double sigma) {
  require(std::isfinite(sigma) && sigma > 0.0, ErrorCode::non_positive_sigma,
          "sigma must be positive, got " + std::to_string(sigma));
  CorrelationMatrix m;
  m.k = tree.class_count;
  m.sigma = sigma;
  m.entries.resize(static_cast<std::size_t>(m.k) * m.k);
  const double denom = 2.0 * sigma * sigma;
  for (int i = 0; i < m.k; ++i)
    for (int j = 0; j < m.k; ++j) {
      const double d = static_cast<double>(tree.tree_distance(i, j));
      m.entries[static_cast<std::size_t>(i) * m.k + j] = std::exp(-(d * d) / denom);
    }
  return m;
}

}  // namespace consis
