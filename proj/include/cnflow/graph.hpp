#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cnflow/errors.hpp"

namespace cnflow {

// Directed acyclic causal graph over d endogenous variables.
// Convention: adjacency(i, j) = 1 iff x_j is a direct cause of x_i
// (rows index effects, columns index causes).
struct CausalGraph {
  Eigen::MatrixXi adjacency;
  // Nodes listed causes-first; a valid causal ordering.
  std::vector<int> order;
  // position[i] = rank of node i within `order`; adjacency(i,j)=1 implies
  // position[j] < position[i].
  std::vector<int> position;

  int d() const { return static_cast<int>(adjacency.rows()); }

  std::vector<int> parents(int i) const;
  std::vector<int> children(int i) const;
};

// Partially known causal structure: a set of directed edges known to be
// present plus a set of unordered pairs whose relationship is unknown.
// Indices are 0-based internally.
struct PartialGraph {
  int d = 0;
  std::vector<std::pair<int, int>> known_edges;    // (cause, effect)
  std::vector<std::pair<int, int>> unknown_pairs;  // unordered {a, b}
};

// Result of condensing a PartialGraph: nodes grouped into blocks (one per
// strongly connected component once unknown pairs are treated as bidirected),
// a DAG over blocks, and a node-level adjacency usable as a flow mask.
struct BlockGraph {
  // Each block sorted ascending; blocks listed in topological order.
  std::vector<std::vector<int>> blocks;
  // block_adjacency(a, b) = 1 iff block b contains a known cause of a node
  // in block a (same rows-are-effects convention as CausalGraph).
  Eigen::MatrixXi block_adjacency;
  // Node-level mask: complete ascending order within each block, complete
  // bipartite connections between blocks joined by a known edge.
  Eigen::MatrixXi lifted_adjacency;
  std::vector<int> block_of;

  int d() const { return static_cast<int>(lifted_adjacency.rows()); }
  int num_blocks() const { return static_cast<int>(blocks.size()); }
};

// Validates a binary adjacency matrix and computes a deterministic causal
// ordering (smallest node index first among available nodes).
// Throws ShapeError for a non-square or non-binary matrix, CyclicGraphError
// if the graph has a directed cycle (self-loops included).
CausalGraph validate_dag(const Eigen::MatrixXi& adjacency);

// Longest directed path length in edges; 0 for an edgeless graph.
int diameter(const CausalGraph& g);

// Support of (I - G)^-1 = I + G + G^2 + ... + G^(d-1): closure(i, j) = 1 iff
// x_j is x_i or an ancestor of x_i.
Eigen::MatrixXi transitive_closure(const CausalGraph& g);

// Nodes j != i with closure(i, j) = 1 (strict ancestors), and the dual.
std::vector<int> ancestors(const CausalGraph& g, int i);
std::vector<int> descendants(const CausalGraph& g, int i);

// True iff support(a) is contained in support(b) elementwise.
bool structurally_leq(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
bool structurally_leq(const Eigen::MatrixXi& a, const Eigen::MatrixXi& b);

// Condenses a partial graph into a BlockGraph. Unknown pairs are treated as
// bidirected edges when forming strongly connected components; each component
// becomes a block ordered ascending by node index. Throws CyclicBlockError if
// known edges force a cycle (i.e. a known edge ends up inside a component),
// ShapeError for out-of-range or overlapping known/unknown declarations.
BlockGraph condense_partial(const PartialGraph& partial);

// --- Edge-list text format ---------------------------------------------
// One relation per line: "x1 -> x3" for a known edge (cause -> effect) or
// "x2 ?? x3" for an unknown pair. Nodes are written x<k> with 1-based k;
// bare integers are also accepted when parsing. An optional "nodes <d>"
// line fixes the node count (otherwise the maximum index seen is used).
// '#' starts a comment. Throws FormatError on malformed input.
PartialGraph parse_edge_list(const std::string& text);
CausalGraph parse_graph(const std::string& text);
std::string format_graph(const CausalGraph& g);
std::string format_partial(const PartialGraph& p);

}  // namespace cnflow
