#include "cnflow/graph.hpp"

#include <algorithm>
#include <sstream>

namespace cnflow {

std::vector<int> CausalGraph::parents(int i) const {
  std::vector<int> out;
  for (int j = 0; j < d(); ++j)
    if (adjacency(i, j) != 0) out.push_back(j);
  return out;
}

std::vector<int> CausalGraph::children(int i) const {
  std::vector<int> out;
  for (int j = 0; j < d(); ++j)
    if (adjacency(j, i) != 0) out.push_back(j);
  return out;
}

CausalGraph validate_dag(const Eigen::MatrixXi& adjacency) {
  if (adjacency.rows() != adjacency.cols())
    throw ShapeError("adjacency must be square, got " +
                     std::to_string(adjacency.rows()) + "x" +
                     std::to_string(adjacency.cols()));
  const int d = static_cast<int>(adjacency.rows());
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (adjacency(i, j) != 0 && adjacency(i, j) != 1)
        throw ShapeError("adjacency entries must be 0 or 1, got " +
                         std::to_string(adjacency(i, j)) + " at (" +
                         std::to_string(i) + "," + std::to_string(j) + ")");

  // Kahn's algorithm with a deterministic tie-break: among nodes whose
  // parents are all placed, the smallest index goes first.
  std::vector<int> remaining_parents(d, 0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) remaining_parents[i] += adjacency(i, j);

  CausalGraph g;
  g.adjacency = adjacency;
  g.position.assign(d, -1);
  std::vector<bool> placed(d, false);
  for (int step = 0; step < d; ++step) {
    int pick = -1;
    for (int i = 0; i < d; ++i) {
      if (!placed[i] && remaining_parents[i] == 0) {
        pick = i;
        break;
      }
    }
    if (pick < 0) {
      // Every unplaced node still has an unplaced parent: a directed cycle.
      std::string nodes;
      for (int i = 0; i < d; ++i)
        if (!placed[i]) nodes += " x" + std::to_string(i + 1);
      throw CyclicGraphError("graph has a directed cycle among:" + nodes);
    }
    placed[pick] = true;
    g.position[pick] = step;
    g.order.push_back(pick);
    for (int i = 0; i < d; ++i)
      if (adjacency(i, pick) != 0) --remaining_parents[i];
  }
  return g;
}

int diameter(const CausalGraph& g) {
  const int d = g.d();
  // Longest path ending at each node, filled in causal order.
  std::vector<int> longest(d, 0);
  int best = 0;
  for (int node : g.order) {
    int in = 0;
    for (int j = 0; j < d; ++j)
      if (g.adjacency(node, j) != 0) in = std::max(in, longest[j] + 1);
    longest[node] = in;
    best = std::max(best, in);
  }
  return best;
}

Eigen::MatrixXi transitive_closure(const CausalGraph& g) {
  const int d = g.d();
  Eigen::MatrixXi closure = Eigen::MatrixXi::Identity(d, d);
  // Accumulate reachability in causal order: ancestors of i are the parents
  // of i plus the ancestors of those parents.
  for (int node : g.order) {
    for (int j = 0; j < d; ++j) {
      if (g.adjacency(node, j) == 0) continue;
      for (int k = 0; k < d; ++k)
        if (closure(j, k) != 0) closure(node, k) = 1;
    }
  }
  return closure;
}

std::vector<int> ancestors(const CausalGraph& g, int i) {
  Eigen::MatrixXi closure = transitive_closure(g);
  std::vector<int> out;
  for (int j = 0; j < g.d(); ++j)
    if (j != i && closure(i, j) != 0) out.push_back(j);
  return out;
}

std::vector<int> descendants(const CausalGraph& g, int i) {
  Eigen::MatrixXi closure = transitive_closure(g);
  std::vector<int> out;
  for (int j = 0; j < g.d(); ++j)
    if (j != i && closure(j, i) != 0) out.push_back(j);
  return out;
}

bool structurally_leq(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("structurally_leq: shape mismatch");
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (a(i, j) != 0.0 && b(i, j) == 0.0) return false;
  return true;
}

bool structurally_leq(const Eigen::MatrixXi& a, const Eigen::MatrixXi& b) {
  return structurally_leq(a.cast<double>().eval(), b.cast<double>().eval());
}

namespace {

// Iterative Tarjan SCC over the directed graph formed by known edges plus
// both directions of every unknown pair.
std::vector<int> tarjan_components(int d,
                                   const std::vector<std::vector<int>>& adj,
                                   int* num_components) {
  std::vector<int> index(d, -1), lowlink(d, 0), component(d, -1);
  std::vector<bool> on_stack(d, false);
  std::vector<int> stack;
  int next_index = 0, next_component = 0;

  struct Frame {
    int node;
    size_t edge;
  };
  for (int root = 0; root < d; ++root) {
    if (index[root] != -1) continue;
    std::vector<Frame> call_stack{{root, 0}};
    index[root] = lowlink[root] = next_index++;
    stack.push_back(root);
    on_stack[root] = true;
    while (!call_stack.empty()) {
      Frame& f = call_stack.back();
      if (f.edge < adj[f.node].size()) {
        int w = adj[f.node][f.edge++];
        if (index[w] == -1) {
          index[w] = lowlink[w] = next_index++;
          stack.push_back(w);
          on_stack[w] = true;
          call_stack.push_back({w, 0});
        } else if (on_stack[w]) {
          lowlink[f.node] = std::min(lowlink[f.node], index[w]);
        }
      } else {
        if (lowlink[f.node] == index[f.node]) {
          while (true) {
            int w = stack.back();
            stack.pop_back();
            on_stack[w] = false;
            component[w] = next_component;
            if (w == f.node) break;
          }
          ++next_component;
        }
        int done = f.node;
        call_stack.pop_back();
        if (!call_stack.empty()) {
          int parent = call_stack.back().node;
          lowlink[parent] = std::min(lowlink[parent], lowlink[done]);
        }
      }
    }
  }
  *num_components = next_component;
  return component;
}

void check_pair_range(int d, int a, int b, const char* what) {
  if (a < 0 || a >= d || b < 0 || b >= d)
    throw ShapeError(std::string(what) + " (" + std::to_string(a) + "," +
                     std::to_string(b) + ") out of range for d=" +
                     std::to_string(d));
  if (a == b)
    throw ShapeError(std::string(what) + " may not relate a node to itself");
}

}  // namespace

BlockGraph condense_partial(const PartialGraph& partial) {
  const int d = partial.d;
  if (d <= 0) throw ShapeError("partial graph must have at least one node");

  std::vector<std::vector<int>> adj(d);
  std::vector<std::vector<bool>> is_unknown(d, std::vector<bool>(d, false));
  for (auto [a, b] : partial.unknown_pairs) {
    check_pair_range(d, a, b, "unknown pair");
    is_unknown[a][b] = is_unknown[b][a] = true;
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  for (auto [cause, effect] : partial.known_edges) {
    check_pair_range(d, cause, effect, "known edge");
    if (is_unknown[cause][effect])
      throw ShapeError("pair (" + std::to_string(cause) + "," +
                       std::to_string(effect) +
                       ") declared both known and unknown");
    adj[cause].push_back(effect);
  }

  int num_components = 0;
  std::vector<int> component = tarjan_components(d, adj, &num_components);

  // A known edge with both endpoints in one component means known edges
  // (possibly through unknown pairs) close a directed cycle.
  for (auto [cause, effect] : partial.known_edges)
    if (component[cause] == component[effect])
      throw CyclicBlockError("known edge x" + std::to_string(cause + 1) +
                             " -> x" + std::to_string(effect + 1) +
                             " lies inside a block; known edges force a "
                             "cycle among blocks");

  // Gather blocks, sort members ascending.
  std::vector<std::vector<int>> raw_blocks(num_components);
  for (int i = 0; i < d; ++i) raw_blocks[component[i]].push_back(i);
  for (auto& b : raw_blocks) std::sort(b.begin(), b.end());

  // Component-level edges from known edges.
  Eigen::MatrixXi comp_adj = Eigen::MatrixXi::Zero(num_components,
                                                   num_components);
  for (auto [cause, effect] : partial.known_edges)
    comp_adj(component[effect], component[cause]) = 1;

  // Topological order over components, tie-break by smallest member node.
  std::vector<int> remaining(num_components, 0);
  for (int a = 0; a < num_components; ++a)
    for (int b = 0; b < num_components; ++b) remaining[a] += comp_adj(a, b);
  std::vector<int> comp_order;
  std::vector<bool> placed(num_components, false);
  for (int step = 0; step < num_components; ++step) {
    int pick = -1;
    for (int c = 0; c < num_components; ++c) {
      if (placed[c] || remaining[c] != 0) continue;
      if (pick == -1 || raw_blocks[c][0] < raw_blocks[pick][0]) pick = c;
    }
    if (pick < 0)
      throw CyclicBlockError("block graph is cyclic");  // unreachable
    placed[pick] = true;
    comp_order.push_back(pick);
    for (int c = 0; c < num_components; ++c)
      if (comp_adj(c, pick) != 0) --remaining[c];
  }

  BlockGraph bg;
  bg.block_of.assign(d, -1);
  std::vector<int> new_index(num_components, -1);
  for (int k = 0; k < num_components; ++k) {
    new_index[comp_order[k]] = k;
    bg.blocks.push_back(raw_blocks[comp_order[k]]);
    for (int node : raw_blocks[comp_order[k]]) bg.block_of[node] = k;
  }
  bg.block_adjacency = Eigen::MatrixXi::Zero(num_components, num_components);
  for (int a = 0; a < num_components; ++a)
    for (int b = 0; b < num_components; ++b)
      if (comp_adj(a, b) != 0)
        bg.block_adjacency(new_index[a], new_index[b]) = 1;

  // Node-level mask: complete ascending chain within each block, complete
  // bipartite edges between connected blocks.
  bg.lifted_adjacency = Eigen::MatrixXi::Zero(d, d);
  for (const auto& block : bg.blocks)
    for (size_t s = 0; s < block.size(); ++s)
      for (size_t t = s + 1; t < block.size(); ++t)
        bg.lifted_adjacency(block[t], block[s]) = 1;
  for (int a = 0; a < num_components; ++a)
    for (int b = 0; b < num_components; ++b) {
      if (bg.block_adjacency(a, b) == 0) continue;
      for (int effect : bg.blocks[a])
        for (int cause : bg.blocks[b]) bg.lifted_adjacency(effect, cause) = 1;
    }

  validate_dag(bg.lifted_adjacency);  // sanity: lifted mask is acyclic
  return bg;
}

// --- Edge-list text format ----------------------------------------------

namespace {

int parse_node_token(const std::string& tok, int line_no) {
  std::string digits = tok;
  if (!digits.empty() && (digits[0] == 'x' || digits[0] == 'X'))
    digits = digits.substr(1);
  if (digits.empty() ||
      digits.find_first_not_of("0123456789") != std::string::npos)
    throw FormatError("line " + std::to_string(line_no) +
                      ": bad node token '" + tok + "'");
  int one_based = std::stoi(digits);
  if (one_based < 1)
    throw FormatError("line " + std::to_string(line_no) +
                      ": node indices are 1-based, got '" + tok + "'");
  return one_based - 1;
}

}  // namespace

PartialGraph parse_edge_list(const std::string& text) {
  PartialGraph p;
  int max_node = -1;
  int declared_d = -1;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string a, op, b, extra;
    if (!(ls >> a)) continue;  // blank line
    if (a == "nodes") {
      if (!(ls >> op) ||
          op.find_first_not_of("0123456789") != std::string::npos)
        throw FormatError("line " + std::to_string(line_no) +
                          ": expected 'nodes <count>'");
      declared_d = std::stoi(op);
      continue;
    }
    if (!(ls >> op >> b) || (ls >> extra))
      throw FormatError("line " + std::to_string(line_no) +
                        ": expected '<node> -> <node>' or '<node> ?? <node>'");
    int na = parse_node_token(a, line_no);
    int nb = parse_node_token(b, line_no);
    if (op == "->") {
      p.known_edges.emplace_back(na, nb);
    } else if (op == "??") {
      p.unknown_pairs.emplace_back(na, nb);
    } else {
      throw FormatError("line " + std::to_string(line_no) +
                        ": unknown relation '" + op + "'");
    }
    max_node = std::max({max_node, na, nb});
  }
  p.d = declared_d > 0 ? declared_d : max_node + 1;
  if (p.d <= 0) throw FormatError("edge list declares no nodes");
  if (max_node >= p.d)
    throw FormatError("node x" + std::to_string(max_node + 1) +
                      " exceeds declared node count " + std::to_string(p.d));
  return p;
}

CausalGraph parse_graph(const std::string& text) {
  PartialGraph p = parse_edge_list(text);
  if (!p.unknown_pairs.empty())
    throw FormatError("unexpected '?\?' line in a fully specified graph");
  Eigen::MatrixXi adjacency = Eigen::MatrixXi::Zero(p.d, p.d);
  for (auto [cause, effect] : p.known_edges) {
    check_pair_range(p.d, cause, effect, "edge");
    adjacency(effect, cause) = 1;
  }
  return validate_dag(adjacency);
}

std::string format_graph(const CausalGraph& g) {
  std::ostringstream out;
  out << "nodes " << g.d() << "\n";
  for (int i = 0; i < g.d(); ++i)
    for (int j = 0; j < g.d(); ++j)
      if (g.adjacency(i, j) != 0)
        out << "x" << (j + 1) << " -> x" << (i + 1) << "\n";
  return out.str();
}

std::string format_partial(const PartialGraph& p) {
  std::ostringstream out;
  out << "nodes " << p.d << "\n";
  for (auto [cause, effect] : p.known_edges)
    out << "x" << (cause + 1) << " -> x" << (effect + 1) << "\n";
  for (auto [a, b] : p.unknown_pairs)
    out << "x" << (a + 1) << " ?? x" << (b + 1) << "\n";
  return out.str();
}

}  // namespace cnflow
