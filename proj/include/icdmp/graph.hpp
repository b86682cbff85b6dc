#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "icdmp/rng.hpp"

namespace icdmp {

// Immutable undirected topology with a dense index for directed messages.
// Undirected edge e = (u, v) with u < v owns directed ids 2e (u->v) and
// 2e+1 (v->u), so message id m maps back to edge m/2.
class Graph {
 public:
  struct Arc {
    int node;     // neighbor id
    int edge;     // undirected edge id
    int in_msg;   // directed id of (neighbor -> center)
    int out_msg;  // directed id of (center -> neighbor)
  };

  Graph() = default;

  static Graph from_edges(std::vector<std::pair<int, int>> pairs) {
    Graph g;
    int max_id = -1;
    for (auto& [a, b] : pairs) {
      if (a < 0 || b < 0)
        throw std::invalid_argument("graph: negative node id in edge (" + std::to_string(a) +
                                    ", " + std::to_string(b) + ")");
      if (a == b)
        throw std::invalid_argument("graph: self-loop (" + std::to_string(a) + ", " +
                                    std::to_string(b) + ")");
      if (a > b) std::swap(a, b);
      max_id = std::max(max_id, b);
    }
    std::sort(pairs.begin(), pairs.end());
    for (std::size_t k = 1; k < pairs.size(); ++k)
      if (pairs[k] == pairs[k - 1])
        throw std::invalid_argument("graph: duplicate edge (" + std::to_string(pairs[k].first) +
                                    ", " + std::to_string(pairs[k].second) + ")");
    g.num_nodes_ = max_id + 1;
    g.edges_ = std::move(pairs);
    g.build_adjacency();
    return g;
  }

  int num_nodes() const { return num_nodes_; }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  int num_messages() const { return 2 * num_edges(); }
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  const std::pair<int, int>& edge(int e) const { return edges_[static_cast<std::size_t>(e)]; }

  int degree(int i) const { return offset_[i + 1] - offset_[i]; }
  int max_degree() const {
    int d = 0;
    for (int i = 0; i < num_nodes_; ++i) d = std::max(d, degree(i));
    return d;
  }

  std::span<const Arc> neighbors(int i) const {
    return {arcs_.data() + offset_[i], static_cast<std::size_t>(offset_[i + 1] - offset_[i])};
  }

  int msg_source(int m) const { return (m & 1) ? edges_[m >> 1].second : edges_[m >> 1].first; }
  int msg_target(int m) const { return (m & 1) ? edges_[m >> 1].first : edges_[m >> 1].second; }

  // Dense id of the directed message i -> j; throws if (i, j) is not an edge.
  int msg_id(int i, int j) const {
    for (const auto& arc : neighbors(i))
      if (arc.node == j) return arc.out_msg;
    throw std::invalid_argument("graph: no edge (" + std::to_string(i) + ", " +
                                std::to_string(j) + ")");
  }

 private:
  void build_adjacency() {
    offset_.assign(static_cast<std::size_t>(num_nodes_) + 1, 0);
    for (const auto& [u, v] : edges_) {
      ++offset_[u + 1];
      ++offset_[v + 1];
    }
    for (int i = 0; i < num_nodes_; ++i) offset_[i + 1] += offset_[i];
    arcs_.resize(static_cast<std::size_t>(offset_[num_nodes_]));
    std::vector<int> cursor(offset_.begin(), offset_.end() - 1);
    for (int e = 0; e < num_edges(); ++e) {
      const auto [u, v] = edges_[static_cast<std::size_t>(e)];
      arcs_[static_cast<std::size_t>(cursor[u]++)] = Arc{v, e, 2 * e + 1, 2 * e};
      arcs_[static_cast<std::size_t>(cursor[v]++)] = Arc{u, e, 2 * e, 2 * e + 1};
    }
  }

  int num_nodes_ = 0;
  std::vector<std::pair<int, int>> edges_;
  std::vector<int> offset_;
  std::vector<Arc> arcs_;
};

inline Graph build_graph(std::vector<std::pair<int, int>> pairs) {
  return Graph::from_edges(std::move(pairs));
}

inline bool is_connected(const Graph& g) {
  const int n = g.num_nodes();
  if (n == 0) return true;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::deque<int> queue{0};
  seen[0] = 1;
  int reached = 1;
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    for (const auto& arc : g.neighbors(i)) {
      if (!seen[arc.node]) {
        seen[arc.node] = 1;
        ++reached;
        queue.push_back(arc.node);
      }
    }
  }
  return reached == n;
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

// Tree in which every internal node has the given degree; grown in BFS order
// until n nodes. The root gets `degree` children, everyone else degree-1.
inline Graph generate_regular_tree(int degree, int n) {
  if (degree < 2) throw std::invalid_argument("regular_tree: degree must be >= 2");
  if (n < 1) throw std::invalid_argument("regular_tree: n must be >= 1");
  std::vector<std::pair<int, int>> edges;
  std::deque<std::pair<int, int>> open;  // (node, remaining child slots)
  open.emplace_back(0, degree);
  int next = 1;
  while (next < n) {
    auto& [parent, slots] = open.front();
    edges.emplace_back(parent, next);
    open.emplace_back(next, degree - 1);
    ++next;
    if (--slots == 0) open.pop_front();
  }
  auto g = Graph::from_edges(std::move(edges));
  if (g.num_nodes() != n) throw std::logic_error("regular_tree: construction bug");
  return g;
}

// Preferential-attachment tree: each new node attaches one edge to an
// existing node chosen proportionally to its degree.
inline Graph generate_scale_free_tree(int n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("scale_free_tree: n must be >= 2");
  std::vector<std::pair<int, int>> edges;
  std::vector<int> ends;  // every edge contributes both endpoints
  edges.emplace_back(0, 1);
  ends.push_back(0);
  ends.push_back(1);
  for (int t = 2; t < n; ++t) {
    const int target = ends[static_cast<std::size_t>(rng.below(ends.size()))];
    edges.emplace_back(target, t);
    ends.push_back(target);
    ends.push_back(t);
  }
  return Graph::from_edges(std::move(edges));
}

// Random regular graph via the pairing model; resamples until the graph is
// simple and connected. Throws if n*degree is odd or retries run out.
inline Graph generate_random_regular(int degree, int n, Rng& rng) {
  if (degree < 1 || n < degree + 1)
    throw std::invalid_argument("random_regular: need n > degree >= 1");
  if ((static_cast<long long>(n) * degree) % 2 != 0)
    throw std::invalid_argument("random_regular: n*degree must be even");
  const int max_tries = 2000;
  std::vector<int> stubs(static_cast<std::size_t>(n) * degree);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < degree; ++k) stubs[static_cast<std::size_t>(i) * degree + k] = i;
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    for (std::size_t i = stubs.size(); i > 1; --i)
      std::swap(stubs[i - 1], stubs[static_cast<std::size_t>(rng.below(i))]);
    std::vector<std::pair<int, int>> edges;
    edges.reserve(stubs.size() / 2);
    bool simple = true;
    for (std::size_t k = 0; k + 1 < stubs.size() && simple; k += 2) {
      int a = stubs[k], b = stubs[k + 1];
      if (a == b) {
        simple = false;
        break;
      }
      if (a > b) std::swap(a, b);
      edges.emplace_back(a, b);
    }
    if (!simple) continue;
    std::sort(edges.begin(), edges.end());
    if (std::adjacent_find(edges.begin(), edges.end()) != edges.end()) continue;
    auto g = Graph::from_edges(std::move(edges));
    if (g.num_nodes() == n && is_connected(g)) return g;
  }
  throw std::runtime_error("random_regular: retries exhausted");
}

// G(n, p) with p = avg_degree/(n-1); resamples until connected.
inline Graph generate_erdos_renyi(int n, double avg_degree, Rng& rng) {
  if (n < 2) throw std::invalid_argument("erdos_renyi: n must be >= 2");
  if (avg_degree <= 0 || avg_degree > n - 1)
    throw std::invalid_argument("erdos_renyi: avg_degree out of range");
  const double p = avg_degree / (n - 1);
  const int max_tries = 20000;
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (rng.bernoulli(p)) edges.emplace_back(i, j);
    if (edges.empty()) continue;
    auto g = Graph::from_edges(std::move(edges));
    if (g.num_nodes() == n && is_connected(g)) return g;
  }
  throw std::runtime_error("erdos_renyi: retries exhausted (graph stays disconnected)");
}

// L x L grid with open boundaries: N = L^2 nodes, 2L(L-1) edges.
inline Graph generate_square_lattice(int side) {
  if (side < 1) throw std::invalid_argument("square_lattice: side must be >= 1");
  std::vector<std::pair<int, int>> edges;
  auto id = [side](int r, int c) { return r * side + c; };
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      if (c + 1 < side) edges.emplace_back(id(r, c), id(r, c + 1));
      if (r + 1 < side) edges.emplace_back(id(r, c), id(r + 1, c));
    }
  if (edges.empty()) return Graph();  // side == 1: a single isolated node has no edges
  return Graph::from_edges(std::move(edges));
}

struct TopologySpec {
  enum class Kind { regular_tree, scale_free_tree, random_regular, erdos_renyi, square_lattice };
  Kind kind = Kind::regular_tree;
  int num_nodes = 0;
  int degree = 3;          // regular_tree, random_regular
  double avg_degree = 3.0; // erdos_renyi
  int side = 0;            // square_lattice
};

inline Graph generate(const TopologySpec& spec, Rng& rng) {
  using Kind = TopologySpec::Kind;
  switch (spec.kind) {
    case Kind::regular_tree: return generate_regular_tree(spec.degree, spec.num_nodes);
    case Kind::scale_free_tree: return generate_scale_free_tree(spec.num_nodes, rng);
    case Kind::random_regular: return generate_random_regular(spec.degree, spec.num_nodes, rng);
    case Kind::erdos_renyi: return generate_erdos_renyi(spec.num_nodes, spec.avg_degree, rng);
    case Kind::square_lattice: return generate_square_lattice(spec.side);
  }
  throw std::invalid_argument("generate: unknown topology kind");
}

// Parses "tree:<degree>:<N>", "sftree:<N>", "rrg:<degree>:<N>",
// "er:<avg_degree>:<N>", "lattice:<L>" (long names accepted too).
inline TopologySpec parse_topology(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.empty()) throw std::invalid_argument("topology: empty spec");
  const std::string& name = parts[0];
  auto arg = [&](std::size_t k) -> const std::string& {
    if (k >= parts.size())
      throw std::invalid_argument("topology: missing argument in '" + text + "'");
    return parts[k];
  };
  TopologySpec spec;
  using Kind = TopologySpec::Kind;
  if (name == "tree" || name == "regular_tree") {
    spec.kind = Kind::regular_tree;
    spec.degree = std::stoi(arg(1));
    spec.num_nodes = std::stoi(arg(2));
  } else if (name == "sftree" || name == "scale_free_tree") {
    spec.kind = Kind::scale_free_tree;
    spec.num_nodes = std::stoi(arg(1));
  } else if (name == "rrg" || name == "random_regular") {
    spec.kind = Kind::random_regular;
    spec.degree = std::stoi(arg(1));
    spec.num_nodes = std::stoi(arg(2));
  } else if (name == "er" || name == "erdos_renyi") {
    spec.kind = Kind::erdos_renyi;
    spec.avg_degree = std::stod(arg(1));
    spec.num_nodes = std::stoi(arg(2));
  } else if (name == "lattice" || name == "square_lattice") {
    spec.kind = Kind::square_lattice;
    spec.side = std::stoi(arg(1));
    spec.num_nodes = spec.side * spec.side;
  } else {
    throw std::invalid_argument("topology: unknown kind '" + name + "'");
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Edge parameters
// ---------------------------------------------------------------------------

// One transmission probability per undirected edge, used for both directions.
struct EdgeParams {
  std::vector<double> alpha;

  EdgeParams() = default;
  explicit EdgeParams(std::vector<double> a) : alpha(std::move(a)) {}
  EdgeParams(const Graph& g, double fill)
      : alpha(static_cast<std::size_t>(g.num_edges()), fill) {}

  std::size_t size() const { return alpha.size(); }
  double operator[](int e) const { return alpha[static_cast<std::size_t>(e)]; }
  double& operator[](int e) { return alpha[static_cast<std::size_t>(e)]; }
};

inline void validate_params(const Graph& g, const EdgeParams& params) {
  if (static_cast<int>(params.size()) != g.num_edges())
    throw std::invalid_argument("params: expected " + std::to_string(g.num_edges()) +
                                " values, got " + std::to_string(params.size()));
  for (std::size_t e = 0; e < params.size(); ++e) {
    const double a = params.alpha[e];
    if (!(a >= 0.0 && a <= 1.0))
      throw std::invalid_argument("params: alpha[" + std::to_string(e) + "] = " +
                                  std::to_string(a) + " outside [0, 1]");
  }
}

inline EdgeParams sample_uniform_params(const Graph& g, Rng& rng) {
  EdgeParams params(g, 0.0);
  for (auto& a : params.alpha) a = rng.uniform();
  return params;
}

// alpha_ij = max(deg(i), deg(j))^(-1/2)
inline EdgeParams degree_dependent_params(const Graph& g) {
  EdgeParams params(g, 0.0);
  for (int e = 0; e < g.num_edges(); ++e) {
    const auto [u, v] = g.edge(e);
    params[e] = 1.0 / std::sqrt(static_cast<double>(std::max(g.degree(u), g.degree(v))));
  }
  return params;
}

// ---------------------------------------------------------------------------
// Edge-list files: "i j [alpha]" per line, '#' comments, deterministic order.
// ---------------------------------------------------------------------------

inline void write_edge_list(const std::string& path, const Graph& g,
                            const EdgeParams* params = nullptr,
                            const std::string& header_comment = "") {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "# nodes " << g.num_nodes() << "\n";
  char buf[64];
  for (int e = 0; e < g.num_edges(); ++e) {
    const auto [u, v] = g.edge(e);
    out << u << ' ' << v;
    if (params) {
      std::snprintf(buf, sizeof(buf), "%.17g", (*params)[e]);
      out << ' ' << buf;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

struct LoadedGraph {
  Graph graph;
  std::optional<EdgeParams> params;
  std::vector<long long> labels;  // original label of each dense node id
};

// Accepts arbitrary integer labels; remaps them to dense 0..N-1 ids in sorted
// label order and reports the mapping.
inline LoadedGraph load_edge_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<std::pair<long long, long long>> raw;
  std::vector<double> alphas;
  bool saw_alpha = false;
  std::string line;
  int line_no = 0;
  long long declared_nodes = -1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      std::istringstream comment(line.substr(hash + 1));
      std::string key;
      if (comment >> key && key == "nodes") comment >> declared_nodes;
      line = line.substr(0, hash);
    }
    std::istringstream ls(line);
    long long a, b;
    if (!(ls >> a)) continue;  // blank line
    if (!(ls >> b))
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected 'i j [alpha]'");
    double alpha;
    if (ls >> alpha) {
      if (!raw.empty() && !saw_alpha)
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": alpha column present on some lines only");
      saw_alpha = true;
      alphas.push_back(alpha);
    } else if (saw_alpha) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": alpha column present on some lines only");
    }
    raw.emplace_back(a, b);
  }
  std::vector<long long> labels;
  labels.reserve(2 * raw.size());
  for (const auto& [a, b] : raw) {
    labels.push_back(a);
    labels.push_back(b);
  }
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  auto dense = [&labels](long long x) {
    return static_cast<int>(std::lower_bound(labels.begin(), labels.end(), x) - labels.begin());
  };
  // Dense non-negative labels are kept as-is so ids round-trip; anything else
  // (gaps, negatives) is remapped by sorted label order.
  const bool identity = !labels.empty() && labels.front() >= 0 &&
                        (declared_nodes < 0 ? labels.back() + 1 == static_cast<long long>(labels.size())
                                            : labels.back() < declared_nodes);
  std::vector<std::pair<int, int>> edges;
  edges.reserve(raw.size());
  std::vector<std::size_t> order(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) order[k] = k;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const auto& [a, b] = raw[k];
    edges.emplace_back(identity ? static_cast<int>(a) : dense(a),
                       identity ? static_cast<int>(b) : dense(b));
  }
  LoadedGraph out;
  out.graph = Graph::from_edges(edges);  // keep original order for alpha alignment below
  if (identity) {
    out.labels.resize(static_cast<std::size_t>(out.graph.num_nodes()));
    for (std::size_t i = 0; i < out.labels.size(); ++i) out.labels[i] = static_cast<long long>(i);
  } else {
    out.labels = labels;
  }
  if (saw_alpha) {
    EdgeParams params(out.graph, 0.0);
    for (std::size_t k = 0; k < edges.size(); ++k) {
      auto [u, v] = edges[k];
      if (u > v) std::swap(u, v);
      const auto& es = out.graph.edges();
      const auto it = std::lower_bound(es.begin(), es.end(), std::make_pair(u, v));
      params[static_cast<int>(it - es.begin())] = alphas[k];
    }
    validate_params(out.graph, params);
    out.params = std::move(params);
  }
  return out;
}

inline void write_label_map(const std::string& path, const std::vector<long long>& labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "# dense_id original_label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out << i << ' ' << labels[i] << '\n';
}

}  // namespace icdmp
