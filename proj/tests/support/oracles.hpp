#pragma once

// Test-only reference implementations, independent of the message-passing and
// adjoint code paths they are used to check.

#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

#include "icdmp/cascades.hpp"
#include "icdmp/dmp.hpp"
#include "icdmp/graph.hpp"
#include "icdmp/replicas.hpp"
#include "icdmp/rng.hpp"
#include "icdmp/slicer.hpp"

namespace oracles {

// Exact activation marginals by exhaustive enumeration over per-undirected-
// edge transmission outcomes (at most one direction of an edge can ever carry
// an effective attempt, so one coin per edge is sufficient), and over seed
// subsets for stochastic initial conditions. Cost O(2^(|E|+N_stochastic)).
struct ExactMarginals {
  int num_nodes = 0;
  int horizon = 0;
  std::vector<double> p;  // [t*N + i] = P(activation time <= t)

  double prob(int i, int t) const { return p[static_cast<std::size_t>(t) * num_nodes + i]; }
  double law(int i, int tau) const {
    if (tau == 0) return prob(i, 0);
    if (tau == horizon) return 1.0 - prob(i, horizon - 1);
    return prob(i, tau) - prob(i, tau - 1);
  }
};

inline void bfs_distances(const icdmp::Graph& g, const std::vector<int>& seeds,
                          const std::vector<std::uint8_t>& live, std::vector<int>& dist) {
  dist.assign(static_cast<std::size_t>(g.num_nodes()), -1);
  std::deque<int> queue;
  for (const int s : seeds) {
    dist[static_cast<std::size_t>(s)] = 0;
    queue.push_back(s);
  }
  while (!queue.empty()) {
    const int i = queue.front();
    queue.pop_front();
    for (const auto& arc : g.neighbors(i)) {
      if (!live[static_cast<std::size_t>(arc.edge)]) continue;
      if (dist[static_cast<std::size_t>(arc.node)] >= 0) continue;
      dist[static_cast<std::size_t>(arc.node)] = dist[static_cast<std::size_t>(i)] + 1;
      queue.push_back(arc.node);
    }
  }
}

inline ExactMarginals enum_marginals(const icdmp::Graph& g, const icdmp::EdgeParams& params,
                                     const icdmp::InitialCondition& init, int horizon) {
  const int n = g.num_nodes();
  const int ne = g.num_edges();
  if (ne > 20) throw std::invalid_argument("enum_marginals: too many edges to enumerate");
  std::vector<int> stochastic_nodes;
  if (!init.single())
    for (int i = 0; i < n; ++i)
      if (init.pbar[static_cast<std::size_t>(i)] > 0.0) stochastic_nodes.push_back(i);
  if (static_cast<int>(stochastic_nodes.size()) > 16)
    throw std::invalid_argument("enum_marginals: too many stochastic seeds to enumerate");

  ExactMarginals out;
  out.num_nodes = n;
  out.horizon = horizon;
  out.p.assign(static_cast<std::size_t>(horizon + 1) * n, 0.0);

  std::vector<std::uint8_t> live(static_cast<std::size_t>(ne), 0);
  std::vector<int> seeds;
  std::vector<int> dist;
  const std::uint64_t edge_configs = 1ULL << ne;
  const std::uint64_t seed_configs = init.single() ? 1 : (1ULL << stochastic_nodes.size());
  for (std::uint64_t ec = 0; ec < edge_configs; ++ec) {
    double edge_weight = 1.0;
    for (int e = 0; e < ne; ++e) {
      const bool on = (ec >> e) & 1ULL;
      live[static_cast<std::size_t>(e)] = on;
      edge_weight *= on ? params[e] : 1.0 - params[e];
    }
    if (edge_weight == 0.0) continue;
    for (std::uint64_t sc = 0; sc < seed_configs; ++sc) {
      double weight = edge_weight;
      seeds.clear();
      if (init.single()) {
        seeds.push_back(init.source);
      } else {
        for (std::size_t k = 0; k < stochastic_nodes.size(); ++k) {
          const double pb = init.pbar[static_cast<std::size_t>(stochastic_nodes[k])];
          if ((sc >> k) & 1ULL) {
            weight *= pb;
            seeds.push_back(stochastic_nodes[k]);
          } else {
            weight *= 1.0 - pb;
          }
        }
      }
      if (weight == 0.0) continue;
      bfs_distances(g, seeds, live, dist);
      for (int i = 0; i < n; ++i) {
        const int d = dist[static_cast<std::size_t>(i)];
        if (d < 0 || d > horizon) continue;
        for (int t = d; t <= horizon; ++t)
          out.p[static_cast<std::size_t>(t) * n + i] += weight;
      }
    }
  }
  return out;
}

// Central finite differences of the class-marginal objective; the only shared
// machinery with the analytic gradient is the objective definition itself.
inline std::vector<double> fd_gradient(const icdmp::Graph& g, const icdmp::EdgeParams& params,
                                       const icdmp::ClassSet& set, double h = 1e-5,
                                       double mu_floor = icdmp::kMuFloor) {
  auto objective_at = [&](const icdmp::EdgeParams& at) {
    double obj = 0.0;
    for (const auto& cls : set.classes) {
      const auto state = icdmp::dmp_forward(g, at, cls.init, set.horizon);
      obj += icdmp::detail::objective_one_class(cls, state, mu_floor);
    }
    return obj;
  };
  std::vector<double> grad(static_cast<std::size_t>(g.num_edges()), 0.0);
  for (int e = 0; e < g.num_edges(); ++e) {
    icdmp::EdgeParams hi = params, lo = params;
    hi[e] += h;
    lo[e] -= h;
    grad[static_cast<std::size_t>(e)] = (objective_at(hi) - objective_at(lo)) / (2.0 * h);
  }
  return grad;
}

inline std::vector<std::vector<double>> fd_mixture_gradient(const icdmp::Graph& g,
                                                            const icdmp::ReplicaModel& model,
                                                            const icdmp::ClassSet& set,
                                                            double h = 1e-5) {
  auto objective_at = [&](const icdmp::ReplicaModel& at) {
    std::vector<icdmp::DmpState> states;
    states.reserve(at.replicas.size() * set.classes.size());
    for (const auto& params : at.replicas)
      for (const auto& cls : set.classes)
        states.push_back(icdmp::dmp_forward(g, params, cls.init, set.horizon));
    return icdmp::mixture_objective(set, states, at.size());
  };
  std::vector<std::vector<double>> grads(
      model.replicas.size(), std::vector<double>(static_cast<std::size_t>(g.num_edges()), 0.0));
  for (std::size_t r = 0; r < model.replicas.size(); ++r) {
    for (int e = 0; e < g.num_edges(); ++e) {
      icdmp::ReplicaModel hi = model, lo = model;
      hi.replicas[r][e] += h;
      lo.replicas[r][e] -= h;
      grads[r][static_cast<std::size_t>(e)] = (objective_at(hi) - objective_at(lo)) / (2.0 * h);
    }
  }
  return grads;
}

// Largest relative gradient deviation; near-zero components are compared at
// the scale of the largest component so noise on dead edges cannot dominate.
inline double max_rel_error(const std::vector<double>& got, const std::vector<double>& want) {
  double scale = 0.0;
  for (const double w : want) scale = std::max(scale, std::abs(w));
  if (scale == 0.0) scale = 1.0;
  double worst = 0.0;
  for (std::size_t e = 0; e < got.size(); ++e) {
    const double denom = std::max({std::abs(want[e]), 1e-3 * scale, 1e-12});
    worst = std::max(worst, std::abs(got[e] - want[e]) / denom);
  }
  return worst;
}

// Uniform random tree on n nodes: each new node attaches to a uniformly
// chosen earlier node.
inline icdmp::Graph random_tree(int n, icdmp::Rng& rng) {
  std::vector<std::pair<int, int>> edges;
  for (int i = 1; i < n; ++i)
    edges.emplace_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(i))), i);
  return icdmp::build_graph(edges);
}

}  // namespace oracles
