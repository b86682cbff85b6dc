#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "icdmp/cascades.hpp"
#include "icdmp/dmp.hpp"
#include "icdmp/graph.hpp"
#include "icdmp/parallel.hpp"

namespace icdmp {

// Mean absolute difference between two parameter sets over the edges that are
// not excluded. Both sets must be keyed by the same edge set.
inline double param_l1_error(const EdgeParams& learned, const EdgeParams& truth,
                             const std::vector<std::uint8_t>* excluded = nullptr) {
  if (learned.size() != truth.size())
    throw std::invalid_argument("param_l1_error: parameter sets keyed by different edge sets");
  if (excluded && excluded->size() != learned.size())
    throw std::invalid_argument("param_l1_error: exclusion mask size mismatch");
  double total = 0.0;
  long long n = 0;
  for (std::size_t e = 0; e < learned.size(); ++e) {
    if (excluded && (*excluded)[e]) continue;
    total += std::abs(learned.alpha[e] - truth.alpha[e]);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("param_l1_error: every edge excluded");
  return total / static_cast<double>(n);
}

// Edges whose transmission probability no data set with these hidden nodes
// can pin down: edges incident to a hidden degree-1 node.
inline std::vector<std::uint8_t> leaf_excluded_edges(const Graph& g, const ObservationMask& mask) {
  if (mask.num_nodes() != g.num_nodes())
    throw std::invalid_argument("leaf_excluded_edges: mask size mismatch");
  std::vector<std::uint8_t> excluded(static_cast<std::size_t>(g.num_edges()), 0);
  for (int e = 0; e < g.num_edges(); ++e) {
    const auto [u, v] = g.edge(e);
    const bool u_leaf_hidden = g.degree(u) == 1 && !mask.is_observed(u);
    const bool v_leaf_hidden = g.degree(v) == 1 && !mask.is_observed(v);
    if (u_leaf_hidden || v_leaf_hidden) excluded[static_cast<std::size_t>(e)] = 1;
  }
  return excluded;
}

// Activation marginals aligned on a (class, node, time) grid; standard errors
// are zero for deterministic predictors and binomial for sampled oracles.
struct MarginalTable {
  int num_classes = 0;
  int num_nodes = 0;
  int horizon = 0;
  std::vector<double> p;
  std::vector<double> se;

  std::size_t index(int s, int i, int t) const {
    return (static_cast<std::size_t>(s) * (horizon + 1) + t) * num_nodes + i;
  }
  double prob(int s, int i, int t) const { return p[index(s, i, t)]; }
};

// Relative L1 distance <|p - p*|> / <p*>, averaged over all nodes, classes,
// and times t = 1..T (t = 0 marginals are inputs shared by construction).
inline double marginal_distance(const MarginalTable& predicted, const MarginalTable& oracle) {
  if (predicted.num_classes != oracle.num_classes || predicted.num_nodes != oracle.num_nodes ||
      predicted.horizon != oracle.horizon)
    throw std::invalid_argument("marginal_distance: tables on different grids");
  double abs_diff = 0.0;
  double oracle_mass = 0.0;
  for (int s = 0; s < oracle.num_classes; ++s) {
    for (int t = 1; t <= oracle.horizon; ++t) {
      for (int i = 0; i < oracle.num_nodes; ++i) {
        const double star = oracle.prob(s, i, t);
        abs_diff += std::abs(predicted.prob(s, i, t) - star);
        oracle_mass += star;
      }
    }
  }
  if (oracle_mass <= 0.0)
    throw std::invalid_argument("marginal_distance: oracle marginals are identically zero");
  return abs_diff / oracle_mass;
}

inline MarginalTable dmp_marginal_table(const Graph& g, const EdgeParams& params,
                                        const std::vector<InitialCondition>& inits, int horizon,
                                        int workers = 0) {
  MarginalTable table;
  table.num_classes = static_cast<int>(inits.size());
  table.num_nodes = g.num_nodes();
  table.horizon = horizon;
  table.p.assign(static_cast<std::size_t>(table.num_classes) * (horizon + 1) * g.num_nodes(), 0.0);
  table.se.assign(table.p.size(), 0.0);
  parallel_chunks(inits.size(), workers, [&](int, std::size_t b, std::size_t e) {
    detail::DmpScratch scratch;
    DmpState state;
    for (std::size_t s = b; s < e; ++s) {
      detail::dmp_forward_into(state, g, params, inits[s], horizon, scratch);
      for (int t = 0; t <= horizon; ++t)
        for (int i = 0; i < g.num_nodes(); ++i)
          table.p[table.index(static_cast<int>(s), i, t)] = state.marginal(i, t);
    }
  });
  return table;
}

inline MarginalTable mc_marginal_table(const Graph& g, const EdgeParams& params,
                                       const std::vector<InitialCondition>& inits, int horizon,
                                       long long samples_per_class, std::uint64_t seed,
                                       int workers = 0) {
  MarginalTable table;
  table.num_classes = static_cast<int>(inits.size());
  table.num_nodes = g.num_nodes();
  table.horizon = horizon;
  table.p.assign(static_cast<std::size_t>(table.num_classes) * (horizon + 1) * g.num_nodes(), 0.0);
  table.se.assign(table.p.size(), 0.0);
  for (std::size_t s = 0; s < inits.size(); ++s) {
    const auto est = mc_marginals(g, params, inits[s], horizon, samples_per_class,
                                  derive_seed(seed, Stream::oracle, s), workers);
    for (int t = 0; t <= horizon; ++t) {
      for (int i = 0; i < g.num_nodes(); ++i) {
        table.p[table.index(static_cast<int>(s), i, t)] = est.prob(i, t);
        table.se[table.index(static_cast<int>(s), i, t)] = est.stderr_at(i, t);
      }
    }
  }
  return table;
}

struct EvalReport {
  struct Entry {
    std::string metric;
    double value = 0.0;
    double stderr_value = 0.0;
    long long n_instances = 1;
  };
  std::vector<Entry> entries;

  void add(const std::string& metric, double value, double se = 0.0, long long n = 1) {
    entries.push_back(Entry{metric, value, se, n});
  }
};

inline void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "metric,value,stderr,n_instances\n";
  char buf[160];
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%lld\n", e.metric.c_str(), e.value,
                  e.stderr_value, e.n_instances);
    out << buf;
  }
}

}  // namespace icdmp
