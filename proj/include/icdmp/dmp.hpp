#pragma once

#include <algorithm>
#include <cstddef>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "icdmp/cascades.hpp"
#include "icdmp/graph.hpp"

namespace icdmp {

// Forward message-passing state for one initial condition: cumulative
// activation marginals p[i][t] and directed-edge messages pm[m][t], where a
// message m = (j -> i) is the probability that j is active at t on the graph
// with i removed. Both arrays are time-major: index t*count + entity.
struct DmpState {
  int num_nodes = 0;
  int horizon = 0;
  int num_msgs = 0;
  InitialCondition init;
  std::vector<double> p;
  std::vector<double> pm;
  double max_clamp = 0.0;  // largest out-of-[0,1] excess absorbed (diagnostic)

  double marginal(int i, int t) const {
    return p[static_cast<std::size_t>(t) * num_nodes + i];
  }
  double message(int m, int t) const {
    return pm[static_cast<std::size_t>(t) * num_msgs + m];
  }
};

namespace detail {

inline double clamp01(double x, double& max_clamp) {
  if (x < 0.0) {
    max_clamp = std::max(max_clamp, -x);
    return 0.0;
  }
  if (x > 1.0) {
    max_clamp = std::max(max_clamp, x - 1.0);
    return 1.0;
  }
  return x;
}

inline double monotone_clamp(double x, double previous, double& max_clamp) {
  x = clamp01(x, max_clamp);
  if (x < previous) {
    max_clamp = std::max(max_clamp, previous - x);
    return previous;
  }
  return x;
}

// Scratch buffers reused across forward runs.
struct DmpScratch {
  std::vector<double> factors;
  std::vector<double> prefix;
  std::vector<double> suffix;
  void ensure(int max_degree) {
    if (static_cast<int>(factors.size()) < max_degree) {
      factors.resize(static_cast<std::size_t>(max_degree));
      prefix.resize(static_cast<std::size_t>(max_degree) + 1);
      suffix.resize(static_cast<std::size_t>(max_degree) + 1);
    }
  }
};

// One exact sweep of the forward recursions, t = 1..T. No iteration to
// convergence is involved: each time layer is a closed-form function of the
// previous one. Leave-one-out products are formed with prefix/suffix arrays,
// which keeps the cost at O(sum_i deg(i)) per time step and avoids dividing
// by factors that may be zero.
inline void dmp_forward_into(DmpState& state, const Graph& g, const EdgeParams& params,
                             const InitialCondition& init, int horizon, DmpScratch& scratch) {
  const int n = g.num_nodes();
  const int msgs = g.num_messages();
  if (horizon < 1) throw std::invalid_argument("dmp_forward: horizon must be >= 1");
  validate_params(g, params);
  if (!init.single() && static_cast<int>(init.pbar.size()) != n)
    throw std::invalid_argument("dmp_forward: initial law size mismatch");
  if (init.single() && init.source >= n)
    throw std::invalid_argument("dmp_forward: source node out of range");

  state.num_nodes = n;
  state.horizon = horizon;
  state.num_msgs = msgs;
  state.init = init;
  state.max_clamp = 0.0;
  state.p.assign(static_cast<std::size_t>(horizon + 1) * n, 0.0);
  state.pm.assign(static_cast<std::size_t>(horizon + 1) * msgs, 0.0);
  scratch.ensure(g.max_degree());

  for (int i = 0; i < n; ++i) state.p[static_cast<std::size_t>(i)] = init.prob(i);
  for (int m = 0; m < msgs; ++m) state.pm[static_cast<std::size_t>(m)] = init.prob(g.msg_source(m));

  auto& fs = scratch.factors;
  auto& pre = scratch.prefix;
  auto& suf = scratch.suffix;
  for (int t = 1; t <= horizon; ++t) {
    const double* pm_prev = state.pm.data() + static_cast<std::size_t>(t - 1) * msgs;
    const double* p_prev = state.p.data() + static_cast<std::size_t>(t - 1) * n;
    double* pm_cur = state.pm.data() + static_cast<std::size_t>(t) * msgs;
    double* p_cur = state.p.data() + static_cast<std::size_t>(t) * n;
    for (int j = 0; j < n; ++j) {
      const auto arcs = g.neighbors(j);
      const int d = static_cast<int>(arcs.size());
      pre[0] = 1.0;
      for (int k = 0; k < d; ++k) {
        fs[static_cast<std::size_t>(k)] =
            1.0 - params[arcs[static_cast<std::size_t>(k)].edge] *
                      pm_prev[arcs[static_cast<std::size_t>(k)].in_msg];
        pre[static_cast<std::size_t>(k) + 1] = pre[static_cast<std::size_t>(k)] * fs[static_cast<std::size_t>(k)];
      }
      suf[static_cast<std::size_t>(d)] = 1.0;
      for (int k = d - 1; k >= 0; --k)
        suf[static_cast<std::size_t>(k)] = fs[static_cast<std::size_t>(k)] * suf[static_cast<std::size_t>(k) + 1];
      const double base = 1.0 - init.prob(j);
      // activation is absorbing: rounding may not break monotonicity in t
      p_cur[j] = monotone_clamp(1.0 - base * pre[static_cast<std::size_t>(d)], p_prev[j],
                                state.max_clamp);
      for (int k = 0; k < d; ++k) {
        const auto& arc = arcs[static_cast<std::size_t>(k)];
        pm_cur[arc.out_msg] = monotone_clamp(
            1.0 - base * (pre[static_cast<std::size_t>(k)] * suf[static_cast<std::size_t>(k) + 1]),
            pm_prev[arc.out_msg], state.max_clamp);
      }
    }
  }
}

}  // namespace detail

inline DmpState dmp_forward(const Graph& g, const EdgeParams& params,
                            const InitialCondition& init, int horizon) {
  DmpState state;
  detail::DmpScratch scratch;
  detail::dmp_forward_into(state, g, params, init, horizon, scratch);
  return state;
}

// Probability that the node activates exactly at tau, obtained by differencing
// the cumulative marginals; tau = T collects all mass not activated earlier.
inline double activation_time_marginal(const DmpState& state, int node, int tau) {
  if (tau < 0 || tau > state.horizon)
    throw std::invalid_argument("activation_time_marginal: tau out of range");
  if (node < 0 || node >= state.num_nodes)
    throw std::invalid_argument("activation_time_marginal: node out of range");
  if (tau == 0) return state.marginal(node, 0);
  if (tau == state.horizon) return 1.0 - state.marginal(node, state.horizon - 1);
  return state.marginal(node, tau) - state.marginal(node, tau - 1);
}

// Expected spread: sum of activation marginals at the final time.
inline double influence(const DmpState& state) {
  double total = 0.0;
  for (int i = 0; i < state.num_nodes; ++i) total += state.marginal(i, state.horizon);
  return total;
}

inline void dump_state_csv(const DmpState& state, const Graph& g, std::ostream& nodes_out,
                           std::ostream& msgs_out) {
  nodes_out << "node,t,p\n";
  for (int i = 0; i < state.num_nodes; ++i)
    for (int t = 0; t <= state.horizon; ++t)
      nodes_out << i << ',' << t << ',' << state.marginal(i, t) << '\n';
  msgs_out << "edge_from,edge_to,t,pm\n";
  for (int m = 0; m < state.num_msgs; ++m)
    for (int t = 0; t <= state.horizon; ++t)
      msgs_out << g.msg_source(m) << ',' << g.msg_target(m) << ',' << t << ','
               << state.message(m, t) << '\n';
}

}  // namespace icdmp
