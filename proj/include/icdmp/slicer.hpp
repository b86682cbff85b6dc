#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "icdmp/cascades.hpp"
#include "icdmp/dmp.hpp"
#include "icdmp/graph.hpp"
#include "icdmp/parallel.hpp"

namespace icdmp {

inline constexpr double kMuFloor = 1e-12;

// Lagrange multipliers of the forward recursions for one cascade class.
// lambda_node mirrors p, lambda_msg mirrors pm (time-major layout).
// lambda_msg at t = T is identically zero; values at t < T follow from the
// backward recursion seeded by the data terms in lambda_node.
struct AdjointState {
  int num_nodes = 0;
  int horizon = 0;
  int num_msgs = 0;
  std::vector<double> lambda_node;
  std::vector<double> lambda_msg;

  double node(int i, int t) const {
    return lambda_node[static_cast<std::size_t>(t) * num_nodes + i];
  }
  double msg(int m, int t) const {
    return lambda_msg[static_cast<std::size_t>(t) * num_msgs + m];
  }
};

namespace detail {

// Floored denominators D[t*N + i] = max(mu_i(t), floor) for the data terms.
inline void mu_denominators(const DmpState& state, double floor, std::vector<double>& out) {
  const int n = state.num_nodes;
  const int horizon = state.horizon;
  out.assign(static_cast<std::size_t>(horizon + 1) * n, floor);
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t <= horizon; ++t) {
      const double mu = activation_time_marginal(state, i, t);
      out[static_cast<std::size_t>(t) * n + i] = std::max(mu, floor);
    }
  }
}

// Node multipliers from the empirical counts. For an observed activation
// count m at time tau, the objective term m*log(mu(tau)) touches p(tau) with
// weight +m/mu(tau) and p(tau-1) with weight -m/mu(tau); stationarity of the
// Lagrangian then fixes lambda_node as below. Hidden nodes have zero counts
// and therefore zero node multipliers.
inline void lambda_node_from_denoms(const ClassStats& stats, const std::vector<double>& denoms,
                                    std::vector<double>& out) {
  const int n = stats.num_nodes;
  const int horizon = stats.horizon;
  out.assign(static_cast<std::size_t>(horizon + 1) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t <= horizon; ++t) {
      double lam = 0.0;
      if (t < horizon) {
        const long long m_here = stats.count(i, t);
        if (m_here != 0)
          lam -= static_cast<double>(m_here) / denoms[static_cast<std::size_t>(t) * n + i];
        const long long m_next = stats.count(i, t + 1);
        if (m_next != 0)
          lam += static_cast<double>(m_next) / denoms[static_cast<std::size_t>(t + 1) * n + i];
      }
      if (lam != 0.0) out[static_cast<std::size_t>(t) * n + i] = lam;
    }
  }
}

struct AdjointScratch {
  std::vector<double> fs, gs, pre_p, pre_w, suf_p, suf_w;
  std::vector<double> denoms;
  void ensure(int max_degree) {
    if (static_cast<int>(fs.size()) < max_degree) {
      fs.resize(static_cast<std::size_t>(max_degree));
      gs.resize(static_cast<std::size_t>(max_degree));
      pre_p.resize(static_cast<std::size_t>(max_degree) + 1);
      pre_w.resize(static_cast<std::size_t>(max_degree) + 1);
      suf_p.resize(static_cast<std::size_t>(max_degree) + 1);
      suf_w.resize(static_cast<std::size_t>(max_degree) + 1);
    }
  }
};

// Shared backward sweep. For each time t = T-1..0 and node j it forms, over
// the incoming factors f_m = 1 - alpha_mj * pm_{m->j}(t) and weights
// g_m = lambda_msg(j->m, t+1), the leave-one-out pairs
//   L_i = prod_{m in dj\i} f_m,
//   B_i = sum_{k in dj\i} g_k * prod_{m in dj\{i,k}} f_m
// via prefix/suffix products of (P, W) pairs with (P,W)x(P',W') =
// (PP', WP' + PW'). The emitted quantity
//   bracket = (1 - pbar_j) * (lambda_node(j, t+1) * L_i + B_i)
// equals lambda_msg(i->j, t) / alpha_ij and is also the per-(message, t)
// factor of the full-form parameter derivative.
template <typename Emit>
inline void adjoint_sweep(const Graph& g, const EdgeParams& params, const DmpState& state,
                          const std::vector<double>& lambda_node,
                          const std::vector<double>& lambda_msg_next_source,
                          AdjointScratch& scratch, Emit&& emit) {
  const int n = state.num_nodes;
  const int msgs = state.num_msgs;
  const int horizon = state.horizon;
  scratch.ensure(g.max_degree());
  auto& fs = scratch.fs;
  auto& gs = scratch.gs;
  auto& pre_p = scratch.pre_p;
  auto& pre_w = scratch.pre_w;
  auto& suf_p = scratch.suf_p;
  auto& suf_w = scratch.suf_w;
  for (int t = horizon - 1; t >= 0; --t) {
    const double* pm_t = state.pm.data() + static_cast<std::size_t>(t) * msgs;
    const double* lam_next = lambda_node.data() + static_cast<std::size_t>(t + 1) * n;
    const double* lam_msg_next =
        lambda_msg_next_source.data() + static_cast<std::size_t>(t + 1) * msgs;
    for (int j = 0; j < n; ++j) {
      const auto arcs = g.neighbors(j);
      const int d = static_cast<int>(arcs.size());
      for (int k = 0; k < d; ++k) {
        const auto& arc = arcs[static_cast<std::size_t>(k)];
        fs[static_cast<std::size_t>(k)] = 1.0 - params[arc.edge] * pm_t[arc.in_msg];
        gs[static_cast<std::size_t>(k)] = lam_msg_next[arc.out_msg];
      }
      pre_p[0] = 1.0;
      pre_w[0] = 0.0;
      for (int k = 0; k < d; ++k) {
        pre_p[static_cast<std::size_t>(k) + 1] =
            pre_p[static_cast<std::size_t>(k)] * fs[static_cast<std::size_t>(k)];
        pre_w[static_cast<std::size_t>(k) + 1] =
            pre_w[static_cast<std::size_t>(k)] * fs[static_cast<std::size_t>(k)] +
            pre_p[static_cast<std::size_t>(k)] * gs[static_cast<std::size_t>(k)];
      }
      suf_p[static_cast<std::size_t>(d)] = 1.0;
      suf_w[static_cast<std::size_t>(d)] = 0.0;
      for (int k = d - 1; k >= 0; --k) {
        suf_p[static_cast<std::size_t>(k)] =
            fs[static_cast<std::size_t>(k)] * suf_p[static_cast<std::size_t>(k) + 1];
        suf_w[static_cast<std::size_t>(k)] =
            gs[static_cast<std::size_t>(k)] * suf_p[static_cast<std::size_t>(k) + 1] +
            fs[static_cast<std::size_t>(k)] * suf_w[static_cast<std::size_t>(k) + 1];
      }
      const double base = 1.0 - state.init.prob(j);
      const double lam_j = lam_next[j];
      if (base == 0.0) {
        for (int k = 0; k < d; ++k) emit(t, arcs[static_cast<std::size_t>(k)], 0.0);
        continue;
      }
      for (int k = 0; k < d; ++k) {
        const double loo_p = pre_p[static_cast<std::size_t>(k)] * suf_p[static_cast<std::size_t>(k) + 1];
        const double loo_w = pre_w[static_cast<std::size_t>(k)] * suf_p[static_cast<std::size_t>(k) + 1] +
                             pre_p[static_cast<std::size_t>(k)] * suf_w[static_cast<std::size_t>(k) + 1];
        emit(t, arcs[static_cast<std::size_t>(k)], base * (lam_j * loo_p + loo_w));
      }
    }
  }
}

inline void adjoint_backward_into(AdjointState& adj, const Graph& g, const EdgeParams& params,
                                  const DmpState& state, const std::vector<double>& lambda_node,
                                  AdjointScratch& scratch) {
  adj.num_nodes = state.num_nodes;
  adj.horizon = state.horizon;
  adj.num_msgs = state.num_msgs;
  adj.lambda_node = lambda_node;
  adj.lambda_msg.assign(static_cast<std::size_t>(state.horizon + 1) * state.num_msgs, 0.0);
  adjoint_sweep(g, params, state, adj.lambda_node, adj.lambda_msg, scratch,
                [&adj, &params, msgs = state.num_msgs](int t, const Graph::Arc& arc, double bracket) {
                  adj.lambda_msg[static_cast<std::size_t>(t) * msgs + arc.in_msg] =
                      params[arc.edge] * bracket;
                });
}

// Simplified-form derivative: g_e -= sum_t lambda_msg(m, t) * pm(m, t) / alpha_e
// over both directions of e and t = 0..T-1 (the t = T multipliers vanish).
inline void gradient_fast_one(const EdgeParams& params, const DmpState& state,
                              const AdjointState& adj, double* grad) {
  const int msgs = state.num_msgs;
  for (int t = 0; t < state.horizon; ++t) {
    const double* pm_t = state.pm.data() + static_cast<std::size_t>(t) * msgs;
    const double* lam_t = adj.lambda_msg.data() + static_cast<std::size_t>(t) * msgs;
    for (int m = 0; m < msgs; ++m) {
      if (lam_t[m] != 0.0) grad[m >> 1] -= lam_t[m] * pm_t[m] / params[m >> 1];
    }
  }
}

// Full product-form derivative; identical sum evaluated without dividing by
// alpha, so it also covers alpha = 0. `include`, when given, restricts the
// accumulation to flagged edges.
inline void gradient_full_one(const Graph& g, const EdgeParams& params, const DmpState& state,
                              const AdjointState& adj, AdjointScratch& scratch, double* grad,
                              const std::vector<std::uint8_t>* include = nullptr) {
  const int msgs = state.num_msgs;
  adjoint_sweep(g, params, state, adj.lambda_node, adj.lambda_msg, scratch,
                [&](int t, const Graph::Arc& arc, double bracket) {
                  if (include && !(*include)[static_cast<std::size_t>(arc.edge)]) return;
                  grad[arc.edge] -= bracket * state.pm[static_cast<std::size_t>(t) * msgs + arc.in_msg];
                });
}

inline double objective_one_class(const ClassStats& stats, const DmpState& state, double floor) {
  double obj = 0.0;
  for (int i = 0; i < stats.num_nodes; ++i) {
    for (int t = 0; t <= stats.horizon; ++t) {
      const long long m = stats.count(i, t);
      if (m == 0) continue;
      obj += static_cast<double>(m) *
             std::log(std::max(activation_time_marginal(state, i, t), floor));
    }
  }
  return obj;
}

}  // namespace detail

// Log-likelihood of the empirical activation-time counts under the model's
// activation-time marginals, summed over classes.
inline double objective(const ClassSet& set, const std::vector<DmpState>& states,
                        double mu_floor = kMuFloor) {
  if (states.size() != set.classes.size())
    throw std::invalid_argument("objective: one state per class required");
  double obj = 0.0;
  for (std::size_t s = 0; s < set.classes.size(); ++s)
    obj += detail::objective_one_class(set.classes[s], states[s], mu_floor);
  return obj;
}

inline AdjointState adjoint_backward(const Graph& g, const EdgeParams& params,
                                     const DmpState& state, const ClassStats& stats,
                                     double mu_floor = kMuFloor) {
  if (stats.num_nodes != state.num_nodes || stats.horizon != state.horizon)
    throw std::invalid_argument("adjoint_backward: state/stats shape mismatch");
  if (static_cast<int>(params.size()) != state.num_msgs / 2)
    throw std::invalid_argument("adjoint_backward: params/state mismatch");
  detail::AdjointScratch scratch;
  detail::mu_denominators(state, mu_floor, scratch.denoms);
  std::vector<double> lambda_node;
  detail::lambda_node_from_denoms(stats, scratch.denoms, lambda_node);
  AdjointState adj;
  detail::adjoint_backward_into(adj, g, params, state, lambda_node, scratch);
  return adj;
}

// Objective derivative per undirected edge, accumulated over classes and both
// edge directions. Uses the simplified form where alpha is safely away from
// zero and the full product form otherwise.
inline std::vector<double> gradient(const Graph& g, const EdgeParams& params,
                                    const std::vector<DmpState>& states,
                                    const std::vector<AdjointState>& adjoints,
                                    double fast_path_min_alpha = 1e-6) {
  if (states.size() != adjoints.size())
    throw std::invalid_argument("gradient: states/adjoints size mismatch");
  std::vector<double> grad(static_cast<std::size_t>(g.num_edges()), 0.0);
  std::vector<std::uint8_t> slow(static_cast<std::size_t>(g.num_edges()), 0);
  bool any_slow = false;
  for (int e = 0; e < g.num_edges(); ++e) {
    if (params[e] < fast_path_min_alpha) {
      slow[static_cast<std::size_t>(e)] = 1;
      any_slow = true;
    }
  }
  detail::AdjointScratch scratch;
  std::vector<double> fast_grad(grad.size(), 0.0);
  for (std::size_t s = 0; s < states.size(); ++s) {
    detail::gradient_fast_one(params, states[s], adjoints[s], fast_grad.data());
    if (any_slow)
      detail::gradient_full_one(g, params, states[s], adjoints[s], scratch, grad.data(), &slow);
  }
  for (int e = 0; e < g.num_edges(); ++e)
    if (!slow[static_cast<std::size_t>(e)]) grad[static_cast<std::size_t>(e)] = fast_grad[static_cast<std::size_t>(e)];
  return grad;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct LearnConfig {
  double step_c = 1.0 / 80.0;   // learning rate epsilon = step_c * N / (M * T)
  int max_iterations = 10000;
  double tolerance = 1e-6;      // stop when max |delta alpha| falls below
  double alpha_init = 0.5;
  std::optional<EdgeParams> init_params;
  double alpha_min = 1e-6;
  double alpha_max = 1.0 - 1e-6;
  double mu_floor = kMuFloor;
  int workers = 0;              // 0: use available parallelism
  int divergence_patience = 25; // stalled iterations before halving epsilon
  // Per-iteration cap on |delta alpha| per edge. Activation times the model
  // deems near-impossible produce gradient components many orders beyond the
  // typical scale; uncapped they slam parameters between the clamp bounds.
  double max_step_alpha = 0.05;
};

inline void validate_config(const LearnConfig& cfg) {
  if (!(cfg.step_c > 0)) throw std::invalid_argument("learn: step_c must be positive");
  if (!(cfg.alpha_min > 0 && cfg.alpha_min < cfg.alpha_max && cfg.alpha_max < 1))
    throw std::invalid_argument("learn: need 0 < alpha_min < alpha_max < 1");
  if (cfg.max_iterations < 0) throw std::invalid_argument("learn: negative iteration cap");
  if (!(cfg.tolerance >= 0)) throw std::invalid_argument("learn: negative tolerance");
  if (!(cfg.max_step_alpha > 0)) throw std::invalid_argument("learn: max_step_alpha must be positive");
}

namespace detail {

inline double bounded_step(double alpha, double raw_step, const LearnConfig& cfg) {
  const double step = std::clamp(raw_step, -cfg.max_step_alpha, cfg.max_step_alpha);
  return std::clamp(alpha + step, cfg.alpha_min, cfg.alpha_max);
}

}  // namespace detail

struct TraceRow {
  int iteration;
  double objective;
  double max_delta_alpha;
  double epsilon;
};

// Fires after `patience` consecutive iterations without a new best objective;
// the training loops then halve the learning rate and record the event. This
// catches both monotone divergence and the 2-cycle oscillation an oversized
// fixed step produces, where the objective alternates without ever improving.
struct DivergenceGuard {
  int patience = 25;
  int streak = 0;
  double best = 0.0;
  bool seen_any = false;

  bool observe(double obj) {
    if (!seen_any || obj > best) {
      best = obj;
      seen_any = true;
      streak = 0;
      return false;
    }
    if (++streak >= patience) {
      streak = 0;
      return true;
    }
    return false;
  }
};

struct LearnResult {
  EdgeParams params;
  std::vector<TraceRow> trace;
  std::vector<int> epsilon_halvings;  // iterations where the safety guard fired
  int iterations = 0;
  bool converged = false;
  double final_objective = 0.0;
};

inline void write_trace_csv(const std::string& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "iter,objective,max_delta_alpha,epsilon\n";
  char buf[160];
  for (const auto& row : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", row.iteration, row.objective,
                  row.max_delta_alpha, row.epsilon);
    out << buf;
  }
}

namespace detail {

struct WorkerScratch {
  DmpState state;
  AdjointState adj;
  DmpScratch fwd;
  AdjointScratch bwd;
  std::vector<double> lambda_node;
};

// Forward + backward + per-class gradient for one class, written into a
// caller-provided row so per-class results can be reduced in class order.
// `slow`, when non-null, routes the flagged edges through the full form.
inline double learn_step_one_class(const Graph& g, const EdgeParams& params,
                                   const ClassStats& stats, int horizon, double floor,
                                   WorkerScratch& ws, double* grad_row,
                                   const std::vector<std::uint8_t>* slow = nullptr) {
  dmp_forward_into(ws.state, g, params, stats.init, horizon, ws.fwd);
  const double obj = objective_one_class(stats, ws.state, floor);
  mu_denominators(ws.state, floor, ws.bwd.denoms);
  lambda_node_from_denoms(stats, ws.bwd.denoms, ws.lambda_node);
  adjoint_backward_into(ws.adj, g, params, ws.state, ws.lambda_node, ws.bwd);
  std::fill(grad_row, grad_row + g.num_edges(), 0.0);
  gradient_fast_one(params, ws.state, ws.adj, grad_row);
  if (slow) {
    for (int e = 0; e < g.num_edges(); ++e)
      if ((*slow)[static_cast<std::size_t>(e)]) grad_row[e] = 0.0;
    gradient_full_one(g, params, ws.state, ws.adj, ws.bwd, grad_row, slow);
  }
  return obj;
}

}  // namespace detail

// Gradient ascent on the class-marginal log-likelihood with the fixed rate
// epsilon = c N / (M T). Safety net beyond the base scheme: when the
// objective drops for `divergence_patience` consecutive iterations, epsilon
// is halved and the event recorded.
inline LearnResult learn(const Graph& g, const ClassSet& set, const LearnConfig& cfg = {}) {
  validate_config(cfg);
  const int n = g.num_nodes();
  const int num_edges = g.num_edges();
  LearnResult result;
  if (cfg.init_params) {
    validate_params(g, *cfg.init_params);
    result.params = *cfg.init_params;
  } else {
    result.params = EdgeParams(g, cfg.alpha_init);
  }
  const long long total = set.total_cascades();
  if (set.classes.empty() || total == 0) return result;
  if (set.num_nodes != n) throw std::invalid_argument("learn: class set/graph mismatch");

  const std::size_t num_classes = set.classes.size();
  const int workers = resolve_workers(cfg.workers);
  std::vector<detail::WorkerScratch> scratch(static_cast<std::size_t>(workers));
  std::vector<double> grad_rows(num_classes * static_cast<std::size_t>(num_edges));
  std::vector<double> objs(num_classes);
  std::vector<double> grad(static_cast<std::size_t>(num_edges));

  double epsilon = cfg.step_c * static_cast<double>(n) /
                   (static_cast<double>(total) * static_cast<double>(set.horizon));
  DivergenceGuard guard{cfg.divergence_patience};
  auto& alpha = result.params;
  std::vector<std::uint8_t> slow(static_cast<std::size_t>(num_edges), 0);
  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    bool any_slow = false;
    for (int e = 0; e < num_edges; ++e) {
      slow[static_cast<std::size_t>(e)] = alpha[e] < cfg.alpha_min ? 1 : 0;
      any_slow |= slow[static_cast<std::size_t>(e)] != 0;
    }
    const std::vector<std::uint8_t>* slow_ptr = any_slow ? &slow : nullptr;
    parallel_chunks(num_classes, workers, [&](int wid, std::size_t b, std::size_t e) {
      auto& ws = scratch[static_cast<std::size_t>(wid)];
      for (std::size_t s = b; s < e; ++s) {
        objs[s] = detail::learn_step_one_class(g, alpha, set.classes[s], set.horizon,
                                               cfg.mu_floor, ws,
                                               grad_rows.data() + s * static_cast<std::size_t>(num_edges),
                                               slow_ptr);
      }
    });
    double obj = 0.0;
    for (std::size_t s = 0; s < num_classes; ++s) obj += objs[s];
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t s = 0; s < num_classes; ++s) {
      const double* row = grad_rows.data() + s * static_cast<std::size_t>(num_edges);
      for (int e = 0; e < num_edges; ++e) grad[static_cast<std::size_t>(e)] += row[e];
    }
    double max_delta = 0.0;
    for (int e = 0; e < num_edges; ++e) {
      const double updated = detail::bounded_step(alpha[e], epsilon * grad[static_cast<std::size_t>(e)], cfg);
      max_delta = std::max(max_delta, std::abs(updated - alpha[e]));
      alpha[e] = updated;
    }
    result.trace.push_back(TraceRow{iter, obj, max_delta, epsilon});
    result.iterations = iter;
    result.final_objective = obj;
    if (guard.observe(obj)) {
      epsilon *= 0.5;
      result.epsilon_halvings.push_back(iter);
    }
    if (max_delta < cfg.tolerance) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace icdmp
