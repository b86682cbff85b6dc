#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "icdmp/cascades.hpp"
#include "icdmp/dmp.hpp"
#include "icdmp/graph.hpp"
#include "icdmp/parallel.hpp"
#include "icdmp/slicer.hpp"

namespace icdmp {

// ---------------------------------------------------------------------------
// DMPrec: the same objective differentiated by forward propagation of message
// sensitivities phi[target edge][message](t) = d pm(t) / d alpha_target.
// One sensitivity system per target edge makes a gradient cost quadratic in
// |E|; it exists here as an independent cross-check of the adjoint gradient
// and is only intended for validation-scale graphs.
// ---------------------------------------------------------------------------

namespace detail {

inline double dmprec_one_class_edge(const Graph& g, const EdgeParams& params,
                                    const DmpState& state, const std::vector<double>& coefs,
                                    int target_edge, std::vector<double>& phi_prev,
                                    std::vector<double>& phi_cur, AdjointScratch& scratch) {
  const int n = state.num_nodes;
  const int msgs = state.num_msgs;
  scratch.ensure(g.max_degree());
  auto& fs = scratch.fs;
  auto& gs = scratch.gs;
  auto& pre_p = scratch.pre_p;
  auto& pre_w = scratch.pre_w;
  auto& suf_p = scratch.suf_p;
  auto& suf_w = scratch.suf_w;
  phi_prev.assign(static_cast<std::size_t>(msgs), 0.0);  // d pm(0) / d alpha = 0
  phi_cur.assign(static_cast<std::size_t>(msgs), 0.0);
  double acc = 0.0;
  for (int t = 1; t <= state.horizon; ++t) {
    const double* pm_prev = state.pm.data() + static_cast<std::size_t>(t - 1) * msgs;
    for (int k = 0; k < n; ++k) {
      const auto arcs = g.neighbors(k);
      const int d = static_cast<int>(arcs.size());
      const double base = 1.0 - state.init.prob(k);
      if (base == 0.0) {
        for (int kk = 0; kk < d; ++kk) phi_cur[static_cast<std::size_t>(arcs[static_cast<std::size_t>(kk)].out_msg)] = 0.0;
        continue;
      }
      for (int kk = 0; kk < d; ++kk) {
        const auto& arc = arcs[static_cast<std::size_t>(kk)];
        const double pm_in = pm_prev[arc.in_msg];
        fs[static_cast<std::size_t>(kk)] = 1.0 - params[arc.edge] * pm_in;
        gs[static_cast<std::size_t>(kk)] =
            params[arc.edge] * phi_prev[static_cast<std::size_t>(arc.in_msg)] +
            (arc.edge == target_edge ? pm_in : 0.0);
      }
      pre_p[0] = 1.0;
      pre_w[0] = 0.0;
      for (int kk = 0; kk < d; ++kk) {
        pre_p[static_cast<std::size_t>(kk) + 1] =
            pre_p[static_cast<std::size_t>(kk)] * fs[static_cast<std::size_t>(kk)];
        pre_w[static_cast<std::size_t>(kk) + 1] =
            pre_w[static_cast<std::size_t>(kk)] * fs[static_cast<std::size_t>(kk)] +
            pre_p[static_cast<std::size_t>(kk)] * gs[static_cast<std::size_t>(kk)];
      }
      suf_p[static_cast<std::size_t>(d)] = 1.0;
      suf_w[static_cast<std::size_t>(d)] = 0.0;
      for (int kk = d - 1; kk >= 0; --kk) {
        suf_p[static_cast<std::size_t>(kk)] =
            fs[static_cast<std::size_t>(kk)] * suf_p[static_cast<std::size_t>(kk) + 1];
        suf_w[static_cast<std::size_t>(kk)] =
            gs[static_cast<std::size_t>(kk)] * suf_p[static_cast<std::size_t>(kk) + 1] +
            fs[static_cast<std::size_t>(kk)] * suf_w[static_cast<std::size_t>(kk) + 1];
      }
      // d p_k(t) / d alpha uses the full neighbor set
      acc += coefs[static_cast<std::size_t>(t) * n + k] * base * pre_w[static_cast<std::size_t>(d)];
      // d pm_{k->l}(t) / d alpha excludes the receiving neighbor l
      for (int kk = 0; kk < d; ++kk) {
        const double w = pre_w[static_cast<std::size_t>(kk)] * suf_p[static_cast<std::size_t>(kk) + 1] +
                         pre_p[static_cast<std::size_t>(kk)] * suf_w[static_cast<std::size_t>(kk) + 1];
        phi_cur[static_cast<std::size_t>(arcs[static_cast<std::size_t>(kk)].out_msg)] = base * w;
      }
    }
    phi_prev.swap(phi_cur);
  }
  return acc;
}

}  // namespace detail

// Gradient of the class-marginal log-likelihood by forward sensitivity
// propagation; agrees with the adjoint gradient up to rounding.
inline std::vector<double> dmprec_gradient(const Graph& g, const EdgeParams& params,
                                           const ClassSet& set, double mu_floor = kMuFloor,
                                           int workers = 0) {
  validate_params(g, params);
  const int num_edges = g.num_edges();
  const std::size_t num_classes = set.classes.size();
  std::vector<double> grad_rows(num_classes * static_cast<std::size_t>(num_edges), 0.0);
  parallel_chunks(num_classes, workers, [&](int, std::size_t b, std::size_t e) {
    detail::DmpScratch fwd;
    detail::AdjointScratch scratch;
    DmpState state;
    std::vector<double> coefs, phi_prev, phi_cur;
    for (std::size_t s = b; s < e; ++s) {
      const auto& stats = set.classes[s];
      detail::dmp_forward_into(state, g, params, stats.init, set.horizon, fwd);
      // data coefficients: d O / d p_i(t) with floored activation-time laws
      const int n = state.num_nodes;
      coefs.assign(static_cast<std::size_t>(set.horizon + 1) * n, 0.0);
      for (int i = 0; i < n; ++i) {
        for (int t = 0; t <= set.horizon; ++t) {
          double c = 0.0;
          if (t < set.horizon) {
            const long long m_here = stats.count(i, t);
            if (m_here != 0)
              c += static_cast<double>(m_here) /
                   std::max(activation_time_marginal(state, i, t), mu_floor);
            const long long m_next = stats.count(i, t + 1);
            if (m_next != 0)
              c -= static_cast<double>(m_next) /
                   std::max(activation_time_marginal(state, i, t + 1), mu_floor);
          }
          coefs[static_cast<std::size_t>(t) * n + i] = c;
        }
      }
      double* row = grad_rows.data() + s * static_cast<std::size_t>(num_edges);
      for (int target = 0; target < num_edges; ++target)
        row[target] =
            detail::dmprec_one_class_edge(g, params, state, coefs, target, phi_prev, phi_cur, scratch);
    }
  });
  std::vector<double> grad(static_cast<std::size_t>(num_edges), 0.0);
  for (std::size_t s = 0; s < num_classes; ++s)
    for (int e = 0; e < num_edges; ++e)
      grad[static_cast<std::size_t>(e)] += grad_rows[s * static_cast<std::size_t>(num_edges) + e];
  return grad;
}

// Same training loop as the adjoint learner with the gradient swapped out;
// exists so the two learners can be compared end to end.
inline LearnResult learn_dmprec(const Graph& g, const ClassSet& set, const LearnConfig& cfg = {}) {
  validate_config(cfg);
  LearnResult result;
  if (cfg.init_params) {
    validate_params(g, *cfg.init_params);
    result.params = *cfg.init_params;
  } else {
    result.params = EdgeParams(g, cfg.alpha_init);
  }
  const long long total = set.total_cascades();
  if (set.classes.empty() || total == 0) return result;
  const int num_edges = g.num_edges();
  double epsilon = cfg.step_c * static_cast<double>(g.num_nodes()) /
                   (static_cast<double>(total) * static_cast<double>(set.horizon));
  DivergenceGuard guard{cfg.divergence_patience};
  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    std::vector<DmpState> states;
    states.reserve(set.classes.size());
    for (const auto& cls : set.classes)
      states.push_back(dmp_forward(g, result.params, cls.init, set.horizon));
    const double obj = objective(set, states, cfg.mu_floor);
    const auto grad = dmprec_gradient(g, result.params, set, cfg.mu_floor, cfg.workers);
    double max_delta = 0.0;
    for (int e = 0; e < num_edges; ++e) {
      const double updated =
          detail::bounded_step(result.params[e], epsilon * grad[static_cast<std::size_t>(e)], cfg);
      max_delta = std::max(max_delta, std::abs(updated - result.params[e]));
      result.params[e] = updated;
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

// ---------------------------------------------------------------------------
// Exact likelihood for fully observed cascades. The data enters only through
// failure counts per directed edge and counts of "trigger sets" (the set of
// neighbors that activated one step before the node), so evaluation cost is
// independent of the number of cascades after aggregation.
// ---------------------------------------------------------------------------

struct MlStats {
  int num_nodes = 0;
  int horizon = 0;
  long long num_cascades = 0;
  std::vector<long long> fail_counts;  // per directed message k->i
  struct Trigger {
    int node = 0;
    std::vector<int> msgs;  // incoming directed messages that may have fired
    long long count = 0;
  };
  std::vector<Trigger> triggers;
};

inline MlStats aggregate_ml_stats(const Graph& g, const std::vector<Cascade>& cascades) {
  MlStats stats;
  stats.num_nodes = g.num_nodes();
  stats.num_cascades = static_cast<long long>(cascades.size());
  stats.fail_counts.assign(static_cast<std::size_t>(g.num_messages()), 0);
  std::map<std::pair<int, std::vector<int>>, long long> trigger_counts;
  for (const auto& c : cascades) {
    if (static_cast<int>(c.tau.size()) != g.num_nodes())
      throw std::invalid_argument("ml: cascade must carry every node's activation time");
    if (stats.horizon == 0) stats.horizon = c.horizon;
    if (c.horizon != stats.horizon) throw std::invalid_argument("ml: mixed horizons");
    for (int i = 0; i < g.num_nodes(); ++i) {
      const int tau_i = c.tau[static_cast<std::size_t>(i)];
      if (tau_i == 0) continue;  // initially active: probability one
      std::vector<int> fired;
      for (const auto& arc : g.neighbors(i)) {
        const int tau_k = c.tau[static_cast<std::size_t>(arc.node)];
        if (tau_k <= tau_i - 2) ++stats.fail_counts[static_cast<std::size_t>(arc.in_msg)];
        if (tau_i < c.horizon && tau_k == tau_i - 1) fired.push_back(arc.in_msg);
      }
      if (tau_i < c.horizon) {
        if (fired.empty())
          throw std::invalid_argument("ml: activation without an activated neighbor one step "
                                      "earlier; data inconsistent with the cascade model");
        std::sort(fired.begin(), fired.end());
        ++trigger_counts[{i, std::move(fired)}];
      }
    }
  }
  for (auto& [key, count] : trigger_counts)
    stats.triggers.push_back(MlStats::Trigger{key.first, key.second, count});
  return stats;
}

// -log P of the data; +infinity when a log argument is not positive.
inline double ml_objective_from_stats(const Graph& g, const EdgeParams& params,
                                      const MlStats& stats) {
  validate_params(g, params);
  double neg_log = 0.0;
  for (int m = 0; m < g.num_messages(); ++m) {
    const long long fails = stats.fail_counts[static_cast<std::size_t>(m)];
    if (fails == 0) continue;
    const double one_minus = 1.0 - params[m >> 1];
    if (one_minus <= 0.0) return std::numeric_limits<double>::infinity();
    neg_log -= static_cast<double>(fails) * std::log(one_minus);
  }
  for (const auto& trig : stats.triggers) {
    double prod = 1.0;
    for (const int m : trig.msgs) prod *= 1.0 - params[m >> 1];
    const double success = 1.0 - prod;
    if (success <= 0.0) return std::numeric_limits<double>::infinity();
    neg_log -= static_cast<double>(trig.count) * std::log(success);
  }
  return neg_log;
}

inline double ml_objective(const std::vector<Cascade>& cascades, const Graph& g,
                           const EdgeParams& params) {
  return ml_objective_from_stats(g, params, aggregate_ml_stats(g, cascades));
}

inline void ml_gradient_from_stats(const Graph& g, const EdgeParams& params, const MlStats& stats,
                                   std::vector<double>& grad) {
  grad.assign(static_cast<std::size_t>(g.num_edges()), 0.0);
  for (int m = 0; m < g.num_messages(); ++m) {
    const long long fails = stats.fail_counts[static_cast<std::size_t>(m)];
    if (fails != 0) grad[static_cast<std::size_t>(m >> 1)] += static_cast<double>(fails) / (1.0 - params[m >> 1]);
  }
  std::vector<double> pre, suf;
  for (const auto& trig : stats.triggers) {
    const std::size_t k = trig.msgs.size();
    pre.assign(k + 1, 1.0);
    suf.assign(k + 1, 1.0);
    for (std::size_t a = 0; a < k; ++a)
      pre[a + 1] = pre[a] * (1.0 - params[trig.msgs[a] >> 1]);
    for (std::size_t a = k; a-- > 0;)
      suf[a] = (1.0 - params[trig.msgs[a] >> 1]) * suf[a + 1];
    const double success = 1.0 - pre[k];
    if (success <= 0.0) continue;  // objective is +inf here; gradient unused
    for (std::size_t a = 0; a < k; ++a) {
      const double rest = pre[a] * suf[a + 1];  // leave-one-out product
      grad[static_cast<std::size_t>(trig.msgs[a] >> 1)] -=
          static_cast<double>(trig.count) * rest / success;
    }
  }
}

struct MlConfig {
  int max_iterations = 50000;
  double projected_grad_tol = 1e-8;
  double armijo = 1e-4;
  int workers = 0;  // evaluation is cheap after aggregation; kept for symmetry
};

// Projected gradient descent with backtracking on the convex -log P under the
// box constraint 0 <= alpha <= 1; the optimum is global up to tolerance.
inline EdgeParams ml_learn(const std::vector<Cascade>& cascades, const Graph& g,
                           const MlConfig& cfg = {}) {
  const MlStats stats = aggregate_ml_stats(g, cascades);
  const int num_edges = g.num_edges();
  EdgeParams x(g, 0.5);
  if (num_edges == 0 || cascades.empty()) return x;
  std::vector<double> grad;
  EdgeParams trial = x;
  double fx = ml_objective_from_stats(g, x, stats);
  double step = 1.0 / std::max<long long>(1, stats.num_cascades);
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    ml_gradient_from_stats(g, x, stats, grad);
    double pg_norm = 0.0;
    for (int e = 0; e < num_edges; ++e) {
      double pg = grad[static_cast<std::size_t>(e)];
      if (x[e] <= 0.0 && pg > 0.0) pg = 0.0;
      if (x[e] >= 1.0 && pg < 0.0) pg = 0.0;
      pg_norm = std::max(pg_norm, std::abs(pg));
    }
    if (pg_norm < cfg.projected_grad_tol) break;
    bool accepted = false;
    while (step > 1e-18) {
      double decrease = 0.0;
      for (int e = 0; e < num_edges; ++e) {
        trial[e] = std::clamp(x[e] - step * grad[static_cast<std::size_t>(e)], 0.0, 1.0);
        decrease += grad[static_cast<std::size_t>(e)] * (x[e] - trial[e]);
      }
      const double ft = ml_objective_from_stats(g, trial, stats);
      if (ft <= fx - cfg.armijo * decrease) {
        x = trial;
        fx = ft;
        step *= 2.0;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no representable step improves the objective
  }
  return x;
}

}  // namespace icdmp
