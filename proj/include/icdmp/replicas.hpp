#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "icdmp/cascades.hpp"
#include "icdmp/dmp.hpp"
#include "icdmp/graph.hpp"
#include "icdmp/metrics.hpp"
#include "icdmp/parallel.hpp"
#include "icdmp/slicer.hpp"

namespace icdmp {

// Uniform mixture of independent parameter sets over one shared topology.
// The predicted activation-time law is the plain average over replicas; a
// single replica reduces exactly to the base model.
struct ReplicaModel {
  std::vector<EdgeParams> replicas;

  int size() const { return static_cast<int>(replicas.size()); }

  static ReplicaModel single(EdgeParams params) {
    ReplicaModel m;
    m.replicas.push_back(std::move(params));
    return m;
  }
};

inline void validate_model(const Graph& g, const ReplicaModel& model) {
  if (model.replicas.empty()) throw std::invalid_argument("replica model: needs >= 1 replica");
  for (const auto& params : model.replicas) validate_params(g, params);
}

struct MixtureMarginals {
  int num_nodes = 0;
  int horizon = 0;
  std::vector<DmpState> states;  // one per replica
  std::vector<double> p_mix;     // [t*N + i] cumulative mixture marginal
  std::vector<double> mu_mix;    // [t*N + i] mixture activation-time law

  double prob(int i, int t) const { return p_mix[static_cast<std::size_t>(t) * num_nodes + i]; }
  double law(int i, int t) const { return mu_mix[static_cast<std::size_t>(t) * num_nodes + i]; }
};

inline MixtureMarginals mixture_marginals(const Graph& g, const ReplicaModel& model,
                                          const InitialCondition& init, int horizon) {
  validate_model(g, model);
  MixtureMarginals out;
  out.num_nodes = g.num_nodes();
  out.horizon = horizon;
  out.states.resize(model.replicas.size());
  detail::DmpScratch scratch;
  for (std::size_t r = 0; r < model.replicas.size(); ++r)
    detail::dmp_forward_into(out.states[r], g, model.replicas[r], init, horizon, scratch);
  const std::size_t cells = static_cast<std::size_t>(horizon + 1) * g.num_nodes();
  out.p_mix.assign(cells, 0.0);
  out.mu_mix.assign(cells, 0.0);
  const double inv_r = 1.0 / static_cast<double>(model.size());
  for (const auto& state : out.states) {
    for (int t = 0; t <= horizon; ++t)
      for (int i = 0; i < g.num_nodes(); ++i) {
        out.p_mix[static_cast<std::size_t>(t) * g.num_nodes() + i] += inv_r * state.marginal(i, t);
        out.mu_mix[static_cast<std::size_t>(t) * g.num_nodes() + i] +=
            inv_r * activation_time_marginal(state, i, t);
      }
  }
  return out;
}

namespace detail {

// Floored mixture denominators D[t*N+i] = R * max(mu_mix, floor). Dividing the
// per-replica data terms by D is exactly the derivative of
// log(max(mu_mix, floor)) with respect to each replica's marginals, and at
// R = 1 it coincides with the single-model denominators.
inline void mixture_denominators(const std::vector<const DmpState*>& states, double floor,
                                 std::vector<double>& out) {
  const int n = states.front()->num_nodes;
  const int horizon = states.front()->horizon;
  const double inv_r = 1.0 / static_cast<double>(states.size());
  out.assign(static_cast<std::size_t>(horizon + 1) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t <= horizon; ++t) {
      double mu_mix = 0.0;
      for (const DmpState* state : states) mu_mix += activation_time_marginal(*state, i, t);
      mu_mix *= inv_r;
      out[static_cast<std::size_t>(t) * n + i] =
          static_cast<double>(states.size()) * std::max(mu_mix, floor);
    }
  }
}

inline double mixture_objective_one_class(const ClassStats& stats,
                                          const std::vector<double>& denoms, int num_replicas) {
  double obj = 0.0;
  const int n = stats.num_nodes;
  for (int i = 0; i < n; ++i) {
    for (int t = 0; t <= stats.horizon; ++t) {
      const long long m = stats.count(i, t);
      if (m == 0) continue;
      obj += static_cast<double>(m) *
             std::log(denoms[static_cast<std::size_t>(t) * n + i] / num_replicas);
    }
  }
  return obj;
}

}  // namespace detail

// Mixture log-likelihood; states indexed [replica * num_classes + class].
inline double mixture_objective(const ClassSet& set, const std::vector<DmpState>& states,
                                int num_replicas, double mu_floor = kMuFloor) {
  if (states.size() != set.classes.size() * static_cast<std::size_t>(num_replicas))
    throw std::invalid_argument("mixture_objective: expected one state per (replica, class)");
  double obj = 0.0;
  std::vector<double> denoms;
  std::vector<const DmpState*> per_class(static_cast<std::size_t>(num_replicas));
  for (std::size_t s = 0; s < set.classes.size(); ++s) {
    for (int r = 0; r < num_replicas; ++r)
      per_class[static_cast<std::size_t>(r)] = &states[static_cast<std::size_t>(r) * set.classes.size() + s];
    detail::mixture_denominators(per_class, mu_floor, denoms);
    obj += detail::mixture_objective_one_class(set.classes[s], denoms, num_replicas);
  }
  return obj;
}

// Per-replica objective derivatives. Each replica runs the standard backward
// pass against its own forward state; only the node-multiplier denominators
// couple the replicas, through the mixture law.
inline std::vector<std::vector<double>> mixture_gradient(const Graph& g, const ReplicaModel& model,
                                                         const ClassSet& set,
                                                         const std::vector<DmpState>& states,
                                                         double mu_floor = kMuFloor) {
  const int num_replicas = model.size();
  const std::size_t num_classes = set.classes.size();
  if (states.size() != num_classes * static_cast<std::size_t>(num_replicas))
    throw std::invalid_argument("mixture_gradient: expected one state per (replica, class)");
  std::vector<std::vector<double>> grads(
      static_cast<std::size_t>(num_replicas),
      std::vector<double>(static_cast<std::size_t>(g.num_edges()), 0.0));
  detail::AdjointScratch scratch;
  std::vector<double> denoms;
  std::vector<double> lambda_node;
  AdjointState adj;
  std::vector<const DmpState*> per_class(static_cast<std::size_t>(num_replicas));
  for (std::size_t s = 0; s < num_classes; ++s) {
    for (int r = 0; r < num_replicas; ++r)
      per_class[static_cast<std::size_t>(r)] = &states[static_cast<std::size_t>(r) * num_classes + s];
    detail::mixture_denominators(per_class, mu_floor, denoms);
    detail::lambda_node_from_denoms(set.classes[s], denoms, lambda_node);
    for (int r = 0; r < num_replicas; ++r) {
      const DmpState& state = *per_class[static_cast<std::size_t>(r)];
      detail::adjoint_backward_into(adj, g, model.replicas[static_cast<std::size_t>(r)], state,
                                    lambda_node, scratch);
      detail::gradient_fast_one(model.replicas[static_cast<std::size_t>(r)], state, adj,
                                grads[static_cast<std::size_t>(r)].data());
    }
  }
  return grads;
}

struct ReplicaLearnResult {
  ReplicaModel model;
  std::vector<TraceRow> trace;
  std::vector<int> epsilon_halvings;
  int iterations = 0;
  bool converged = false;
  double final_objective = 0.0;
};

// Gradient ascent on the mixture objective; same update rule, learning rate
// and stopping logic as the single-model learner, applied per replica.
inline ReplicaLearnResult learn_replicas(const Graph& g, const ClassSet& set, ReplicaModel init,
                                         const LearnConfig& cfg = {}) {
  validate_config(cfg);
  validate_model(g, init);
  const int n = g.num_nodes();
  const int num_edges = g.num_edges();
  const int num_replicas = init.size();
  ReplicaLearnResult result;
  result.model = std::move(init);
  const long long total = set.total_cascades();
  if (set.classes.empty() || total == 0) return result;
  if (set.num_nodes != n) throw std::invalid_argument("learn_replicas: class set/graph mismatch");

  const std::size_t num_classes = set.classes.size();
  const std::size_t num_units = num_classes * static_cast<std::size_t>(num_replicas);
  const int workers = resolve_workers(cfg.workers);
  std::vector<DmpState> states(num_units);
  std::vector<detail::DmpScratch> fwd_scratch(static_cast<std::size_t>(workers));
  std::vector<detail::AdjointScratch> bwd_scratch(static_cast<std::size_t>(workers));
  std::vector<AdjointState> adj_scratch(static_cast<std::size_t>(workers));
  std::vector<std::vector<double>> lambda_nodes(num_classes);
  std::vector<double> objs(num_classes);
  std::vector<double> grad_rows(num_units * static_cast<std::size_t>(num_edges));

  double epsilon = cfg.step_c * static_cast<double>(n) /
                   (static_cast<double>(total) * static_cast<double>(set.horizon));
  DivergenceGuard guard{cfg.divergence_patience};
  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    parallel_chunks(num_units, workers, [&](int wid, std::size_t b, std::size_t e) {
      auto& scratch = fwd_scratch[static_cast<std::size_t>(wid)];
      for (std::size_t u = b; u < e; ++u) {
        const std::size_t r = u / num_classes;
        const std::size_t s = u % num_classes;
        detail::dmp_forward_into(states[u], g, result.model.replicas[r], set.classes[s].init,
                                 set.horizon, scratch);
      }
    });
    parallel_chunks(num_classes, workers, [&](int, std::size_t b, std::size_t e) {
      std::vector<double> denoms;
      std::vector<const DmpState*> per_class(static_cast<std::size_t>(num_replicas));
      for (std::size_t s = b; s < e; ++s) {
        for (int r = 0; r < num_replicas; ++r)
          per_class[static_cast<std::size_t>(r)] = &states[static_cast<std::size_t>(r) * num_classes + s];
        detail::mixture_denominators(per_class, cfg.mu_floor, denoms);
        objs[s] = detail::mixture_objective_one_class(set.classes[s], denoms, num_replicas);
        detail::lambda_node_from_denoms(set.classes[s], denoms, lambda_nodes[s]);
      }
    });
    parallel_chunks(num_units, workers, [&](int wid, std::size_t b, std::size_t e) {
      auto& scratch = bwd_scratch[static_cast<std::size_t>(wid)];
      auto& adj = adj_scratch[static_cast<std::size_t>(wid)];
      for (std::size_t u = b; u < e; ++u) {
        const std::size_t r = u / num_classes;
        const std::size_t s = u % num_classes;
        const auto& params = result.model.replicas[r];
        detail::adjoint_backward_into(adj, g, params, states[u], lambda_nodes[s], scratch);
        double* row = grad_rows.data() + u * static_cast<std::size_t>(num_edges);
        std::fill(row, row + num_edges, 0.0);
        detail::gradient_fast_one(params, states[u], adj, row);
        bool any_slow = false;
        for (int ed = 0; ed < num_edges; ++ed)
          if (params[ed] < cfg.alpha_min) any_slow = true;
        if (any_slow) {
          std::vector<std::uint8_t> slow(static_cast<std::size_t>(num_edges), 0);
          for (int ed = 0; ed < num_edges; ++ed)
            if (params[ed] < cfg.alpha_min) {
              slow[static_cast<std::size_t>(ed)] = 1;
              row[ed] = 0.0;
            }
          detail::gradient_full_one(g, params, states[u], adj, scratch, row, &slow);
        }
      }
    });
    double obj = 0.0;
    for (std::size_t s = 0; s < num_classes; ++s) obj += objs[s];
    double max_delta = 0.0;
    for (int r = 0; r < num_replicas; ++r) {
      auto& alpha = result.model.replicas[static_cast<std::size_t>(r)];
      for (int e = 0; e < num_edges; ++e) {
        double ge = 0.0;
        for (std::size_t s = 0; s < num_classes; ++s)
          ge += grad_rows[(static_cast<std::size_t>(r) * num_classes + s) *
                              static_cast<std::size_t>(num_edges) +
                          static_cast<std::size_t>(e)];
        const double updated = detail::bounded_step(alpha[e], epsilon * ge, cfg);
        max_delta = std::max(max_delta, std::abs(updated - alpha[e]));
        alpha[e] = updated;
      }
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

// Mixture prediction table over a set of initial conditions, for evaluation.
inline MarginalTable mixture_marginal_table(const Graph& g, const ReplicaModel& model,
                                            const std::vector<InitialCondition>& inits,
                                            int horizon, int workers = 0) {
  validate_model(g, model);
  MarginalTable table;
  table.num_classes = static_cast<int>(inits.size());
  table.num_nodes = g.num_nodes();
  table.horizon = horizon;
  table.p.assign(static_cast<std::size_t>(table.num_classes) * (horizon + 1) * g.num_nodes(), 0.0);
  table.se.assign(table.p.size(), 0.0);
  parallel_chunks(inits.size(), workers, [&](int, std::size_t b, std::size_t e) {
    for (std::size_t s = b; s < e; ++s) {
      const auto mix = mixture_marginals(g, model, inits[s], horizon);
      for (int t = 0; t <= horizon; ++t)
        for (int i = 0; i < g.num_nodes(); ++i)
          table.p[table.index(static_cast<int>(s), i, t)] = mix.prob(i, t);
    }
  });
  return table;
}

struct LadderResult {
  ReplicaModel model;
  ReplicaLearnResult training;
  std::optional<double> delta_p;  // filled when an oracle table is supplied
};

// One rung of the warm-start ladder: grow the replica count by one, seed the
// new model with the previous solution (last replica duplicated), break the
// symmetry with multiplicative noise alpha *= 1 + u, u ~ U(-sigma, sigma),
// then train the mixture objective.
inline LadderResult learn_ladder(const Graph& g, const ClassSet& set, const ReplicaModel& base,
                                 int target_replicas, double sigma, const LearnConfig& cfg,
                                 Rng& rng, const MarginalTable* oracle = nullptr) {
  validate_model(g, base);
  if (target_replicas != base.size() + 1)
    throw std::invalid_argument("learn_ladder: the ladder grows one replica per rung");
  if (!(sigma > 0.0))
    throw std::invalid_argument("learn_ladder: sigma must be positive, otherwise replica "
                                "symmetry never breaks");
  ReplicaModel start = base;
  start.replicas.push_back(base.replicas.back());
  for (auto& params : start.replicas)
    for (auto& a : params.alpha)
      a = std::clamp(a * (1.0 + rng.uniform(-sigma, sigma)), cfg.alpha_min, cfg.alpha_max);
  LadderResult out;
  out.training = learn_replicas(g, set, std::move(start), cfg);
  out.model = out.training.model;
  if (oracle) {
    std::vector<InitialCondition> inits;
    inits.reserve(set.classes.size());
    for (const auto& cls : set.classes) inits.push_back(cls.init);
    out.delta_p =
        marginal_distance(mixture_marginal_table(g, out.model, inits, set.horizon, cfg.workers),
                          *oracle);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Replica model files: header "replicas=<R>", rows "i j a_1 ... a_R".
// ---------------------------------------------------------------------------

inline void write_replica_model(const std::string& path, const Graph& g,
                                const ReplicaModel& model) {
  validate_model(g, model);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "replicas=" << model.size() << "\n";
  out << "# nodes " << g.num_nodes() << "\n";
  char buf[64];
  for (int e = 0; e < g.num_edges(); ++e) {
    const auto [u, v] = g.edge(e);
    out << u << ' ' << v;
    for (const auto& params : model.replicas) {
      std::snprintf(buf, sizeof(buf), "%.17g", params[e]);
      out << ' ' << buf;
    }
    out << '\n';
  }
}

inline ReplicaModel read_replica_model(const std::string& path, const Graph& g) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("replicas=", 0) != 0)
    throw std::runtime_error(path + ": missing replicas=<R> header");
  const int num_replicas = std::stoi(line.substr(9));
  if (num_replicas < 1) throw std::runtime_error(path + ": invalid replica count");
  ReplicaModel model;
  model.replicas.assign(static_cast<std::size_t>(num_replicas), EdgeParams(g, 0.0));
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(g.num_edges()), 0);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    int u, v;
    if (!(ls >> u)) continue;
    if (!(ls >> v)) throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad row");
    const int e = [&] {
      if (u > v) std::swap(u, v);
      const auto& es = g.edges();
      const auto it = std::lower_bound(es.begin(), es.end(), std::make_pair(u, v));
      if (it == es.end() || *it != std::make_pair(u, v))
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": edge not in graph");
      return static_cast<int>(it - es.begin());
    }();
    for (int r = 0; r < num_replicas; ++r) {
      double a;
      if (!(ls >> a))
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": missing alpha column");
      model.replicas[static_cast<std::size_t>(r)][e] = a;
    }
    seen[static_cast<std::size_t>(e)] = 1;
  }
  for (std::size_t e = 0; e < seen.size(); ++e)
    if (!seen[e]) throw std::runtime_error(path + ": missing edge row");
  validate_model(g, model);
  return model;
}

}  // namespace icdmp
