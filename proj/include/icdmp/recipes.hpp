#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "icdmp/experiment.hpp"

namespace icdmp {

// Batch experiment recipes, each writing CSVs plus a recipe.txt stating the
// full-scale reference settings and the desk-scale reductions applied here.

struct RecipeCmd {
  std::string name;
  std::uint64_t seed = 1;
  int workers = 0;
  std::string out = ".";
  double scale = 1.0;  // multiplies cascade counts; lets users shrink/grow runs
};

namespace recipes_detail {

struct Instance {
  Graph graph;
  EdgeParams truth;
  ObservationMask mask;
};

inline Instance make_instance(const std::string& topology, ParamScheme scheme, double xi,
                              MaskStrategy strategy, std::uint64_t seed) {
  Instance inst;
  Rng graph_rng = stream_rng(seed, Stream::graph);
  inst.graph = generate(parse_topology(topology), graph_rng);
  if (scheme == ParamScheme::uniform) {
    Rng param_rng = stream_rng(seed, Stream::params);
    inst.truth = sample_uniform_params(inst.graph, param_rng);
  } else {
    inst.truth = degree_dependent_params(inst.graph);
  }
  Rng mask_rng = stream_rng(seed, Stream::mask);
  inst.mask = make_mask(inst.graph, xi, strategy, mask_rng);
  return inst;
}

struct RecoveryResult {
  double l1 = 0.0;
  int iterations = 0;
};

inline RecoveryResult recovery_run(const Instance& inst, int horizon, long long num_cascades,
                                   std::uint64_t seed, int workers, bool leaf_exclude) {
  SimOptions opts;
  opts.horizon = horizon;
  opts.num_cascades = num_cascades;
  opts.workers = workers;
  const ClassSet set = simulate_class_stats(inst.graph, inst.truth, inst.mask, opts, seed);
  LearnConfig cfg;
  cfg.workers = workers;
  const LearnResult result = learn(inst.graph, set, cfg);
  std::vector<std::uint8_t> excluded;
  if (leaf_exclude) excluded = leaf_excluded_edges(inst.graph, inst.mask);
  RecoveryResult out;
  out.l1 = param_l1_error(result.params, inst.truth, excluded.empty() ? nullptr : &excluded);
  out.iterations = result.iterations;
  return out;
}

inline void mean_stderr(const std::vector<double>& xs, double& mean, double& se) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  se = xs.size() > 1 ? std::sqrt(var / (xs.size() - 1) / xs.size()) : 0.0;
}

inline long long scaled(long long m, double scale) {
  return std::max<long long>(1, static_cast<long long>(std::llround(m * scale)));
}

inline void write_notes(const std::string& out, const std::string& text) {
  std::ofstream notes(fs_detail::join(out, "recipe.txt"));
  notes << text;
}

// Parameter-recovery error curves over cascade-count sweeps, averaged over
// paired (network, parameters) instances.
inline void recovery_sweep_csv(const std::string& path, const std::vector<std::string>& topologies,
                               int horizon, const std::vector<long long>& cascade_counts,
                               double xi, bool leaf_exclude_trees, int instances,
                               std::uint64_t seed, int workers) {
  std::ofstream csv(path);
  csv << "topology,xi,M,mean_l1,stderr,n_instances\n";
  char buf[200];
  for (const auto& topo : topologies) {
    const bool leaf_rule = leaf_exclude_trees && (topo.rfind("tree", 0) == 0 ||
                                                  topo.rfind("sftree", 0) == 0);
    for (const long long m : cascade_counts) {
      std::vector<double> errors;
      for (int rep = 0; rep < instances; ++rep) {
        const auto inst_seed = derive_seed(seed, Stream::test, 1000 * rep + 7);
        const auto inst = make_instance(topo, ParamScheme::uniform, xi,
                                        MaskStrategy::random, inst_seed);
        errors.push_back(recovery_run(inst, horizon, m, inst_seed, workers, leaf_rule).l1);
      }
      double mean, se;
      mean_stderr(errors, mean, se);
      std::snprintf(buf, sizeof(buf), "%s,%g,%lld,%.8g,%.8g,%d\n", topo.c_str(), xi, m, mean, se,
                    instances);
      csv << buf;
    }
  }
}

}  // namespace recipes_detail

inline std::map<std::string, std::string> recipe_catalog() {
  return {
      {"fig1a-desk", "learner calibration: slicer vs dmprec vs ml on a 3-regular tree, N=20, T=5"},
      {"fig2a-desk", "full-observation recovery error vs M for five topologies, N=100, T=5"},
      {"fig2b-desk", "full-observation recovery error vs M for five topologies, N=100, T=10"},
      {"fig3-desk", "partial-observation recovery error vs M, trees and 3-regular graphs, T=5"},
      {"fig5-desk", "effective-model quality on a square lattice: delta_p learned vs true params"},
      {"fig6-desk", "2-replica improvement vs warm-start perturbation size on a square lattice"},
      {"figA2-desk", "single gradient-step time vs cascade length T"},
      {"figA3-desk", "single gradient-step time vs number of cascades (class saturation plateau)"},
      {"figA4-desk", "single gradient-step time vs network size N"},
  };
}

inline void cmd_reproduce(const RecipeCmd& cmd) {
  using namespace recipes_detail;
  fs_detail::ensure_dir(cmd.out);
  const auto catalog = recipe_catalog();
  const auto it = catalog.find(cmd.name);
  if (it == catalog.end()) {
    std::string msg = "unknown recipe '" + cmd.name + "'; available:\n";
    for (const auto& [name, desc] : catalog) msg += "  " + name + "  -  " + desc + "\n";
    throw std::runtime_error(msg);
  }

  if (cmd.name == "fig1a-desk") {
    const std::vector<long long> counts{100, 1000, 10000};
    const int instances = 3;
    std::ofstream csv(fs_detail::join(cmd.out, "fig1a.csv"));
    csv << "learner,M,mean_l1,stderr,n_instances\n";
    char buf[200];
    for (const char* learner : {"slicer", "dmprec", "ml"}) {
      for (const long long m0 : counts) {
        const long long m = scaled(m0, cmd.scale);
        std::vector<double> errors;
        for (int rep = 0; rep < instances; ++rep) {
          const auto inst_seed = derive_seed(cmd.seed, Stream::test, 1000 * rep + 1);
          const auto inst = make_instance("tree:3:20", ParamScheme::uniform, 0.0,
                                          MaskStrategy::random, inst_seed);
          SimOptions opts;
          opts.horizon = 5;
          opts.num_cascades = m;
          opts.workers = cmd.workers;
          EdgeParams fitted;
          if (std::string(learner) == "ml") {
            const auto observed = simulate_observed(inst.graph, inst.truth, inst.mask, opts,
                                                    inst_seed);
            std::vector<Cascade> full;
            for (const auto& oc : observed) {
              Cascade c;
              c.init = oc.init;
              c.horizon = oc.horizon;
              c.tau.assign(static_cast<std::size_t>(inst.graph.num_nodes()), 0);
              for (const auto& [node, tau] : oc.times) c.tau[static_cast<std::size_t>(node)] = tau;
              full.push_back(std::move(c));
            }
            fitted = ml_learn(full, inst.graph);
          } else {
            const auto set = simulate_class_stats(inst.graph, inst.truth, inst.mask, opts,
                                                  inst_seed);
            LearnConfig cfg;
            cfg.workers = cmd.workers;
            fitted = std::string(learner) == "slicer" ? learn(inst.graph, set, cfg).params
                                                      : learn_dmprec(inst.graph, set, cfg).params;
          }
          errors.push_back(param_l1_error(fitted, inst.truth));
        }
        double mean, se;
        mean_stderr(errors, mean, se);
        std::snprintf(buf, sizeof(buf), "%s,%lld,%.8g,%.8g,%d\n", learner, m, mean, se, instances);
        csv << buf;
      }
    }
    write_notes(cmd.out, "fig1a-desk: 3-regular tree N=20, T=5, full observation.\n"
                         "Full-scale reference: M up to 1e4, 5 parameter sets.\n"
                         "Desk scale: M in {1e2,1e3,1e4} x scale, 3 instances.\n");
    return;
  }

  if (cmd.name == "fig2a-desk" || cmd.name == "fig2b-desk") {
    const int horizon = cmd.name == "fig2a-desk" ? 5 : 10;
    std::vector<long long> counts;
    for (long long m : {100LL, 1000LL, 10000LL}) counts.push_back(scaled(m, cmd.scale));
    recovery_sweep_csv(fs_detail::join(cmd.out, cmd.name.substr(0, 5) + ".csv"),
                       {"tree:3:100", "sftree:100", "rrg:3:100", "er:3:100", "lattice:10"},
                       horizon, counts, 0.0, false, 3, cmd.seed, cmd.workers);
    write_notes(cmd.out, cmd.name + ": five topologies, N=100, full observation, T=" +
                             std::to_string(horizon) + ".\n"
                             "Full-scale reference: M up to 1e6, 5 networks x 5 parameter sets.\n"
                             "Desk scale: M in {1e2,1e3,1e4} x scale, 3 paired instances.\n");
    return;
  }

  if (cmd.name == "fig3-desk") {
    std::vector<long long> counts;
    for (long long m : {1000LL, 10000LL}) counts.push_back(scaled(m, cmd.scale));
    std::ofstream csv(fs_detail::join(cmd.out, "fig3.csv"));
    csv << "topology,xi,M,mean_l1,stderr,n_instances\n";
    csv.close();
    for (const double xi : {0.15, 0.25}) {
      std::ofstream append(fs_detail::join(cmd.out, "fig3.csv"), std::ios::app);
      char buf[200];
      for (const char* topo_name : {"tree:3:100", "rrg:3:100"}) {
        const std::string topo(topo_name);
        const bool leaf_rule = topo.rfind("tree", 0) == 0;
        for (const long long m : counts) {
          std::vector<double> errors;
          for (int rep = 0; rep < 3; ++rep) {
            const auto inst_seed = derive_seed(cmd.seed, Stream::test, 1000 * rep + 3);
            const auto inst = make_instance(topo, ParamScheme::uniform, xi, MaskStrategy::random,
                                            inst_seed);
            errors.push_back(recovery_run(inst, 5, m, inst_seed, cmd.workers, leaf_rule).l1);
          }
          double mean, se;
          mean_stderr(errors, mean, se);
          std::snprintf(buf, sizeof(buf), "%s,%g,%lld,%.8g,%.8g,%d\n", topo.c_str(), xi, m, mean,
                        se, 3);
          append << buf;
        }
      }
    }
    write_notes(cmd.out, "fig3-desk: partial observation, T=5, hidden nodes fixed across "
                         "cascades; tree edges adjacent to hidden leaves excluded from the "
                         "error.\nFull-scale reference: M up to 1e6, N=100, T in {5,10}.\n"
                         "Desk scale: M in {1e3,1e4} x scale, xi in {0.15,0.25}, 3 instances.\n");
    return;
  }

  if (cmd.name == "fig5-desk") {
    const auto inst = make_instance("lattice:6", ParamScheme::uniform, 0.0, MaskStrategy::random,
                                    derive_seed(cmd.seed, Stream::test, 5));
    const int horizon = 12;
    std::vector<InitialCondition> inits;
    for (int i = 0; i < inst.graph.num_nodes(); ++i)
      inits.push_back(InitialCondition::single_source(i));
    const auto oracle = mc_marginal_table(inst.graph, inst.truth, inits, horizon,
                                          scaled(10000, cmd.scale), cmd.seed, cmd.workers);
    const auto truth_pred = dmp_marginal_table(inst.graph, inst.truth, inits, horizon, cmd.workers);
    const double dp_truth = marginal_distance(truth_pred, oracle);
    std::ofstream csv(fs_detail::join(cmd.out, "fig5.csv"));
    csv << "M,param_l1,delta_p_learned,delta_p_truth\n";
    char buf[200];
    for (const long long m0 : {1000LL, 10000LL, 100000LL}) {
      const long long m = scaled(m0, cmd.scale);
      SimOptions opts;
      opts.horizon = horizon;
      opts.num_cascades = m;
      opts.workers = cmd.workers;
      const auto set = simulate_class_stats(inst.graph, inst.truth, inst.mask, opts,
                                            derive_seed(cmd.seed, Stream::test, 50 + m0 % 997));
      LearnConfig cfg;
      cfg.workers = cmd.workers;
      const auto result = learn(inst.graph, set, cfg);
      const auto learned_pred = dmp_marginal_table(inst.graph, result.params, inits, horizon,
                                                   cmd.workers);
      std::snprintf(buf, sizeof(buf), "%lld,%.8g,%.8g,%.8g\n", m,
                    param_l1_error(result.params, inst.truth),
                    marginal_distance(learned_pred, oracle), dp_truth);
      csv << buf;
    }
    write_notes(cmd.out, "fig5-desk: square lattice, full observation, single-source classes.\n"
                         "Full-scale reference: N=100 (10x10), T=20, M up to 1e6, oracle 1e6 "
                         "samples per source.\nDesk scale: N=36 (6x6), T=12, M up to 1e5 x scale, "
                         "oracle 1e4 samples per source.\n");
    return;
  }

  if (cmd.name == "fig6-desk") {
    const auto inst = make_instance("lattice:6", ParamScheme::uniform, 0.0, MaskStrategy::random,
                                    derive_seed(cmd.seed, Stream::test, 6));
    const int horizon = 12;
    const long long m = scaled(100000, cmd.scale);
    std::vector<InitialCondition> inits;
    for (int i = 0; i < inst.graph.num_nodes(); ++i)
      inits.push_back(InitialCondition::single_source(i));
    const auto oracle = mc_marginal_table(inst.graph, inst.truth, inits, horizon,
                                          scaled(10000, cmd.scale), cmd.seed, cmd.workers);
    SimOptions opts;
    opts.horizon = horizon;
    opts.num_cascades = m;
    opts.workers = cmd.workers;
    const auto set = simulate_class_stats(inst.graph, inst.truth, inst.mask, opts,
                                          derive_seed(cmd.seed, Stream::test, 60));
    LearnConfig cfg;
    cfg.workers = cmd.workers;
    const auto base = learn(inst.graph, set, cfg);
    const auto base_model = ReplicaModel::single(base.params);
    const double dp_base = marginal_distance(
        mixture_marginal_table(inst.graph, base_model, inits, horizon, cmd.workers), oracle);
    std::ofstream csv(fs_detail::join(cmd.out, "fig6.csv"));
    csv << "init,sigma,delta_p_2r,improvement\n";
    char buf[200];
    for (const double sigma : {0.01, 0.05, 0.1, 0.2}) {
      Rng rng = stream_rng(cmd.seed, Stream::perturbation,
                           static_cast<std::uint64_t>(sigma * 1000));
      const auto rung = learn_ladder(inst.graph, set, base_model, 2, sigma, cfg, rng, &oracle);
      std::snprintf(buf, sizeof(buf), "warm,%g,%.8g,%.8g\n", sigma, *rung.delta_p,
                    dp_base - *rung.delta_p);
      csv << buf;
    }
    {
      Rng rng = stream_rng(cmd.seed, Stream::perturbation, 999);
      ReplicaModel cold;
      cold.replicas.push_back(sample_uniform_params(inst.graph, rng));
      cold.replicas.push_back(sample_uniform_params(inst.graph, rng));
      for (auto& params : cold.replicas)
        for (auto& a : params.alpha) a = std::clamp(a, cfg.alpha_min, cfg.alpha_max);
      const auto trained = learn_replicas(inst.graph, set, cold, cfg);
      const double dp_cold = marginal_distance(
          mixture_marginal_table(inst.graph, trained.model, inits, horizon, cmd.workers), oracle);
      std::snprintf(buf, sizeof(buf), "cold,,%.8g,%.8g\n", dp_cold, dp_base - dp_cold);
      csv << buf;
    }
    write_notes(cmd.out, "fig6-desk: 2-replica mixture warm-started from the single-replica "
                         "solution with multiplicative perturbation sigma, vs training from a "
                         "random initialization.\nFull-scale reference: N=100, T=20, M=1e6.\n"
                         "Desk scale: N=36 (6x6), T=12, M=1e5 x scale, oracle 1e4 samples per "
                         "source.\n");
    return;
  }

  if (cmd.name == "figA2-desk" || cmd.name == "figA3-desk" || cmd.name == "figA4-desk") {
    std::ofstream csv(fs_detail::join(cmd.out, cmd.name.substr(0, 5) + ".csv"));
    char buf[200];
    const auto step_time = [&](int n, int horizon, long long m) {
      const auto inst_seed = derive_seed(cmd.seed, Stream::test, 9000 + n + horizon);
      Rng graph_rng = stream_rng(inst_seed, Stream::graph);
      const Graph g = generate_random_regular(3, n, graph_rng);
      Rng param_rng = stream_rng(inst_seed, Stream::params);
      const EdgeParams truth = sample_uniform_params(g, param_rng);
      SimOptions opts;
      opts.horizon = horizon;
      opts.num_cascades = m;
      opts.workers = cmd.workers;
      opts.source_cycle = n;  // distinct sources, |S| = min(M, N)
      const auto set = simulate_class_stats(g, truth, ObservationMask::all(n), opts, inst_seed);
      const EdgeParams at(g, 0.5);
      return measure_learn_step_seconds(g, at, set);
    };
    if (cmd.name == "figA2-desk") {
      csv << "T,step_seconds\n";
      std::vector<std::pair<double, double>> points;
      for (const int horizon : {5, 10, 15, 20}) {
        const double secs = step_time(100, horizon, 100);
        points.emplace_back(horizon, secs);
        std::snprintf(buf, sizeof(buf), "%d,%.8g\n", horizon, secs);
        csv << buf;
      }
      double num = 0.0, den = 0.0;  // least squares through the origin
      for (const auto& [x, y] : points) {
        num += x * y;
        den += x * x;
      }
      std::snprintf(buf, sizeof(buf), "# zero-intercept fit slope,%.8g\n", num / den);
      csv << buf;
      write_notes(cmd.out, "figA2-desk: single gradient-step seconds vs T on a 3-regular random "
                           "graph, N=100, M=100 distinct-source cascades.\n");
    } else if (cmd.name == "figA3-desk") {
      csv << "M,step_seconds\n";
      for (const long long m : {25LL, 50LL, 100LL, 200LL, 400LL, 800LL}) {
        std::snprintf(buf, sizeof(buf), "%lld,%.8g\n", m, step_time(100, 10, m));
        csv << buf;
      }
      write_notes(cmd.out, "figA3-desk: single gradient-step seconds vs number of cascades; "
                           "the step time plateaus once the number of distinct single-source "
                           "classes saturates at N=100.\n");
    } else {
      csv << "N,step_seconds\n";
      for (const int n : {50, 100, 200, 400}) {
        std::snprintf(buf, sizeof(buf), "%d,%.8g\n", n, step_time(n, 10, 100));
        csv << buf;
      }
      write_notes(cmd.out, "figA4-desk: single gradient-step seconds vs network size on "
                           "3-regular random graphs, M=100 distinct-source cascades, T=10.\n");
    }
    return;
  }
}

}  // namespace icdmp
