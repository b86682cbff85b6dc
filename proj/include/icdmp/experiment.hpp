#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "icdmp/baselines.hpp"
#include "icdmp/cascades.hpp"
#include "icdmp/dmp.hpp"
#include "icdmp/graph.hpp"
#include "icdmp/metrics.hpp"
#include "icdmp/parallel.hpp"
#include "icdmp/replicas.hpp"
#include "icdmp/rng.hpp"
#include "icdmp/slicer.hpp"

namespace icdmp {

enum class ParamScheme { uniform, degree_dependent };
enum class InitScheme { uniform_single_source, stochastic };

inline ParamScheme parse_param_scheme(const std::string& s) {
  if (s == "uniform") return ParamScheme::uniform;
  if (s == "degree_dependent" || s == "degree") return ParamScheme::degree_dependent;
  throw std::invalid_argument("param scheme: unknown '" + s + "'");
}

inline InitScheme parse_init_scheme(const std::string& s) {
  if (s == "uniform_single" || s == "single") return InitScheme::uniform_single_source;
  if (s == "stochastic") return InitScheme::stochastic;
  throw std::invalid_argument("init scheme: unknown '" + s + "'");
}

// ---------------------------------------------------------------------------
// In-memory experiment building blocks (shared by the CLI and the tests)
// ---------------------------------------------------------------------------

struct SimOptions {
  InitScheme scheme = InitScheme::uniform_single_source;
  double mean_seeds = 10.0;  // stochastic scheme: pbar_i = mean_seeds / N
  long long num_cascades = 0;
  int horizon = 0;
  int workers = 0;
  int source_cycle = 0;  // > 0: cascade c starts at node c % source_cycle
};

inline InitialCondition draw_init(const SimOptions& opts, int num_nodes, long long cascade_index,
                                  Rng& rng) {
  if (opts.scheme == InitScheme::stochastic)
    return InitialCondition::stochastic_uniform(num_nodes, opts.mean_seeds / num_nodes);
  if (opts.source_cycle > 0)
    return InitialCondition::single_source(
        static_cast<int>(cascade_index % std::min<long long>(opts.source_cycle, num_nodes)));
  return InitialCondition::single_source(static_cast<int>(rng.below(num_nodes)));
}

// Simulates M cascades and accumulates masked activation-time counts directly,
// without materializing each cascade. Every cascade draws from the stream
// (seed, cascades, index), so concurrency never changes the data.
inline ClassSet simulate_class_stats(const Graph& g, const EdgeParams& params,
                                     const ObservationMask& mask, const SimOptions& opts,
                                     std::uint64_t seed) {
  validate_params(g, params);
  const int n = g.num_nodes();
  const int horizon = opts.horizon;
  if (horizon < 1) throw std::invalid_argument("simulate: horizon must be >= 1");
  ClassSet set;
  set.num_nodes = n;
  set.horizon = horizon;
  if (opts.num_cascades <= 0) return set;

  if (opts.scheme == InitScheme::stochastic) {
    auto& cls = detail::class_for(set, InitialCondition::stochastic_uniform(n, opts.mean_seeds / n));
    const int workers = resolve_workers(opts.workers);
    std::vector<std::vector<long long>> partial(static_cast<std::size_t>(workers));
    parallel_chunks(static_cast<std::size_t>(opts.num_cascades), workers,
                    [&](int wid, std::size_t b, std::size_t e) {
      auto& counts = partial[static_cast<std::size_t>(wid)];
      counts.assign(static_cast<std::size_t>(n) * (horizon + 1), 0);
      std::vector<int> tau;
      for (std::size_t c = b; c < e; ++c) {
        Rng rng = stream_rng(seed, Stream::cascades, c);
        const auto init = draw_init(opts, n, static_cast<long long>(c), rng);
        detail::simulate_raw(g, params, init, horizon, rng, tau);
        for (int i = 0; i < n; ++i) {
          if (!mask.is_observed(i)) continue;
          const int t = tau[static_cast<std::size_t>(i)];
          ++counts[static_cast<std::size_t>(i) * (horizon + 1) + (t < 0 ? horizon : t)];
        }
      }
    });
    cls.num_cascades = opts.num_cascades;
    for (const auto& counts : partial) {
      if (counts.empty()) continue;
      for (std::size_t k = 0; k < counts.size(); ++k) cls.counts[k] += counts[k];
    }
    return set;
  }

  // single-source classes: dense per-source accumulation, merged in order
  const int workers = resolve_workers(opts.workers);
  std::vector<std::vector<long long>> partial(static_cast<std::size_t>(workers));
  std::vector<std::vector<long long>> cascades_per_source(static_cast<std::size_t>(workers));
  parallel_chunks(static_cast<std::size_t>(opts.num_cascades), workers,
                  [&](int wid, std::size_t b, std::size_t e) {
    auto& counts = partial[static_cast<std::size_t>(wid)];
    auto& per_source = cascades_per_source[static_cast<std::size_t>(wid)];
    counts.assign(static_cast<std::size_t>(n) * n * (horizon + 1), 0);
    per_source.assign(static_cast<std::size_t>(n), 0);
    std::vector<int> tau;
    for (std::size_t c = b; c < e; ++c) {
      Rng rng = stream_rng(seed, Stream::cascades, c);
      const auto init = draw_init(opts, n, static_cast<long long>(c), rng);
      detail::simulate_raw(g, params, init, horizon, rng, tau);
      const std::size_t src = static_cast<std::size_t>(init.source);
      ++per_source[src];
      long long* row = counts.data() + src * static_cast<std::size_t>(n) * (horizon + 1);
      for (int i = 0; i < n; ++i) {
        if (!mask.is_observed(i)) continue;
        const int t = tau[static_cast<std::size_t>(i)];
        ++row[static_cast<std::size_t>(i) * (horizon + 1) + (t < 0 ? horizon : t)];
      }
    }
  });
  for (int src = 0; src < n; ++src) {
    long long m = 0;
    for (const auto& per_source : cascades_per_source)
      if (!per_source.empty()) m += per_source[static_cast<std::size_t>(src)];
    if (m == 0) continue;
    auto& cls = detail::class_for(set, InitialCondition::single_source(src));
    cls.num_cascades = m;
    for (const auto& counts : partial) {
      if (counts.empty()) continue;
      const long long* row =
          counts.data() + static_cast<std::size_t>(src) * n * (horizon + 1);
      for (std::size_t k = 0; k < cls.counts.size(); ++k) cls.counts[k] += row[k];
    }
  }
  return set;
}

inline std::vector<ObservedCascade> simulate_observed(const Graph& g, const EdgeParams& params,
                                                      const ObservationMask& mask,
                                                      const SimOptions& opts, std::uint64_t seed) {
  validate_params(g, params);
  std::vector<ObservedCascade> out(static_cast<std::size_t>(opts.num_cascades));
  parallel_chunks(out.size(), opts.workers, [&](int, std::size_t b, std::size_t e) {
    for (std::size_t c = b; c < e; ++c) {
      Rng rng = stream_rng(seed, Stream::cascades, c);
      const auto init = draw_init(opts, g.num_nodes(), static_cast<long long>(c), rng);
      Cascade cascade;
      cascade.init = init;
      cascade.horizon = opts.horizon;
      detail::simulate_raw(g, params, init, opts.horizon, rng, cascade.tau);
      for (auto& t : cascade.tau)
        if (t < 0) t = opts.horizon;
      out[c] = apply_mask(cascade, mask);
    }
  });
  return out;
}

// Wall-clock seconds of one full gradient step (forward + backward +
// parameter derivative over every class), single-threaded. Steps are batched
// until a timed region spans at least ~50ms, and the fastest repetition is
// reported; both are standard noise controls for short deterministic
// workloads on a shared machine.
inline double measure_learn_step_seconds(const Graph& g, const EdgeParams& params,
                                         const ClassSet& set, int repetitions = 5) {
  detail::WorkerScratch ws;
  std::vector<double> grad_row(static_cast<std::size_t>(g.num_edges()));
  double sink = 0.0;
  const auto one_step = [&] {
    for (const auto& cls : set.classes)
      sink += detail::learn_step_one_class(g, params, cls, set.horizon, kMuFloor, ws,
                                           grad_row.data());
  };
  const auto warm_start = std::chrono::steady_clock::now();
  one_step();  // warm-up; also sizes the batch
  const double rough =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - warm_start).count();
  const long long batch = std::clamp<long long>(
      static_cast<long long>(0.05 / std::max(rough, 1e-9)), 1, 100000);
  double best = std::numeric_limits<double>::infinity();
  for (int rep = 0; rep < repetitions; ++rep) {
    const auto start = std::chrono::steady_clock::now();
    for (long long k = 0; k < batch; ++k) one_step();
    const auto stop = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(stop - start).count() / batch);
  }
  if (!std::isfinite(sink)) throw std::runtime_error("timing run produced a non-finite objective");
  return best;
}

// ---------------------------------------------------------------------------
// CLI commands
// ---------------------------------------------------------------------------

namespace fs_detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir + ": " + ec.message());
}

inline std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace fs_detail

struct GenerateCmd {
  std::string topology;           // e.g. "rrg:3:100", "lattice:10"
  std::string scheme = "uniform"; // uniform | degree_dependent
  std::uint64_t seed = 1;
  std::string out = ".";
};

inline void cmd_generate(const GenerateCmd& cmd) {
  const TopologySpec spec = parse_topology(cmd.topology);
  Rng graph_rng = stream_rng(cmd.seed, Stream::graph);
  const Graph g = generate(spec, graph_rng);
  EdgeParams truth;
  if (parse_param_scheme(cmd.scheme) == ParamScheme::uniform) {
    Rng param_rng = stream_rng(cmd.seed, Stream::params);
    truth = sample_uniform_params(g, param_rng);
  } else {
    truth = degree_dependent_params(g);
  }
  fs_detail::ensure_dir(cmd.out);
  const std::string note = "topology " + cmd.topology + " scheme " + cmd.scheme + " seed " +
                           std::to_string(cmd.seed);
  write_edge_list(fs_detail::join(cmd.out, "graph.edges"), g, nullptr, note);
  write_edge_list(fs_detail::join(cmd.out, "truth.alpha"), g, &truth, note);
}

struct SimulateCmd {
  std::string graph_file;
  std::string params_file;  // edge list with alpha column
  int horizon = 5;
  long long num_cascades = 0;
  std::string init_scheme = "uniform_single";
  double mean_seeds = 10.0;
  double xi = 0.0;
  std::string mask_strategy = "random";
  std::uint64_t seed = 1;
  int workers = 0;
  std::string out = ".";
};

namespace fs_detail {

// Node labels in files may be arbitrary integers; when the loader remapped
// them, keep the mapping next to the outputs so results stay interpretable.
inline void persist_labels_if_remapped(const LoadedGraph& loaded, const std::string& out_dir) {
  for (std::size_t i = 0; i < loaded.labels.size(); ++i) {
    if (loaded.labels[i] != static_cast<long long>(i)) {
      ensure_dir(out_dir);
      write_label_map(join(out_dir, "node_labels.txt"), loaded.labels);
      return;
    }
  }
}

}  // namespace fs_detail

inline void cmd_simulate(const SimulateCmd& cmd) {
  const auto loaded_graph = load_edge_list(cmd.graph_file);
  const Graph& g = loaded_graph.graph;
  fs_detail::persist_labels_if_remapped(loaded_graph, cmd.out);
  const auto loaded = load_edge_list(cmd.params_file);
  if (!loaded.params) throw std::runtime_error(cmd.params_file + ": no alpha column");
  if (loaded.graph.num_edges() != g.num_edges())
    throw std::runtime_error("simulate: graph and parameter files disagree on the edge set");
  SimOptions opts;
  opts.scheme = parse_init_scheme(cmd.init_scheme);
  opts.mean_seeds = cmd.mean_seeds;
  opts.num_cascades = cmd.num_cascades;
  opts.horizon = cmd.horizon;
  opts.workers = cmd.workers;
  Rng mask_rng = stream_rng(cmd.seed, Stream::mask);
  const auto mask = make_mask(g, cmd.xi, parse_mask_strategy(cmd.mask_strategy), mask_rng);
  const auto observed = simulate_observed(g, *loaded.params, mask, opts, cmd.seed);
  fs_detail::ensure_dir(cmd.out);
  write_cascades(fs_detail::join(cmd.out, "cascades.txt"), observed);
  std::ofstream hidden(fs_detail::join(cmd.out, "hidden_nodes.txt"));
  hidden << "# nodes hidden in every cascade\n";
  for (int i = 0; i < g.num_nodes(); ++i)
    if (!mask.is_observed(i)) hidden << i << '\n';
}

struct LearnCmd {
  std::string graph_file;
  std::string cascades_file;
  std::string learner = "slicer";  // slicer | dmprec | ml | replicas
  int replicas = 2;                // replicas learner: target mixture size
  double sigma = 0.05;             // replicas learner: warm-start perturbation
  double step_c = 1.0 / 80.0;
  int max_iterations = 10000;
  double tolerance = 1e-6;
  double alpha_init = 0.5;
  std::uint64_t seed = 1;
  int workers = 0;
  std::string out = ".";
};

inline void cmd_learn(const LearnCmd& cmd) {
  const auto loaded_graph = load_edge_list(cmd.graph_file);
  const Graph& g = loaded_graph.graph;
  fs_detail::persist_labels_if_remapped(loaded_graph, cmd.out);
  const auto observed = read_cascades(cmd.cascades_file, g.num_nodes());
  const ClassSet set = build_class_stats(observed, g.num_nodes());
  LearnConfig cfg;
  cfg.step_c = cmd.step_c;
  cfg.max_iterations = cmd.max_iterations;
  cfg.tolerance = cmd.tolerance;
  cfg.alpha_init = cmd.alpha_init;
  cfg.workers = cmd.workers;
  fs_detail::ensure_dir(cmd.out);
  const std::string note = "learner " + cmd.learner + " seed " + std::to_string(cmd.seed);
  if (cmd.learner == "slicer" || cmd.learner == "dmprec") {
    const LearnResult result = cmd.learner == "slicer" ? learn(g, set, cfg)
                                                       : learn_dmprec(g, set, cfg);
    write_edge_list(fs_detail::join(cmd.out, "learned.alpha"), g, &result.params, note);
    write_trace_csv(fs_detail::join(cmd.out, "trace.csv"), result.trace);
  } else if (cmd.learner == "ml") {
    std::vector<Cascade> full;
    full.reserve(observed.size());
    for (const auto& oc : observed) {
      if (static_cast<int>(oc.times.size()) != g.num_nodes())
        throw std::runtime_error(
            "learn: the ml learner requires fully observed cascades (every node present)");
      Cascade c;
      c.init = oc.init;
      c.horizon = oc.horizon;
      c.tau.assign(static_cast<std::size_t>(g.num_nodes()), 0);
      for (const auto& [node, tau] : oc.times) c.tau[static_cast<std::size_t>(node)] = tau;
      full.push_back(std::move(c));
    }
    const EdgeParams fitted = ml_learn(full, g);
    write_edge_list(fs_detail::join(cmd.out, "learned.alpha"), g, &fitted, note);
  } else if (cmd.learner == "replicas") {
    if (cmd.replicas < 2) throw std::runtime_error("learn: replicas learner needs --replicas >= 2");
    const LearnResult base = learn(g, set, cfg);
    ReplicaModel model = ReplicaModel::single(base.params);
    std::ofstream rungs(fs_detail::join(cmd.out, "rungs.csv"));
    rungs << "rung,iterations,objective\n";
    rungs << 1 << ',' << base.iterations << ',' << base.final_objective << '\n';
    Rng perturb_rng = stream_rng(cmd.seed, Stream::perturbation);
    ReplicaLearnResult last;
    for (int r = 2; r <= cmd.replicas; ++r) {
      auto rung = learn_ladder(g, set, model, r, cmd.sigma, cfg, perturb_rng);
      model = rung.model;
      last = std::move(rung.training);
      rungs << r << ',' << last.iterations << ',' << last.final_objective << '\n';
    }
    write_replica_model(fs_detail::join(cmd.out, "learned.replicas"), g, model);
    write_trace_csv(fs_detail::join(cmd.out, "trace.csv"), last.trace);
  } else {
    throw std::runtime_error("learn: unknown learner '" + cmd.learner + "'");
  }
}

struct EvaluateCmd {
  std::string graph_file;
  std::string learned_file;  // single alpha edge list or replica model file
  std::string truth_file;
  std::string cascades_file;  // classes for the marginal comparison
  bool all_sources = false;   // use every node as a single-source class
  int horizon = 0;            // required with all_sources
  long long oracle_samples = 0;
  std::string hidden_file;    // node ids hidden during learning
  bool exclude_leaf_edges = false;
  bool write_residuals = false;  // per-(class, node, t) |p - p*| table
  std::uint64_t seed = 1;
  int workers = 0;
  std::string out = ".";
};

inline void cmd_evaluate(const EvaluateCmd& cmd) {
  const Graph g = load_edge_list(cmd.graph_file).graph;
  // learned model: replica file or plain edge list
  ReplicaModel model;
  {
    std::ifstream probe(cmd.learned_file);
    if (!probe) throw std::runtime_error("cannot open: " + cmd.learned_file);
    std::string first;
    std::getline(probe, first);
    probe.close();
    if (first.rfind("replicas=", 0) == 0) {
      model = read_replica_model(cmd.learned_file, g);
    } else {
      const auto loaded = load_edge_list(cmd.learned_file);
      if (!loaded.params) throw std::runtime_error(cmd.learned_file + ": no alpha column");
      model = ReplicaModel::single(*loaded.params);
    }
  }
  EvalReport report;
  std::vector<std::uint8_t> excluded;
  if (!cmd.truth_file.empty()) {
    const auto truth = load_edge_list(cmd.truth_file);
    if (!truth.params) throw std::runtime_error(cmd.truth_file + ": no alpha column");
    if (cmd.exclude_leaf_edges) {
      if (cmd.hidden_file.empty())
        throw std::runtime_error("evaluate: --exclude-leaf-edges needs --hidden-file");
      ObservationMask mask = ObservationMask::all(g.num_nodes());
      std::ifstream hidden(cmd.hidden_file);
      if (!hidden) throw std::runtime_error("cannot open: " + cmd.hidden_file);
      std::string line;
      while (std::getline(hidden, line)) {
        if (line.empty() || line[0] == '#') continue;
        mask.observed[static_cast<std::size_t>(std::stoi(line))] = 0;
      }
      excluded = leaf_excluded_edges(g, mask);
    }
    if (model.size() == 1) {
      report.add("param_l1", param_l1_error(model.replicas.front(), *truth.params,
                                            excluded.empty() ? nullptr : &excluded),
                 0.0, g.num_edges());
    }
    if (cmd.oracle_samples > 0) {
      std::vector<InitialCondition> inits;
      int horizon = cmd.horizon;
      if (!cmd.cascades_file.empty()) {
        const auto observed = read_cascades(cmd.cascades_file, g.num_nodes());
        const auto set = build_class_stats(observed, g.num_nodes());
        horizon = set.horizon;
        for (const auto& cls : set.classes) inits.push_back(cls.init);
      } else if (cmd.all_sources) {
        if (horizon < 1) throw std::runtime_error("evaluate: --all-sources needs --horizon");
        for (int i = 0; i < g.num_nodes(); ++i)
          inits.push_back(InitialCondition::single_source(i));
      } else {
        throw std::runtime_error("evaluate: marginal comparison needs --cascades or --all-sources");
      }
      const auto oracle = mc_marginal_table(g, *truth.params, inits, horizon, cmd.oracle_samples,
                                            cmd.seed, cmd.workers);
      const auto predicted = mixture_marginal_table(g, model, inits, horizon, cmd.workers);
      report.add("delta_p", marginal_distance(predicted, oracle), 0.0,
                 static_cast<long long>(inits.size()));
      const auto truth_predicted = dmp_marginal_table(g, *truth.params, inits, horizon, cmd.workers);
      report.add("delta_p_truth_params", marginal_distance(truth_predicted, oracle), 0.0,
                 static_cast<long long>(inits.size()));
      if (cmd.write_residuals) {
        fs_detail::ensure_dir(cmd.out);
        std::ofstream res(fs_detail::join(cmd.out, "residuals.csv"));
        res << "class,node,t,predicted,oracle,abs_residual\n";
        char buf[160];
        for (int s = 0; s < oracle.num_classes; ++s)
          for (int t = 1; t <= oracle.horizon; ++t)
            for (int i = 0; i < oracle.num_nodes; ++i) {
              const double p = predicted.prob(s, i, t);
              const double star = oracle.prob(s, i, t);
              std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.8g,%.8g,%.8g\n", s, i, t, p, star,
                            std::abs(p - star));
              res << buf;
            }
      }
    }
  } else {
    throw std::runtime_error("evaluate: --truth is required");
  }
  fs_detail::ensure_dir(cmd.out);
  if (!excluded.empty()) {
    std::ofstream ex(fs_detail::join(cmd.out, "excluded_edges.txt"));
    ex << "# edges excluded from param_l1 (adjacent to hidden leaves)\n";
    for (int e = 0; e < g.num_edges(); ++e)
      if (excluded[static_cast<std::size_t>(e)])
        ex << g.edge(e).first << ' ' << g.edge(e).second << '\n';
  }
  write_report_csv(fs_detail::join(cmd.out, "report.csv"), report);
}

}  // namespace icdmp
