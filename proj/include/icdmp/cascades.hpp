#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "icdmp/graph.hpp"
#include "icdmp/parallel.hpp"
#include "icdmp/rng.hpp"

namespace icdmp {

// ---------------------------------------------------------------------------
// Initial conditions
// ---------------------------------------------------------------------------

// Either a single deterministic source node, or an independent per-node
// activation law at t = 0. Two cascades belong to the same class iff their
// initial conditions compare equal here.
struct InitialCondition {
  int source = -1;           // >= 0: single source
  std::vector<double> pbar;  // per-node t=0 activation probability otherwise

  static InitialCondition single_source(int node) {
    if (node < 0) throw std::invalid_argument("initial condition: invalid source node");
    InitialCondition ic;
    ic.source = node;
    return ic;
  }
  static InitialCondition stochastic(std::vector<double> law) {
    for (double p : law)
      if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument("initial condition: probability outside [0, 1]");
    InitialCondition ic;
    ic.pbar = std::move(law);
    return ic;
  }
  static InitialCondition stochastic_uniform(int num_nodes, double p) {
    return stochastic(std::vector<double>(static_cast<std::size_t>(num_nodes), p));
  }

  bool single() const { return source >= 0; }
  double prob(int i) const {
    return single() ? (i == source ? 1.0 : 0.0) : pbar[static_cast<std::size_t>(i)];
  }
  bool same_class(const InitialCondition& other) const {
    if (single() != other.single()) return false;
    return single() ? source == other.source : pbar == other.pbar;
  }
};

// ---------------------------------------------------------------------------
// Cascades
// ---------------------------------------------------------------------------

// One realization; tau[i] == horizon means "not activated before the horizon"
// by convention (an activation exactly at T is indistinguishable from none).
struct Cascade {
  InitialCondition init;
  std::vector<int> tau;
  int horizon = 0;
};

struct ObservationMask {
  std::vector<std::uint8_t> observed;  // per node

  int num_nodes() const { return static_cast<int>(observed.size()); }
  int num_observed() const {
    int n = 0;
    for (auto o : observed) n += o != 0;
    return n;
  }
  bool is_observed(int i) const { return observed[static_cast<std::size_t>(i)] != 0; }
  static ObservationMask all(int num_nodes) {
    return ObservationMask{std::vector<std::uint8_t>(static_cast<std::size_t>(num_nodes), 1)};
  }
};

enum class MaskStrategy { random, high_degree, low_degree };

inline MaskStrategy parse_mask_strategy(const std::string& s) {
  if (s == "random") return MaskStrategy::random;
  if (s == "high_degree" || s == "high") return MaskStrategy::high_degree;
  if (s == "low_degree" || s == "low") return MaskStrategy::low_degree;
  throw std::invalid_argument("mask strategy: unknown '" + s + "'");
}

// Hides exactly floor(xi * N) nodes, fixed across all cascades. Degree-based
// strategies shuffle first so ties are broken randomly but reproducibly.
inline ObservationMask make_mask(const Graph& g, double xi, MaskStrategy strategy, Rng& rng) {
  if (!(xi >= 0.0 && xi < 1.0)) throw std::invalid_argument("mask: xi must be in [0, 1)");
  const int n = g.num_nodes();
  const int hidden = static_cast<int>(std::floor(xi * n));
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
  if (strategy == MaskStrategy::high_degree) {
    std::stable_sort(order.begin(), order.end(),
                     [&g](int a, int b) { return g.degree(a) > g.degree(b); });
  } else if (strategy == MaskStrategy::low_degree) {
    std::stable_sort(order.begin(), order.end(),
                     [&g](int a, int b) { return g.degree(a) < g.degree(b); });
  }
  ObservationMask mask = ObservationMask::all(n);
  for (int k = 0; k < hidden; ++k) mask.observed[static_cast<std::size_t>(order[k])] = 0;
  return mask;
}

namespace detail {

// Discrete-time IC dynamics. Writes the true activation time per node into
// tau_raw (-1 if the node never activates within the horizon). Each newly
// activated node attempts each still-inactive neighbor exactly once, one step
// after its own activation. attempts_per_msg, when given, counts directed
// attempts. Recording as cascade data maps both "never" and "exactly at the
// horizon" to tau = T; estimators of p(t) keep the true times.
inline void simulate_raw(const Graph& g, const EdgeParams& params, const InitialCondition& init,
                         int horizon, Rng& rng, std::vector<int>& tau_raw,
                         std::vector<int>* attempts_per_msg = nullptr) {
  const int n = g.num_nodes();
  tau_raw.assign(static_cast<std::size_t>(n), -1);
  std::vector<int> frontier;
  if (init.single()) {
    if (init.source >= n) throw std::invalid_argument("simulate: source node out of range");
    tau_raw[static_cast<std::size_t>(init.source)] = 0;
    frontier.push_back(init.source);
  } else {
    if (static_cast<int>(init.pbar.size()) != n)
      throw std::invalid_argument("simulate: initial law size mismatch");
    for (int i = 0; i < n; ++i)
      if (rng.bernoulli(init.pbar[static_cast<std::size_t>(i)])) {
        tau_raw[static_cast<std::size_t>(i)] = 0;
        frontier.push_back(i);
      }
  }
  std::vector<int> next;
  for (int t = 1; t <= horizon && !frontier.empty(); ++t) {
    next.clear();
    for (const int i : frontier) {
      for (const auto& arc : g.neighbors(i)) {
        if (tau_raw[static_cast<std::size_t>(arc.node)] >= 0) continue;
        if (attempts_per_msg) ++(*attempts_per_msg)[static_cast<std::size_t>(arc.out_msg)];
        if (rng.bernoulli(params[arc.edge])) {
          tau_raw[static_cast<std::size_t>(arc.node)] = t;
          next.push_back(arc.node);
        }
      }
    }
    frontier.swap(next);
  }
}

}  // namespace detail

inline Cascade simulate_ic(const Graph& g, const EdgeParams& params, const InitialCondition& init,
                           int horizon, Rng& rng, std::vector<int>* attempts_per_msg = nullptr) {
  if (horizon < 1) throw std::invalid_argument("simulate: horizon must be >= 1");
  validate_params(g, params);
  Cascade c;
  c.init = init;
  c.horizon = horizon;
  detail::simulate_raw(g, params, init, horizon, rng, c.tau, attempts_per_msg);
  for (auto& t : c.tau)
    if (t < 0) t = horizon;
  return c;
}

// ---------------------------------------------------------------------------
// Observation and class statistics
// ---------------------------------------------------------------------------

// Activation times retained for observed nodes only; hidden nodes simply have
// no entry, so partial observation needs no sentinel values.
struct ObservedCascade {
  InitialCondition init;
  int horizon = 0;
  std::vector<std::pair<int, int>> times;  // (node, tau), sorted by node
};

inline ObservedCascade apply_mask(const Cascade& c, const ObservationMask& mask) {
  if (mask.num_nodes() != static_cast<int>(c.tau.size()))
    throw std::invalid_argument("apply_mask: mask size mismatch");
  ObservedCascade oc;
  oc.init = c.init;
  oc.horizon = c.horizon;
  for (int i = 0; i < mask.num_nodes(); ++i)
    if (mask.is_observed(i)) oc.times.emplace_back(i, c.tau[static_cast<std::size_t>(i)]);
  return oc;
}

// Per-class empirical activation-time counts: the sufficient statistics for
// learning. counts[i*(T+1) + tau] is how many cascades of this class had
// observed node i activate at tau; hidden nodes keep all-zero rows.
struct ClassStats {
  InitialCondition init;
  long long num_cascades = 0;
  int num_nodes = 0;
  int horizon = 0;
  std::vector<long long> counts;

  long long count(int node, int tau) const {
    return counts[static_cast<std::size_t>(node) * (horizon + 1) + tau];
  }
  void add(int node, int tau) {
    ++counts[static_cast<std::size_t>(node) * (horizon + 1) + tau];
  }
};

struct ClassSet {
  int num_nodes = 0;
  int horizon = 0;
  std::vector<ClassStats> classes;

  std::size_t size() const { return classes.size(); }
  long long total_cascades() const {
    long long m = 0;
    for (const auto& c : classes) m += c.num_cascades;
    return m;
  }
};

namespace detail {

inline ClassStats& class_for(ClassSet& set, const InitialCondition& init) {
  for (auto& c : set.classes)
    if (c.init.same_class(init)) return c;
  ClassStats fresh;
  fresh.init = init;
  fresh.num_nodes = set.num_nodes;
  fresh.horizon = set.horizon;
  fresh.counts.assign(static_cast<std::size_t>(set.num_nodes) * (set.horizon + 1), 0);
  set.classes.push_back(std::move(fresh));
  return set.classes.back();
}

}  // namespace detail

inline ClassSet build_class_stats(const std::vector<ObservedCascade>& cascades, int num_nodes) {
  ClassSet set;
  set.num_nodes = num_nodes;
  if (cascades.empty()) return set;
  set.horizon = cascades.front().horizon;
  for (const auto& oc : cascades) {
    if (oc.horizon != set.horizon)
      throw std::invalid_argument("class stats: cascades with mixed horizons");
    auto& cls = detail::class_for(set, oc.init);
    ++cls.num_cascades;
    for (const auto& [node, tau] : oc.times) {
      if (node < 0 || node >= num_nodes || tau < 0 || tau > set.horizon)
        throw std::invalid_argument("class stats: entry out of range");
      cls.add(node, tau);
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Monte-Carlo marginal estimates
// ---------------------------------------------------------------------------

struct McEstimate {
  int num_nodes = 0;
  int horizon = 0;
  long long num_samples = 0;
  std::vector<double> p;   // [t*(N) + i], fraction of runs activated by time t
  std::vector<double> se;  // binomial standard error per entry

  double prob(int i, int t) const { return p[static_cast<std::size_t>(t) * num_nodes + i]; }
  double stderr_at(int i, int t) const { return se[static_cast<std::size_t>(t) * num_nodes + i]; }
};

// Sampled estimate of activation marginals. Samples are drawn in fixed-size
// chunks with seeds derived from (seed, chunk), so the result is independent
// of worker count and scheduling.
inline McEstimate mc_marginals(const Graph& g, const EdgeParams& params,
                               const InitialCondition& init, int horizon,
                               long long num_samples, std::uint64_t seed, int workers = 0) {
  if (num_samples < 1) throw std::invalid_argument("mc_marginals: need at least one sample");
  if (horizon < 1) throw std::invalid_argument("mc_marginals: horizon must be >= 1");
  validate_params(g, params);
  const int n = g.num_nodes();
  const std::size_t cells = static_cast<std::size_t>(n) * (horizon + 1);
  constexpr long long kChunk = 1024;
  const long long num_chunks = (num_samples + kChunk - 1) / kChunk;
  const int w = resolve_workers(workers);
  std::vector<std::vector<long long>> acc(static_cast<std::size_t>(w));
  parallel_chunks(static_cast<std::size_t>(num_chunks), w,
                  [&](int wid, std::size_t b, std::size_t e) {
    auto& counts = acc[static_cast<std::size_t>(wid)];
    counts.assign(cells, 0);
    std::vector<int> tau_raw;
    for (std::size_t chunk = b; chunk < e; ++chunk) {
      Rng rng(derive_seed(seed, Stream::oracle, chunk));
      const long long lo = static_cast<long long>(chunk) * kChunk;
      const long long hi = std::min(num_samples, lo + kChunk);
      for (long long s = lo; s < hi; ++s) {
        detail::simulate_raw(g, params, init, horizon, rng, tau_raw);
        for (int i = 0; i < n; ++i) {
          const int t = tau_raw[static_cast<std::size_t>(i)];
          if (t >= 0) ++counts[static_cast<std::size_t>(t) * n + i];
        }
      }
    }
  });
  std::vector<long long> first(cells, 0);
  for (const auto& counts : acc) {
    if (counts.empty()) continue;
    for (std::size_t k = 0; k < cells; ++k) first[k] += counts[k];
  }
  McEstimate est;
  est.num_nodes = n;
  est.horizon = horizon;
  est.num_samples = num_samples;
  est.p.assign(cells, 0.0);
  est.se.assign(cells, 0.0);
  const double m = static_cast<double>(num_samples);
  for (int i = 0; i < n; ++i) {
    long long cum = 0;
    for (int t = 0; t <= horizon; ++t) {
      cum += first[static_cast<std::size_t>(t) * n + i];
      const double phat = static_cast<double>(cum) / m;
      est.p[static_cast<std::size_t>(t) * n + i] = phat;
      est.se[static_cast<std::size_t>(t) * n + i] = std::sqrt(phat * (1.0 - phat) / m);
    }
  }
  return est;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------
// Cascade file: header "T=<int>", one "# init <cascade> ..." comment line per
// cascade recording its initial condition, then rows "cascade node tau".
// A missing (cascade, node) row means the node's time is hidden.

inline void write_cascades(const std::string& path, const std::vector<ObservedCascade>& cascades) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  const int horizon = cascades.empty() ? 0 : cascades.front().horizon;
  out << "T=" << horizon << "\n";
  char buf[64];
  for (std::size_t c = 0; c < cascades.size(); ++c) {
    const auto& init = cascades[c].init;
    if (init.single()) {
      out << "# init " << c << " source " << init.source << "\n";
    } else {
      double p0 = init.pbar.empty() ? 0.0 : init.pbar.front();
      for (double p : init.pbar)
        if (p != p0) throw std::runtime_error("cascade file: only uniform stochastic laws supported");
      std::snprintf(buf, sizeof(buf), "%.17g", p0);
      out << "# init " << c << " stochastic " << buf << "\n";
    }
  }
  for (std::size_t c = 0; c < cascades.size(); ++c)
    for (const auto& [node, tau] : cascades[c].times) out << c << ' ' << node << ' ' << tau << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<ObservedCascade> read_cascades(const std::string& path, int num_nodes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("T=", 0) != 0)
    throw std::runtime_error(path + ": missing T=<int> header");
  const int horizon = std::stoi(line.substr(2));
  std::map<long long, InitialCondition> inits;
  std::map<long long, std::vector<std::pair<int, int>>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key;
      if (!(ls >> key) || key != "init") continue;
      long long cid;
      std::string kind;
      if (!(ls >> cid >> kind))
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed init line");
      if (kind == "source") {
        int node;
        if (!(ls >> node))
          throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed init line");
        inits[cid] = InitialCondition::single_source(node);
      } else if (kind == "stochastic") {
        double p;
        if (!(ls >> p))
          throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed init line");
        inits[cid] = InitialCondition::stochastic_uniform(num_nodes, p);
      } else {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": unknown init kind '" + kind + "'");
      }
      continue;
    }
    std::istringstream ls(line);
    long long cid;
    int node, tau;
    if (!(ls >> cid)) continue;
    if (!(ls >> node >> tau))
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 'cascade node tau'");
    if (node < 0 || node >= num_nodes || tau < 0 || tau > horizon)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": entry out of range");
    rows[cid].emplace_back(node, tau);
  }
  std::vector<ObservedCascade> cascades;
  cascades.reserve(inits.size());
  for (auto& [cid, init] : inits) {
    ObservedCascade oc;
    oc.init = std::move(init);
    oc.horizon = horizon;
    auto it = rows.find(cid);
    if (it != rows.end()) {
      std::sort(it->second.begin(), it->second.end());
      oc.times = std::move(it->second);
      rows.erase(it);
    }
    cascades.push_back(std::move(oc));
  }
  if (!rows.empty())
    throw std::runtime_error(path + ": data rows for cascade " + std::to_string(rows.begin()->first) +
                             " lack an init line");
  return cascades;
}

// Class-statistics cache: rows "class node tau count" with per-class metadata.
inline void write_class_stats(const std::string& path, const ClassSet& set) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "T=" << set.horizon << "\n";
  out << "# nodes " << set.num_nodes << "\n";
  char buf[64];
  for (std::size_t s = 0; s < set.classes.size(); ++s) {
    const auto& cls = set.classes[s];
    if (cls.init.single()) {
      out << "# class " << s << " source " << cls.init.source;
    } else {
      std::snprintf(buf, sizeof(buf), "%.17g", cls.init.pbar.empty() ? 0.0 : cls.init.pbar.front());
      out << "# class " << s << " stochastic " << buf;
    }
    out << " cascades " << cls.num_cascades << "\n";
  }
  for (std::size_t s = 0; s < set.classes.size(); ++s) {
    const auto& cls = set.classes[s];
    for (int i = 0; i < set.num_nodes; ++i)
      for (int t = 0; t <= set.horizon; ++t)
        if (cls.count(i, t) > 0) out << s << ' ' << i << ' ' << t << ' ' << cls.count(i, t) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline ClassSet read_class_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("T=", 0) != 0)
    throw std::runtime_error(path + ": missing T=<int> header");
  ClassSet set;
  set.horizon = std::stoi(line.substr(2));
  set.num_nodes = -1;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line[0] == '#') {
      std::istringstream ls(line.substr(1));
      std::string key;
      ls >> key;
      if (key == "nodes") {
        ls >> set.num_nodes;
      } else if (key == "class") {
        std::size_t cid;
        std::string kind;
        ls >> cid >> kind;
        InitialCondition init;
        if (kind == "source") {
          int node;
          ls >> node;
          init = InitialCondition::single_source(node);
        } else if (kind == "stochastic") {
          double p;
          ls >> p;
          init = InitialCondition::stochastic_uniform(set.num_nodes, p);
        } else {
          throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unknown class kind");
        }
        std::string tag;
        long long m = 0;
        if (ls >> tag >> m && tag != "cascades")
          throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed class line");
        if (cid != set.classes.size())
          throw std::runtime_error(path + ":" + std::to_string(line_no) + ": classes out of order");
        ClassStats cls;
        cls.init = std::move(init);
        cls.num_cascades = m;
        cls.num_nodes = set.num_nodes;
        cls.horizon = set.horizon;
        cls.counts.assign(static_cast<std::size_t>(set.num_nodes) * (set.horizon + 1), 0);
        set.classes.push_back(std::move(cls));
      }
      continue;
    }
    std::istringstream ls(line);
    long long s, i, t, m;
    if (!(ls >> s)) continue;
    if (!(ls >> i >> t >> m))
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected 'class node tau count'");
    if (s < 0 || s >= static_cast<long long>(set.classes.size()))
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unknown class id");
    auto& cls = set.classes[static_cast<std::size_t>(s)];
    cls.counts[static_cast<std::size_t>(i) * (set.horizon + 1) + t] += m;
  }
  if (set.num_nodes < 0) throw std::runtime_error(path + ": missing '# nodes' header");
  return set;
}

}  // namespace icdmp
