#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>

#include "icdmp/experiment.hpp"
#include "icdmp/replicas.hpp"
#include "support/oracles.hpp"

using namespace icdmp;

namespace {

ClassSet lattice_instance(int side, long long m, int horizon, std::uint64_t seed, double xi = 0.0) {
  const Graph g = generate_square_lattice(side);
  Rng param_rng = stream_rng(seed, Stream::params);
  const auto truth = sample_uniform_params(g, param_rng);
  Rng mask_rng = stream_rng(seed, Stream::mask);
  const auto mask = make_mask(g, xi, MaskStrategy::random, mask_rng);
  SimOptions opts;
  opts.horizon = horizon;
  opts.num_cascades = m;
  opts.workers = 1;
  return simulate_class_stats(g, truth, mask, opts, seed);
}

std::vector<DmpState> forward_grid(const Graph& g, const ReplicaModel& model, const ClassSet& set) {
  std::vector<DmpState> states;
  states.reserve(model.replicas.size() * set.classes.size());
  for (const auto& params : model.replicas)
    for (const auto& cls : set.classes)
      states.push_back(dmp_forward(g, params, cls.init, set.horizon));
  return states;
}

}  // namespace

TEST_SUITE_BEGIN("replicas");

TEST_CASE("single replica reduces exactly to the base model") {
  Rng rng(3);
  const Graph g = generate_square_lattice(3);
  EdgeParams params(g, 0.0);
  for (auto& a : params.alpha) a = rng.uniform(0.1, 0.9);
  const auto model = ReplicaModel::single(params);
  const auto set = lattice_instance(3, 300, 4, 51);

  const auto mix = mixture_marginals(g, model, set.classes.front().init, set.horizon);
  const auto state = dmp_forward(g, params, set.classes.front().init, set.horizon);
  for (int i = 0; i < 9; ++i)
    for (int t = 0; t <= 4; ++t) {
      CHECK(mix.prob(i, t) == state.marginal(i, t));
      CHECK(mix.law(i, t) == activation_time_marginal(state, i, t));
    }

  const auto grid = forward_grid(g, model, set);
  std::vector<DmpState> states;
  std::vector<AdjointState> adjoints;
  for (std::size_t s = 0; s < set.classes.size(); ++s) {
    states.push_back(dmp_forward(g, params, set.classes[s].init, set.horizon));
    adjoints.push_back(adjoint_backward(g, params, states.back(), set.classes[s]));
  }
  CHECK(mixture_objective(set, grid, 1) == objective(set, states));
  const auto mix_grad = mixture_gradient(g, model, set, grid);
  const auto single_grad = gradient(g, params, states, adjoints);
  REQUIRE(mix_grad.size() == 1);
  for (int e = 0; e < g.num_edges(); ++e)
    CHECK(mix_grad[0][static_cast<std::size_t>(e)] ==
          doctest::Approx(single_grad[static_cast<std::size_t>(e)]).epsilon(1e-14));
}

TEST_CASE("identical replicas behave like one") {
  Rng rng(5);
  const Graph g = build_graph({{0, 1}, {1, 2}});
  EdgeParams params(std::vector<double>{0.4, 0.7});
  ReplicaModel two;
  two.replicas = {params, params};
  const auto set = lattice_instance(3, 100, 3, 53);  // class inits reused below

  ClassSet tiny;
  tiny.num_nodes = 3;
  tiny.horizon = 3;
  ClassStats cls;
  cls.init = InitialCondition::single_source(0);
  cls.num_nodes = 3;
  cls.horizon = 3;
  cls.num_cascades = 60;
  cls.counts.assign(3 * 4, 0);
  cls.counts[0 * 4 + 0] = 60;
  cls.counts[1 * 4 + 1] = 20;
  cls.counts[1 * 4 + 3] = 40;
  cls.counts[2 * 4 + 2] = 5;
  cls.counts[2 * 4 + 3] = 55;
  tiny.classes.push_back(cls);

  const auto grid2 = forward_grid(g, two, tiny);
  const auto grid1 = forward_grid(g, ReplicaModel::single(params), tiny);
  CHECK(mixture_objective(tiny, grid2, 2) ==
        doctest::Approx(mixture_objective(tiny, grid1, 1)).epsilon(1e-14));

  const auto grads = mixture_gradient(g, two, tiny, grid2);
  for (int e = 0; e < g.num_edges(); ++e)
    CHECK(grads[0][static_cast<std::size_t>(e)] ==
          doctest::Approx(grads[1][static_cast<std::size_t>(e)]).epsilon(1e-14));
}

TEST_CASE("mixture of extreme replicas averages the laws") {
  const Graph g = build_graph({{0, 1}});
  ReplicaModel model;
  model.replicas = {EdgeParams(g, 0.0), EdgeParams(g, 1.0)};
  const auto mix = mixture_marginals(g, model, InitialCondition::single_source(0), 2);
  CHECK(mix.law(1, 1) == doctest::Approx(0.5));
  CHECK(mix.law(1, 2) == doctest::Approx(0.5));
  CHECK(mix.prob(1, 1) == doctest::Approx(0.5));
}

TEST_CASE("replica permutation symmetry") {
  Rng rng(7);
  const Graph g = generate_square_lattice(3);
  ReplicaModel model;
  model.replicas.push_back(sample_uniform_params(g, rng));
  model.replicas.push_back(sample_uniform_params(g, rng));
  const auto set = lattice_instance(3, 200, 4, 57);
  const auto grid = forward_grid(g, model, set);
  const double obj = mixture_objective(set, grid, 2);
  const auto grads = mixture_gradient(g, model, set, grid);

  ReplicaModel swapped;
  swapped.replicas = {model.replicas[1], model.replicas[0]};
  const auto grid_swapped = forward_grid(g, swapped, set);
  CHECK(mixture_objective(set, grid_swapped, 2) == doctest::Approx(obj).epsilon(1e-14));
  const auto grads_swapped = mixture_gradient(g, swapped, set, grid_swapped);
  for (int e = 0; e < g.num_edges(); ++e) {
    CHECK(grads_swapped[0][static_cast<std::size_t>(e)] ==
          doctest::Approx(grads[1][static_cast<std::size_t>(e)]).epsilon(1e-13));
    CHECK(grads_swapped[1][static_cast<std::size_t>(e)] ==
          doctest::Approx(grads[0][static_cast<std::size_t>(e)]).epsilon(1e-13));
  }
}

TEST_CASE("mixture gradient matches finite differences at two and three replicas") {
  const auto set = lattice_instance(3, 400, 4, 61, 0.2);
  const Graph g = generate_square_lattice(3);
  for (const int num_replicas : {2, 3}) {
    Rng rng(100 + num_replicas);
    ReplicaModel model;
    for (int r = 0; r < num_replicas; ++r) {
      EdgeParams params(g, 0.0);
      for (auto& a : params.alpha) a = rng.uniform(0.15, 0.85);
      model.replicas.push_back(params);
    }
    const auto grid = forward_grid(g, model, set);
    const auto grads = mixture_gradient(g, model, set, grid);
    const auto fd = oracles::fd_mixture_gradient(g, model, set);
    for (int r = 0; r < num_replicas; ++r)
      CHECK(oracles::max_rel_error(grads[static_cast<std::size_t>(r)],
                                   fd[static_cast<std::size_t>(r)]) < 1e-5);
  }
}

TEST_CASE("mixture objective improves along a ladder step") {
  const Graph g = generate_square_lattice(3);
  const auto set = lattice_instance(3, 2000, 4, 67);
  LearnConfig cfg;
  cfg.workers = 1;
  cfg.max_iterations = 600;
  const auto base = learn(g, set, cfg);
  Rng rng(9);
  const auto rung = learn_ladder(g, set, ReplicaModel::single(base.params), 2, 0.05, cfg, rng);
  REQUIRE(rung.training.trace.size() > 1);
  // trained mixture objective at least matches the perturbed start
  CHECK(rung.training.trace.back().objective >= rung.training.trace.front().objective - 1e-9);
}

TEST_CASE("growing the ladder keeps improving the prediction") {
  const std::uint64_t seed = derive_seed(606, Stream::test, 1);
  const Graph g = generate_square_lattice(4);
  Rng param_rng = stream_rng(seed, Stream::params);
  const auto truth = sample_uniform_params(g, param_rng);
  SimOptions opts;
  opts.horizon = 8;
  opts.num_cascades = 20000;
  const auto set = simulate_class_stats(g, truth, ObservationMask::all(16), opts, seed);
  std::vector<InitialCondition> inits;
  for (int i = 0; i < 16; ++i) inits.push_back(InitialCondition::single_source(i));
  const auto oracle = mc_marginal_table(g, truth, inits, 8, 5000, derive_seed(seed, Stream::oracle));
  LearnConfig cfg;
  cfg.max_iterations = 15000;
  const auto base = learn(g, set, cfg);
  ReplicaModel model = ReplicaModel::single(base.params);
  std::vector<double> dp;
  dp.push_back(marginal_distance(mixture_marginal_table(g, model, inits, 8), oracle));
  Rng ladder_rng = stream_rng(seed, Stream::perturbation);
  for (int rung = 2; rung <= 3; ++rung) {
    auto result = learn_ladder(g, set, model, rung, 0.05, cfg, ladder_rng, &oracle);
    model = result.model;
    dp.push_back(*result.delta_p);
  }
  CHECK(dp[1] < dp[0]);
  CHECK(dp[2] < dp[0]);
  CHECK(dp[2] <= dp[1] + 0.005);  // near-nonincreasing rung to rung
}

TEST_CASE("ladder validates its inputs") {
  const Graph g = build_graph({{0, 1}});
  const auto base = ReplicaModel::single(EdgeParams(g, 0.5));
  const auto set = lattice_instance(3, 10, 2, 71);
  LearnConfig cfg;
  Rng rng(1);
  CHECK_THROWS_AS(learn_ladder(g, set, base, 3, 0.05, cfg, rng), std::invalid_argument);
  CHECK_THROWS_AS(learn_ladder(g, set, base, 2, 0.0, cfg, rng), std::invalid_argument);
}

TEST_CASE("replica learning cost scales linearly in the replica count") {
  const Graph g = generate_square_lattice(4);
  const auto set = lattice_instance(4, 400, 6, 73);
  LearnConfig cfg;
  cfg.workers = 1;
  cfg.max_iterations = 30;
  const auto time_for = [&](int num_replicas) {
    ReplicaModel model;
    Rng rng(200 + num_replicas);
    for (int r = 0; r < num_replicas; ++r) {
      EdgeParams params(g, 0.0);
      for (auto& a : params.alpha) a = rng.uniform(0.2, 0.8);
      model.replicas.push_back(params);
    }
    double best = 1e100;
    for (int rep = 0; rep < 3; ++rep) {
      const auto start = std::chrono::steady_clock::now();
      learn_replicas(g, set, model, cfg);
      const auto stop = std::chrono::steady_clock::now();
      best = std::min(best, std::chrono::duration<double>(stop - start).count());
    }
    return best;
  };
  const double one = time_for(1);
  const double two = time_for(2);
  CHECK(two / one > 1.4);
  CHECK(two / one < 3.0);
}

TEST_CASE("replica model file round-trip") {
  Rng rng(11);
  const Graph g = generate_square_lattice(3);
  ReplicaModel model;
  model.replicas = {sample_uniform_params(g, rng), sample_uniform_params(g, rng)};
  const auto dir = std::filesystem::temp_directory_path() / "icdmp_replicas";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "model.replicas").string();
  write_replica_model(path, g, model);
  const auto loaded = read_replica_model(path, g);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded.replicas[0].alpha == model.replicas[0].alpha);
  CHECK(loaded.replicas[1].alpha == model.replicas[1].alpha);
}

TEST_SUITE_END();
