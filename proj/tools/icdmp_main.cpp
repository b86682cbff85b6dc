#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "icdmp/experiment.hpp"
#include "icdmp/recipes.hpp"

namespace {

void add_common(CLI::App* sub, std::uint64_t& seed, int& workers, std::string& out) {
  sub->add_option("--seed", seed, "master seed; all randomness derives from it");
  sub->add_option("--workers", workers, "worker threads (0 = available parallelism)");
  sub->add_option("--out", out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"icdmp - learning effective independent-cascade models with "
               "dynamic message passing"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "read options from a key=value config file "
                                 "(sections name the subcommand)");

  icdmp::GenerateCmd gen;
  auto* generate = app.add_subcommand("generate", "generate a network and ground-truth parameters")->configurable();
  generate->add_option("--topology", gen.topology,
                       "tree:<deg>:<N> | sftree:<N> | rrg:<deg>:<N> | er:<avg_deg>:<N> | "
                       "lattice:<L>")
      ->required();
  generate->add_option("--params", gen.scheme, "uniform | degree_dependent");
  generate->add_option("--seed", gen.seed, "master seed; all randomness derives from it");
  generate->add_option("--out", gen.out, "output directory");

  icdmp::SimulateCmd sim;
  auto* simulate = app.add_subcommand("simulate", "simulate cascades and write masked observations")->configurable();
  simulate->add_option("--graph", sim.graph_file, "edge-list file")->required();
  simulate->add_option("--params", sim.params_file, "edge list with alpha column")->required();
  simulate->add_option("-T,--horizon", sim.horizon, "cascade length")->required();
  simulate->add_option("-M,--cascades", sim.num_cascades, "number of cascades")->required();
  simulate->add_option("--init", sim.init_scheme, "uniform_single | stochastic");
  simulate->add_option("--mean-seeds", sim.mean_seeds, "stochastic: average initially active nodes");
  simulate->add_option("--xi", sim.xi, "hidden-node fraction (floor(xi*N) nodes hidden)");
  simulate->add_option("--mask-strategy", sim.mask_strategy, "random | high_degree | low_degree");
  add_common(simulate, sim.seed, sim.workers, sim.out);

  icdmp::LearnCmd lrn;
  auto* learn = app.add_subcommand("learn", "fit parameters from observed cascades")->configurable();
  learn->add_option("--graph", lrn.graph_file, "edge-list file")->required();
  learn->add_option("--cascades", lrn.cascades_file, "cascade file")->required();
  learn->add_option("--learner", lrn.learner, "slicer | dmprec | ml | replicas");
  learn->add_option("--replicas", lrn.replicas, "replicas learner: target mixture size");
  learn->add_option("--sigma", lrn.sigma, "replicas learner: warm-start perturbation");
  learn->add_option("--step-c", lrn.step_c, "learning-rate constant c in eps = c*N/(M*T)");
  learn->add_option("--max-iters", lrn.max_iterations, "iteration cap");
  learn->add_option("--tol", lrn.tolerance, "stop when max |delta alpha| < tol");
  learn->add_option("--alpha-init", lrn.alpha_init, "initial transmission probability");
  add_common(learn, lrn.seed, lrn.workers, lrn.out);

  icdmp::EvaluateCmd ev;
  auto* evaluate = app.add_subcommand("evaluate", "score learned parameters against the truth")->configurable();
  evaluate->add_option("--graph", ev.graph_file, "edge-list file")->required();
  evaluate->add_option("--learned", ev.learned_file, "learned alpha file or replica model")
      ->required();
  evaluate->add_option("--truth", ev.truth_file, "ground-truth alpha file")->required();
  evaluate->add_option("--cascades", ev.cascades_file, "cascade file defining the classes");
  evaluate->add_flag("--all-sources", ev.all_sources, "use every node as a single-source class");
  evaluate->add_option("-T,--horizon", ev.horizon, "horizon when --all-sources is used");
  evaluate->add_option("--oracle-samples", ev.oracle_samples,
                       "Monte-Carlo samples per class for the marginal oracle (0 = skip)");
  evaluate->add_option("--hidden-file", ev.hidden_file, "node ids hidden during learning");
  evaluate->add_flag("--exclude-leaf-edges", ev.exclude_leaf_edges,
                     "exclude edges adjacent to hidden leaves from the parameter error");
  evaluate->add_flag("--residuals", ev.write_residuals,
                     "also write the per-(class, node, t) residual table");
  add_common(evaluate, ev.seed, ev.workers, ev.out);

  icdmp::RecipeCmd rec;
  auto* reproduce = app.add_subcommand("reproduce", "run a packaged experiment recipe")->configurable();
  reproduce->add_option("recipe", rec.name, "recipe name, or 'list'")->required();
  reproduce->add_option("--scale", rec.scale, "multiplies cascade/sample counts");
  add_common(reproduce, rec.seed, rec.workers, rec.out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      icdmp::cmd_generate(gen);
    } else if (simulate->parsed()) {
      icdmp::cmd_simulate(sim);
    } else if (learn->parsed()) {
      icdmp::cmd_learn(lrn);
    } else if (evaluate->parsed()) {
      icdmp::cmd_evaluate(ev);
    } else if (reproduce->parsed()) {
      if (rec.name == "list") {
        for (const auto& [name, desc] : icdmp::recipe_catalog())
          std::cout << name << "  -  " << desc << "\n";
        return 0;
      }
      icdmp::cmd_reproduce(rec);
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
