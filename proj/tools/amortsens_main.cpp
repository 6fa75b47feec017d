// amortsens: simulate, train, validate, infer and run sensitivity grids.
//
// Exit codes: 0 success, 1 usage, 2 data integrity, 3 numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "amortsens/commands.hpp"
#include "amortsens/errors.hpp"

namespace fs = std::filesystem;
using namespace amortsens;

namespace {

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw UsageError("bad number '" + item + "' in list '" + text + "'");
    out.push_back(v);
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Sensitivity-aware amortized Bayesian inference"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory (default: config output_dir)");
    return sub->add_option("--seed", seed, "seed for this command");
  };

  auto* sim = app.add_subcommand("simulate", "simulate a training or test set");
  auto* sim_seed = add_common(sim);
  std::size_t budget = 0;
  std::string name = "dataset";
  auto* sim_budget = sim->add_option("--budget", budget, "number of simulations");
  sim->add_option("--name", name, "dataset file stem");

  auto* tr = app.add_subcommand("train", "train one network or an ensemble");
  auto* tr_seed = add_common(tr);
  std::string data_path;
  std::size_t ensemble = 1;
  tr->add_option("--data", data_path, "dataset manifest")->required();
  auto* tr_ens = tr->add_option("--ensemble", ensemble, "number of members M");

  auto* va = app.add_subcommand("validate", "closed-world scores on a test set");
  add_common(va);
  std::string model_path, test_path;
  bool oracle = false;
  va->add_option("--model", model_path, "checkpoint or ensemble manifest")->required();
  va->add_option("--test", test_path, "test set manifest")->required();
  va->add_flag("--oracle", oracle, "add a row for the closed-form posterior (conjugate task)");

  auto* in = app.add_subcommand("infer", "posterior draws or model probabilities for observed data");
  auto* in_seed = add_common(in);
  std::string observed;
  std::string gamma_list;
  int likelihood = 0;
  std::size_t n_draws = 1000;
  in->add_option("--model", model_path, "checkpoint or ensemble manifest")->required();
  in->add_option("--observed", observed, "observed data CSV")->required();
  in->add_option("--gamma", gamma_list, "comma-separated scaling exponents");
  in->add_option("--likelihood", likelihood, "likelihood choice index");
  in->add_option("--draws", n_draws, "draws per member");

  auto* se = app.add_subcommand("sensitivity", "evaluate the ensemble over a context/data grid");
  auto* se_seed = add_common(se);
  std::vector<std::string> grids;
  std::size_t bootstrap = 0;
  bool loo = false;
  std::string baseline_gamma, rule, projection;
  double theta0 = 0.0, hdi_mass = 0.95, alpha = 0.05, threshold = 0.0;
  se->add_option("--model", model_path, "checkpoint or ensemble manifest")->required();
  se->add_option("--observed", observed, "observed data CSV")->required();
  auto* o_grid = se->add_option("--gamma-grid", grids, "\"lo:hi:n log|lin\"; repeat once per exponent")
                     ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
                     ->expected(1);
  auto* o_boot = se->add_option("--bootstrap", bootstrap, "data variants: original plus B-1 resamples");
  auto* o_loo = se->add_flag("--loo", loo, "leave-one-out data variants");
  auto* o_base = se->add_option("--baseline-gamma", baseline_gamma, "comma-separated baseline exponents");
  auto* o_rule = se->add_option("--decision-rule", rule, "argmax, hdi or mean_sign");
  auto* o_theta0 = se->add_option("--theta0", theta0, "value tested by the hdi rule");
  auto* o_mass = se->add_option("--hdi-mass", hdi_mass, "mass of the hdi rule's interval");
  auto* o_alpha = se->add_option("--alpha-level", alpha, "typical-set level");
  auto* o_thr = se->add_option("--threshold", threshold, "divergence bound for the robust flag");
  auto* o_proj = se->add_option("--project", projection, "all, column list \"0,2\" or \"ratio:i/j\"");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const auto config = load_experiment(config_path);
  const fs::path out = out_dir.empty() ? fs::path(config.output_dir) : fs::path(out_dir);

  if (sim->parsed()) {
    SimulateArgs a;
    if (sim_seed->count()) a.seed = seed;
    if (sim_budget->count()) a.budget = budget;
    a.name = name;
    cmd_simulate(config, a, out, std::cout);
  } else if (tr->parsed()) {
    TrainArgs a;
    a.dataset = data_path;
    if (tr_seed->count()) a.seed = seed;
    if (tr_ens->count()) a.ensemble = ensemble;
    cmd_train(config, a, out, std::cout);
  } else if (va->parsed()) {
    ValidateArgs a;
    a.model = model_path;
    a.testset = test_path;
    a.oracle = oracle;
    cmd_validate(config, a, out, std::cout);
  } else if (in->parsed()) {
    InferArgs a;
    a.model = model_path;
    a.observed = observed;
    if (in_seed->count()) a.seed = seed;
    if (!gamma_list.empty()) a.gamma = parse_list(gamma_list);
    a.likelihood = likelihood;
    a.n_draws = n_draws;
    cmd_infer(config, a, out, std::cout);
  } else if (se->parsed()) {
    SensitivityArgs a;
    a.model = model_path;
    a.observed = observed;
    if (se_seed->count()) a.seed = seed;
    if (o_grid->count()) a.gamma_grids = grids;
    if (o_boot->count()) a.bootstrap = bootstrap;
    if (o_loo->count()) a.loo = loo;
    if (o_base->count()) a.baseline_gamma = parse_list(baseline_gamma);
    if (o_rule->count()) a.decision_rule = rule;
    if (o_theta0->count()) a.theta0 = theta0;
    if (o_mass->count()) a.hdi_mass = hdi_mass;
    if (o_alpha->count()) a.alpha_level = alpha;
    if (o_thr->count()) a.threshold = threshold;
    if (o_proj->count()) a.projection = projection;
    const auto outcome = cmd_sensitivity(config, a, out, std::cout);
    if (!outcome.ok) {
      std::cerr << "error: " << outcome.failed << " of " << outcome.cells << " cells failed\n";
      return 3;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const DataIntegrityError& e) {
    std::cerr << "data integrity error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::domain_error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
