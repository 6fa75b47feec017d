#include "amortsens/commands.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "amortsens/diagnostics.hpp"
#include "amortsens/errors.hpp"
#include "amortsens/io.hpp"
#include "amortsens/sensitivity.hpp"

namespace amortsens {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_snapshot(const ExperimentConfig& config, const json& command, const fs::path& out_dir) {
  json j = to_json(config);
  j["command"] = command;
  write_file_atomic(out_dir / "config.json", j.dump(2) + "\n");
}

void check_compatible(const ExperimentConfig& config, const Ensemble& ensemble) {
  const Task task = config.make_task();
  const auto l = task.layout();
  const auto& a = ensemble.architecture();
  if (a.target != l.target || a.obs_dim != l.obs_dim || a.context_dim != l.context_dim() ||
      (l.target == TargetKind::Parameters && a.theta_dim != l.theta_dim) ||
      (l.target == TargetKind::Models && a.n_models != l.n_models)) {
    throw UsageError("model does not match the configured task");
  }
}

ContextVector context_for(const Task& task, const std::vector<double>& gamma, int likelihood) {
  const auto l = task.layout();
  ContextVector c = baseline_context(l.gamma_size, l.likelihood_cardinality);
  if (!gamma.empty()) {
    if (gamma.size() != l.gamma_size) {
      throw UsageError("expected " + std::to_string(l.gamma_size) + " gamma values, got " + std::to_string(gamma.size()));
    }
    c.gamma = gamma;
  }
  c.likelihood_choice = likelihood;
  c.validate();
  return c;
}

json args_json(const SensitivityArgs& a) {
  json j = {{"command", "sensitivity"}, {"model", a.model.string()}, {"observed", a.observed.string()}};
  if (a.seed) j["seed"] = *a.seed;
  return j;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
}

}  // namespace

fs::path cmd_simulate(const ExperimentConfig& config, const SimulateArgs& args, const fs::path& out_dir,
                      std::ostream& log) {
  const Task task = config.make_task();
  const auto budget = args.budget.value_or(config.budget);
  const auto seed = args.seed.value_or(config.seeds.simulate);
  if (budget < 1) throw UsageError("simulation budget must be positive");
  const auto batch = task.simulate(budget, seed);
  const fs::path path = out_dir / (args.name + ".json");
  json snapshot = to_json(config);
  snapshot["command"] = {{"command", "simulate"}, {"seed", seed}, {"budget", budget}};
  save_dataset(batch, path, snapshot.dump());
  write_snapshot(config, snapshot["command"], out_dir);
  log << "simulated " << batch.rows() << " rows (" << task_name(task.kind()) << ")";
  if (batch.layout().target == TargetKind::Models) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(batch.layout().n_models), 0);
    for (auto l : batch.labels()) ++counts[static_cast<std::size_t>(l)];
    log << ", model counts";
    for (auto c : counts) log << " " << c;
  }
  log << "\nhash " << batch.content_hash() << "\nwrote " << path.string() << "\n";
  return path;
}

std::vector<fs::path> cmd_train(const ExperimentConfig& config, const TrainArgs& args, const fs::path& out_dir,
                                std::ostream& log) {
  const auto data = load_dataset(args.dataset);
  const Task task = config.make_task();
  if (!(data.layout() == task.layout())) throw UsageError("dataset layout does not match the configured task");
  const auto M = args.ensemble.value_or(config.ensemble);
  const auto seed = args.seed.value_or(config.seeds.train);
  if (M < 1) throw UsageError("ensemble size must be positive");

  json command = {{"command", "train"}, {"dataset", args.dataset.string()}, {"ensemble", M}, {"seed", seed}};
  json snapshot = to_json(config);
  snapshot["command"] = command;
  std::vector<fs::path> out;
  if (M == 1) {
    auto ck = train(config.train, data, config.architecture, seed);
    ck.experiment = snapshot.dump();
    const auto path = out_dir / "model.json";
    save_checkpoint(ck, path);
    log << "final loss " << num(ck.epoch_losses.back()) << ", validation " << num(ck.validation_loss) << "\n";
    out.push_back(path);
  } else {
    auto e = train_ensemble(config.train, data, config.architecture, M, seed, config.threads);
    EnsembleManifest manifest;
    manifest.dataset_hash = e.dataset_hash;
    for (std::size_t m = 0; m < M; ++m) {
      e.members[m].experiment = snapshot.dump();
      const fs::path name = "member_" + std::to_string(m) + ".json";
      save_checkpoint(e.members[m], out_dir / name);
      manifest.members.push_back(name);
      manifest.seeds.push_back(e.members[m].seed);
      log << "member " << m << ": final loss " << num(e.members[m].epoch_losses.back()) << ", validation "
          << num(e.members[m].validation_loss) << "\n";
      out.push_back(out_dir / name);
    }
    save_ensemble_manifest(manifest, out_dir / "ensemble.json");
    out.push_back(out_dir / "ensemble.json");
  }
  write_snapshot(config, command, out_dir);
  for (const auto& p : out) log << "wrote " << p.string() << "\n";
  return out;
}

fs::path cmd_validate(const ExperimentConfig& config, const ValidateArgs& args, const fs::path& out_dir,
                      std::ostream& log) {
  const auto ensemble = load_models(args.model);
  check_compatible(config, ensemble);
  const auto test = load_dataset(args.testset);
  if (test.empty()) throw UsageError("test set is empty");
  const Task task = config.make_task();
  if (!(test.layout() == task.layout())) throw UsageError("test set layout does not match the configured task");

  std::ostringstream csv;
  const bool models = ensemble.architecture().target == TargetKind::Models;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> names;
  if (models) {
    csv << "row,accuracy,brier,ece,mae,accuracy_sd,brier_sd,ece_sd,mae_sd\n";
    for (std::size_t m = 0; m < ensemble.size(); ++m) {
      const auto s = classifier_metrics(ensemble.members[m].model, test);
      rows.push_back({s.accuracy, s.brier, s.ece, s.mae});
      names.push_back("member_" + std::to_string(m));
    }
  } else {
    csv << "row,mae,ece,contraction,mae_sd,ece_sd,contraction_sd\n";
    const auto n = static_cast<Eigen::Index>(test.rows());
    Eigen::MatrixXd truths(n, static_cast<Eigen::Index>(test.layout().theta_dim));
    std::vector<ContextVector> contexts;
    for (std::size_t i = 0; i < test.rows(); ++i) {
      truths.row(static_cast<Eigen::Index>(i)) = test.theta(i).transpose();
      contexts.push_back(test.context(i));
    }
    auto score = [&](const PosteriorSampler& sampler, std::uint64_t stream) {
      std::vector<Eigen::MatrixXd> draws;
      for (std::size_t i = 0; i < test.rows(); ++i) {
        Rng rng = derive_stream(config.seeds.test, i, stream);
        draws.push_back(sampler(test.data(i), contexts[i], config.validation_draws, rng));
      }
      return std::vector<double>{mae(draws, truths).value, sbc_from_draws(draws, truths).ece,
                                 posterior_contraction(draws, task.config().prior, contexts).value};
    };
    for (std::size_t m = 0; m < ensemble.size(); ++m) {
      rows.push_back(score(network_sampler(ensemble.members[m].model), m + 1));
      names.push_back("member_" + std::to_string(m));
    }
    if (args.oracle) {
      const auto oracle = score(analytic_sampler(task), 0);
      rows.push_back(oracle);
      names.push_back("oracle");
    }
  }
  const std::size_t n_members = ensemble.size();
  std::vector<double> mean_row, sd_row;
  for (std::size_t k = 0; k < rows.front().size(); ++k) {
    std::vector<double> col;
    for (std::size_t m = 0; m < n_members; ++m) col.push_back(rows[m][k]);
    mean_row.push_back(mean_of(col));
    sd_row.push_back(sd_of(col));
  }
  // One aggregate row: ensemble means, with the member spread in the _sd columns.
  if (n_members > 1) {
    rows.push_back(mean_row);
    names.push_back("ensemble");
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    csv << names[r];
    for (double v : rows[r]) csv << "," << num(v);
    const bool aggregate = names[r] == "ensemble";
    for (double v : sd_row) csv << "," << (aggregate ? num(v) : std::string());
    csv << "\n";
  }
  const auto path = out_dir / "scores.csv";
  write_file_atomic(path, csv.str());
  write_snapshot(config,
                 {{"command", "validate"},
                  {"model", args.model.string()},
                  {"testset", args.testset.string()},
                  {"oracle", args.oracle}},
                 out_dir);
  log << csv.str() << "wrote " << path.string() << "\n";
  return path;
}

fs::path cmd_infer(const ExperimentConfig& config, const InferArgs& args, const fs::path& out_dir, std::ostream& log) {
  const auto ensemble = load_models(args.model);
  check_compatible(config, ensemble);
  const Task task = config.make_task();
  const auto x = read_observations_csv(args.observed, task.observation_columns());
  const auto ctx = context_for(task, args.gamma, args.likelihood);
  const auto seed = args.seed.value_or(config.seeds.sensitivity);
  std::ostringstream csv;
  fs::path path;
  if (ensemble.architecture().target == TargetKind::Models) {
    Rng rng(seed);
    const auto pred = ensemble_predict(ensemble, x, ctx, 1, rng);
    csv << "member";
    for (int j = 0; j < ensemble.architecture().n_models; ++j) csv << ",p_model_" << j;
    csv << "\n";
    for (std::size_t m = 0; m < ensemble.size(); ++m) {
      csv << m;
      for (Eigen::Index j = 0; j < pred.member_probs[m].size(); ++j) csv << "," << num(pred.member_probs[m](j));
      csv << "\n";
    }
    csv << "mixture";
    for (Eigen::Index j = 0; j < pred.mixture_probs.size(); ++j) csv << "," << num(pred.mixture_probs(j));
    csv << "\n";
    path = out_dir / "model_probs.csv";
    log << "disagreement " << num(pred.disagreement) << "\n";
  } else {
    Rng rng(seed);
    const auto pred = ensemble_predict(ensemble, x, ctx, args.n_draws, rng);
    csv << "member";
    for (const auto& n : task.parameter_names()) csv << "," << n;
    csv << "\n";
    for (std::size_t m = 0; m < ensemble.size(); ++m) {
      const auto& d = pred.member_draws[m];
      for (Eigen::Index i = 0; i < d.rows(); ++i) {
        csv << m;
        for (Eigen::Index k = 0; k < d.cols(); ++k) csv << "," << num(d(i, k));
        csv << "\n";
      }
    }
    path = out_dir / "draws.csv";
    const Eigen::RowVectorXd mean = pred.pooled_draws.colwise().mean();
    log << "posterior mean";
    for (Eigen::Index k = 0; k < mean.size(); ++k) log << " " << num(mean(k));
    log << "\ndisagreement " << num(pred.disagreement) << "\n";
  }
  write_file_atomic(path, csv.str());
  json gamma = json::array();
  for (double g : ctx.gamma) gamma.push_back(g);
  write_snapshot(config,
                 {{"command", "infer"},
                  {"model", args.model.string()},
                  {"observed", args.observed.string()},
                  {"seed", seed},
                  {"gamma", gamma},
                  {"likelihood", args.likelihood},
                  {"n_draws", args.n_draws}},
                 out_dir);
  log << "wrote " << path.string() << "\n";
  return path;
}

GridSpec make_grid_spec(const ExperimentConfig& config, const SensitivityConfig& sens, TargetKind target) {
  const Task task = config.make_task();
  GridSpec g;
  for (const auto& s : sens.gamma_grids) g.gamma_axes.push_back(parse_grid(s));
  g.likelihood_choices = sens.likelihoods;
  if (sens.bootstrap > 0 && sens.loo) throw UsageError("--bootstrap and --loo are exclusive");
  if (sens.bootstrap > 0) {
    g.data_mode = DataVariantMode::Bootstrap;
    g.bootstrap = sens.bootstrap;
  } else if (sens.loo) {
    g.data_mode = DataVariantMode::LeaveOneOut;
  }
  g.baseline = context_for(task, sens.baseline_gamma, sens.baseline_likelihood);
  const std::string rule =
      sens.decision_rule.empty() ? (target == TargetKind::Models ? "argmax" : "mean_sign") : sens.decision_rule;
  g.rule = DecisionRule::parse(rule);
  g.rule.theta0 = sens.theta0;
  g.rule.hdi_mass = sens.hdi_mass;
  g.rule.dimension = sens.decision_dimension;
  g.projection = Projection::parse(sens.projection);
  g.n_draws = sens.n_draws;
  g.threshold = sens.threshold;
  g.kl_direction = sens.kl_direction == "cell_baseline" ? KlDirection::CellToBaseline : KlDirection::BaselineToCell;
  g.seed = config.seeds.sensitivity;
  return g;
}

SensitivityOutcome cmd_sensitivity(const ExperimentConfig& config, const SensitivityArgs& args, const fs::path& out_dir,
                                   std::ostream& log) {
  const auto ensemble = load_models(args.model);
  check_compatible(config, ensemble);
  const Task task = config.make_task();
  const auto x = read_observations_csv(args.observed, task.observation_columns());

  SensitivityConfig sens = config.sensitivity;
  if (args.gamma_grids) sens.gamma_grids = *args.gamma_grids;
  if (args.bootstrap) sens.bootstrap = *args.bootstrap;
  if (args.loo) sens.loo = *args.loo;
  if (args.baseline_gamma) sens.baseline_gamma = *args.baseline_gamma;
  if (args.decision_rule) sens.decision_rule = *args.decision_rule;
  if (args.theta0) sens.theta0 = *args.theta0;
  if (args.hdi_mass) sens.hdi_mass = *args.hdi_mass;
  if (args.alpha_level) sens.alpha_level = *args.alpha_level;
  if (args.threshold) sens.threshold = *args.threshold;
  if (args.projection) sens.projection = *args.projection;
  ExperimentConfig effective = config;
  if (args.seed) effective.seeds.sensitivity = *args.seed;
  effective.sensitivity = sens;
  effective.validate();

  const auto target = ensemble.architecture().target;
  const auto spec = make_grid_spec(effective, sens, target);
  const auto report = run_sensitivity_grid(ensemble, x, spec, task.parameter_names());

  SensitivityOutcome outcome;
  outcome.cells = report.cells.size();
  outcome.failed = report.failed();
  outcome.ok = static_cast<double>(outcome.failed) <= 0.01 * static_cast<double>(outcome.cells);

  std::ostringstream cells;
  report.write_csv(cells);
  write_file_atomic(out_dir / "report.csv", cells.str());
  outcome.files.push_back(out_dir / "report.csv");

  // Reference simulations at the baseline context for the typical set and the
  // closed-world spread.
  const auto reference = task.simulate_at_context(std::max<std::size_t>(config.test_budget, 500), spec.baseline,
                                                  effective.seeds.test);
  std::ostringstream ood;
  ood << "member,score,lower,upper,alpha,flagged,below\n";
  std::vector<OodResult> ood_results;
  for (std::size_t m = 0; m < ensemble.size(); ++m) {
    const auto r = typical_set_ood(ensemble.members[m].model, reference, x, sens.alpha_level);
    ood_results.push_back(r);
    ood << m << "," << num(r.score) << "," << num(r.lower) << "," << num(r.upper) << "," << num(r.alpha) << ","
        << (r.flagged ? 1 : 0) << "," << (r.below ? 1 : 0) << "\n";
  }
  write_file_atomic(out_dir / "ood.csv", ood.str());
  outcome.files.push_back(out_dir / "ood.csv");

  std::optional<ClosedOpenReport> gap;
  if (ensemble.size() >= 2) {
    const auto closed = reference.slice(0, std::min<std::size_t>(reference.rows(), 200));
    gap = closed_vs_open_report(ensemble, closed, x, spec.baseline, std::min<std::size_t>(sens.n_draws, 200),
                                effective.seeds.sensitivity, sens.gap_threshold);
  }

  std::ostringstream text;
  text << "experiment: " << config.name << "\n";
  text << "cells: " << report.cells.size() << " (expected " << report.expected_cells() << ", failed "
       << report.failed() << ")\n";
  text << "axes: gamma " << report.axis_sizes[0] << ", likelihood " << report.axis_sizes[1] << ", data variants "
       << report.axis_sizes[2] << ", members " << report.axis_sizes[3] << "\n";
  text << "divergence: " << report.divergence_kind << "\n";
  text << "decision rule: " << report.decision_rule << "\n";
  text << "baseline decision per member:";
  for (int d : report.baseline_decisions) text << " " << d;
  text << "\nrobustness fraction: " << num(report.robust_fraction()) << "\n";
  double worst = 0.0;
  std::size_t worst_cell = 0;
  std::size_t over = 0;
  for (std::size_t c = 0; c < report.cells.size(); ++c) {
    const auto& cell = report.cells[c];
    if (!cell.ok) continue;
    if (cell.divergence > worst) {
      worst = cell.divergence;
      worst_cell = c;
    }
    if (cell.robust && !*cell.robust) ++over;
  }
  text << "largest divergence: " << num(worst) << " (cell " << worst_cell << ")\n";
  if (sens.threshold) text << "cells at or above threshold " << num(*sens.threshold) << ": " << over << "\n";
  std::size_t flagged = 0, below = 0;
  for (const auto& r : ood_results) {
    flagged += r.flagged ? 1 : 0;
    below += r.below ? 1 : 0;
  }
  text << "typical set (alpha " << num(sens.alpha_level) << "): flagged by " << flagged << " of " << ood_results.size()
       << " members, " << below << " below the typical set\n";
  if (gap) {
    text << "closed-world spread: " << num(gap->closed_spread) << "\nopen-world disagreement: "
         << num(gap->open_disagreement) << "\nratio: " << num(gap->ratio) << " (threshold " << num(gap->threshold)
         << ")\nsimulation gap: " << (gap->gap_flag ? "flagged" : "not flagged") << "\n";
  } else {
    text << "simulation gap: not assessed (single model)\n";
  }
  if (report.failed() > 0) {
    text << "failed cells:\n";
    for (std::size_t c = 0; c < report.cells.size(); ++c) {
      if (!report.cells[c].ok) text << "  " << c << ": " << report.cells[c].message << "\n";
    }
  }
  write_file_atomic(out_dir / "summary.txt", text.str());
  outcome.files.push_back(out_dir / "summary.txt");
  write_snapshot(effective, args_json(args), out_dir);
  outcome.files.push_back(out_dir / "config.json");
  log << text.str();
  for (const auto& p : outcome.files) log << "wrote " << p.string() << "\n";
  return outcome;
}

}  // namespace amortsens
