#pragma once

// The five workflows behind the command-line tool. Each writes its outputs
// plus a config snapshot into an output directory and returns the paths it
// produced.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "amortsens/config.hpp"
#include "amortsens/sensitivity.hpp"

namespace amortsens {

struct SimulateArgs {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> budget;
  std::string name = "dataset";
};

struct TrainArgs {
  std::filesystem::path dataset;
  std::optional<std::size_t> ensemble;
  std::optional<std::uint64_t> seed;
};

struct ValidateArgs {
  std::filesystem::path model;  // checkpoint or ensemble manifest
  std::filesystem::path testset;
  bool oracle = false;
};

struct InferArgs {
  std::filesystem::path model;
  std::filesystem::path observed;
  std::optional<std::uint64_t> seed;
  std::vector<double> gamma;  // empty = baseline
  int likelihood = 0;
  std::size_t n_draws = 1000;
};

struct SensitivityArgs {
  std::filesystem::path model;
  std::filesystem::path observed;
  std::optional<std::uint64_t> seed;
  // Unset fields fall back to the config's sensitivity section.
  std::optional<std::vector<std::string>> gamma_grids;
  std::optional<std::size_t> bootstrap;
  std::optional<bool> loo;
  std::optional<std::vector<double>> baseline_gamma;
  std::optional<std::string> decision_rule;
  std::optional<double> theta0;
  std::optional<double> hdi_mass;
  std::optional<double> alpha_level;
  std::optional<double> threshold;
  std::optional<std::string> projection;
};

struct SensitivityOutcome {
  std::vector<std::filesystem::path> files;
  std::size_t cells = 0;
  std::size_t failed = 0;
  /// At least 99% of cells succeeded.
  bool ok = true;
};

std::filesystem::path cmd_simulate(const ExperimentConfig& config, const SimulateArgs& args,
                                   const std::filesystem::path& out_dir, std::ostream& log);
std::vector<std::filesystem::path> cmd_train(const ExperimentConfig& config, const TrainArgs& args,
                                             const std::filesystem::path& out_dir, std::ostream& log);
std::filesystem::path cmd_validate(const ExperimentConfig& config, const ValidateArgs& args,
                                   const std::filesystem::path& out_dir, std::ostream& log);
std::filesystem::path cmd_infer(const ExperimentConfig& config, const InferArgs& args,
                                const std::filesystem::path& out_dir, std::ostream& log);
SensitivityOutcome cmd_sensitivity(const ExperimentConfig& config, const SensitivityArgs& args,
                                   const std::filesystem::path& out_dir, std::ostream& log);

/// Grid specification assembled from a config section and a model's task.
GridSpec make_grid_spec(const ExperimentConfig& config, const SensitivityConfig& sens, TargetKind target);

}  // namespace amortsens
