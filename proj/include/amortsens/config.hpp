#pragma once

// Experiment configuration files (JSON) and the JSON forms of the pieces that
// are also written into artifact manifests.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "amortsens/nnet.hpp"
#include "amortsens/tasks.hpp"

namespace amortsens {

using json = nlohmann::json;

struct SeedConfig {
  std::uint64_t simulate = 1;
  std::uint64_t train = 2;
  std::uint64_t test = 3;
  std::uint64_t sensitivity = 4;
  bool operator==(const SeedConfig&) const = default;
};

struct SensitivityConfig {
  std::vector<std::string> gamma_grids;  // "lo:hi:n log|lin", one shared or one per exponent
  std::size_t bootstrap = 0;             // data variants including the original; 0 = off
  bool loo = false;
  std::vector<int> likelihoods;          // empty = baseline only
  std::vector<double> baseline_gamma;    // empty = all ones
  int baseline_likelihood = 0;
  std::string decision_rule;             // empty = argmax for models, mean_sign for parameters
  double theta0 = 0.0;
  double hdi_mass = 0.95;
  std::size_t decision_dimension = 0;
  std::string projection = "all";
  double alpha_level = 0.05;
  std::optional<double> threshold;
  std::string kl_direction = "baseline_cell";
  std::size_t n_draws = 500;
  double gap_threshold = 3.0;
  bool operator==(const SensitivityConfig&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  TaskConfig task = default_conjugate_task();
  std::size_t conjugate_dim = 2;
  Architecture architecture;
  TrainConfig train;
  std::size_t budget = 4096;
  std::size_t test_budget = 1000;
  std::size_t ensemble = 1;
  unsigned threads = 1;
  std::size_t validation_draws = 500;
  SeedConfig seeds;
  SensitivityConfig sensitivity;
  std::string output_dir = "out";

  Task make_task() const { return Task(task); }
  void validate() const;
};

std::string_view reporting_noise_name(ReportingNoise noise);
ReportingNoise parse_reporting_noise(std::string_view name);

json to_json(const PriorSpec& prior);
PriorSpec prior_from_json(const json& j);
json to_json(const ContextPrior& prior);
ContextPrior context_prior_from_json(const json& j);
json to_json(const Architecture& arch);
Architecture architecture_from_json(const json& j, Architecture base);
json to_json(const TrainConfig& train);
TrainConfig train_from_json(const json& j, TrainConfig base = {});
json to_json(const ExperimentConfig& config);

/// Missing fields take task defaults. Throws UsageError on malformed input.
ExperimentConfig experiment_from_json(const json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Reads a double that may be written as a number or as "inf" / "-inf".
double json_real(const json& j);

}  // namespace amortsens
