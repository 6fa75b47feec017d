#pragma once

// Joint models p(context) p(theta | context) p(x | theta, context) assembled from
// a prior spec, a context prior and one of the forward simulators.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "amortsens/context.hpp"
#include "amortsens/dataset.hpp"
#include "amortsens/simulators.hpp"

namespace amortsens {

enum class TaskKind { Conjugate, Sir, Decision };

std::string_view task_name(TaskKind kind);
TaskKind parse_task(std::string_view name);

/// How raw observation rows are turned into network input features before
/// standardization.
enum class FeatureMap { Identity, Log1p, SignedTime };

/// Unconstrained coordinates seen by the flow: identity or log.
enum class ThetaScale { Identity, Log };

struct TaskConfig {
  TaskKind kind = TaskKind::Conjugate;
  PriorSpec prior;
  ContextPrior context_prior;
  std::size_t n_obs = 10;                       // conjugate
  SirOptions sir;                               // sir
  std::vector<ReportingNoise> likelihoods{ReportingNoise::NegBinomial};  // sir C_L choices
  std::size_t n_trials = 50;                    // decision
  DecisionOptions decision;                     // decision
};

/// Default configurations for the three shipped tasks.
TaskConfig default_conjugate_task(std::size_t dim = 2, std::size_t n_obs = 10);
TaskConfig default_sir_task();
TaskConfig default_decision_task();

struct SimulatedRow {
  ContextVector context;
  Eigen::VectorXd theta;  // Parameters targets
  int model = -1;         // Models targets
  Eigen::MatrixXd data;
};

class Task {
 public:
  explicit Task(TaskConfig config);

  const TaskConfig& config() const { return config_; }
  TaskKind kind() const { return config_.kind; }
  DatasetLayout layout() const;
  std::vector<std::string> observation_columns() const;
  std::vector<std::string> parameter_names() const;
  FeatureMap feature_map() const;
  std::vector<ThetaScale> theta_scales() const;

  /// Draw a context from the context prior, then a full joint sample.
  SimulatedRow simulate_row(Rng& rng) const;
  /// Joint sample at a fixed context.
  SimulatedRow simulate_at(const ContextVector& context, Rng& rng) const;
  /// Data given parameters (Parameters targets only).
  Eigen::MatrixXd simulate_data(const Eigen::VectorXd& theta, const ContextVector& context,
                                Rng& rng) const;
  /// Data from a given model index (Models targets only).
  Eigen::MatrixXd simulate_model(int model, const ContextVector& context, Rng& rng) const;

  /// `budget` rows; row i uses the stream derive_stream(seed, i), so the result
  /// does not depend on the order rows are produced in.
  SimulationBatch simulate(std::size_t budget, std::uint64_t seed) const;
  /// Same, but every row at the given context.
  SimulationBatch simulate_at_context(std::size_t budget, const ContextVector& context,
                                      std::uint64_t seed) const;

  /// Closed-form posterior draws (conjugate task only); draws x dim.
  Eigen::MatrixXd analytic_posterior_draws(const Eigen::MatrixXd& data, const ContextVector& context,
                                           std::size_t n_draws, Rng& rng) const;
  std::vector<GaussianPosterior> analytic_posterior(const Eigen::MatrixXd& data,
                                                    const ContextVector& context) const;

 private:
  TaskConfig config_;
};

}  // namespace amortsens
