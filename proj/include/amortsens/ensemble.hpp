#pragma once

// Deep ensembles of identically configured approximators trained on one shared
// simulation set, and their pooled predictions.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "amortsens/errors.hpp"
#include "amortsens/nnet.hpp"

namespace amortsens {

struct Ensemble {
  std::vector<Checkpoint> members;
  std::string dataset_hash;
  std::vector<std::uint64_t> member_seeds;

  std::size_t size() const { return members.size(); }
  const Architecture& architecture() const;
  /// Throws UsageError on architecture mismatch, DataIntegrityError on a
  /// member trained on other data.
  void validate() const;
};

/// Raised when some members fail to train; lists the failing indices.
class EnsembleTrainingError : public NumericError {
 public:
  EnsembleTrainingError(const std::string& what, std::vector<std::size_t> failed)
      : NumericError(what), failed_(std::move(failed)) {}
  const std::vector<std::size_t>& failed_members() const { return failed_; }

 private:
  std::vector<std::size_t> failed_;
};

/// Seed of member m under a root seed.
std::uint64_t member_seed(std::uint64_t root_seed, std::size_t member);

/// M independent runs on the same data; members differ only in their seed.
/// Members are trained on up to `threads` workers; the result does not depend
/// on the worker count.
Ensemble train_ensemble(const TrainConfig& config, const SimulationBatch& dataset, const Architecture& arch,
                        std::size_t members, std::uint64_t root_seed, unsigned threads = 1);

/// Collects checkpoints into an ensemble, checking that they agree.
Ensemble assemble_ensemble(std::vector<Checkpoint> members, const std::string& expected_dataset_hash);

struct EnsemblePrediction {
  TargetKind target = TargetKind::Parameters;
  std::vector<Eigen::MatrixXd> member_draws;  // parameters
  Eigen::MatrixXd pooled_draws;
  std::vector<Eigen::VectorXd> member_probs;  // models
  Eigen::VectorXd mixture_probs;
  /// Across-member sd of posterior means (per dimension) or of probabilities (per model).
  Eigen::VectorXd disagreement_per;
  double disagreement = 0.0;  // max of disagreement_per
};

/// Population standard deviation across members, per coordinate.
Eigen::VectorXd across_member_sd(const std::vector<Eigen::VectorXd>& values);

/// Each member draws from its own stream keyed by its seed, so the result is
/// the same whatever order members are listed in.
EnsemblePrediction ensemble_predict(const Ensemble& ensemble, const Eigen::MatrixXd& x_obs, const ContextVector& ctx,
                                    std::size_t n_draws_per_member, Rng& rng);

/// Combine per-member outputs that were computed elsewhere.
EnsemblePrediction combine_draws(std::vector<Eigen::MatrixXd> member_draws);
EnsemblePrediction combine_probs(std::vector<Eigen::VectorXd> member_probs);

struct ClosedOpenReport {
  std::vector<double> member_metric;  // per-member closed-world score (accuracy or MAE)
  double member_metric_sd = 0.0;
  double closed_spread = 0.0;         // mean member disagreement over held-out simulations
  double open_disagreement = 0.0;     // member disagreement at the observation
  double ratio = 0.0;
  double threshold = 3.0;
  bool gap_flag = false;
};

/// Compares the members' spread on held-out simulations with their spread at
/// x_obs; a ratio above `threshold` flags a simulation gap.
ClosedOpenReport closed_vs_open_report(const Ensemble& ensemble, const SimulationBatch& testset,
                                       const Eigen::MatrixXd& x_obs, const ContextVector& ctx,
                                       std::size_t n_draws, std::uint64_t seed, double threshold = 3.0);

}  // namespace amortsens
