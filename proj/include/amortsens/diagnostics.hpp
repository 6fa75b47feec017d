#pragma once

// Closed-world validation metrics and typical-set out-of-distribution checks
// on learned summaries.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "amortsens/nnet.hpp"
#include "amortsens/tasks.hpp"

namespace amortsens {

struct ParameterScore {
  double value = 0.0;  // mean over parameters
  std::vector<double> per_parameter;
};

/// |mean_s(theta_s - theta*)| per test set, averaged over sets. draw_sets[j]
/// is S x D, truths is J x D.
ParameterScore mae(const std::vector<Eigen::MatrixXd>& draw_sets, const Eigen::MatrixXd& truths);
/// mean_s |theta_s - theta*|, averaged over sets.
ParameterScore mean_absolute_deviation(const std::vector<Eigen::MatrixXd>& draw_sets, const Eigen::MatrixXd& truths);

/// Draws n posterior samples given data and context.
using PosteriorSampler =
    std::function<Eigen::MatrixXd(const Eigen::MatrixXd& data, const ContextVector& ctx, std::size_t n, Rng& rng)>;

PosteriorSampler network_sampler(const Approximator& model);
/// Closed-form posterior of the conjugate task.
PosteriorSampler analytic_sampler(const Task& task);

struct SbcResult {
  double ece = 0.0;
  std::vector<double> per_parameter;
  std::vector<double> levels;
  Eigen::MatrixXd coverage;        // levels x D
  Eigen::MatrixXd rank_fractions;  // sims x D, in [0, 1]
};

/// The 20 central-interval levels, 0.005 to 0.995.
std::vector<double> sbc_levels();

/// Coverage error from rank fractions u = (#draws < truth + ties / 2) / S.
SbcResult sbc_from_ranks(const Eigen::MatrixXd& rank_fractions);
SbcResult sbc_from_draws(const std::vector<Eigen::MatrixXd>& draw_sets, const Eigen::MatrixXd& truths);

/// Simulates n_sims (theta*, x) pairs at a fixed context (or from the context
/// prior when none is given) and measures coverage of the sampler's draws.
SbcResult sbc_ece(const Task& task, const PosteriorSampler& sampler, std::optional<ContextVector> context,
                  std::size_t n_sims, std::size_t n_draws, std::uint64_t seed);

/// 1 - var(draws) / var(scaled prior): median over sets, mean over parameters.
ParameterScore posterior_contraction(const std::vector<Eigen::MatrixXd>& draw_sets, const PriorSpec& prior,
                                     const std::vector<ContextVector>& contexts);
ParameterScore posterior_contraction(const Eigen::MatrixXd& draws, const PriorSpec& prior, const ContextVector& ctx);

struct ClassifierScores {
  double accuracy = 0.0;
  double brier = 0.0;
  double ece = 0.0;
  double mae = 0.0;
};

/// probs is N x J, labels in [0, J).
ClassifierScores classifier_metrics(const Eigen::MatrixXd& probs, const std::vector<int>& labels, int n_bins = 10);
ClassifierScores classifier_metrics(const Approximator& model, const SimulationBatch& testset, int n_bins = 10);

/// Gaussian kernel density estimate with a full-covariance Scott bandwidth.
class KernelDensity {
 public:
  explicit KernelDensity(Eigen::MatrixXd points);
  double log_density(const Eigen::VectorXd& x) const;
  /// Density at point i with point i left out.
  double loo_log_density(std::size_t i) const;
  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(points_.cols()); }

 private:
  double log_sum(const Eigen::VectorXd& x, std::optional<std::size_t> skip) const;
  Eigen::MatrixXd points_;
  Eigen::MatrixXd whiten_;       // L^-1 of the bandwidth matrix
  Eigen::MatrixXd white_points_;
  double log_norm_ = 0.0;
};

struct OodResult {
  double score = 0.0;  // KDE log-density of the observed summary
  double lower = 0.0;
  double upper = 0.0;
  double alpha = 0.05;
  bool flagged = false;
  bool below = false;  // off the simulated density rather than unusually central
};

/// Typical set of simulated summaries at level alpha.
class TypicalSet {
 public:
  TypicalSet(Eigen::MatrixXd summaries, double alpha);
  OodResult evaluate(const Eigen::VectorXd& summary) const;
  std::size_t dim() const { return kde_.dim(); }

 private:
  KernelDensity kde_;
  double alpha_;
  double lower_ = 0.0;
  double upper_ = 0.0;
};

/// Learned summaries of every simulated dataset (rows).
Eigen::MatrixXd simulated_summaries(const Approximator& model, const SimulationBatch& sims);

/// Needs at least 500 simulated datasets.
OodResult typical_set_ood(const Approximator& model, const SimulationBatch& sims, const Eigen::MatrixXd& x_obs,
                          double alpha = 0.05);

}  // namespace amortsens
