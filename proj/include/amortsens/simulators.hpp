#pragma once

// Forward models: SIR outbreak with negative-binomial reporting, drift-diffusion
// and Levy-flight decision models, and a conjugate Gaussian model whose
// posterior is known in closed form.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "amortsens/random.hpp"

namespace amortsens {

struct SirParams {
  double lambda = 0.4;  // transmission rate, 1/day
  double mu = 0.125;    // recovery rate, 1/day
  double delay = 8.0;   // reporting delay D, days
  double i0 = 40.0;     // initial infected
  double psi = 5.0;     // negative-binomial dispersion
};

enum class ReportingNoise { NegBinomial, Poisson };

struct SirOptions {
  std::size_t horizon_days = 14;
  double population = 83e6;
  int substeps_per_day = 10;
  ReportingNoise noise = ReportingNoise::NegBinomial;
};

/// Compartment trajectory at whole days plus the new-infection rate at each day.
struct SirTrajectory {
  std::vector<double> susceptible;
  std::vector<double> infected;
  std::vector<double> recovered;
  std::vector<double> new_infections;  // lambda * S_t * I_t / N
};

/// Deterministic explicit-Euler integration of the SIR ODEs. `days` whole days
/// are recorded, index 0 being the initial state. Throws SimulationError on a
/// non-finite state.
SirTrajectory integrate_sir(const SirParams& params, std::size_t days, double population,
                            int substeps_per_day);

/// Mean reported count for day t: new infections at t - D (linear interpolation
/// in D), or i0 * lambda before the delay has elapsed.
std::vector<double> reported_means(const SirParams& params, const SirTrajectory& traj,
                                   std::size_t horizon_days);

/// Reported-infection counts for days 0..horizon-1.
std::vector<std::int64_t> simulate_sir(const SirParams& params, const SirOptions& options, Rng& rng);

/// Mean/dispersion negative binomial: E = mean, Var = mean + mean^2 / dispersion.
std::int64_t sample_negbinomial(double mean, double dispersion, Rng& rng);

/// Symmetric alpha-stable draw (Chambers-Mallows-Stuck, beta = 0).
double sample_alpha_stable(double alpha, double scale, Rng& rng);

enum class DecisionModel { Diffusion, LevyFlight };

struct DdmParams {
  double v = 0.0;       // drift rate
  double a = 1.0;       // threshold separation
  double z_r = 0.5;     // relative start point
  double t0 = 0.3;      // non-decision time, seconds
  double alpha = 2.0;   // stability index, LevyFlight only
};

struct DecisionOptions {
  double dt = 0.001;
  double max_time = 10.0;
  int max_resamples_per_trial = 100;
};

struct DecisionData {
  /// Signed response times; negative marks the lower boundary.
  std::vector<double> rt;
  std::size_t resampled = 0;
  bool degenerate_warning = false;
};

/// Euler-Maruyama first-passage simulation of n_trials decisions.
DecisionData simulate_decisions(const DdmParams& params, std::size_t n_trials, DecisionModel model,
                                const DecisionOptions& options, Rng& rng);

/// x_i ~ N(theta, I), one row per observation.
Eigen::MatrixXd simulate_conjugate(const Eigen::VectorXd& theta, std::size_t n_obs, Rng& rng);

struct GaussianPosterior {
  double mean;
  double sd;
};

/// Posterior of theta under x_i ~ N(theta, 1) and the prior N(m0, s0 / sqrt(gamma)).
GaussianPosterior analytic_gaussian_posterior(const Eigen::VectorXd& data, double prior_mean,
                                              double prior_sd, double gamma);

}  // namespace amortsens
