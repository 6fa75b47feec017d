#include "amortsens/simulators.hpp"

#include <cmath>
#include <numbers>

#include "amortsens/errors.hpp"

namespace amortsens {

SirTrajectory integrate_sir(const SirParams& p, std::size_t days, double population,
                            int substeps_per_day) {
  if (days < 1) throw UsageError("SIR integration needs at least one day");
  if (!(population > p.i0) || !(p.i0 > 0.0)) throw UsageError("SIR requires 0 < i0 < population");
  if (substeps_per_day < 1) throw UsageError("SIR needs at least one substep per day");

  SirTrajectory out;
  out.susceptible.reserve(days);
  out.infected.reserve(days);
  out.recovered.reserve(days);
  out.new_infections.reserve(days);

  double s = population - p.i0;
  double i = p.i0;
  double r = 0.0;
  const double h = 1.0 / substeps_per_day;
  std::size_t step = 0;
  for (std::size_t day = 0; day < days; ++day) {
    out.susceptible.push_back(s);
    out.infected.push_back(i);
    out.recovered.push_back(r);
    out.new_infections.push_back(p.lambda * s * i / population);
    if (day + 1 == days) break;
    for (int k = 0; k < substeps_per_day; ++k, ++step) {
      const double infections = h * p.lambda * s * i / population;
      const double recoveries = h * p.mu * i;
      s -= infections;
      i += infections - recoveries;
      r += recoveries;
      if (!std::isfinite(s) || !std::isfinite(i) || !std::isfinite(r)) {
        throw SimulationError("non-finite SIR state", step);
      }
    }
  }
  return out;
}

std::vector<double> reported_means(const SirParams& p, const SirTrajectory& traj,
                                   std::size_t horizon_days) {
  std::vector<double> means(horizon_days);
  const auto& inew = traj.new_infections;
  for (std::size_t t = 0; t < horizon_days; ++t) {
    const double tau = static_cast<double>(t) - p.delay;
    if (tau < 0.0) {
      means[t] = p.i0 * p.lambda;
      continue;
    }
    const auto lo = static_cast<std::size_t>(std::floor(tau));
    const double frac = tau - static_cast<double>(lo);
    const std::size_t hi = std::min(lo + 1, inew.size() - 1);
    means[t] = (1.0 - frac) * inew[lo] + frac * inew[hi];
  }
  return means;
}

std::vector<std::int64_t> simulate_sir(const SirParams& params, const SirOptions& options, Rng& rng) {
  if (options.horizon_days < 1) throw UsageError("SIR horizon must be at least one day");
  if (params.lambda < 0.0 || !(params.mu > 0.0) || !(params.delay > 0.0) || !(params.psi > 0.0)) {
    throw UsageError("SIR parameters must be positive");
  }
  const auto traj = integrate_sir(params, options.horizon_days, options.population,
                                  options.substeps_per_day);
  const auto means = reported_means(params, traj, options.horizon_days);
  std::vector<std::int64_t> counts(options.horizon_days);
  for (std::size_t t = 0; t < counts.size(); ++t) {
    if (options.noise == ReportingNoise::Poisson) {
      counts[t] = means[t] > 0.0 ? std::poisson_distribution<std::int64_t>(means[t])(rng) : 0;
    } else {
      counts[t] = sample_negbinomial(means[t], params.psi, rng);
    }
  }
  return counts;
}

std::int64_t sample_negbinomial(double mean, double dispersion, Rng& rng) {
  if (mean < 0.0 || !(dispersion > 0.0)) throw UsageError("negative binomial needs mean >= 0, dispersion > 0");
  if (mean == 0.0) return 0;
  // Gamma-Poisson mixture: n = dispersion, p = dispersion / (dispersion + mean).
  const double rate = std::gamma_distribution<double>(dispersion, mean / dispersion)(rng);
  if (!(rate > 0.0)) return 0;
  return std::poisson_distribution<std::int64_t>(rate)(rng);
}

double sample_alpha_stable(double alpha, double scale, Rng& rng) {
  if (!(alpha > 1.0 && alpha <= 2.0)) throw UsageError("alpha-stable sampler requires 1 < alpha <= 2");
  if (!(scale > 0.0)) throw UsageError("alpha-stable scale must be positive");
  constexpr double half_pi = std::numbers::pi / 2.0;
  std::uniform_real_distribution<double> unif(-half_pi, half_pi);
  double u = unif(rng);
  while (u <= -half_pi) u = unif(rng);
  const double w = std::exponential_distribution<double>(1.0)(rng);
  const double x = std::sin(alpha * u) / std::pow(std::cos(u), 1.0 / alpha) *
                   std::pow(std::cos(u - alpha * u) / w, (1.0 - alpha) / alpha);
  return scale * x;
}

DecisionData simulate_decisions(const DdmParams& p, std::size_t n_trials, DecisionModel model,
                                const DecisionOptions& options, Rng& rng) {
  if (!(options.dt > 0.0 && options.dt <= 0.01)) throw UsageError("decision dt must lie in (0, 0.01]");
  if (n_trials < 1) throw UsageError("need at least one trial");
  if (!(p.a > 0.0) || !(p.z_r > 0.0 && p.z_r < 1.0) || p.t0 < 0.0) {
    throw UsageError("invalid decision-model parameters");
  }
  if (model == DecisionModel::LevyFlight && !(p.alpha > 1.0 && p.alpha <= 2.0)) {
    throw UsageError("Levy flight requires 1 < alpha <= 2");
  }

  const double dt = options.dt;
  const auto max_steps = static_cast<std::size_t>(std::ceil(options.max_time / dt));
  const double drift = p.v * dt;
  const double gauss_scale = std::sqrt(dt);
  const double stable_scale = std::pow(dt, 1.0 / p.alpha) / std::numbers::sqrt2;
  std::normal_distribution<double> gauss(0.0, 1.0);

  DecisionData out;
  out.rt.reserve(n_trials);
  for (std::size_t trial = 0; trial < n_trials; ++trial) {
    for (int attempt = 0;; ++attempt) {
      double x = p.z_r * p.a;
      std::size_t steps = 0;
      bool finished = false;
      while (steps < max_steps) {
        const double noise = model == DecisionModel::Diffusion
                                 ? gauss(rng) * gauss_scale
                                 : sample_alpha_stable(p.alpha, stable_scale, rng);
        x += drift + noise;
        ++steps;
        if (x <= 0.0 || x >= p.a) {
          finished = true;
          break;
        }
      }
      if (finished || attempt >= options.max_resamples_per_trial) {
        const double rt = p.t0 + static_cast<double>(steps) * dt;
        const bool upper = finished ? x >= p.a : x >= 0.5 * p.a;
        out.rt.push_back(upper ? rt : -rt);
        break;
      }
      ++out.resampled;
    }
  }
  out.degenerate_warning = static_cast<double>(out.resampled) > 0.01 * static_cast<double>(n_trials);
  return out;
}

Eigen::MatrixXd simulate_conjugate(const Eigen::VectorXd& theta, std::size_t n_obs, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n_obs), theta.size());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index d = 0; d < x.cols(); ++d) x(i, d) = theta(d) + gauss(rng);
  }
  return x;
}

GaussianPosterior analytic_gaussian_posterior(const Eigen::VectorXd& data, double prior_mean,
                                              double prior_sd, double gamma) {
  if (!(prior_sd > 0.0) || !(gamma > 0.0)) throw UsageError("prior sd and gamma must be positive");
  const double prior_precision = gamma / (prior_sd * prior_sd);
  const double precision = prior_precision + static_cast<double>(data.size());
  const double mean = (prior_precision * prior_mean + data.sum()) / precision;
  return {mean, 1.0 / std::sqrt(precision)};
}

}  // namespace amortsens
