#include "amortsens/context.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <boost/math/special_functions/erf.hpp>

#include "amortsens/errors.hpp"

namespace amortsens {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double std_normal_pdf(double x) {
  if (std::isinf(x)) return 0.0;
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double std_normal_quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

// Probability mass of [alpha, beta] under N(0, 1), evaluated in the tail
// where it loses the least precision.
double truncation_mass(double alpha, double beta) {
  if (alpha > 0.0) return std_normal_cdf(-alpha) - std_normal_cdf(-beta);
  return std_normal_cdf(beta) - std_normal_cdf(alpha);
}

struct Truncation {
  double alpha;
  double beta;
  double mass;
};

Truncation truncation(const std::vector<double>& p) {
  const double alpha = (p[2] - p[0]) / p[1];
  const double beta = (p[3] - p[0]) / p[1];
  return {alpha, beta, truncation_mass(alpha, beta)};
}

// x * phi(x), with the limit 0 at infinity.
double x_phi(double x) { return std::isinf(x) ? 0.0 : x * std_normal_pdf(x); }

}  // namespace

std::string_view family_name(PriorFamily family) {
  switch (family) {
    case PriorFamily::LogNormal: return "lognormal";
    case PriorFamily::Gamma: return "gamma";
    case PriorFamily::Exponential: return "exponential";
    case PriorFamily::Normal: return "normal";
    case PriorFamily::TruncatedNormal: return "truncated_normal";
    case PriorFamily::Uniform: return "uniform";
  }
  return "unknown";
}

PriorFamily parse_family(std::string_view name) {
  for (auto f : {PriorFamily::LogNormal, PriorFamily::Gamma, PriorFamily::Exponential,
                 PriorFamily::Normal, PriorFamily::TruncatedNormal, PriorFamily::Uniform}) {
    if (family_name(f) == name) return f;
  }
  throw UsageError("unknown prior family '" + std::string(name) + "'");
}

std::size_t family_arity(PriorFamily family) {
  switch (family) {
    case PriorFamily::Exponential: return 1;
    case PriorFamily::TruncatedNormal: return 4;
    default: return 2;
  }
}

void validate_params(PriorFamily family, const std::vector<double>& p) {
  const std::string name(family_name(family));
  if (p.size() != family_arity(family)) {
    throw UsageError(name + " expects " + std::to_string(family_arity(family)) + " parameters, got " +
                     std::to_string(p.size()));
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool bound = family == PriorFamily::TruncatedNormal && i >= 2;
    if (std::isnan(p[i]) || (!bound && std::isinf(p[i]))) {
      throw UsageError(name + " parameter " + std::to_string(i) + " is not finite");
    }
  }
  switch (family) {
    case PriorFamily::LogNormal:
    case PriorFamily::Normal:
    case PriorFamily::Gamma:
      if (p[1] <= 0.0) throw UsageError(name + " scale must be positive");
      if (family == PriorFamily::Gamma && p[0] <= 0.0) throw UsageError("gamma shape must be positive");
      break;
    case PriorFamily::Exponential:
      if (p[0] <= 0.0) throw UsageError("exponential scale must be positive");
      break;
    case PriorFamily::TruncatedNormal:
      if (p[1] <= 0.0) throw UsageError("truncated_normal sd must be positive");
      if (!(p[2] < p[3])) throw UsageError("truncated_normal requires lower < upper");
      break;
    case PriorFamily::Uniform:
      if (!(p[0] < p[1])) throw UsageError("uniform requires lower < upper");
      break;
  }
}

std::vector<double> power_scale_params(PriorFamily family, const std::vector<double>& params,
                                       double gamma) {
  if (!(gamma > 0.0) || std::isinf(gamma)) throw std::domain_error("power scaling requires gamma > 0");
  validate_params(family, params);
  std::vector<double> out = params;
  switch (family) {
    case PriorFamily::LogNormal:
      // The 1/x factor is raised to gamma as well, which moves the log-mean.
      out[0] = params[0] + (1.0 - gamma) * params[1] * params[1] / gamma;
      out[1] = params[1] / std::sqrt(gamma);
      break;
    case PriorFamily::Normal:
    case PriorFamily::TruncatedNormal:
      out[1] = params[1] / std::sqrt(gamma);
      break;
    case PriorFamily::Gamma: {
      const double shape = gamma * (params[0] - 1.0) + 1.0;
      if (!(shape > 0.0)) throw std::domain_error("power-scaled gamma density is not normalizable");
      out[0] = shape;
      out[1] = params[1] / gamma;
      break;
    }
    case PriorFamily::Exponential:
      out[0] = params[0] / gamma;
      break;
    case PriorFamily::Uniform:
      break;
  }
  return out;
}

double family_log_density(PriorFamily family, const std::vector<double>& p, double x) {
  constexpr double log_sqrt_2pi = 0.91893853320467274178;
  switch (family) {
    case PriorFamily::LogNormal: {
      if (!(x > 0.0)) return -kInf;
      const double z = (std::log(x) - p[0]) / p[1];
      return -0.5 * z * z - std::log(p[1]) - std::log(x) - log_sqrt_2pi;
    }
    case PriorFamily::Gamma: {
      if (x < 0.0) return -kInf;
      if (x == 0.0) {
        if (p[0] == 1.0) return -std::log(p[1]);
        return p[0] < 1.0 ? kInf : -kInf;
      }
      return (p[0] - 1.0) * std::log(x) - x / p[1] - std::lgamma(p[0]) - p[0] * std::log(p[1]);
    }
    case PriorFamily::Exponential:
      if (x < 0.0) return -kInf;
      return -std::log(p[0]) - x / p[0];
    case PriorFamily::Normal: {
      const double z = (x - p[0]) / p[1];
      return -0.5 * z * z - std::log(p[1]) - log_sqrt_2pi;
    }
    case PriorFamily::TruncatedNormal: {
      if (x < p[2] || x > p[3]) return -kInf;
      const double z = (x - p[0]) / p[1];
      return -0.5 * z * z - std::log(p[1]) - log_sqrt_2pi - std::log(truncation(p).mass);
    }
    case PriorFamily::Uniform:
      if (x < p[0] || x > p[1]) return -kInf;
      return -std::log(p[1] - p[0]);
  }
  return -kInf;
}

double family_sample(PriorFamily family, const std::vector<double>& p, Rng& rng) {
  switch (family) {
    case PriorFamily::LogNormal: return std::lognormal_distribution<double>(p[0], p[1])(rng);
    case PriorFamily::Gamma: return std::gamma_distribution<double>(p[0], p[1])(rng);
    case PriorFamily::Exponential: return std::exponential_distribution<double>(1.0 / p[0])(rng);
    case PriorFamily::Normal: return std::normal_distribution<double>(p[0], p[1])(rng);
    case PriorFamily::Uniform: return std::uniform_real_distribution<double>(p[0], p[1])(rng);
    case PriorFamily::TruncatedNormal: {
      // Inverse CDF, mirrored into the lower tail so the quantile stays accurate.
      auto [alpha, beta, mass] = truncation(p);
      double sign = 1.0;
      if (alpha > 0.0) {
        sign = -1.0;
        std::swap(alpha, beta);
        alpha = -alpha;
        beta = -beta;
      }
      const double lo = std_normal_cdf(alpha);
      const double u = lo + std::uniform_real_distribution<double>(0.0, 1.0)(rng) * mass;
      double z = std_normal_quantile(std::clamp(u, 1e-300, 1.0 - 1e-16));
      z = std::clamp(z, alpha, beta);
      return std::clamp(p[0] + sign * p[1] * z, p[2], p[3]);
    }
  }
  return 0.0;
}

double family_mean(PriorFamily family, const std::vector<double>& p) {
  switch (family) {
    case PriorFamily::LogNormal: return std::exp(p[0] + 0.5 * p[1] * p[1]);
    case PriorFamily::Gamma: return p[0] * p[1];
    case PriorFamily::Exponential: return p[0];
    case PriorFamily::Normal: return p[0];
    case PriorFamily::TruncatedNormal: {
      const auto t = truncation(p);
      return p[0] + p[1] * (std_normal_pdf(t.alpha) - std_normal_pdf(t.beta)) / t.mass;
    }
    case PriorFamily::Uniform: return 0.5 * (p[0] + p[1]);
  }
  return 0.0;
}

double family_variance(PriorFamily family, const std::vector<double>& p) {
  double v = 0.0;
  switch (family) {
    case PriorFamily::LogNormal: {
      const double s2 = p[1] * p[1];
      v = std::expm1(s2) * std::exp(2.0 * p[0] + s2);
      break;
    }
    case PriorFamily::Gamma: v = p[0] * p[1] * p[1]; break;
    case PriorFamily::Exponential: v = p[0] * p[0]; break;
    case PriorFamily::Normal: v = p[1] * p[1]; break;
    case PriorFamily::TruncatedNormal: {
      const auto t = truncation(p);
      const double a = (std_normal_pdf(t.alpha) - std_normal_pdf(t.beta)) / t.mass;
      v = p[1] * p[1] * (1.0 + (x_phi(t.alpha) - x_phi(t.beta)) / t.mass - a * a);
      break;
    }
    case PriorFamily::Uniform: v = (p[1] - p[0]) * (p[1] - p[0]) / 12.0; break;
  }
  if (!(v > 0.0) || std::isinf(v)) {
    throw UsageError(std::string(family_name(family)) + " prior variance is not finite and positive");
  }
  return v;
}

std::size_t PriorSpec::scalable_count() const {
  return static_cast<std::size_t>(
      std::count_if(components.begin(), components.end(), [](const auto& c) { return c.scalable; }));
}

void PriorSpec::validate() const {
  if (components.empty()) throw UsageError("prior spec has no components");
  for (const auto& c : components) {
    try {
      validate_params(c.family, c.params);
    } catch (const UsageError& e) {
      throw UsageError("prior component '" + c.name + "': " + e.what());
    }
  }
}

std::vector<double> PriorSpec::expand_gammas(const std::vector<double>& scalable_gammas) const {
  if (scalable_gammas.size() != scalable_count()) {
    throw UsageError("expected " + std::to_string(scalable_count()) + " scaling exponents, got " +
                     std::to_string(scalable_gammas.size()));
  }
  std::vector<double> out(components.size(), 1.0);
  std::size_t k = 0;
  for (std::size_t i = 0; i < components.size(); ++i) {
    if (components[i].scalable) out[i] = scalable_gammas[k++];
  }
  return out;
}

std::vector<std::vector<double>> PriorSpec::scaled_params(
    const std::vector<double>& scalable_gammas) const {
  const auto gammas = expand_gammas(scalable_gammas);
  std::vector<std::vector<double>> out;
  out.reserve(components.size());
  for (std::size_t i = 0; i < components.size(); ++i) {
    out.push_back(power_scale_params(components[i].family, components[i].params, gammas[i]));
  }
  return out;
}

PriorDensity log_prior_density(const PriorSpec& spec, const std::vector<double>& theta,
                               const std::vector<double>& scalable_gammas) {
  if (theta.size() != spec.size()) throw UsageError("theta size does not match prior spec");
  const auto params = spec.scaled_params(scalable_gammas);
  PriorDensity out;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double lp = family_log_density(spec.components[i].family, params[i], theta[i]);
    if (lp == -kInf) {
      out.in_support = false;
      out.log_density = -kInf;
      return out;
    }
    out.log_density += lp;
  }
  return out;
}

std::vector<double> sample_prior(const PriorSpec& spec, const std::vector<double>& scalable_gammas,
                                 Rng& rng) {
  const auto params = spec.scaled_params(scalable_gammas);
  std::vector<double> theta(spec.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    theta[i] = family_sample(spec.components[i].family, params[i], rng);
  }
  return theta;
}

std::vector<double> prior_variances(const PriorSpec& spec,
                                    const std::vector<double>& scalable_gammas) {
  const auto params = spec.scaled_params(scalable_gammas);
  std::vector<double> out(spec.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = family_variance(spec.components[i].family, params[i]);
  return out;
}

void ContextVector::validate() const {
  for (double g : gamma) {
    if (!(g > 0.0) || std::isinf(g)) throw UsageError("context gamma entries must lie in (0, inf)");
  }
  if (likelihood_cardinality < 1 || likelihood_choice < 0 ||
      likelihood_choice >= likelihood_cardinality) {
    throw UsageError("likelihood choice out of range");
  }
}

void ContextPrior::validate() const {
  if (log_lower.size() != log_upper.size()) throw UsageError("context prior bound sizes differ");
  for (std::size_t i = 0; i < log_lower.size(); ++i) {
    if (!(log_lower[i] <= log_upper[i])) throw UsageError("context prior requires log_lower <= log_upper");
  }
  if (likelihood_weights.empty()) throw UsageError("context prior needs at least one likelihood");
  double total = 0.0;
  for (double w : likelihood_weights) {
    if (w < 0.0) throw UsageError("likelihood weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw UsageError("likelihood weights must sum to 1");
}

ContextVector sample_context(const ContextPrior& prior, Rng& rng) {
  ContextVector ctx;
  ctx.gamma.resize(prior.gamma_size());
  for (std::size_t i = 0; i < ctx.gamma.size(); ++i) {
    const double lo = prior.log_lower[i];
    const double hi = prior.log_upper[i];
    const double u = lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
    ctx.gamma[i] = std::exp(u);
  }
  ctx.likelihood_cardinality = prior.likelihood_cardinality();
  if (ctx.likelihood_cardinality > 1) {
    std::discrete_distribution<int> pick(prior.likelihood_weights.begin(), prior.likelihood_weights.end());
    ctx.likelihood_choice = pick(rng);
  }
  return ctx;
}

std::vector<double> encode_context(const ContextVector& context) {
  std::vector<double> out;
  out.reserve(context.encoded_size());
  for (double g : context.gamma) out.push_back(std::log(g));
  if (context.likelihood_cardinality > 1) {
    for (int j = 0; j < context.likelihood_cardinality; ++j) {
      out.push_back(j == context.likelihood_choice ? 1.0 : 0.0);
    }
  }
  return out;
}

ContextVector baseline_context(std::size_t gamma_size, int likelihood_cardinality) {
  ContextVector ctx;
  ctx.gamma.assign(gamma_size, 1.0);
  ctx.likelihood_cardinality = likelihood_cardinality;
  return ctx;
}

}  // namespace amortsens
