#pragma once

// Prior families with closed-form power scaling, and the context variables
// (prior scaling exponents and likelihood choice) fed to the approximators.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "amortsens/random.hpp"

namespace amortsens {

enum class PriorFamily { LogNormal, Gamma, Exponential, Normal, TruncatedNormal, Uniform };

std::string_view family_name(PriorFamily family);
PriorFamily parse_family(std::string_view name);

/// Number of parameters each family takes.
///   LogNormal(log-mean, log-sd), Gamma(shape, scale), Exponential(scale),
///   Normal(mean, sd), TruncatedNormal(mean, sd, lower, upper), Uniform(lower, upper)
std::size_t family_arity(PriorFamily family);

/// Throws UsageError if params do not fit the family.
void validate_params(PriorFamily family, const std::vector<double>& params);

/// Parameters of the renormalized density proportional to p(theta)^gamma.
/// Throws std::domain_error for gamma <= 0 or a non-normalizable result.
std::vector<double> power_scale_params(PriorFamily family, const std::vector<double>& params,
                                       double gamma);

/// Log-density of a single family; -inf outside the support.
double family_log_density(PriorFamily family, const std::vector<double>& params, double x);
double family_sample(PriorFamily family, const std::vector<double>& params, Rng& rng);
/// Throws UsageError when the variance is infinite or zero.
double family_variance(PriorFamily family, const std::vector<double>& params);
double family_mean(PriorFamily family, const std::vector<double>& params);

struct PriorComponent {
  std::string name;
  PriorFamily family = PriorFamily::Normal;
  std::vector<double> params;
  bool scalable = true;
};

struct PriorSpec {
  std::vector<PriorComponent> components;

  std::size_t size() const { return components.size(); }
  std::size_t scalable_count() const;
  void validate() const;
  /// Per-component exponents from the scalable-only vector (unscalable get 1).
  std::vector<double> expand_gammas(const std::vector<double>& scalable_gammas) const;
  /// Component parameters after power scaling.
  std::vector<std::vector<double>> scaled_params(const std::vector<double>& scalable_gammas) const;
};

struct PriorDensity {
  double log_density = 0.0;
  bool in_support = true;
};

/// Sum of per-component power-scaled log-densities.
PriorDensity log_prior_density(const PriorSpec& spec, const std::vector<double>& theta,
                               const std::vector<double>& scalable_gammas);

/// One draw per component from the power-scaled prior.
std::vector<double> sample_prior(const PriorSpec& spec, const std::vector<double>& scalable_gammas,
                                 Rng& rng);

/// Variances of the power-scaled components.
std::vector<double> prior_variances(const PriorSpec& spec,
                                    const std::vector<double>& scalable_gammas);

struct ContextVector {
  std::vector<double> gamma;
  int likelihood_choice = 0;
  int likelihood_cardinality = 1;

  std::size_t encoded_size() const {
    return gamma.size() + (likelihood_cardinality > 1 ? likelihood_cardinality : 0);
  }
  void validate() const;
};

struct ContextPrior {
  std::vector<double> log_lower;
  std::vector<double> log_upper;
  std::vector<double> likelihood_weights{1.0};

  std::size_t gamma_size() const { return log_lower.size(); }
  int likelihood_cardinality() const { return static_cast<int>(likelihood_weights.size()); }
  void validate() const;
};

/// gamma_i = exp(u), u ~ U[log_lower_i, log_upper_i]; likelihood from the weights.
ContextVector sample_context(const ContextPrior& prior, Rng& rng);

/// (log gamma_1, ..., log gamma_K) followed by one-hot(likelihood) when cardinality > 1.
std::vector<double> encode_context(const ContextVector& context);

/// gamma = 1 everywhere, likelihood 0.
ContextVector baseline_context(std::size_t gamma_size, int likelihood_cardinality = 1);

}  // namespace amortsens
