#include "amortsens/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "amortsens/errors.hpp"

namespace amortsens {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ContextPrior symmetric_context_prior(std::size_t k, double widest) {
  ContextPrior cp;
  cp.log_lower.assign(k, -std::log(widest));
  cp.log_upper.assign(k, std::log(widest));
  return cp;
}

// Decision task prior layout: two scalable hyperpriors for alpha, then the
// fixed nuisance priors.
enum DecisionComponent { kMuAlpha = 0, kSigmaAlpha, kDrift, kThreshold, kStart, kNonDecision };

}  // namespace

std::string_view task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::Conjugate: return "conjugate";
    case TaskKind::Sir: return "sir";
    case TaskKind::Decision: return "decision";
  }
  return "unknown";
}

TaskKind parse_task(std::string_view name) {
  for (auto k : {TaskKind::Conjugate, TaskKind::Sir, TaskKind::Decision}) {
    if (task_name(k) == name) return k;
  }
  throw UsageError("unknown task '" + std::string(name) + "'");
}

TaskConfig default_conjugate_task(std::size_t dim, std::size_t n_obs) {
  TaskConfig c;
  c.kind = TaskKind::Conjugate;
  for (std::size_t d = 0; d < dim; ++d) {
    c.prior.components.push_back({"theta_" + std::to_string(d), PriorFamily::Normal, {0.0, 1.0}, true});
  }
  c.context_prior = symmetric_context_prior(dim, 2.0);
  c.n_obs = n_obs;
  return c;
}

TaskConfig default_sir_task() {
  TaskConfig c;
  c.kind = TaskKind::Sir;
  c.prior.components = {
      {"lambda", PriorFamily::LogNormal, {std::log(0.4), 0.5}, true},
      {"mu", PriorFamily::LogNormal, {std::log(1.0 / 8.0), 0.2}, true},
      {"D", PriorFamily::LogNormal, {std::log(8.0), 0.2}, true},
      {"I0", PriorFamily::Gamma, {2.0, 20.0}, true},
      {"psi", PriorFamily::Exponential, {5.0}, true},
  };
  c.context_prior = symmetric_context_prior(5, 2.0);
  return c;
}

TaskConfig default_decision_task() {
  TaskConfig c;
  c.kind = TaskKind::Decision;
  c.prior.components = {
      {"mu_alpha", PriorFamily::Normal, {1.65, 0.15}, true},
      {"sigma_alpha", PriorFamily::TruncatedNormal, {0.3, 0.1, 0.0, kInf}, true},
      {"v", PriorFamily::Normal, {1.0, 1.0}, false},
      {"a", PriorFamily::LogNormal, {std::log(1.2), 0.25}, false},
      {"z_r", PriorFamily::TruncatedNormal, {0.5, 0.1, 0.3, 0.7}, false},
      {"t0", PriorFamily::LogNormal, {std::log(0.3), 0.2}, false},
  };
  c.context_prior = symmetric_context_prior(2, 10.0);
  return c;
}

Task::Task(TaskConfig config) : config_(std::move(config)) {
  config_.prior.validate();
  config_.context_prior.validate();
  if (config_.context_prior.gamma_size() != config_.prior.scalable_count()) {
    throw UsageError("context prior has " + std::to_string(config_.context_prior.gamma_size()) +
                     " exponents but the prior has " + std::to_string(config_.prior.scalable_count()) +
                     " scalable components");
  }
  switch (config_.kind) {
    case TaskKind::Conjugate:
      for (const auto& c : config_.prior.components) {
        if (c.family != PriorFamily::Normal) throw UsageError("conjugate task requires normal priors");
      }
      if (config_.n_obs < 1) throw UsageError("conjugate task needs n_obs >= 1");
      if (config_.context_prior.likelihood_cardinality() != 1) {
        throw UsageError("conjugate task has a single likelihood");
      }
      break;
    case TaskKind::Sir:
      if (config_.prior.size() != 5) throw UsageError("SIR prior needs components lambda, mu, D, I0, psi");
      if (static_cast<std::size_t>(config_.context_prior.likelihood_cardinality()) != config_.likelihoods.size()) {
        throw UsageError("SIR likelihood weights must match the likelihood list");
      }
      break;
    case TaskKind::Decision:
      if (config_.prior.size() != 6) {
        throw UsageError("decision prior needs components mu_alpha, sigma_alpha, v, a, z_r, t0");
      }
      if (config_.context_prior.likelihood_cardinality() != 1) {
        throw UsageError("decision task has a single likelihood per model");
      }
      break;
  }
}

DatasetLayout Task::layout() const {
  DatasetLayout l;
  l.gamma_size = config_.context_prior.gamma_size();
  l.likelihood_cardinality = config_.context_prior.likelihood_cardinality();
  switch (config_.kind) {
    case TaskKind::Conjugate:
      l.target = TargetKind::Parameters;
      l.theta_dim = config_.prior.size();
      l.obs_rows = config_.n_obs;
      l.obs_dim = config_.prior.size();
      break;
    case TaskKind::Sir:
      l.target = TargetKind::Parameters;
      l.theta_dim = 5;
      l.obs_rows = config_.sir.horizon_days;
      l.obs_dim = 1;
      break;
    case TaskKind::Decision:
      l.target = TargetKind::Models;
      l.n_models = 2;
      l.obs_rows = config_.n_trials;
      l.obs_dim = 1;
      break;
  }
  return l;
}

std::vector<std::string> Task::observation_columns() const {
  switch (config_.kind) {
    case TaskKind::Conjugate: {
      std::vector<std::string> cols;
      for (std::size_t d = 0; d < config_.prior.size(); ++d) cols.push_back("x_" + std::to_string(d));
      return cols;
    }
    case TaskKind::Sir: return {"count"};
    case TaskKind::Decision: return {"rt"};
  }
  return {};
}

std::vector<std::string> Task::parameter_names() const {
  if (config_.kind == TaskKind::Decision) return {};
  std::vector<std::string> names;
  for (const auto& c : config_.prior.components) names.push_back(c.name);
  return names;
}

FeatureMap Task::feature_map() const {
  switch (config_.kind) {
    case TaskKind::Conjugate: return FeatureMap::Identity;
    case TaskKind::Sir: return FeatureMap::Log1p;
    case TaskKind::Decision: return FeatureMap::SignedTime;
  }
  return FeatureMap::Identity;
}

std::vector<ThetaScale> Task::theta_scales() const {
  switch (config_.kind) {
    case TaskKind::Conjugate: return std::vector<ThetaScale>(config_.prior.size(), ThetaScale::Identity);
    case TaskKind::Sir: return std::vector<ThetaScale>(5, ThetaScale::Log);
    case TaskKind::Decision: return {};
  }
  return {};
}

SimulatedRow Task::simulate_row(Rng& rng) const {
  return simulate_at(sample_context(config_.context_prior, rng), rng);
}

SimulatedRow Task::simulate_at(const ContextVector& context, Rng& rng) const {
  SimulatedRow row;
  row.context = context;
  if (config_.kind == TaskKind::Decision) {
    row.model = std::uniform_int_distribution<int>(0, 1)(rng);
    row.data = simulate_model(row.model, context, rng);
    return row;
  }
  const auto theta = sample_prior(config_.prior, context.gamma, rng);
  row.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
  row.data = simulate_data(row.theta, context, rng);
  return row;
}

Eigen::MatrixXd Task::simulate_data(const Eigen::VectorXd& theta, const ContextVector& context,
                                    Rng& rng) const {
  switch (config_.kind) {
    case TaskKind::Conjugate:
      return simulate_conjugate(theta, config_.n_obs, rng);
    case TaskKind::Sir: {
      SirParams p{theta(0), theta(1), theta(2), theta(3), theta(4)};
      SirOptions opts = config_.sir;
      opts.noise = config_.likelihoods.at(static_cast<std::size_t>(context.likelihood_choice));
      const auto counts = simulate_sir(p, opts, rng);
      Eigen::MatrixXd x(static_cast<Eigen::Index>(counts.size()), 1);
      for (std::size_t t = 0; t < counts.size(); ++t) x(static_cast<Eigen::Index>(t), 0) = static_cast<double>(counts[t]);
      return x;
    }
    case TaskKind::Decision:
      break;
  }
  throw UsageError("task has no parameter-level simulator");
}

Eigen::MatrixXd Task::simulate_model(int model, const ContextVector& context, Rng& rng) const {
  if (config_.kind != TaskKind::Decision) throw UsageError("task has no model-level simulator");
  const auto params = config_.prior.scaled_params(context.gamma);
  const auto& comps = config_.prior.components;
  auto draw = [&](int k) { return family_sample(comps[k].family, params[k], rng); };

  DdmParams p;
  p.v = draw(kDrift);
  p.a = draw(kThreshold);
  p.z_r = draw(kStart);
  p.t0 = draw(kNonDecision);
  DecisionModel kind = DecisionModel::Diffusion;
  if (model == 1) {
    kind = DecisionModel::LevyFlight;
    const double mu_alpha = draw(kMuAlpha);
    const double sigma_alpha = std::max(draw(kSigmaAlpha), 1e-6);
    const double alpha = family_sample(PriorFamily::TruncatedNormal, {mu_alpha, sigma_alpha, 1.0, 2.0}, rng);
    p.alpha = std::clamp(alpha, 1.0 + 1e-6, 2.0);
  }
  const auto sim = simulate_decisions(p, config_.n_trials, kind, config_.decision, rng);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(sim.rt.size()), 1);
  for (std::size_t i = 0; i < sim.rt.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = sim.rt[i];
  return x;
}

SimulationBatch Task::simulate(std::size_t budget, std::uint64_t seed) const {
  SimulationBatch batch(layout());
  for (std::size_t i = 0; i < budget; ++i) {
    Rng rng = derive_stream(seed, i);
    auto row = simulate_row(rng);
    if (layout().target == TargetKind::Models) {
      batch.append_model(row.context, row.model, row.data);
    } else {
      batch.append_parameters(row.context, row.theta, row.data);
    }
  }
  return batch;
}

SimulationBatch Task::simulate_at_context(std::size_t budget, const ContextVector& context,
                                          std::uint64_t seed) const {
  SimulationBatch batch(layout());
  for (std::size_t i = 0; i < budget; ++i) {
    Rng rng = derive_stream(seed, i);
    auto row = simulate_at(context, rng);
    if (layout().target == TargetKind::Models) {
      batch.append_model(row.context, row.model, row.data);
    } else {
      batch.append_parameters(row.context, row.theta, row.data);
    }
  }
  return batch;
}

std::vector<GaussianPosterior> Task::analytic_posterior(const Eigen::MatrixXd& data,
                                                        const ContextVector& context) const {
  if (config_.kind != TaskKind::Conjugate) throw UsageError("analytic posterior exists for the conjugate task only");
  const auto gammas = config_.prior.expand_gammas(context.gamma);
  std::vector<GaussianPosterior> out;
  for (std::size_t d = 0; d < config_.prior.size(); ++d) {
    const auto& p = config_.prior.components[d].params;
    out.push_back(analytic_gaussian_posterior(data.col(static_cast<Eigen::Index>(d)), p[0], p[1], gammas[d]));
  }
  return out;
}

Eigen::MatrixXd Task::analytic_posterior_draws(const Eigen::MatrixXd& data, const ContextVector& context,
                                               std::size_t n_draws, Rng& rng) const {
  const auto post = analytic_posterior(data, context);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd draws(static_cast<Eigen::Index>(n_draws), static_cast<Eigen::Index>(post.size()));
  for (Eigen::Index s = 0; s < draws.rows(); ++s) {
    for (std::size_t d = 0; d < post.size(); ++d) {
      draws(s, static_cast<Eigen::Index>(d)) = post[d].mean + post[d].sd * gauss(rng);
    }
  }
  return draws;
}

}  // namespace amortsens
