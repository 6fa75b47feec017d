#include "amortsens/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "amortsens/errors.hpp"

namespace amortsens {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

json real_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config field '") + key + "': " + e.what());
  }
}

double real_or(const json& j, const char* key, double fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return json_real(j.at(key));
  } catch (const UsageError& e) {
    throw UsageError(std::string("config field '") + key + "': " + e.what());
  }
}

std::vector<double> reals(const json& j) {
  if (!j.is_array()) throw UsageError("expected an array of numbers");
  std::vector<double> out;
  for (const auto& v : j) out.push_back(json_real(v));
  return out;
}

json reals_to_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(real_to_json(x));
  return a;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw UsageError(std::string(where) + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw UsageError(std::string("unknown field '") + k + "' in " + where);
  }
}

}  // namespace

double json_real(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "+inf") return kInf;
    if (s == "-inf") return -kInf;
  }
  throw UsageError("expected a number, \"inf\" or \"-inf\"");
}

std::string_view reporting_noise_name(ReportingNoise noise) {
  return noise == ReportingNoise::NegBinomial ? "negbinomial" : "poisson";
}

ReportingNoise parse_reporting_noise(std::string_view name) {
  if (name == "negbinomial") return ReportingNoise::NegBinomial;
  if (name == "poisson") return ReportingNoise::Poisson;
  throw UsageError("unknown reporting noise '" + std::string(name) + "' (negbinomial, poisson)");
}

json to_json(const PriorSpec& prior) {
  json a = json::array();
  for (const auto& c : prior.components) {
    a.push_back({{"name", c.name},
                 {"family", std::string(family_name(c.family))},
                 {"params", reals_to_json(c.params)},
                 {"scalable", c.scalable}});
  }
  return a;
}

PriorSpec prior_from_json(const json& j) {
  if (!j.is_array()) throw UsageError("prior must be an array of components");
  PriorSpec p;
  for (const auto& c : j) {
    check_keys(c, {"name", "family", "params", "scalable"}, "prior component");
    PriorComponent comp;
    comp.name = get_or<std::string>(c, "name", "theta_" + std::to_string(p.size()));
    if (!c.contains("family") || !c.contains("params")) throw UsageError("prior component needs family and params");
    comp.family = parse_family(c.at("family").get<std::string>());
    comp.params = reals(c.at("params"));
    comp.scalable = get_or<bool>(c, "scalable", true);
    p.components.push_back(std::move(comp));
  }
  p.validate();
  return p;
}

json to_json(const ContextPrior& prior) {
  return {{"log_lower", reals_to_json(prior.log_lower)},
          {"log_upper", reals_to_json(prior.log_upper)},
          {"likelihood_weights", reals_to_json(prior.likelihood_weights)}};
}

ContextPrior context_prior_from_json(const json& j) {
  check_keys(j, {"log_lower", "log_upper", "likelihood_weights", "gamma_lower", "gamma_upper"}, "context_prior");
  ContextPrior p;
  if (j.contains("gamma_lower") || j.contains("gamma_upper")) {
    if (j.contains("log_lower") || j.contains("log_upper")) {
      throw UsageError("context_prior takes either log bounds or gamma bounds, not both");
    }
    for (double g : reals(j.at("gamma_lower"))) p.log_lower.push_back(std::log(g));
    for (double g : reals(j.at("gamma_upper"))) p.log_upper.push_back(std::log(g));
  } else {
    p.log_lower = reals(j.at("log_lower"));
    p.log_upper = reals(j.at("log_upper"));
  }
  if (j.contains("likelihood_weights")) p.likelihood_weights = reals(j.at("likelihood_weights"));
  p.validate();
  return p;
}

json to_json(const Architecture& a) {
  json scales = json::array();
  for (auto s : a.theta_scales) scales.push_back(s == ThetaScale::Log ? "log" : "identity");
  return {{"target", a.target == TargetKind::Parameters ? "parameters" : "models"},
          {"theta_dim", a.theta_dim},
          {"n_models", a.n_models},
          {"obs_dim", a.obs_dim},
          {"context_dim", a.context_dim},
          {"feature_map", std::string(feature_map_name(a.feature_map))},
          {"theta_scales", scales},
          {"summary", std::string(summary_kind_name(a.summary))},
          {"summary_hidden", a.summary_hidden},
          {"summary_dim", a.summary_dim},
          {"flow_blocks", a.flow_blocks},
          {"flow_hidden", a.flow_hidden},
          {"flow_layers", a.flow_layers},
          {"clamp", a.clamp},
          {"classifier_hidden", a.classifier_hidden},
          {"classifier_layers", a.classifier_layers}};
}

Architecture architecture_from_json(const json& j, Architecture a) {
  check_keys(j,
             {"target", "theta_dim", "n_models", "obs_dim", "context_dim", "feature_map", "theta_scales", "summary",
              "summary_hidden", "summary_dim", "flow_blocks", "flow_hidden", "flow_layers", "clamp",
              "classifier_hidden", "classifier_layers"},
             "architecture");
  if (j.contains("target")) {
    const auto t = j.at("target").get<std::string>();
    if (t != "parameters" && t != "models") throw UsageError("architecture target must be parameters or models");
    a.target = t == "parameters" ? TargetKind::Parameters : TargetKind::Models;
  }
  a.theta_dim = get_or<std::size_t>(j, "theta_dim", a.theta_dim);
  a.n_models = get_or<int>(j, "n_models", a.n_models);
  a.obs_dim = get_or<std::size_t>(j, "obs_dim", a.obs_dim);
  a.context_dim = get_or<std::size_t>(j, "context_dim", a.context_dim);
  if (j.contains("feature_map")) a.feature_map = parse_feature_map(j.at("feature_map").get<std::string>());
  if (j.contains("theta_scales")) {
    a.theta_scales.clear();
    for (const auto& s : j.at("theta_scales")) {
      const auto name = s.get<std::string>();
      if (name != "log" && name != "identity") throw UsageError("theta scale must be log or identity");
      a.theta_scales.push_back(name == "log" ? ThetaScale::Log : ThetaScale::Identity);
    }
  }
  if (j.contains("summary")) a.summary = parse_summary_kind(j.at("summary").get<std::string>());
  a.summary_hidden = get_or<int>(j, "summary_hidden", a.summary_hidden);
  a.summary_dim = get_or<int>(j, "summary_dim", a.summary_dim);
  a.flow_blocks = get_or<int>(j, "flow_blocks", a.flow_blocks);
  a.flow_hidden = get_or<int>(j, "flow_hidden", a.flow_hidden);
  a.flow_layers = get_or<int>(j, "flow_layers", a.flow_layers);
  a.clamp = get_or<double>(j, "clamp", a.clamp);
  a.classifier_hidden = get_or<int>(j, "classifier_hidden", a.classifier_hidden);
  a.classifier_layers = get_or<int>(j, "classifier_layers", a.classifier_layers);
  a.validate();
  return a;
}

json to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"cosine_decay", t.cosine_decay},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"epsilon", t.epsilon},
          {"clip_norm", t.clip_norm},
          {"validation_fraction", t.validation_fraction}};
}

TrainConfig train_from_json(const json& j, TrainConfig t) {
  check_keys(j,
             {"epochs", "batch_size", "learning_rate", "cosine_decay", "beta1", "beta2", "epsilon", "clip_norm",
              "validation_fraction"},
             "train");
  t.epochs = get_or<int>(j, "epochs", t.epochs);
  t.batch_size = get_or<int>(j, "batch_size", t.batch_size);
  t.learning_rate = get_or<double>(j, "learning_rate", t.learning_rate);
  t.cosine_decay = get_or<bool>(j, "cosine_decay", t.cosine_decay);
  t.beta1 = get_or<double>(j, "beta1", t.beta1);
  t.beta2 = get_or<double>(j, "beta2", t.beta2);
  t.epsilon = get_or<double>(j, "epsilon", t.epsilon);
  t.clip_norm = get_or<double>(j, "clip_norm", t.clip_norm);
  t.validation_fraction = get_or<double>(j, "validation_fraction", t.validation_fraction);
  t.validate();
  return t;
}

namespace {

json task_to_json(const ExperimentConfig& c) {
  const auto& t = c.task;
  json j = {{"kind", std::string(task_name(t.kind))}};
  switch (t.kind) {
    case TaskKind::Conjugate:
      j["dim"] = t.prior.size();
      j["n_obs"] = t.n_obs;
      break;
    case TaskKind::Sir: {
      j["horizon_days"] = t.sir.horizon_days;
      j["population"] = t.sir.population;
      j["substeps_per_day"] = t.sir.substeps_per_day;
      json l = json::array();
      for (auto n : t.likelihoods) l.push_back(std::string(reporting_noise_name(n)));
      j["likelihoods"] = l;
      break;
    }
    case TaskKind::Decision:
      j["n_trials"] = t.n_trials;
      j["dt"] = t.decision.dt;
      j["max_time"] = t.decision.max_time;
      j["max_resamples_per_trial"] = t.decision.max_resamples_per_trial;
      break;
  }
  return j;
}

TaskConfig task_from_json(const json& j) {
  check_keys(j,
             {"kind", "dim", "n_obs", "horizon_days", "population", "substeps_per_day", "likelihoods", "n_trials", "dt",
              "max_time", "max_resamples_per_trial"},
             "task");
  if (!j.contains("kind")) throw UsageError("task needs a kind (conjugate, sir, decision)");
  const auto kind = parse_task(j.at("kind").get<std::string>());
  TaskConfig t;
  switch (kind) {
    case TaskKind::Conjugate:
      t = default_conjugate_task(get_or<std::size_t>(j, "dim", 2), get_or<std::size_t>(j, "n_obs", 10));
      break;
    case TaskKind::Sir: {
      t = default_sir_task();
      t.sir.horizon_days = get_or<std::size_t>(j, "horizon_days", t.sir.horizon_days);
      t.sir.population = real_or(j, "population", t.sir.population);
      t.sir.substeps_per_day = get_or<int>(j, "substeps_per_day", t.sir.substeps_per_day);
      if (j.contains("likelihoods")) {
        t.likelihoods.clear();
        for (const auto& n : j.at("likelihoods")) t.likelihoods.push_back(parse_reporting_noise(n.get<std::string>()));
        if (t.likelihoods.empty()) throw UsageError("SIR task needs at least one likelihood");
        t.context_prior.likelihood_weights.assign(t.likelihoods.size(), 1.0 / static_cast<double>(t.likelihoods.size()));
      }
      break;
    }
    case TaskKind::Decision:
      t = default_decision_task();
      t.n_trials = get_or<std::size_t>(j, "n_trials", t.n_trials);
      t.decision.dt = real_or(j, "dt", t.decision.dt);
      t.decision.max_time = real_or(j, "max_time", t.decision.max_time);
      t.decision.max_resamples_per_trial = get_or<int>(j, "max_resamples_per_trial", t.decision.max_resamples_per_trial);
      break;
  }
  return t;
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  const auto& s = c.sensitivity;
  json sens = {{"gamma_grids", s.gamma_grids},
               {"bootstrap", s.bootstrap},
               {"loo", s.loo},
               {"likelihoods", s.likelihoods},
               {"baseline_gamma", reals_to_json(s.baseline_gamma)},
               {"baseline_likelihood", s.baseline_likelihood},
               {"decision_rule", s.decision_rule},
               {"theta0", s.theta0},
               {"hdi_mass", s.hdi_mass},
               {"decision_dimension", s.decision_dimension},
               {"projection", s.projection},
               {"alpha_level", s.alpha_level},
               {"threshold", s.threshold ? json(*s.threshold) : json(nullptr)},
               {"kl_direction", s.kl_direction},
               {"n_draws", s.n_draws},
               {"gap_threshold", s.gap_threshold}};
  return {{"name", c.name},
          {"task", task_to_json(c)},
          {"prior", to_json(c.task.prior)},
          {"context_prior", to_json(c.task.context_prior)},
          {"architecture", to_json(c.architecture)},
          {"train", to_json(c.train)},
          {"budget", c.budget},
          {"test_budget", c.test_budget},
          {"ensemble", c.ensemble},
          {"threads", c.threads},
          {"validation_draws", c.validation_draws},
          {"seeds",
           {{"simulate", c.seeds.simulate}, {"train", c.seeds.train}, {"test", c.seeds.test},
            {"sensitivity", c.seeds.sensitivity}}},
          {"sensitivity", sens},
          {"output_dir", c.output_dir}};
}

void ExperimentConfig::validate() const {
  const Task t(task);
  architecture.validate();
  train.validate();
  const auto l = t.layout();
  if (architecture.target != l.target || architecture.obs_dim != l.obs_dim || architecture.context_dim != l.context_dim() ||
      (l.target == TargetKind::Parameters && architecture.theta_dim != l.theta_dim) ||
      (l.target == TargetKind::Models && architecture.n_models != l.n_models)) {
    throw UsageError("architecture dimensions do not match the task");
  }
  if (budget < 1) throw UsageError("simulation budget must be positive");
  if (ensemble < 1) throw UsageError("ensemble size must be positive");
  if (threads < 1) throw UsageError("threads must be positive");
  const auto& s = sensitivity;
  if (s.bootstrap > 0 && s.loo) throw UsageError("bootstrap and leave-one-out variants are exclusive");
  if (!s.baseline_gamma.empty() && s.baseline_gamma.size() != l.gamma_size) {
    throw UsageError("baseline_gamma needs one value per scaling exponent");
  }
  if (!(s.alpha_level > 0.0 && s.alpha_level < 1.0)) throw UsageError("alpha_level must lie in (0, 1)");
  if (!(s.hdi_mass > 0.0 && s.hdi_mass <= 1.0)) throw UsageError("hdi_mass must lie in (0, 1]");
  if (s.kl_direction != "baseline_cell" && s.kl_direction != "cell_baseline") {
    throw UsageError("kl_direction must be baseline_cell or cell_baseline");
  }
}

ExperimentConfig experiment_from_json(const json& j) {
  check_keys(j,
             {"name", "task", "prior", "context_prior", "architecture", "train", "budget", "test_budget", "ensemble",
              "threads", "validation_draws", "seeds", "sensitivity", "output_dir"},
             "experiment config");
  ExperimentConfig c;
  c.name = get_or<std::string>(j, "name", c.name);
  c.task = j.contains("task") ? task_from_json(j.at("task")) : default_conjugate_task();
  if (j.contains("prior")) c.task.prior = prior_from_json(j.at("prior"));
  if (j.contains("context_prior")) c.task.context_prior = context_prior_from_json(j.at("context_prior"));
  c.conjugate_dim = c.task.prior.size();
  const Task task(c.task);
  c.architecture = default_architecture(task);
  if (j.contains("architecture")) c.architecture = architecture_from_json(j.at("architecture"), c.architecture);
  if (j.contains("train")) c.train = train_from_json(j.at("train"), c.train);
  c.budget = get_or<std::size_t>(j, "budget", c.budget);
  c.test_budget = get_or<std::size_t>(j, "test_budget", c.test_budget);
  c.ensemble = get_or<std::size_t>(j, "ensemble", c.ensemble);
  c.threads = get_or<unsigned>(j, "threads", c.threads);
  c.validation_draws = get_or<std::size_t>(j, "validation_draws", c.validation_draws);
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    check_keys(s, {"simulate", "train", "test", "sensitivity"}, "seeds");
    c.seeds.simulate = get_or<std::uint64_t>(s, "simulate", c.seeds.simulate);
    c.seeds.train = get_or<std::uint64_t>(s, "train", c.seeds.train);
    c.seeds.test = get_or<std::uint64_t>(s, "test", c.seeds.test);
    c.seeds.sensitivity = get_or<std::uint64_t>(s, "sensitivity", c.seeds.sensitivity);
  }
  if (j.contains("sensitivity")) {
    const auto& s = j.at("sensitivity");
    check_keys(s,
               {"gamma_grids", "bootstrap", "loo", "likelihoods", "baseline_gamma", "baseline_likelihood",
                "decision_rule", "theta0", "hdi_mass", "decision_dimension", "projection", "alpha_level", "threshold",
                "kl_direction", "n_draws", "gap_threshold"},
               "sensitivity");
    auto& o = c.sensitivity;
    o.gamma_grids = get_or<std::vector<std::string>>(s, "gamma_grids", o.gamma_grids);
    o.bootstrap = get_or<std::size_t>(s, "bootstrap", o.bootstrap);
    o.loo = get_or<bool>(s, "loo", o.loo);
    o.likelihoods = get_or<std::vector<int>>(s, "likelihoods", o.likelihoods);
    if (s.contains("baseline_gamma")) o.baseline_gamma = reals(s.at("baseline_gamma"));
    o.baseline_likelihood = get_or<int>(s, "baseline_likelihood", o.baseline_likelihood);
    o.decision_rule = get_or<std::string>(s, "decision_rule", o.decision_rule);
    o.theta0 = real_or(s, "theta0", o.theta0);
    o.hdi_mass = real_or(s, "hdi_mass", o.hdi_mass);
    o.decision_dimension = get_or<std::size_t>(s, "decision_dimension", o.decision_dimension);
    o.projection = get_or<std::string>(s, "projection", o.projection);
    o.alpha_level = real_or(s, "alpha_level", o.alpha_level);
    if (s.contains("threshold") && !s.at("threshold").is_null()) o.threshold = json_real(s.at("threshold"));
    o.kl_direction = get_or<std::string>(s, "kl_direction", o.kl_direction);
    o.n_draws = get_or<std::size_t>(s, "n_draws", o.n_draws);
    o.gap_threshold = real_or(s, "gap_threshold", o.gap_threshold);
  }
  c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir);
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_from_json(j);
}

}  // namespace amortsens
