// Acceptance run: every criterion prints one PASS/FAIL line; the exit status
// is nonzero when any criterion fails. Pass criterion numbers as arguments to
// run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "amortsens/commands.hpp"
#include "amortsens/config.hpp"
#include "amortsens/context.hpp"
#include "amortsens/diagnostics.hpp"
#include "amortsens/ensemble.hpp"
#include "amortsens/errors.hpp"
#include "amortsens/io.hpp"
#include "amortsens/nnet.hpp"
#include "amortsens/sensitivity.hpp"
#include "amortsens/tasks.hpp"
#include "gradcheck.hpp"

#ifndef AMORTSENS_CONFIG_DIR
#error "AMORTSENS_CONFIG_DIR must point at the shipped experiment configs"
#endif

using namespace amortsens;
namespace fs = std::filesystem;
namespace ad = amortsens::ad;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

ExperimentConfig config_named(const std::string& name) {
  return load_experiment(fs::path(AMORTSENS_CONFIG_DIR) / (name + ".json"));
}

void note(const std::string& text) { std::cerr << "  .. " << text << std::endl; }

// ---------------------------------------------------------------------------
// Conjugate network shared by criteria 1-3.

struct ConjugateRun {
  ExperimentConfig config;
  Task task{default_conjugate_task()};
  Checkpoint model;
  double train_seconds = 0.0;
};

ConjugateRun& conjugate_run() {
  static std::optional<ConjugateRun> run;
  if (!run) {
    run.emplace();
    run->config = config_named("conjugate");
    run->task = run->config.make_task();
    const auto t0 = Clock::now();
    const auto data = run->task.simulate(run->config.budget, run->config.seeds.simulate);
    run->model = train(run->config.train, data, run->config.architecture, run->config.seeds.train);
    run->train_seconds = seconds_since(t0);
    note("conjugate network: budget " + std::to_string(run->config.budget) + ", " + fmt(run->train_seconds, 3) +
         " s to simulate and train");
  }
  return *run;
}

ContextVector equal_gammas(std::size_t k, double g) { return ContextVector{std::vector<double>(k, g), 0, 1}; }

Outcome oracle_equivalence() {
  auto& run = conjugate_run();
  const std::size_t k = run.task.config().context_prior.gamma_size();
  std::size_t cells = 0, kept = 0;
  std::map<double, std::size_t> kept_by_gamma;
  std::uint64_t stream = 0;
  for (double g : {0.5, 1.0, 2.0}) {
    const auto ctx = equal_gammas(k, g);
    const auto test = run.task.simulate_at_context(100, ctx, run.config.seeds.test + stream++);
    for (std::size_t j = 0; j < test.rows(); ++j) {
      Rng rng = derive_stream(run.config.seeds.sensitivity, 1000 * stream + j);
      const auto net = run.model.model.sample_posterior(test.data(j), ctx, 1000, rng);
      const auto exact = run.task.analytic_posterior_draws(test.data(j), ctx, 1000, rng);
      const auto r = mmd_hypothesis_test(net, exact, 200, 0.05, rng);
      ++cells;
      if (!r.reject) {
        ++kept;
        ++kept_by_gamma[g];
      }
    }
  }
  const double frac = static_cast<double>(kept) / static_cast<double>(cells);
  std::string detail = "not rejected in " + std::to_string(kept) + "/" + std::to_string(cells) + " cells (" +
                       fmt(100.0 * frac, 3) + "%, need >= 90%); per gamma";
  for (auto [g, n] : kept_by_gamma) detail += " " + fmt(g) + ":" + std::to_string(n);
  detail += "; training " + fmt(run.train_seconds, 3) + " s (limit 600 s)";
  return {frac >= 0.90 && run.train_seconds <= 600.0, detail};
}

Outcome calibration() {
  auto& run = conjugate_run();
  const std::size_t k = run.task.config().context_prior.gamma_size();
  bool pass = true;
  std::string detail;
  std::uint64_t seed = run.config.seeds.test + 100;
  for (double g : {0.5, 1.0, 2.0}) {
    const auto ctx = equal_gammas(k, g);
    const double net = sbc_ece(run.task, network_sampler(run.model.model), ctx, 1000, 200, seed++).ece;
    const double exact = sbc_ece(run.task, analytic_sampler(run.task), ctx, 1000, 200, seed++).ece;
    pass = pass && net < 0.05 && exact < 0.02;
    detail += "gamma " + fmt(g) + ": network " + fmt(net, 3) + ", oracle " + fmt(exact, 3) + "; ";
  }
  detail += "limits 0.05 / 0.02";
  return {pass, detail};
}

Outcome fixed_context_parity() {
  auto& run = conjugate_run();
  ExperimentConfig fixed = run.config;
  const std::size_t k = fixed.task.context_prior.gamma_size();
  fixed.task.context_prior.log_lower.assign(k, 0.0);
  fixed.task.context_prior.log_upper.assign(k, 0.0);
  const Task fixed_task = fixed.make_task();
  const auto data = fixed_task.simulate(fixed.budget, fixed.seeds.simulate);
  const auto baseline = train(fixed.train, data, fixed.architecture, fixed.seeds.train);

  const auto unit = equal_gammas(k, 1.0);
  const auto test = run.task.simulate_at_context(1000, unit, run.config.seeds.test + 200);
  Eigen::MatrixXd truths(static_cast<Eigen::Index>(test.rows()), static_cast<Eigen::Index>(k));
  std::vector<Eigen::MatrixXd> aware, plain;
  for (std::size_t j = 0; j < test.rows(); ++j) {
    truths.row(static_cast<Eigen::Index>(j)) = test.theta(j).transpose();
    Rng r1 = derive_stream(run.config.seeds.sensitivity, j, 31);
    Rng r2 = derive_stream(run.config.seeds.sensitivity, j, 32);
    aware.push_back(run.model.model.sample_posterior(test.data(j), unit, 500, r1));
    plain.push_back(baseline.model.sample_posterior(test.data(j), unit, 500, r2));
  }
  const double a = mae(aware, truths).value;
  const double b = mae(plain, truths).value;
  const double rel = std::abs(a - b) / b;
  return {rel <= 0.15, "MAE context-aware " + fmt(a) + ", fixed-context " + fmt(b) + ", relative gap " +
                           fmt(100.0 * rel, 3) + "% (limit 15%)"};
}

// ---------------------------------------------------------------------------
// SIR, criteria 4 and 8.

struct SirRun {
  ExperimentConfig config;
  Task task{default_sir_task()};
  SimulationBatch data;
};

SirRun& sir_run() {
  static std::optional<SirRun> run;
  if (!run) {
    run.emplace();
    run->config = config_named("sir");
    run->task = run->config.make_task();
    run->data = run->task.simulate(run->config.budget, run->config.seeds.simulate);
  }
  return *run;
}

Outcome sir_recovery() {
  const auto t0 = Clock::now();
  auto& run = sir_run();
  const auto ck = train(run.config.train, run.data, run.config.architecture, run.config.seeds.train);
  const auto names = run.task.parameter_names();
  const auto lambda = static_cast<Eigen::Index>(std::find(names.begin(), names.end(), "lambda") - names.begin());

  const auto test = run.task.simulate(300, run.config.seeds.test);
  std::vector<double> truth, estimate;
  std::size_t inside = 0, points = 0;
  for (std::size_t j = 0; j < test.rows(); ++j) {
    const auto ctx = test.context(j);
    const auto observed = test.data(j);
    Rng rng = derive_stream(run.config.seeds.sensitivity, j, 41);
    const auto draws = ck.model.sample_posterior(observed, ctx, 500, rng);
    truth.push_back(test.theta(j)(lambda));
    estimate.push_back(draws.col(lambda).mean());

    const Eigen::Index days = observed.rows();
    const std::size_t n_pred = 200;
    Eigen::MatrixXd series(days, static_cast<Eigen::Index>(n_pred));
    for (std::size_t s = 0; s < n_pred; ++s) {
      series.col(static_cast<Eigen::Index>(s)) =
          run.task.simulate_data(draws.row(static_cast<Eigen::Index>(s)).transpose(), ctx, rng).col(0);
    }
    for (Eigen::Index d = 0; d < days; ++d) {
      std::vector<double> v;
      for (Eigen::Index s = 0; s < series.cols(); ++s) v.push_back(series(d, s));
      std::sort(v.begin(), v.end());
      const double lo = v[static_cast<std::size_t>(std::floor(0.05 * (v.size() - 1)))];
      const double hi = v[static_cast<std::size_t>(std::ceil(0.95 * (v.size() - 1)))];
      inside += observed(d, 0) >= lo && observed(d, 0) <= hi;
      ++points;
    }
  }
  const auto n = static_cast<double>(truth.size());
  const double mt = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
  const double me = std::accumulate(estimate.begin(), estimate.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    sxy += (truth[i] - mt) * (estimate[i] - me);
    sxx += (truth[i] - mt) * (truth[i] - mt);
    syy += (estimate[i] - me) * (estimate[i] - me);
  }
  const double corr = sxy / std::sqrt(sxx * syy);
  const double coverage = static_cast<double>(inside) / static_cast<double>(points);
  const double elapsed = seconds_since(t0);
  return {corr > 0.5 && coverage >= 0.85 && elapsed < 900.0,
          "lambda correlation " + fmt(corr, 3) + " (need > 0.5), 90% predictive coverage " +
              fmt(100.0 * coverage, 3) + "% of " + std::to_string(points) + " points (need >= 85%), " +
              fmt(elapsed, 3) + " s (limit 900 s)"};
}

Outcome simulation_gap() {
  auto& run = sir_run();
  const auto ens = train_ensemble(run.config.train, run.data, run.config.architecture, 5, run.config.seeds.train,
                                  run.config.threads);
  const auto ctx = baseline_context(run.task.config().context_prior.gamma_size(),
                                    run.task.config().context_prior.likelihood_cardinality());
  const auto closed = run.task.simulate_at_context(200, ctx, run.config.seeds.test + 1);
  const auto fresh = run.task.simulate_at_context(20, ctx, run.config.seeds.test + 2);
  const auto report = closed_vs_open_report(ens, closed, fresh.data(0), ctx, 200, run.config.seeds.sensitivity);

  // In-distribution disagreement averaged over fresh observations.
  double in_dist = 0.0;
  for (std::size_t j = 0; j < fresh.rows(); ++j) {
    Rng rng = derive_stream(run.config.seeds.sensitivity, j, 51);
    in_dist += ensemble_predict(ens, fresh.data(j), ctx, 200, rng).disagreement;
  }
  in_dist /= static_cast<double>(fresh.rows());
  // Contaminate an outbreak at the reference parameters (prior medians).
  Rng rng = derive_stream(run.config.seeds.sensitivity, 0, 52);
  Eigen::VectorXd typical(5);
  typical << 0.4, 0.125, 8.0, 40.0, 5.0;
  const Eigen::MatrixXd contaminated = run.task.simulate_data(typical, ctx, rng) * 10.0;
  const double contaminated_dis = ensemble_predict(ens, contaminated, ctx, 200, rng).disagreement;

  const auto reference = run.task.simulate_at_context(1000, ctx, run.config.seeds.test + 3);
  const auto& member = ens.members[0].model;
  const auto flag = typical_set_ood(member, reference, contaminated, 0.05);
  const TypicalSet ts(simulated_summaries(member, reference), 0.05);
  std::size_t fresh_flags = 0;
  for (std::size_t j = 0; j < fresh.rows(); ++j) {
    fresh_flags += ts.evaluate(member.summary(Eigen::MatrixXd(fresh.data(j) * 10.0))).flagged;
  }
  const auto trials = run.task.simulate_at_context(500, ctx, run.config.seeds.test + 4);
  std::size_t false_flags = 0;
  for (std::size_t j = 0; j < trials.rows(); ++j) false_flags += ts.evaluate(member.summary(trials.data(j))).flagged;
  const double rate = static_cast<double>(false_flags) / 500.0;

  const double in_ratio = in_dist / report.closed_spread;
  const double blowup = contaminated_dis / in_dist;
  const bool pass = in_ratio <= 1.5 && blowup > 2.0 && flag.flagged && std::abs(rate - 0.05) <= 0.03;
  return {pass, "in-distribution disagreement " + fmt(in_dist) + " vs closed-world spread " +
                    fmt(report.closed_spread) + " (ratio " + fmt(in_ratio, 3) + ", limit 1.5); x10 contamination " +
                    fmt(contaminated_dis) + " (" + fmt(blowup, 3) + "x, need > 2), OOD flag " +
                    (flag.flagged ? "raised" : "not raised") + " (" + std::to_string(fresh_flags) + "/" +
                    std::to_string(fresh.rows()) + " random draws x10 flagged); false-flag rate " + fmt(rate, 3) +
                    " (need 0.05 +- 0.03)"};
}

// ---------------------------------------------------------------------------

Outcome model_comparison() {
  const auto config = config_named("decision");
  const Task task = config.make_task();
  const auto t0 = Clock::now();
  const auto data = task.simulate(config.budget, config.seeds.simulate);
  const auto ck = train(config.train, data, config.architecture, config.seeds.train);
  const auto test = task.simulate(2000, config.seeds.test);
  const auto s = classifier_metrics(ck.model, test);
  return {s.accuracy > 0.80 && s.ece < 0.05,
          "accuracy " + fmt(s.accuracy, 3) + " (need > 0.80), binned ECE " + fmt(s.ece, 3) +
              " (need < 0.05), Brier " + fmt(s.brier, 3) + "; budget " + std::to_string(config.budget) + ", " +
              fmt(seconds_since(t0), 3) + " s"};
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index d, double shift, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng) + shift;
  return m;
}

double brute_mmd(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double bw) {
  auto k = [bw](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return std::exp(-(a - b).squaredNorm() / (2.0 * bw * bw));
  };
  const auto n = X.rows(), m = Y.rows();
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) xx += k(X.row(i), X.row(j));
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (i != j) yy += k(Y.row(i), Y.row(j));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) xy += k(X.row(i), Y.row(j));
  return xx / (n * (n - 1.0)) + yy / (m * (m - 1.0)) - 2.0 * xy / (double(n) * double(m));
}

double brute_median(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  Eigen::MatrixXd Z(X.rows() + Y.rows(), X.cols());
  Z << X, Y;
  std::vector<double> d;
  for (Eigen::Index i = 0; i < Z.rows(); ++i)
    for (Eigen::Index j = i + 1; j < Z.rows(); ++j) d.push_back((Z.row(i) - Z.row(j)).norm());
  std::sort(d.begin(), d.end());
  const auto h = d.size() / 2;
  return d.size() % 2 ? d[h] : 0.5 * (d[h - 1] + d[h]);
}

Outcome estimator_exactness() {
  Rng rng(606);
  double mmd_err = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    std::uniform_int_distribution<int> size(2, 100), dim(1, 4);
    const auto n = size(rng), m = size(rng), d = dim(rng);
    const auto X = gaussian(n, d, 0.0, rng);
    const auto Y = gaussian(m, d, 0.5, rng);
    mmd_err = std::max(mmd_err, std::abs(mmd_squared_unbiased(X, Y, 0.7) - brute_mmd(X, Y, 0.7)));
    mmd_err = std::max(mmd_err, std::abs(mmd_squared_unbiased(X, Y) - brute_mmd(X, Y, brute_median(X, Y))));
  }

  double kl_err = 0.0;
  kl_err = std::max(kl_err, std::abs(kl_categorical(Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.5, 0.5)) - std::log(2.0)));
  const double hand = 0.25 * std::log(0.25 / 0.7) + 0.75 * std::log(0.25 / 0.1);
  kl_err = std::max(kl_err, std::abs(kl_categorical(Eigen::Vector4d::Constant(0.25), Eigen::Vector4d(0.7, 0.1, 0.1, 0.1)) - hand));
  const double hand3 = 0.2 * std::log(0.2 / 0.5) + 0.3 * std::log(0.3 / 0.25) + 0.5 * std::log(0.5 / 0.25);
  kl_err = std::max(kl_err, std::abs(kl_categorical(Eigen::Vector3d(0.2, 0.3, 0.5), Eigen::Vector3d(0.5, 0.25, 0.25)) - hand3));
  kl_err = std::max(kl_err, std::abs(kl_categorical(Eigen::Vector3d(0.2, 0.3, 0.5), Eigen::Vector3d(0.2, 0.3, 0.5))));

  int rejections = 0;
  for (int rep = 0; rep < 500; ++rep) {
    const auto X = gaussian(50, 1, 0.0, rng);
    const auto Y = gaussian(50, 1, 0.0, rng);
    rejections += mmd_hypothesis_test(X, Y, 200, 0.05, rng).reject;
  }
  const double rate = rejections / 500.0;
  return {mmd_err <= 1e-12 && kl_err <= 1e-12 && std::abs(rate - 0.05) <= 0.02,
          "MMD vs double sum max error " + fmt(mmd_err, 3) + ", KL vs hand values max error " + fmt(kl_err, 3) +
              " (limit 1e-12); Type-I rate " + fmt(rate, 3) + " over 500 null replications (need 0.05 +- 0.02)"};
}

// ---------------------------------------------------------------------------

void randomize(Approximator& m, unsigned seed, double scale) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : m.parameters().all()) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = u(rng);
  }
}

Architecture small(TargetKind target, std::size_t theta_dim, std::size_t obs_dim, std::size_t context_dim,
                   SummaryKind kind) {
  Architecture a;
  a.target = target;
  a.theta_dim = theta_dim;
  if (target == TargetKind::Models) a.n_models = 3;
  a.obs_dim = obs_dim;
  a.context_dim = context_dim;
  a.summary = kind;
  a.summary_hidden = 8;
  a.summary_dim = 4;
  a.flow_blocks = 4;
  a.flow_hidden = 8;
  a.classifier_hidden = 8;
  return a;
}

Approximator::Prepared random_rows(const Architecture& a, std::size_t n, std::size_t set_rows, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Approximator::Prepared p;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::MatrixXd f(static_cast<Eigen::Index>(set_rows), static_cast<Eigen::Index>(a.feature_dim()));
    for (Eigen::Index k = 0; k < f.size(); ++k) f.data()[k] = g(rng);
    p.features.push_back(f);
  }
  p.contexts.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(a.context_dim));
  for (Eigen::Index k = 0; k < p.contexts.size(); ++k) p.contexts.data()[k] = g(rng);
  if (a.target == TargetKind::Parameters) {
    p.latent.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(a.theta_dim));
    for (Eigen::Index k = 0; k < p.latent.size(); ++k) p.latent.data()[k] = g(rng);
    p.log_jacobian = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  } else {
    for (std::size_t i = 0; i < n; ++i) p.labels.push_back(static_cast<int>(i % static_cast<std::size_t>(a.n_models)));
  }
  return p;
}

double layer_gradient_error(Approximator& m, const std::string& prefix, unsigned seed) {
  std::vector<ad::Parameter*> ps;
  for (auto& p : m.parameters().all()) {
    if (p.name.rfind(prefix, 0) == 0) ps.push_back(&p);
  }
  if (ps.empty()) throw UsageError("no parameters under " + prefix);
  const auto rows = random_rows(m.architecture(), 6, 5, seed);
  return gradcheck::check(
             [&](ad::Tape& t) {
               Scope s(t, m.parameters(), &m.parameters());
               return m.loss(s, rows);
             },
             ps, 100, seed + 1)
      .worst;
}

double grid_sup_error(PriorFamily family, const std::vector<double>& params, double gamma, double lo, double hi,
                      bool log_axis, int n = 40000) {
  const auto scaled = power_scale_params(family, params, gamma);
  std::vector<double> xs(n + 1), unnorm(n + 1);
  const double a = log_axis ? std::log(lo) : lo;
  const double b = log_axis ? std::log(hi) : hi;
  const double h = (b - a) / n;
  double z = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double u = a + h * i;
    const double x = log_axis ? std::exp(u) : u;
    const double lp = family_log_density(family, params, x);
    xs[i] = x;
    unnorm[i] = std::isinf(lp) ? 0.0 : std::exp(gamma * lp);
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    z += w * unnorm[i] * (log_axis ? x : 1.0);
  }
  z *= h / 3.0;
  double worst = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double lq = family_log_density(family, scaled, xs[i]);
    worst = std::max(worst, std::abs((std::isinf(lq) ? 0.0 : std::exp(lq)) - unnorm[i] / z));
  }
  return worst;
}

Outcome numeric_core() {
  double round_trip = 0.0;
  for (std::size_t dim : {1u, 2u, 5u}) {
    Approximator m(small(TargetKind::Parameters, dim, 2, 2, SummaryKind::DeepSet), 70 + dim);
    randomize(m, 71 + static_cast<unsigned>(dim), 0.6);
    ad::Tape t(false);
    Scope s(t, m.parameters());
    const Eigen::MatrixXd u = 2.0 * Eigen::MatrixXd::Random(200, static_cast<Eigen::Index>(dim));
    auto cond = t.constant(Eigen::MatrixXd::Random(200, 4 + 2));
    auto out = m.flow_forward(s, t.constant(u), cond);
    round_trip = std::max(round_trip, (t.value(m.flow_inverse(s, out.z, cond)) - u).cwiseAbs().maxCoeff());
  }

  std::vector<std::pair<std::string, double>> grads;
  {
    ParameterStore store;
    Mlp mlp;
    mlp.layers.push_back({store.add("l0.w", 3, 5), store.add("l0.b", 1, 5)});
    mlp.layers.push_back({store.add("l1.w", 5, 2), store.add("l1.b", 1, 2)});
    std::mt19937 rng(72);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<ad::Parameter*> ps;
    for (auto& p : store.all()) {
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = u(rng);
      ps.push_back(&p);
    }
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(7, 3);
    grads.emplace_back("dense", gradcheck::check(
                                    [&](ad::Tape& t) {
                                      Scope s(t, store, &store);
                                      return ad::sum(t, ad::square(t, mlp.forward(s, t.constant(x))));
                                    },
                                    ps, 100, 73)
                                    .worst);
  }
  {
    Approximator m(small(TargetKind::Parameters, 2, 2, 2, SummaryKind::DeepSet), 74);
    randomize(m, 75, 0.4);
    grads.emplace_back("deep set", layer_gradient_error(m, "set.", 76));
  }
  {
    Approximator m(small(TargetKind::Parameters, 2, 1, 1, SummaryKind::Recurrent), 77);
    randomize(m, 78, 0.4);
    grads.emplace_back("recurrent", layer_gradient_error(m, "gru.", 79));
  }
  {
    Approximator m(small(TargetKind::Parameters, 3, 2, 2, SummaryKind::DeepSet), 80);
    randomize(m, 81, 0.4);
    grads.emplace_back("coupling", layer_gradient_error(m, "flow.", 82));
  }
  {
    Approximator m(small(TargetKind::Models, 1, 1, 3, SummaryKind::DeepSet), 83);
    randomize(m, 84, 0.4);
    grads.emplace_back("classifier", layer_gradient_error(m, "classifier", 85));
  }
  double worst_grad = 0.0;
  for (const auto& [name, e] : grads) worst_grad = std::max(worst_grad, e);

  constexpr double kInf = std::numeric_limits<double>::infinity();
  double worst_density = 0.0;
  for (double g : {0.1, 0.5, 2.0, 10.0}) {
    worst_density = std::max({worst_density, grid_sup_error(PriorFamily::Normal, {0.3, 1.5}, g, -60.0, 60.0, false),
                              grid_sup_error(PriorFamily::LogNormal, {std::log(0.4), 0.5}, g, 1e-6, 1e4, true),
                              grid_sup_error(PriorFamily::Gamma, {3.0, 2.0}, g, 1e-10, 1e4, true),
                              grid_sup_error(PriorFamily::Exponential, {2.0}, g, 1e-10, 2e3, true),
                              grid_sup_error(PriorFamily::TruncatedNormal, {0.3, 0.1, 0.0, kInf}, g, 0.0, 5.0, false),
                              grid_sup_error(PriorFamily::TruncatedNormal, {1.65, 0.15, 1.0, 2.0}, g, 1.0, 2.0, false),
                              grid_sup_error(PriorFamily::Uniform, {-1.0, 3.0}, g, -1.0, 3.0, false)});
  }
  std::string detail = "flow round trip " + fmt(round_trip, 3) + " (limit 1e-6); gradient relative error";
  for (const auto& [name, e] : grads) detail += " " + name + " " + fmt(e, 2);
  detail += " (limit 1e-4, 100 probes each); scaled-density sup error " + fmt(worst_density, 3) + " (limit 1e-6)";
  return {round_trip < 1e-6 && worst_grad < 1e-4 && worst_density < 1e-6, detail};
}

// ---------------------------------------------------------------------------

Outcome grid_bookkeeping() {
  auto config = config_named("conjugate");
  const std::size_t k = config.task.context_prior.gamma_size();
  // Members cover the whole grid range; the criterion is about bookkeeping, so
  // a short training run suffices.
  config.task.context_prior.log_lower.assign(k, std::log(0.1));
  config.task.context_prior.log_upper.assign(k, std::log(10.0));
  config.train.epochs = 3;
  const Task task = config.make_task();
  const auto data = task.simulate(config.budget, config.seeds.simulate);
  const auto t_train = Clock::now();
  const auto ens = train_ensemble(config.train, data, config.architecture, 20, config.seeds.train, config.threads);
  note("20 grid members trained in " + fmt(seconds_since(t_train), 3) + " s");

  const auto x = task.simulate_at_context(1, baseline_context(k), config.seeds.test).data(0);
  GridSpec spec;
  spec.baseline = baseline_context(k);
  spec.gamma_axes = std::vector<std::vector<double>>(k, parse_grid("0.1:10:9 log"));
  spec.data_mode = DataVariantMode::Bootstrap;
  spec.bootstrap = 100;
  spec.rule = DecisionRule::parse("mean_sign");
  spec.n_draws = 100;
  spec.seed = config.seeds.sensitivity;

  const auto t0 = Clock::now();
  const auto report = run_sensitivity_grid(ens, x, spec, task.parameter_names());
  const double elapsed = seconds_since(t0);

  std::size_t baseline_cells = 0;
  double baseline_divergence = 0.0;
  bool baseline_indicator = true;
  for (const auto& c : report.cells) {
    bool at_one = c.data_variant == 0;
    for (double g : c.gamma) at_one = at_one && std::abs(std::log(g)) < 1e-12;
    if (!at_one) continue;
    ++baseline_cells;
    baseline_divergence = std::max(baseline_divergence, std::abs(c.divergence_raw));
    baseline_indicator = baseline_indicator && c.ok && c.indicator == 1;
  }
  const bool pass = report.cells.size() == 162000 && report.expected_cells() == 162000 && report.failed() == 0 &&
                    baseline_cells == 20 && baseline_divergence == 0.0 && baseline_indicator && elapsed < 1800.0;
  return {pass, std::to_string(report.cells.size()) + " cells (expected 162000), " + std::to_string(report.failed()) +
                    " failed, " + fmt(elapsed, 4) + " s (limit 1800 s); " + std::to_string(baseline_cells) +
                    " baseline cells with self-divergence " + fmt(baseline_divergence) + " (must be exactly 0)"};
}

// ---------------------------------------------------------------------------

std::string pipeline_once(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto config = config_named("conjugate");
  config.budget = 1024;
  config.train.epochs = 3;
  config.test_budget = 500;
  config.ensemble = 2;
  config.sensitivity.gamma_grids = {"0.5:2:3 log"};
  config.sensitivity.bootstrap = 5;
  config.sensitivity.n_draws = 100;
  config.sensitivity.threshold = 0.05;
  std::ostringstream log;
  const auto data = cmd_simulate(config, SimulateArgs{}, dir, log);
  TrainArgs ta;
  ta.dataset = data;
  const auto models = cmd_train(config, ta, dir, log);
  const Task task = config.make_task();
  const auto obs = task.simulate_at_context(1, baseline_context(task.config().context_prior.gamma_size()), 99);
  write_observations_csv(obs.data(0), task.observation_columns(), dir / "observed.csv");
  SensitivityArgs sa;
  sa.model = dir / "ensemble.json";
  sa.observed = dir / "observed.csv";
  cmd_sensitivity(config, sa, dir / "report", log);
  std::string bytes;
  for (const char* f : {"report.csv", "ood.csv", "summary.txt"}) bytes += read_file(dir / "report" / f) + '\0';
  return bytes;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "amortsens_acceptance_determinism";
  const auto a = pipeline_once(root / "a");
  const auto b = pipeline_once(root / "b");
  const bool same_models = read_file(root / "a" / "member_0.bin") == read_file(root / "b" / "member_0.bin") &&
                           read_file(root / "a" / "member_1.bin") == read_file(root / "b" / "member_1.bin");
  const auto report_lines = std::count(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(a.find('\0')), '\n');
  fs::remove_all(root);
  return {a == b && same_models, std::string(a == b ? "identical" : "different") + " report files (" +
                                     std::to_string(report_lines) + " CSV lines) and " +
                                     (same_models ? "identical" : "different") + " checkpoints across two runs"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"conjugate oracle equivalence", oracle_equivalence},
      {"calibration", calibration},
      {"context-aware vs fixed-context parity", fixed_context_parity},
      {"SIR desk-scale recovery", sir_recovery},
      {"model comparison desk scale", model_comparison},
      {"estimator exactness", estimator_exactness},
      {"numeric core", numeric_core},
      {"simulation-gap detection", simulation_gap},
      {"grid bookkeeping", grid_bookkeeping},
      {"end-to-end determinism", determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(number)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << number << "] " << criteria[i].first << ": " << o.detail
              << " [" << fmt(seconds_since(t0), 4) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
