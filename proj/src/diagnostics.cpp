#include "amortsens/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "amortsens/errors.hpp"

namespace amortsens {

namespace {

void check_sets(const std::vector<Eigen::MatrixXd>& draw_sets, const Eigen::MatrixXd& truths) {
  if (draw_sets.empty()) throw UsageError("no test sets");
  if (static_cast<Eigen::Index>(draw_sets.size()) != truths.rows()) {
    throw UsageError("got " + std::to_string(draw_sets.size()) + " draw sets for " + std::to_string(truths.rows()) +
                     " truths");
  }
  for (const auto& d : draw_sets) {
    if (d.cols() != truths.cols()) throw UsageError("draw dimension does not match the truths");
    if (d.rows() == 0) throw UsageError("a test set has no draws");
  }
}

ParameterScore average(const Eigen::VectorXd& per) {
  ParameterScore s;
  s.per_parameter.assign(per.data(), per.data() + per.size());
  s.value = per.mean();
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) throw UsageError("median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

ParameterScore mae(const std::vector<Eigen::MatrixXd>& draw_sets, const Eigen::MatrixXd& truths) {
  check_sets(draw_sets, truths);
  Eigen::VectorXd per = Eigen::VectorXd::Zero(truths.cols());
  for (std::size_t j = 0; j < draw_sets.size(); ++j) {
    const Eigen::VectorXd signed_dev =
        draw_sets[j].colwise().mean().transpose() - truths.row(static_cast<Eigen::Index>(j)).transpose();
    per += signed_dev.cwiseAbs();
  }
  return average(per / static_cast<double>(draw_sets.size()));
}

ParameterScore mean_absolute_deviation(const std::vector<Eigen::MatrixXd>& draw_sets, const Eigen::MatrixXd& truths) {
  check_sets(draw_sets, truths);
  Eigen::VectorXd per = Eigen::VectorXd::Zero(truths.cols());
  for (std::size_t j = 0; j < draw_sets.size(); ++j) {
    const auto& d = draw_sets[j];
    per += (d.rowwise() - truths.row(static_cast<Eigen::Index>(j))).cwiseAbs().colwise().mean().transpose();
  }
  return average(per / static_cast<double>(draw_sets.size()));
}

PosteriorSampler network_sampler(const Approximator& model) {
  return [&model](const Eigen::MatrixXd& data, const ContextVector& ctx, std::size_t n, Rng& rng) {
    return model.sample_posterior(data, ctx, n, rng);
  };
}

PosteriorSampler analytic_sampler(const Task& task) {
  if (task.kind() != TaskKind::Conjugate) throw UsageError("closed-form posterior exists only for the conjugate task");
  return [&task](const Eigen::MatrixXd& data, const ContextVector& ctx, std::size_t n, Rng& rng) {
    return task.analytic_posterior_draws(data, ctx, n, rng);
  };
}

std::vector<double> sbc_levels() {
  std::vector<double> q;
  for (int i = 0; i < 20; ++i) q.push_back(0.005 + (0.995 - 0.005) * static_cast<double>(i) / 19.0);
  return q;
}

SbcResult sbc_from_ranks(const Eigen::MatrixXd& u) {
  if (u.rows() == 0 || u.cols() == 0) throw UsageError("no rank statistics");
  SbcResult r;
  r.levels = sbc_levels();
  r.rank_fractions = u;
  r.coverage.resize(static_cast<Eigen::Index>(r.levels.size()), u.cols());
  for (Eigen::Index d = 0; d < u.cols(); ++d) {
    std::vector<double> errors;
    for (std::size_t l = 0; l < r.levels.size(); ++l) {
      const double q = r.levels[l];
      const double lo = 0.5 * (1.0 - q);
      const double hi = 0.5 * (1.0 + q);
      const auto hits = (u.col(d).array() >= lo && u.col(d).array() <= hi).count();
      const double cov = static_cast<double>(hits) / static_cast<double>(u.rows());
      r.coverage(static_cast<Eigen::Index>(l), d) = cov;
      errors.push_back(std::abs(cov - q));
    }
    r.per_parameter.push_back(median(errors));
  }
  double total = 0.0;
  for (double e : r.per_parameter) total += e;
  r.ece = total / static_cast<double>(r.per_parameter.size());
  return r;
}

SbcResult sbc_from_draws(const std::vector<Eigen::MatrixXd>& draw_sets, const Eigen::MatrixXd& truths) {
  check_sets(draw_sets, truths);
  Eigen::MatrixXd u(truths.rows(), truths.cols());
  for (Eigen::Index j = 0; j < truths.rows(); ++j) {
    const auto& d = draw_sets[static_cast<std::size_t>(j)];
    for (Eigen::Index k = 0; k < truths.cols(); ++k) {
      const double t = truths(j, k);
      const double below = static_cast<double>((d.col(k).array() < t).count());
      const double ties = static_cast<double>((d.col(k).array() == t).count());
      u(j, k) = (below + 0.5 * ties) / static_cast<double>(d.rows());
    }
  }
  return sbc_from_ranks(u);
}

SbcResult sbc_ece(const Task& task, const PosteriorSampler& sampler, std::optional<ContextVector> context,
                  std::size_t n_sims, std::size_t n_draws, std::uint64_t seed) {
  if (task.layout().target != TargetKind::Parameters) throw UsageError("calibration needs a parameter-estimation task");
  if (n_sims < 100 || n_draws < 1) throw UsageError("calibration needs at least 100 simulations and one draw");
  std::vector<Eigen::MatrixXd> draws;
  Eigen::MatrixXd truths(static_cast<Eigen::Index>(n_sims), static_cast<Eigen::Index>(task.layout().theta_dim));
  for (std::size_t i = 0; i < n_sims; ++i) {
    try {
      Rng rng = derive_stream(seed, i, 0x5bc);
      const auto row = context ? task.simulate_at(*context, rng) : task.simulate_row(rng);
      truths.row(static_cast<Eigen::Index>(i)) = row.theta.transpose();
      Rng post = derive_stream(seed, i, 0x5bd);
      draws.push_back(sampler(row.data, row.context, n_draws, post));
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      throw NumericError("calibration set " + std::to_string(i) + ": " + e.what());
    }
  }
  return sbc_from_draws(draws, truths);
}

ParameterScore posterior_contraction(const std::vector<Eigen::MatrixXd>& draw_sets, const PriorSpec& prior,
                                     const std::vector<ContextVector>& contexts) {
  if (draw_sets.empty()) throw UsageError("no test sets");
  if (contexts.size() != draw_sets.size() && contexts.size() != 1) throw UsageError("need one context per set");
  const auto d = static_cast<Eigen::Index>(prior.size());
  std::vector<std::vector<double>> values(static_cast<std::size_t>(d));
  for (std::size_t j = 0; j < draw_sets.size(); ++j) {
    const auto& draws = draw_sets[j];
    if (draws.cols() != d) throw UsageError("draw dimension does not match the prior");
    if (draws.rows() < 2) throw UsageError("contraction needs at least two draws per set");
    const auto& ctx = contexts.size() == 1 ? contexts.front() : contexts[j];
    const auto prior_var = prior_variances(prior, ctx.gamma);
    for (Eigen::Index k = 0; k < d; ++k) {
      const double pv = prior_var[static_cast<std::size_t>(k)];
      if (!(pv > 0.0) || !std::isfinite(pv)) throw UsageError("prior variance must be finite and positive");
      const double mean = draws.col(k).mean();
      const double var = (draws.col(k).array() - mean).square().sum() / static_cast<double>(draws.rows() - 1);
      values[static_cast<std::size_t>(k)].push_back(1.0 - var / pv);
    }
  }
  Eigen::VectorXd per(d);
  for (Eigen::Index k = 0; k < d; ++k) per(k) = median(values[static_cast<std::size_t>(k)]);
  return average(per);
}

ParameterScore posterior_contraction(const Eigen::MatrixXd& draws, const PriorSpec& prior, const ContextVector& ctx) {
  return posterior_contraction(std::vector<Eigen::MatrixXd>{draws}, prior, {ctx});
}

ClassifierScores classifier_metrics(const Eigen::MatrixXd& probs, const std::vector<int>& labels, int n_bins) {
  if (probs.rows() == 0) throw UsageError("empty test set");
  if (static_cast<std::size_t>(probs.rows()) != labels.size()) throw UsageError("one label per prediction required");
  if (n_bins < 1) throw UsageError("need at least one bin");
  ClassifierScores s;
  const double n = static_cast<double>(probs.rows());
  std::vector<double> bin_conf(static_cast<std::size_t>(n_bins), 0.0), bin_hit(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<std::size_t> bin_count(static_cast<std::size_t>(n_bins), 0);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= probs.cols()) throw UsageError("label out of range");
    Eigen::Index best = 0;
    const double conf = probs.row(i).maxCoeff(&best);
    const double hit = best == y ? 1.0 : 0.0;
    s.accuracy += hit;
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
      const double target = j == y ? 1.0 : 0.0;
      s.brier += (probs(i, j) - target) * (probs(i, j) - target);
    }
    s.mae += std::abs(1.0 - probs(i, y));
    const auto b = static_cast<std::size_t>(std::min(n_bins - 1, static_cast<int>(std::floor(conf * n_bins))));
    bin_conf[b] += conf;
    bin_hit[b] += hit;
    ++bin_count[b];
  }
  s.accuracy /= n;
  s.brier /= n;
  s.mae /= n;
  for (std::size_t b = 0; b < bin_count.size(); ++b) {
    if (bin_count[b] == 0) continue;
    const double c = static_cast<double>(bin_count[b]);
    s.ece += (c / n) * std::abs(bin_hit[b] / c - bin_conf[b] / c);
  }
  return s;
}

ClassifierScores classifier_metrics(const Approximator& model, const SimulationBatch& testset, int n_bins) {
  if (testset.empty()) throw UsageError("empty test set");
  if (model.architecture().target != TargetKind::Models) throw UsageError("checkpoint is not a model classifier");
  Eigen::MatrixXd probs(static_cast<Eigen::Index>(testset.rows()), model.architecture().n_models);
  std::vector<int> labels;
  for (std::size_t i = 0; i < testset.rows(); ++i) {
    probs.row(static_cast<Eigen::Index>(i)) = model.predict_model_probs(testset.data(i), testset.context(i)).transpose();
    labels.push_back(testset.label(i));
  }
  return classifier_metrics(probs, labels, n_bins);
}

KernelDensity::KernelDensity(Eigen::MatrixXd points) : points_(std::move(points)) {
  const auto n = points_.rows();
  const auto d = points_.cols();
  if (n < 2) throw UsageError("density estimate needs at least two points");
  if (d < 1) throw UsageError("density estimate needs at least one dimension");
  if (!points_.allFinite()) throw NumericError("non-finite summaries in density estimate");
  const Eigen::RowVectorXd mean = points_.colwise().mean();
  const Eigen::MatrixXd centered = points_.rowwise() - mean;
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  const double ridge = 1e-10 * std::max(cov.trace() / static_cast<double>(d), 1e-300);
  cov.diagonal().array() += ridge;
  const double scott = std::pow(static_cast<double>(n), -2.0 / (static_cast<double>(d) + 4.0));
  const Eigen::LLT<Eigen::MatrixXd> llt(scott * cov);
  if (llt.info() != Eigen::Success) throw NumericError("bandwidth matrix is not positive definite");
  const Eigen::MatrixXd L = llt.matrixL();
  whiten_ = L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(d, d));
  white_points_ = points_ * whiten_.transpose();
  const double log_det = 2.0 * L.diagonal().array().log().sum();
  log_norm_ = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) - 0.5 * log_det;
}

double KernelDensity::log_sum(const Eigen::VectorXd& x, std::optional<std::size_t> skip) const {
  const Eigen::RowVectorXd w = (whiten_ * x).transpose();
  const Eigen::VectorXd e = -0.5 * (white_points_.rowwise() - w).rowwise().squaredNorm();
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    if (skip && static_cast<std::size_t>(i) == *skip) continue;
    mx = std::max(mx, e(i));
  }
  double s = 0.0;
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    if (skip && static_cast<std::size_t>(i) == *skip) continue;
    s += std::exp(e(i) - mx);
  }
  return mx + std::log(s);
}

double KernelDensity::log_density(const Eigen::VectorXd& x) const {
  if (x.size() != points_.cols()) throw UsageError("summary dimension does not match the density estimate");
  return log_sum(x, std::nullopt) - std::log(static_cast<double>(points_.rows())) + log_norm_;
}

double KernelDensity::loo_log_density(std::size_t i) const {
  if (i >= size()) throw UsageError("point index out of range");
  return log_sum(points_.row(static_cast<Eigen::Index>(i)).transpose(), i) -
         std::log(static_cast<double>(points_.rows() - 1)) + log_norm_;
}

TypicalSet::TypicalSet(Eigen::MatrixXd summaries, double alpha) : kde_(std::move(summaries)), alpha_(alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha level must lie in (0, 1)");
  std::vector<double> scores;
  for (std::size_t i = 0; i < kde_.size(); ++i) scores.push_back(kde_.loo_log_density(i));
  lower_ = quantile(scores, alpha / 2.0);
  upper_ = quantile(scores, 1.0 - alpha / 2.0);
}

OodResult TypicalSet::evaluate(const Eigen::VectorXd& summary) const {
  OodResult r;
  r.alpha = alpha_;
  r.lower = lower_;
  r.upper = upper_;
  r.score = kde_.log_density(summary);
  r.below = r.score < lower_;
  r.flagged = r.below || r.score > upper_;
  return r;
}

Eigen::MatrixXd simulated_summaries(const Approximator& model, const SimulationBatch& sims) {
  const auto dim = model.architecture().summary_dim;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(sims.rows()), dim);
  for (std::size_t i = 0; i < sims.rows(); ++i) out.row(static_cast<Eigen::Index>(i)) = model.summary(sims.data(i)).transpose();
  return out;
}

OodResult typical_set_ood(const Approximator& model, const SimulationBatch& sims, const Eigen::MatrixXd& x_obs,
                          double alpha) {
  if (sims.empty()) throw UsageError("simulation set is empty");
  if (sims.rows() < 500) throw UsageError("typical-set check needs at least 500 simulated datasets");
  TypicalSet ts(simulated_summaries(model, sims), alpha);
  return ts.evaluate(model.summary(x_obs));
}

}  // namespace amortsens
