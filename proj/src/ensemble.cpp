#include "amortsens/ensemble.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

namespace amortsens {

const Architecture& Ensemble::architecture() const {
  if (members.empty()) throw UsageError("ensemble has no members");
  return members.front().model.architecture();
}

void Ensemble::validate() const {
  if (members.empty()) throw UsageError("ensemble has no members");
  const auto& arch = architecture();
  for (std::size_t m = 0; m < members.size(); ++m) {
    if (!(members[m].model.architecture() == arch)) {
      throw UsageError("ensemble member " + std::to_string(m) + " has a different architecture");
    }
    if (members[m].dataset_hash != dataset_hash) {
      throw DataIntegrityError("ensemble member " + std::to_string(m) + " was trained on dataset " +
                               members[m].dataset_hash + ", expected " + dataset_hash);
    }
  }
  const std::set<std::uint64_t> distinct(member_seeds.begin(), member_seeds.end());
  if (distinct.size() != member_seeds.size()) throw UsageError("ensemble member seeds must be distinct");
}

std::uint64_t member_seed(std::uint64_t root_seed, std::size_t member) {
  return mix_seed(root_seed ^ mix_seed(static_cast<std::uint64_t>(member) + 1));
}

Ensemble train_ensemble(const TrainConfig& config, const SimulationBatch& dataset, const Architecture& arch,
                        std::size_t members, std::uint64_t root_seed, unsigned threads) {
  if (members < 2) throw UsageError("an ensemble needs at least two members");
  config.validate();
  arch.validate();

  Ensemble e;
  e.dataset_hash = dataset.content_hash();
  e.members.resize(members);
  for (std::size_t m = 0; m < members; ++m) e.member_seeds.push_back(member_seed(root_seed, m));

  std::vector<std::string> errors(members);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t m = next++; m < members; m = next++) {
      try {
        e.members[m] = train(config, dataset, arch, e.member_seeds[m]);
      } catch (const std::exception& ex) {
        errors[m] = ex.what();
      }
    }
  };
  const unsigned n_workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(members)));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<std::size_t> failed;
  std::string msg = "ensemble training failed for members";
  for (std::size_t m = 0; m < members; ++m) {
    if (!errors[m].empty()) {
      failed.push_back(m);
      msg += " " + std::to_string(m) + " (" + errors[m] + ")";
    }
  }
  if (!failed.empty()) throw EnsembleTrainingError(msg, failed);
  return e;
}

Ensemble assemble_ensemble(std::vector<Checkpoint> members, const std::string& expected_dataset_hash) {
  Ensemble e;
  e.dataset_hash = expected_dataset_hash;
  for (const auto& m : members) e.member_seeds.push_back(m.seed);
  e.members = std::move(members);
  e.validate();
  return e;
}

Eigen::VectorXd across_member_sd(const std::vector<Eigen::VectorXd>& values) {
  if (values.empty()) throw UsageError("no member values");
  const Eigen::Index d = values.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& v : values) {
    if (v.size() != d) throw UsageError("member outputs differ in size");
    mean += v;
  }
  mean /= static_cast<double>(values.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
  for (const auto& v : values) var += (v - mean).array().square().matrix();
  return (var / static_cast<double>(values.size())).cwiseSqrt();
}

EnsemblePrediction combine_draws(std::vector<Eigen::MatrixXd> member_draws) {
  if (member_draws.empty()) throw UsageError("no member draws");
  EnsemblePrediction p;
  p.target = TargetKind::Parameters;
  Eigen::Index rows = 0;
  std::vector<Eigen::VectorXd> means;
  for (const auto& d : member_draws) {
    if (d.cols() != member_draws.front().cols()) throw UsageError("member draws differ in dimension");
    if (d.rows() == 0) throw UsageError("member returned no draws");
    rows += d.rows();
    means.push_back(d.colwise().mean().transpose());
  }
  p.pooled_draws.resize(rows, member_draws.front().cols());
  Eigen::Index at = 0;
  for (const auto& d : member_draws) {
    p.pooled_draws.middleRows(at, d.rows()) = d;
    at += d.rows();
  }
  p.disagreement_per = across_member_sd(means);
  p.disagreement = p.disagreement_per.maxCoeff();
  p.member_draws = std::move(member_draws);
  return p;
}

EnsemblePrediction combine_probs(std::vector<Eigen::VectorXd> member_probs) {
  if (member_probs.empty()) throw UsageError("no member probabilities");
  EnsemblePrediction p;
  p.target = TargetKind::Models;
  p.mixture_probs = Eigen::VectorXd::Zero(member_probs.front().size());
  for (const auto& q : member_probs) {
    if (q.size() != p.mixture_probs.size()) throw UsageError("member simplices differ in length");
    p.mixture_probs += q;
  }
  p.mixture_probs /= static_cast<double>(member_probs.size());
  p.disagreement_per = across_member_sd(member_probs);
  p.disagreement = p.disagreement_per.maxCoeff();
  p.member_probs = std::move(member_probs);
  return p;
}

EnsemblePrediction ensemble_predict(const Ensemble& ensemble, const Eigen::MatrixXd& x_obs, const ContextVector& ctx,
                                    std::size_t n_draws_per_member, Rng& rng) {
  if (ensemble.members.empty()) throw UsageError("ensemble has no members");
  const auto& arch = ensemble.architecture();
  for (const auto& m : ensemble.members) {
    if (!(m.model.architecture() == arch)) throw UsageError("ensemble members have different architectures");
  }
  if (arch.target == TargetKind::Models) {
    std::vector<Eigen::VectorXd> probs;
    for (const auto& m : ensemble.members) probs.push_back(m.model.predict_model_probs(x_obs, ctx));
    return combine_probs(std::move(probs));
  }
  const std::uint64_t base = rng();
  std::vector<Eigen::MatrixXd> draws;
  for (const auto& m : ensemble.members) {
    Rng member_rng = derive_stream(base, m.seed);
    draws.push_back(m.model.sample_posterior(x_obs, ctx, n_draws_per_member, member_rng));
  }
  return combine_draws(std::move(draws));
}

namespace {

double member_disagreement(const Ensemble& ensemble, const Eigen::MatrixXd& x, const ContextVector& ctx,
                           std::size_t n_draws, std::uint64_t stream_seed) {
  Rng rng(stream_seed);
  return ensemble_predict(ensemble, x, ctx, n_draws, rng).disagreement;
}

}  // namespace

ClosedOpenReport closed_vs_open_report(const Ensemble& ensemble, const SimulationBatch& testset,
                                       const Eigen::MatrixXd& x_obs, const ContextVector& ctx,
                                       std::size_t n_draws, std::uint64_t seed, double threshold) {
  if (ensemble.size() < 2) throw UsageError("closed/open comparison needs an ensemble of at least two members");
  if (testset.empty()) throw UsageError("held-out test set is empty");
  if (!(threshold > 0.0)) throw UsageError("gap threshold must be positive");
  const auto& arch = ensemble.architecture();
  const bool models = arch.target == TargetKind::Models;

  ClosedOpenReport r;
  r.threshold = threshold;
  r.member_metric.assign(ensemble.size(), 0.0);
  double spread = 0.0;
  for (std::size_t i = 0; i < testset.rows(); ++i) {
    const auto data = testset.data(i);
    const auto c = testset.context(i);
    Rng rng = derive_stream(seed, i, 1);
    const auto pred = ensemble_predict(ensemble, data, c, n_draws, rng);
    spread += pred.disagreement;
    for (std::size_t m = 0; m < ensemble.size(); ++m) {
      if (models) {
        Eigen::Index best = 0;
        pred.member_probs[m].maxCoeff(&best);
        r.member_metric[m] += best == testset.label(i) ? 1.0 : 0.0;
      } else {
        const Eigen::VectorXd dev = pred.member_draws[m].colwise().mean().transpose() - testset.theta(i);
        r.member_metric[m] += dev.cwiseAbs().mean();
      }
    }
  }
  const auto n = static_cast<double>(testset.rows());
  for (auto& v : r.member_metric) v /= n;
  std::vector<Eigen::VectorXd> metric;
  for (double v : r.member_metric) metric.push_back(Eigen::VectorXd::Constant(1, v));
  r.member_metric_sd = across_member_sd(metric)(0);
  r.closed_spread = spread / n;
  r.open_disagreement = member_disagreement(ensemble, x_obs, ctx, n_draws, mix_seed(seed ^ 0x0b5));
  r.ratio = r.closed_spread > 0.0 ? r.open_disagreement / r.closed_spread
                                  : (r.open_disagreement > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
  r.gap_flag = r.ratio > threshold;
  return r;
}

}  // namespace amortsens
