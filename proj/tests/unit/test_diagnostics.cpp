#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "amortsens/diagnostics.hpp"
#include "amortsens/errors.hpp"
#include "amortsens/tasks.hpp"

using namespace amortsens;

namespace {

Eigen::MatrixXd normal_matrix(Eigen::Index n, Eigen::Index d, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Wraps the closed-form posterior and distorts its draws about their mean.
PosteriorSampler distorted(const Task& task, double spread, double shift) {
  auto exact = analytic_sampler(task);
  return [exact, spread, shift](const Eigen::MatrixXd& x, const ContextVector& ctx, std::size_t n, Rng& rng) {
    Eigen::MatrixXd d = exact(x, ctx, n, rng);
    const Eigen::RowVectorXd mean = d.colwise().mean();
    d = ((d.rowwise() - mean) * spread).rowwise() + mean;
    return Eigen::MatrixXd(d.array() + shift);
  };
}

}  // namespace

TEST_CASE("MAE follows the absolute mean signed deviation") {
  Eigen::MatrixXd truth(1, 2);
  truth << 0.3, -1.0;
  Eigen::MatrixXd same = truth.replicate(10, 1);
  CHECK(mae({same}, truth).value == 0.0);

  Eigen::MatrixXd pm(4, 2);
  pm << 1.3, 0.0, -0.7, -2.0, 1.3, 0.0, -0.7, -2.0;
  CHECK(mae({pm}, truth).value == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(mean_absolute_deviation({pm}, truth).value == doctest::Approx(1.0));

  Eigen::MatrixXd shifted = pm.array() + 0.5;
  const auto s = mae({shifted}, truth);
  CHECK(s.value == doctest::Approx(0.5));
  CHECK(s.per_parameter.size() == 2);

  Eigen::MatrixXd truths(2, 2);
  truths << 0.3, -1.0, 0.3, -1.0;
  CHECK(mae({shifted, same}, truths).value == doctest::Approx(0.25));
  CHECK_THROWS_AS(mae({same}, truths), UsageError);
  CHECK_THROWS_AS(mae({Eigen::MatrixXd::Zero(3, 3)}, truth), UsageError);
}

TEST_CASE("SBC coverage error") {
  const Task task(default_conjugate_task(2, 5));
  const ContextVector unit = baseline_context(2);

  SUBCASE("exact posterior is calibrated at several contexts") {
    for (double g : {0.5, 1.0, 2.0}) {
      const ContextVector ctx{{g, g}, 0, 1};
      const auto r = sbc_ece(task, analytic_sampler(task), ctx, 1000, 200, 17);
      CAPTURE(g);
      CHECK(r.ece < 0.02);
      CHECK(r.levels.size() == 20);
      CHECK(r.coverage.rows() == 20);
    }
    CHECK(sbc_ece(task, analytic_sampler(task), std::nullopt, 1000, 200, 18).ece < 0.02);
  }
  SUBCASE("exact posterior ranks are uniform") {
    const auto r = sbc_ece(task, analytic_sampler(task), unit, 2000, 199, 19);
    for (Eigen::Index d = 0; d < r.rank_fractions.cols(); ++d) {
      std::vector<double> counts(20, 0.0);
      for (Eigen::Index i = 0; i < r.rank_fractions.rows(); ++i) {
        counts[std::min<std::size_t>(19, static_cast<std::size_t>(r.rank_fractions(i, d) * 20.0))] += 1.0;
      }
      const double expected = r.rank_fractions.rows() / 20.0;
      double chi2 = 0.0;
      for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
      CHECK(chi2 < 36.19);  // 99th percentile, 19 degrees of freedom
    }
  }
  SUBCASE("overdispersed posterior") {
    const auto r = sbc_ece(task, distorted(task, 2.0, 0.0), unit, 1000, 200, 20);
    CHECK(r.ece > 0.1);
    // Central intervals cover too much.
    CHECK(r.coverage(10, 0) > r.levels[10]);
  }
  SUBCASE("biased posterior") {
    CHECK(sbc_ece(task, distorted(task, 1.0, 2.0), unit, 1000, 200, 21).ece > 0.2);
  }
  SUBCASE("too few simulations") {
    CHECK_THROWS_AS(sbc_ece(task, analytic_sampler(task), unit, 99, 100, 1), UsageError);
  }
}

TEST_CASE("SBC from rank fractions") {
  Eigen::MatrixXd u(1000, 1);
  for (int i = 0; i < 1000; ++i) u(i, 0) = (i + 0.5) / 1000.0;
  CHECK(sbc_from_ranks(u).ece < 1e-3);
  Eigen::MatrixXd center = Eigen::MatrixXd::Constant(1000, 1, 0.5);
  const auto r = sbc_from_ranks(center);
  // Every central interval covers a truth at the median.
  CHECK(r.coverage.col(0).minCoeff() == 1.0);
}

TEST_CASE("posterior contraction") {
  const Task task(default_conjugate_task(1, 1));
  const auto& prior = task.config().prior;
  const ContextVector unit = baseline_context(1);
  Rng rng(30);

  CHECK(std::abs(posterior_contraction(normal_matrix(20000, 1, rng), prior, unit).value) < 0.03);
  CHECK(posterior_contraction(Eigen::MatrixXd::Constant(50, 1, 0.4), prior, unit).value == 1.0);

  Eigen::MatrixXd x(1, 1);
  x << 2.0;
  const auto draws = task.analytic_posterior_draws(x, unit, 40000, rng);
  CHECK(posterior_contraction(draws, prior, unit).value == doctest::Approx(0.5).epsilon(0.03));

  SUBCASE("shift invariance") {
    PriorSpec moved = prior;
    moved.components[0].params[0] += 7.0;
    Eigen::MatrixXd moved_draws = draws.array() + 7.0;
    CHECK(posterior_contraction(moved_draws, moved, unit).value ==
          doctest::Approx(posterior_contraction(draws, prior, unit).value).epsilon(1e-12));
  }
  SUBCASE("scaled prior variance and the median across sets") {
    const ContextVector wide{{0.25}, 0, 1};
    Eigen::MatrixXd sd1 = normal_matrix(40000, 1, rng);
    CHECK(posterior_contraction(sd1, prior, wide).value == doctest::Approx(0.75).epsilon(0.03));
    const auto many = posterior_contraction({sd1, Eigen::MatrixXd::Constant(10, 1, 0.0), sd1 * 0.5}, prior,
                                            {unit, unit, unit});
    CHECK(many.value == doctest::Approx(0.75).epsilon(0.03));
  }
  SUBCASE("zero prior variance is rejected") {
    PriorSpec flat;
    flat.components = {{"u", PriorFamily::Uniform, {1.0, 1.0}, true}};
    CHECK_THROWS(posterior_contraction(draws, flat, unit));
  }
}

TEST_CASE("classifier metrics") {
  SUBCASE("one-hot predictions") {
    Eigen::MatrixXd p(4, 3);
    p << 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0;
    const auto s = classifier_metrics(p, {0, 1, 2, 0});
    CHECK(s.accuracy == 1.0);
    CHECK(s.brier == 0.0);
    CHECK(s.ece == 0.0);
    CHECK(s.mae == 0.0);
  }
  SUBCASE("uniform predictions") {
    for (int J : {2, 3, 5}) {
      std::vector<int> labels;
      for (int i = 0; i < 10 * J; ++i) labels.push_back(i % J);
      const Eigen::MatrixXd p = Eigen::MatrixXd::Constant(10 * J, J, 1.0 / J);
      const auto s = classifier_metrics(p, labels);
      CAPTURE(J);
      CHECK(s.brier == doctest::Approx((J - 1.0) / J));
      CHECK(s.mae == doctest::Approx((J - 1.0) / J));
    }
  }
  SUBCASE("calibrated by construction") {
    Rng rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = 10000;
    Eigen::MatrixXd p(n, 2);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
      const double q = u(rng);
      p.row(i) << q, 1.0 - q;
      labels.push_back(u(rng) < q ? 0 : 1);
    }
    const auto s = classifier_metrics(p, labels);
    CHECK(s.ece < 0.03);
    CHECK(s.accuracy == doctest::Approx(0.75).epsilon(0.03));
    // Overconfident version of the same predictor.
    Eigen::MatrixXd sharp = (p.array() > 0.5).cast<double>();
    CHECK(classifier_metrics(sharp, labels).ece > 0.2);
  }
  SUBCASE("argument checks") {
    CHECK_THROWS_AS(classifier_metrics(Eigen::MatrixXd::Constant(2, 2, 0.5), {0, 2}), UsageError);
    CHECK_THROWS_AS(classifier_metrics(Eigen::MatrixXd::Constant(2, 2, 0.5), {0}), UsageError);
  }
}

TEST_CASE("kernel density estimate") {
  Rng rng(40);
  const Eigen::MatrixXd pts = normal_matrix(300, 1, rng);
  const KernelDensity kde(pts);
  // Scott's rule in one dimension: h = sd * n^(-1/5).
  const double mean = pts.mean();
  const double sd = std::sqrt((pts.array() - mean).square().sum() / 299.0);
  const double h = sd * std::pow(300.0, -0.2);
  auto direct = [&](double x, int skip) {
    double s = 0.0;
    for (int i = 0; i < 300; ++i) {
      if (i == skip) continue;
      s += std::exp(-0.5 * std::pow((x - pts(i, 0)) / h, 2)) / (h * std::sqrt(2.0 * std::numbers::pi));
    }
    return std::log(s / (skip < 0 ? 300.0 : 299.0));
  };
  for (double x : {-2.0, 0.0, 0.7, 3.5}) {
    CHECK(kde.log_density(Eigen::VectorXd::Constant(1, x)) == doctest::Approx(direct(x, -1)).epsilon(1e-8));
  }
  CHECK(kde.loo_log_density(5) == doctest::Approx(direct(pts(5, 0), 5)).epsilon(1e-8));
  CHECK_THROWS_AS(kde.log_density(Eigen::VectorXd::Zero(2)), UsageError);
  CHECK_THROWS_AS(KernelDensity(Eigen::MatrixXd::Zero(1, 2)), UsageError);
}

TEST_CASE("typical set") {
  Rng rng(41);
  const TypicalSet ts(normal_matrix(1000, 2, rng), 0.05);
  int flagged = 0;
  const int trials = 2000;
  const Eigen::MatrixXd fresh = normal_matrix(trials, 2, rng);
  for (int i = 0; i < trials; ++i) flagged += ts.evaluate(fresh.row(i).transpose()).flagged;
  CHECK(flagged / double(trials) == doctest::Approx(0.05).epsilon(0.4));

  const auto far = ts.evaluate(Eigen::Vector2d(8.0, -8.0));
  CHECK(far.flagged);
  CHECK(far.below);
  CHECK(far.score < far.lower);
  CHECK(far.flagged == (far.score < far.lower || far.score > far.upper));
  CHECK_THROWS_AS(TypicalSet(normal_matrix(100, 2, rng), 0.0), UsageError);
  CHECK_THROWS_AS(ts.evaluate(Eigen::VectorXd::Zero(3)), UsageError);
}

TEST_CASE("typical-set check on a network needs enough simulations") {
  const Task task(default_conjugate_task(1, 5));
  const auto sims = task.simulate(100, 1);
  const Approximator model(default_architecture(task), 1);
  CHECK_THROWS_AS(typical_set_ood(model, sims, sims.data(0)), UsageError);
  const auto enough = task.simulate(500, 2);
  const auto r = typical_set_ood(model, enough, enough.data(0));
  CHECK(r.lower <= r.upper);
  CHECK(std::isfinite(r.score));
}
