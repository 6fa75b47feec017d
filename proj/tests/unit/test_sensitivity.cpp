#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "amortsens/errors.hpp"
#include "amortsens/sensitivity.hpp"
#include "amortsens/tasks.hpp"

using namespace amortsens;

namespace {

Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index d, double shift, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng) + shift;
  return m;
}

// Reference: unbiased MMD^2 written out as explicit double sums.
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

double brute_median_distance(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  Eigen::MatrixXd Z(X.rows() + Y.rows(), X.cols());
  Z << X, Y;
  std::vector<double> d;
  for (Eigen::Index i = 0; i < Z.rows(); ++i)
    for (Eigen::Index j = i + 1; j < Z.rows(); ++j) d.push_back((Z.row(i) - Z.row(j)).norm());
  std::sort(d.begin(), d.end());
  const auto h = d.size() / 2;
  return d.size() % 2 ? d[h] : 0.5 * (d[h - 1] + d[h]);
}

}  // namespace

TEST_CASE("MMD matches the brute-force double sum") {
  Rng rng(1);
  for (auto [n, m, d] : {std::tuple{50, 50, 1}, std::tuple{100, 37, 3}, std::tuple{2, 100, 2}, std::tuple{64, 99, 5}}) {
    const auto X = gaussian(n, d, 0.0, rng);
    const auto Y = gaussian(m, d, 0.4, rng);
    CHECK(std::abs(mmd_squared_unbiased(X, Y, 0.8) - brute_mmd(X, Y, 0.8)) < 1e-12);
    const double bw = brute_median_distance(X, Y);
    CHECK(median_pairwise_distance(X, Y) == doctest::Approx(bw).epsilon(1e-14));
    CHECK(std::abs(mmd_squared_unbiased(X, Y) - brute_mmd(X, Y, bw)) < 1e-12);
  }
}

TEST_CASE("MMD properties") {
  Rng rng(2);
  const auto X = gaussian(40, 2, 0.0, rng);
  const auto Y = gaussian(60, 2, 1.0, rng);
  CHECK(std::abs(mmd_squared_unbiased(X, Y) - mmd_squared_unbiased(Y, X)) < 1e-12);
  CHECK(mmd_squared_unbiased(X, X) <= 1e-12);
  CHECK(mmd_squared_unbiased(X, Y) > 0.0);
  CHECK_THROWS_AS(mmd_squared_unbiased(X, gaussian(10, 3, 0.0, rng)), UsageError);
  CHECK_THROWS_AS(mmd_squared_unbiased(X, gaussian(1, 2, 0.0, rng)), UsageError);
}

TEST_CASE("permutation test") {
  Rng rng(3);
  SUBCASE("statistic agrees with the direct estimate") {
    const auto X = gaussian(30, 2, 0.0, rng);
    const auto Y = gaussian(45, 2, 0.3, rng);
    const auto r = mmd_hypothesis_test(X, Y, 200, 0.05, rng);
    CHECK(std::abs(r.statistic - mmd_squared_unbiased(X, Y)) < 1e-12);
    CHECK(r.p_value >= 0.0);
    CHECK(r.p_value <= 1.0);
    CHECK(r.reject == (r.p_value <= 0.05));
  }
  SUBCASE("shifted samples exceed the 99th null percentile") {
    const auto X = gaussian(500, 1, 0.0, rng);
    const auto Y = gaussian(500, 1, 1.0, rng);
    const auto r = mmd_hypothesis_test(X, Y, 200, 0.01, rng, 1.0);
    CHECK(r.statistic > r.critical_value);
    CHECK(r.reject);
  }
  SUBCASE("separated Gaussians give p < 0.01") {
    const auto r = mmd_hypothesis_test(gaussian(50, 1, 0.0, rng), gaussian(50, 1, 3.0, rng), 500, 0.05, rng);
    CHECK(r.p_value < 0.01);
  }
  SUBCASE("delta = 1 always rejects") {
    const auto X = gaussian(20, 1, 0.0, rng);
    const auto r = mmd_hypothesis_test(X, X, 100, 1.0, rng);
    CHECK(r.reject);
  }
  SUBCASE("two halves of one sample reject at about the nominal rate") {
    int rejections = 0;
    const int reps = 200;
    for (int k = 0; k < reps; ++k) {
      const auto Z = gaussian(60, 1, 0.0, rng);
      rejections += mmd_hypothesis_test(Z.topRows(30), Z.bottomRows(30), 100, 0.05, rng).reject;
    }
    // binomial(200, 0.05) has sd 0.015
    CHECK(std::abs(rejections / double(reps) - 0.05) < 0.05);
  }
  SUBCASE("argument checks") {
    const auto X = gaussian(10, 1, 0.0, rng);
    CHECK_THROWS_AS(mmd_hypothesis_test(X, X, 99, 0.05, rng), UsageError);
    CHECK_THROWS_AS(mmd_hypothesis_test(X, X, 100, 0.0, rng), UsageError);
  }
}

TEST_CASE("categorical KL") {
  const Eigen::Vector2d p(1.0, 0.0), h(0.5, 0.5);
  CHECK(kl_categorical(h, h) == 0.0);
  CHECK(std::abs(kl_categorical(p, h) - std::log(2.0)) < 1e-12);
  Eigen::Vector4d u(0.25, 0.25, 0.25, 0.25), q(0.7, 0.1, 0.1, 0.1);
  const double hand = 0.25 * std::log(0.25 / 0.7) + 3.0 * 0.25 * std::log(0.25 / 0.1);
  CHECK(std::abs(kl_categorical(u, q) - hand) < 1e-12);
  CHECK(hand == doctest::Approx(0.4299).epsilon(1e-4));
  CHECK(std::isinf(kl_categorical(h, p)));
  CHECK_THROWS_AS(kl_categorical(Eigen::Vector2d(0.5, 0.6), h), UsageError);
  CHECK_THROWS_AS(kl_categorical(Eigen::Vector2d(1.5, -0.5), h), UsageError);
  CHECK_THROWS_AS(kl_categorical(u, h), UsageError);
}

TEST_CASE("decision rules") {
  Posterior a, b;
  a.probs = Eigen::Vector2d(0.6, 0.4);
  b.probs = Eigen::Vector2d(0.4, 0.6);
  const auto argmax = DecisionRule::parse("argmax");
  CHECK(qualitative_robustness(a, a, argmax).indicator == 1);
  const auto r = qualitative_robustness(a, b, argmax);
  CHECK(r.decision_i == 0);
  CHECK(r.decision_j == 1);
  CHECK(r.indicator == 0);

  Rng rng(4);
  Posterior pa{gaussian(2000, 1, 0.0, rng), {}};
  Posterior pb{pa.draws.array() + 0.5, {}};
  auto hdi = DecisionRule::parse("hdi");
  hdi.theta0 = 0.25;
  CHECK(qualitative_robustness(pa, pb, hdi).indicator == 1);
  hdi.theta0 = 2.3;
  CHECK(qualitative_robustness(pa, pb, hdi).indicator == 0);
  const auto sign = DecisionRule::parse("mean_sign");
  Posterior neg{pa.draws.array() - 3.0, {}};
  CHECK(decide(sign, neg) == -1);
  CHECK(decide(sign, pb) == 1);
  CHECK(qualitative_robustness(pa, pa, sign).indicator == 1);

  CHECK_THROWS_AS(decide(argmax, pa), UsageError);
  CHECK_THROWS_AS(decide(sign, a), UsageError);
  CHECK_THROWS_AS(DecisionRule::parse("median"), UsageError);
}

TEST_CASE("HDI interval") {
  std::vector<double> v;
  for (int i = 0; i < 100; ++i) v.push_back(i);
  const auto [lo, hi] = hdi_interval(v, 0.9);
  CHECK(hi - lo == 89.0);
  // Skewed sample: the shortest interval hugs the dense end.
  std::vector<double> skew;
  for (int i = 0; i < 1000; ++i) skew.push_back(std::pow(i / 1000.0, 3.0));
  const auto s = hdi_interval(skew, 0.5);
  CHECK(s.first == 0.0);
  CHECK_THROWS_AS(hdi_interval({}, 0.9), UsageError);
  CHECK_THROWS_AS(hdi_interval(v, 0.0), UsageError);
}

TEST_CASE("decisions are invariant to monotone reparameterization of draws") {
  // A strictly increasing map keeps the argmax and the sign of a centered mean
  // for symmetric posteriors; the HDI rule follows theta0 through the map.
  Rng rng(5);
  Posterior p{gaussian(4000, 1, 0.7, rng), {}};
  Posterior mapped{p.draws.array().unaryExpr([](double x) { return x + 0.01 * x * x * x; }).matrix(), {}};
  const auto sign = DecisionRule::parse("mean_sign");
  CHECK(decide(sign, p) == decide(sign, mapped));
  Posterior probs;
  probs.probs = Eigen::Vector3d(0.2, 0.5, 0.3);
  Posterior sharpened;
  sharpened.probs = probs.probs.array().pow(3.0);
  sharpened.probs /= sharpened.probs.sum();
  const auto argmax = DecisionRule::parse("argmax");
  CHECK(decide(argmax, probs) == decide(argmax, sharpened));
}

TEST_CASE("projections") {
  Eigen::MatrixXd draws(2, 3);
  draws << 1, 2, 4, 3, 6, 9;
  CHECK(Projection::parse("all").apply(draws) == draws);
  const auto cols = Projection::parse("2,0").apply(draws);
  CHECK(cols(0, 0) == 4.0);
  CHECK(cols(1, 1) == 3.0);
  const auto ratio = Projection::parse("ratio:1/0").apply(draws);
  CHECK(ratio.cols() == 1);
  CHECK(ratio(1, 0) == 2.0);
  CHECK_THROWS_AS(Projection::parse("ratio:1"), UsageError);
  CHECK_THROWS_AS(Projection::parse("a,b"), UsageError);
  CHECK_THROWS_AS(Projection::parse("5").apply(draws), UsageError);
}

TEST_CASE("data variants") {
  Eigen::MatrixXd data(100, 2);
  for (int i = 0; i < 100; ++i) data.row(i) << i, -i;
  const auto loo = loo_variants(data);
  CHECK(loo.size() == 100);
  for (std::size_t k = 0; k < loo.size(); ++k) {
    CHECK(loo[k].rows() == 99);
    CHECK((loo[k].col(0).array() != static_cast<double>(k)).all());
  }

  Rng r1(6), r2(6);
  const auto a = bootstrap_variants(data, 10000, r1);
  const auto b = bootstrap_variants(data, 3, r2);
  CHECK(a[2] == b[2]);
  double absent = 0.0, count = 0.0;
  for (const auto& v : a) {
    std::vector<int> seen(100, 0);
    for (Eigen::Index i = 0; i < v.rows(); ++i) ++seen[static_cast<std::size_t>(v(i, 0))];
    for (int s : seen) {
      absent += s == 0;
      count += s;
    }
  }
  CHECK(absent / (10000.0 * 100.0) == doctest::Approx(std::exp(-1.0)).epsilon(0.01 / std::exp(-1.0)));
  CHECK(count / (10000.0 * 100.0) == doctest::Approx(1.0));
}

TEST_CASE("grid parsing") {
  const auto g = parse_grid("0.5:2.0:3 log");
  REQUIRE(g.size() == 3);
  CHECK(g[0] == 0.5);
  CHECK(g[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(g[2] == 2.0);
  const auto w = parse_grid("0.1:10:9 log");
  CHECK(w.size() == 9);
  CHECK(w[4] == doctest::Approx(1.0).epsilon(1e-14));
  const auto lin = parse_grid("0:1:5");
  CHECK(lin[1] == 0.25);
  CHECK(parse_grid("1:1:1 log") == std::vector<double>{1.0});
  CHECK_THROWS_AS(parse_grid("0:1:3 log"), UsageError);
  CHECK_THROWS_AS(parse_grid("2:1:3"), UsageError);
  CHECK_THROWS_AS(parse_grid("1:2"), UsageError);
  CHECK_THROWS_AS(parse_grid("1:2:x"), UsageError);
  CHECK_THROWS_AS(parse_grid("1:2:3 cubic"), UsageError);
}

namespace {

Ensemble tiny_ensemble(const Task& task, std::size_t members) {
  const auto data = task.simulate(256, 1);
  Architecture arch = default_architecture(task);
  arch.summary_hidden = 8;
  arch.flow_hidden = 8;
  arch.flow_blocks = 2;
  arch.classifier_hidden = 8;
  TrainConfig cfg;
  cfg.epochs = 2;
  if (members == 1) {
    Ensemble e;
    e.members.push_back(train(cfg, data, arch, 3));
    e.dataset_hash = data.content_hash();
    e.member_seeds = {3};
    return e;
  }
  return train_ensemble(cfg, data, arch, members, 3);
}

}  // namespace

TEST_CASE("sensitivity grid bookkeeping") {
  const Task task(default_conjugate_task(2, 10));
  const auto ens = tiny_ensemble(task, 2);
  Rng rng(7);
  const Eigen::MatrixXd x = task.simulate(1, 9).data(0);

  GridSpec spec;
  spec.baseline = baseline_context(2);
  spec.rule = DecisionRule::parse("mean_sign");
  spec.n_draws = 50;
  spec.seed = 11;

  SUBCASE("baseline only") {
    const auto r = run_sensitivity_grid(ens, x, spec);
    CHECK(r.cells.size() == 2);
    CHECK(r.expected_cells() == 2);
    for (const auto& c : r.cells) {
      CHECK(c.ok);
      CHECK(c.divergence == 0.0);
      CHECK(c.indicator == 1);
    }
  }
  SUBCASE("shared axis, per-exponent axes and bootstrap variants") {
    spec.gamma_axes = {parse_grid("0.5:2:3 log")};
    spec.data_mode = DataVariantMode::Bootstrap;
    spec.bootstrap = 4;
    spec.threshold = 0.05;
    const auto shared = run_sensitivity_grid(ens, x, spec, {"a", "b"});
    CHECK(shared.cells.size() == 3 * 4 * 2);
    CHECK(shared.failed() == 0);
    CHECK(shared.summary_names == std::vector<std::string>{"mean_a", "mean_b"});
    std::size_t baseline_cells = 0;
    for (const auto& c : shared.cells) {
      CHECK(c.gamma[0] == c.gamma[1]);
      CHECK(c.robust.has_value());
      if (c.data_variant == 0 && c.gamma[0] == 1.0) {
        ++baseline_cells;
        CHECK(c.divergence_raw == 0.0);
        CHECK(c.divergence == 0.0);
        CHECK(c.indicator == 1);
      }
      CHECK(c.divergence >= 0.0);
    }
    CHECK(baseline_cells == 2);

    spec.gamma_axes = {parse_grid("0.5:2:3 log"), parse_grid("0.5:2:2 log")};
    const auto cart = run_sensitivity_grid(ens, x, spec);
    CHECK(cart.cells.size() == 3 * 2 * 4 * 2);
    CHECK(cart.axis_sizes == std::vector<std::size_t>{6, 1, 4, 2});

    spec.gamma_axes = {{1.0}, {1.0}, {1.0}};
    CHECK_THROWS_AS(run_sensitivity_grid(ens, x, spec), UsageError);
  }
  SUBCASE("leave-one-out variants") {
    spec.data_mode = DataVariantMode::LeaveOneOut;
    const auto r = run_sensitivity_grid(ens, x, spec);
    CHECK(r.cells.size() == (10 + 1) * 2);
  }
  SUBCASE("members in one group share their disagreement") {
    spec.gamma_axes = {{0.5, 2.0}};
    const auto r = run_sensitivity_grid(ens, x, spec);
    REQUIRE(r.cells.size() == 4);
    CHECK(r.cells[0].disagreement == r.cells[1].disagreement);
    const double expected =
        across_member_sd({r.cells[0].summary, r.cells[1].summary}).maxCoeff();
    CHECK(r.cells[0].disagreement == doctest::Approx(expected));
  }
  SUBCASE("deterministic and written as CSV") {
    spec.gamma_axes = {{0.5, 2.0}};
    std::ostringstream a, b;
    run_sensitivity_grid(ens, x, spec).write_csv(a);
    run_sensitivity_grid(ens, x, spec).write_csv(b);
    CHECK(a.str() == b.str());
    CHECK(a.str().rfind("cell,gamma_1,gamma_2,likelihood,data_variant,member,status", 0) == 0);
    const std::string text = a.str();
    const auto lines = std::count(text.begin(), text.end(), '\n');
    CHECK(lines == 5);
  }
  SUBCASE("wrong rule for the target") {
    spec.rule = DecisionRule::parse("argmax");
    CHECK_THROWS_AS(run_sensitivity_grid(ens, x, spec), UsageError);
  }
  SUBCASE("failed cells are recorded and the grid continues") {
    Eigen::MatrixXd bad = x;
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const auto r = run_sensitivity_grid(ens, bad, spec);
    CHECK(r.cells.size() == 2);
    CHECK(r.failed() == 2);
    CHECK_FALSE(r.cells[0].message.empty());
  }
}

TEST_CASE("model-comparison grid uses KL and argmax") {
  TaskConfig cfg = default_decision_task();
  cfg.n_trials = 10;
  const Task task(cfg);
  const auto ens = tiny_ensemble(task, 1);
  const Eigen::MatrixXd x = task.simulate(1, 4).data(0);
  GridSpec spec;
  spec.baseline = baseline_context(2);
  spec.rule = DecisionRule::parse("argmax");
  spec.gamma_axes = {parse_grid("0.1:10:3 log")};
  spec.seed = 1;
  const auto r = run_sensitivity_grid(ens, x, spec);
  CHECK(r.divergence_kind == "kl_baseline_cell");
  CHECK(r.cells.size() == 3);
  CHECK(r.cells[1].divergence == 0.0);
  CHECK(r.cells[0].summary.sum() == doctest::Approx(1.0));
  CHECK(r.cells[0].divergence_raw ==
        doctest::Approx(kl_categorical(r.cells[1].summary, r.cells[0].summary)).epsilon(1e-12));
  spec.kl_direction = KlDirection::CellToBaseline;
  const auto rev = run_sensitivity_grid(ens, x, spec);
  CHECK(rev.divergence_kind == "kl_cell_baseline");
  CHECK(rev.cells[0].divergence_raw ==
        doctest::Approx(kl_categorical(r.cells[0].summary, r.cells[1].summary)).epsilon(1e-12));
}
