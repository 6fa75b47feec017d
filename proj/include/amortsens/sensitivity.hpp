#pragma once

// Divergences between posteriors obtained under different contexts, decision
// rules for qualitative robustness, data perturbations, and the grid runner
// that evaluates an ensemble over all context/data/member combinations.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "amortsens/ensemble.hpp"

namespace amortsens {

/// Median Euclidean distance over distinct pairs of rows of X and Y pooled.
double median_pairwise_distance(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y);

/// Unbiased squared MMD with a Gaussian kernel; median heuristic when no
/// bandwidth is given.
double mmd_squared_unbiased(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                            std::optional<double> bandwidth = std::nullopt);

struct MmdTestResult {
  double statistic = 0.0;
  double critical_value = 0.0;
  double p_value = 1.0;
  bool reject = false;
  double bandwidth = 0.0;
};

/// Permutation test of equal distributions. p is the fraction of null draws at
/// or above the statistic; the test rejects when p <= type1_rate.
MmdTestResult mmd_hypothesis_test(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, std::size_t n_resamples,
                                  double type1_rate, Rng& rng, std::optional<double> bandwidth = std::nullopt);

/// sum_j p_j log(p_j / q_j); +inf when q_j = 0 < p_j.
double kl_categorical(const Eigen::VectorXd& p, const Eigen::VectorXd& q);

enum class KlDirection { BaselineToCell, CellToBaseline };

/// Pushforward applied to draws before comparing them: a column subset, or a
/// scalar function of each draw.
struct Projection {
  std::vector<std::size_t> columns;  // empty keeps every column
  std::function<double(const Eigen::RowVectorXd&)> scalar;
  std::string label = "all";

  Eigen::MatrixXd apply(const Eigen::MatrixXd& draws) const;
  /// "all", "0,2" (columns) or "ratio:0/1" (draw[0] / draw[1]).
  static Projection parse(const std::string& text);
};

enum class DecisionRuleKind { ArgmaxModel, HdiContains, MeanSign };

struct DecisionRule {
  DecisionRuleKind kind = DecisionRuleKind::ArgmaxModel;
  double theta0 = 0.0;
  double hdi_mass = 0.95;
  std::size_t dimension = 0;  // column of the projected draws

  std::string name() const;
  /// "argmax", "hdi" or "mean_sign".
  static DecisionRule parse(const std::string& name);
};

/// One approximate posterior: draws (parameters) or a simplex (models).
struct Posterior {
  Eigen::MatrixXd draws;
  Eigen::VectorXd probs;
  bool is_model() const { return probs.size() > 0; }
};

/// Shortest interval holding `mass` of the sorted sample.
std::pair<double, double> hdi_interval(std::vector<double> values, double mass);

/// Action chosen by the rule. argmax: model index; hdi: 1 if theta0 lies in
/// the interval; mean_sign: -1, 0 or 1.
int decide(const DecisionRule& rule, const Posterior& posterior);

struct RobustnessResult {
  int decision_i = 0;
  int decision_j = 0;
  int indicator = 1;
};

RobustnessResult qualitative_robustness(const Posterior& a, const Posterior& b, const DecisionRule& rule);

/// n_variants resamples with replacement of the rows of data.
std::vector<Eigen::MatrixXd> bootstrap_variants(const Eigen::MatrixXd& data, std::size_t n_variants, Rng& rng);
/// One dataset per row, each with that row left out.
std::vector<Eigen::MatrixXd> loo_variants(const Eigen::MatrixXd& data);

/// Parses "lo:hi:n log|lin" into n grid points.
std::vector<double> parse_grid(const std::string& spec);

enum class DataVariantMode { Original, Bootstrap, LeaveOneOut };

struct GridSpec {
  /// One axis shared by every scaling exponent, or one axis per exponent.
  /// Empty means the baseline exponents only.
  std::vector<std::vector<double>> gamma_axes;
  std::vector<int> likelihood_choices;  // empty means the baseline likelihood
  DataVariantMode data_mode = DataVariantMode::Original;
  /// Number of data variants in bootstrap mode, the original data included.
  std::size_t bootstrap = 0;
  ContextVector baseline;
  DecisionRule rule;
  Projection projection;
  std::size_t n_draws = 500;
  std::optional<double> threshold;
  KlDirection kl_direction = KlDirection::BaselineToCell;
  std::uint64_t seed = 0;
};

struct SensitivityCell {
  std::vector<double> gamma;
  int likelihood = 0;
  std::size_t data_variant = 0;
  std::size_t member = 0;
  bool ok = true;
  std::string message;
  Eigen::VectorXd summary;  // posterior means or model probabilities
  double divergence_raw = 0.0;
  double divergence = 0.0;  // clamped at zero
  std::optional<bool> robust;
  int decision = 0;
  int indicator = 1;
  double disagreement = 0.0;  // across members, for this cell's context/data group
};

struct SensitivityReport {
  TargetKind target = TargetKind::Parameters;
  std::vector<std::string> summary_names;
  std::vector<std::size_t> axis_sizes;  // gamma points, likelihoods, data variants, members
  std::vector<SensitivityCell> cells;
  std::vector<int> baseline_decisions;  // per member
  std::string divergence_kind;
  std::string decision_rule;

  std::size_t expected_cells() const;
  std::size_t failed() const;
  double robust_fraction() const;
  void write_csv(std::ostream& out) const;
};

SensitivityReport run_sensitivity_grid(const Ensemble& ensemble, const Eigen::MatrixXd& x_obs, const GridSpec& spec,
                                       const std::vector<std::string>& parameter_names = {});

}  // namespace amortsens
