#include "amortsens/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "amortsens/errors.hpp"

namespace amortsens {

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  const Eigen::VectorXd a2 = A.rowwise().squaredNorm();
  const Eigen::VectorXd b2 = B.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * A * B.transpose();
  d.colwise() += a2;
  d.rowwise() += b2.transpose();
  return d.cwiseMax(0.0);
}

void check_pair(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  if (X.cols() != Y.cols()) {
    throw UsageError("sample dimensions differ: " + std::to_string(X.cols()) + " vs " + std::to_string(Y.cols()));
  }
  if (X.rows() < 2 || Y.rows() < 2) throw UsageError("MMD needs at least two draws per sample");
}

double kernel_mean(const Eigen::MatrixXd& d2, double inv_two_bw2, bool skip_diagonal) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < d2.cols(); ++j) {
    for (Eigen::Index i = 0; i < d2.rows(); ++i) {
      if (skip_diagonal && i == j) continue;
      s += std::exp(-d2(i, j) * inv_two_bw2);
    }
  }
  const double count = skip_diagonal ? static_cast<double>(d2.rows()) * static_cast<double>(d2.rows() - 1)
                                     : static_cast<double>(d2.rows()) * static_cast<double>(d2.cols());
  return s / count;
}

double median_of(std::vector<double>& v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace

double median_pairwise_distance(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  Eigen::MatrixXd Z(X.rows() + Y.rows(), X.cols());
  Z << X, Y;
  if (Z.rows() < 2) throw UsageError("need at least two points for a median distance");
  const Eigen::MatrixXd d2 = squared_distances(Z, Z);
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(Z.rows() * (Z.rows() - 1) / 2));
  for (Eigen::Index j = 1; j < Z.rows(); ++j) {
    for (Eigen::Index i = 0; i < j; ++i) d.push_back(std::sqrt(d2(i, j)));
  }
  return median_of(d);
}

double mmd_squared_unbiased(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, std::optional<double> bandwidth) {
  check_pair(X, Y);
  const double bw = bandwidth ? *bandwidth : median_pairwise_distance(X, Y);
  if (!(bw > 0.0) || !std::isfinite(bw)) throw UsageError("MMD bandwidth must be positive and finite");
  const double c = 1.0 / (2.0 * bw * bw);
  return kernel_mean(squared_distances(X, X), c, true) + kernel_mean(squared_distances(Y, Y), c, true) -
         2.0 * kernel_mean(squared_distances(X, Y), c, false);
}

MmdTestResult mmd_hypothesis_test(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, std::size_t n_resamples,
                                  double type1_rate, Rng& rng, std::optional<double> bandwidth) {
  check_pair(X, Y);
  if (n_resamples < 100) throw UsageError("permutation test needs at least 100 resamples");
  if (!(type1_rate > 0.0 && type1_rate <= 1.0)) throw UsageError("type-1 rate must lie in (0, 1]");

  MmdTestResult r;
  r.bandwidth = bandwidth ? *bandwidth : median_pairwise_distance(X, Y);
  if (!(r.bandwidth > 0.0)) throw UsageError("MMD bandwidth must be positive");

  const Eigen::Index n = X.rows();
  const Eigen::Index m = Y.rows();
  const Eigen::Index N = n + m;
  Eigen::MatrixXd Z(N, X.cols());
  Z << X, Y;
  Eigen::MatrixXd K = squared_distances(Z, Z);
  K.diagonal().setZero();
  K = (-K / (2.0 * r.bandwidth * r.bandwidth)).array().exp().matrix();
  const Eigen::VectorXd c = K.rowwise().sum();
  const double total = c.sum();
  const double dn = static_cast<double>(n);
  const double dm = static_cast<double>(m);

  // With v the indicator of the first sample: sxx = v'Kv, sxy = v'c - sxx,
  // syy = T - 2 v'c + sxx. The kernel diagonal is 1.
  auto statistic = [&](double sxx, double vc) {
    const double sxy = vc - sxx;
    const double syy = total - 2.0 * vc + sxx;
    return (sxx - dn) / (dn * (dn - 1.0)) + (syy - dm) / (dm * (dm - 1.0)) - 2.0 * sxy / (dn * dm);
  };
  {
    const double sxx = K.topLeftCorner(n, n).sum();
    r.statistic = statistic(sxx, c.head(n).sum());
  }

  std::vector<double> null;
  null.reserve(n_resamples);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(N));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  const std::size_t chunk = 64;
  for (std::size_t done = 0; done < n_resamples; done += chunk) {
    const auto b = static_cast<Eigen::Index>(std::min(chunk, n_resamples - done));
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(N, b);
    for (Eigen::Index col = 0; col < b; ++col) {
      std::shuffle(idx.begin(), idx.end(), rng);
      for (Eigen::Index i = 0; i < n; ++i) V(idx[static_cast<std::size_t>(i)], col) = 1.0;
    }
    const Eigen::MatrixXd KV = K * V;
    const Eigen::RowVectorXd sxx = V.cwiseProduct(KV).colwise().sum();
    const Eigen::RowVectorXd vc = c.transpose() * V;
    for (Eigen::Index col = 0; col < b; ++col) null.push_back(statistic(sxx(col), vc(col)));
  }

  const double tol = 1e-12 * std::max(1.0, std::abs(r.statistic));
  const auto at_least = std::count_if(null.begin(), null.end(), [&](double v) { return v >= r.statistic - tol; });
  r.p_value = static_cast<double>(at_least) / static_cast<double>(null.size());
  std::sort(null.begin(), null.end());
  const double q = std::ceil((1.0 - type1_rate) * static_cast<double>(null.size()));
  const auto k = static_cast<std::size_t>(std::clamp(q - 1.0, 0.0, static_cast<double>(null.size() - 1)));
  r.critical_value = null[k];
  r.reject = r.p_value <= type1_rate;
  return r;
}

namespace {

void check_simplex(const Eigen::VectorXd& p, const char* name) {
  if (p.size() == 0) throw UsageError(std::string(name) + " is empty");
  if ((p.array() < 0.0).any() || !p.allFinite()) throw UsageError(std::string(name) + " has negative or non-finite entries");
  if (std::abs(p.sum() - 1.0) > 1e-6) throw UsageError(std::string(name) + " does not sum to one");
}

}  // namespace

double kl_categorical(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  if (p.size() != q.size()) throw UsageError("simplices differ in length");
  check_simplex(p, "p");
  check_simplex(q, "q");
  double kl = 0.0;
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    if (p(j) == 0.0) continue;
    if (q(j) == 0.0) return std::numeric_limits<double>::infinity();
    kl += p(j) * std::log(p(j) / q(j));
  }
  return kl;
}

Eigen::MatrixXd Projection::apply(const Eigen::MatrixXd& draws) const {
  if (scalar) {
    Eigen::MatrixXd out(draws.rows(), 1);
    for (Eigen::Index i = 0; i < draws.rows(); ++i) out(i, 0) = scalar(draws.row(i));
    return out;
  }
  if (columns.empty()) return draws;
  Eigen::MatrixXd out(draws.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j] >= static_cast<std::size_t>(draws.cols())) throw UsageError("projection column out of range");
    out.col(static_cast<Eigen::Index>(j)) = draws.col(static_cast<Eigen::Index>(columns[j]));
  }
  return out;
}

Projection Projection::parse(const std::string& text) {
  Projection p;
  if (text.empty() || text == "all") return p;
  p.label = text;
  auto to_index = [&](const std::string& s) {
    std::size_t used = 0;
    long v = -1;
    try {
      v = std::stol(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || v < 0) throw UsageError("bad projection '" + text + "'");
    return static_cast<std::size_t>(v);
  };
  if (text.rfind("ratio:", 0) == 0) {
    const auto body = text.substr(6);
    const auto slash = body.find('/');
    if (slash == std::string::npos) throw UsageError("ratio projection needs the form ratio:i/j");
    const auto a = static_cast<Eigen::Index>(to_index(body.substr(0, slash)));
    const auto b = static_cast<Eigen::Index>(to_index(body.substr(slash + 1)));
    p.scalar = [a, b](const Eigen::RowVectorXd& row) {
      if (a >= row.size() || b >= row.size()) throw UsageError("projection column out of range");
      return row(a) / row(b);
    };
    return p;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) p.columns.push_back(to_index(item));
  return p;
}

std::string DecisionRule::name() const {
  switch (kind) {
    case DecisionRuleKind::ArgmaxModel: return "argmax";
    case DecisionRuleKind::HdiContains: return "hdi";
    case DecisionRuleKind::MeanSign: return "mean_sign";
  }
  return "argmax";
}

DecisionRule DecisionRule::parse(const std::string& name) {
  DecisionRule r;
  if (name == "argmax") r.kind = DecisionRuleKind::ArgmaxModel;
  else if (name == "hdi") r.kind = DecisionRuleKind::HdiContains;
  else if (name == "mean_sign") r.kind = DecisionRuleKind::MeanSign;
  else throw UsageError("unknown decision rule '" + name + "' (argmax, hdi, mean_sign)");
  return r;
}

std::pair<double, double> hdi_interval(std::vector<double> values, double mass) {
  if (values.empty()) throw UsageError("HDI of an empty sample");
  if (!(mass > 0.0 && mass <= 1.0)) throw UsageError("HDI mass must lie in (0, 1]");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(mass * static_cast<double>(n))), 1, n);
  std::size_t best = 0;
  double width = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + k <= n; ++i) {
    const double w = values[i + k - 1] - values[i];
    if (w < width) {
      width = w;
      best = i;
    }
  }
  return {values[best], values[best + k - 1]};
}

int decide(const DecisionRule& rule, const Posterior& posterior) {
  if (rule.kind == DecisionRuleKind::ArgmaxModel) {
    if (!posterior.is_model()) throw UsageError("argmax rule needs a model posterior");
    Eigen::Index best = 0;
    posterior.probs.maxCoeff(&best);
    return static_cast<int>(best);
  }
  if (posterior.is_model()) throw UsageError("rule '" + rule.name() + "' needs parameter draws");
  if (posterior.draws.rows() == 0) throw UsageError("posterior has no draws");
  if (rule.dimension >= static_cast<std::size_t>(posterior.draws.cols())) {
    throw UsageError("decision dimension out of range");
  }
  const auto col = posterior.draws.col(static_cast<Eigen::Index>(rule.dimension));
  if (rule.kind == DecisionRuleKind::MeanSign) {
    const double mean = col.mean();
    return mean > 0.0 ? 1 : (mean < 0.0 ? -1 : 0);
  }
  const auto [lo, hi] = hdi_interval(std::vector<double>(col.begin(), col.end()), rule.hdi_mass);
  return (rule.theta0 >= lo && rule.theta0 <= hi) ? 1 : 0;
}

RobustnessResult qualitative_robustness(const Posterior& a, const Posterior& b, const DecisionRule& rule) {
  RobustnessResult r;
  r.decision_i = decide(rule, a);
  r.decision_j = decide(rule, b);
  r.indicator = r.decision_i == r.decision_j ? 1 : 0;
  return r;
}

std::vector<Eigen::MatrixXd> bootstrap_variants(const Eigen::MatrixXd& data, std::size_t n_variants, Rng& rng) {
  if (data.rows() < 2) throw UsageError("bootstrap needs at least two rows");
  std::uniform_int_distribution<Eigen::Index> pick(0, data.rows() - 1);
  std::vector<Eigen::MatrixXd> out;
  out.reserve(n_variants);
  for (std::size_t v = 0; v < n_variants; ++v) {
    Eigen::MatrixXd d(data.rows(), data.cols());
    for (Eigen::Index i = 0; i < data.rows(); ++i) d.row(i) = data.row(pick(rng));
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<Eigen::MatrixXd> loo_variants(const Eigen::MatrixXd& data) {
  if (data.rows() < 2) throw UsageError("leave-one-out needs at least two rows");
  std::vector<Eigen::MatrixXd> out;
  for (Eigen::Index k = 0; k < data.rows(); ++k) {
    Eigen::MatrixXd d(data.rows() - 1, data.cols());
    d.topRows(k) = data.topRows(k);
    d.bottomRows(data.rows() - 1 - k) = data.bottomRows(data.rows() - 1 - k);
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<double> parse_grid(const std::string& spec) {
  std::string body = spec;
  std::string mode = "lin";
  const auto space = spec.find_first_of(" \t");
  if (space != std::string::npos) {
    body = spec.substr(0, space);
    mode = spec.substr(spec.find_first_not_of(" \t", space));
    mode.erase(mode.find_last_not_of(" \t") + 1);
  }
  std::vector<std::string> parts;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.size() != 3) throw UsageError("grid spec must look like lo:hi:n [log|lin], got '" + spec + "'");
  double lo = 0.0, hi = 0.0;
  long n = 0;
  try {
    std::size_t u1 = 0, u2 = 0, u3 = 0;
    lo = std::stod(parts[0], &u1);
    hi = std::stod(parts[1], &u2);
    n = std::stol(parts[2], &u3);
    if (u1 != parts[0].size() || u2 != parts[1].size() || u3 != parts[2].size()) throw UsageError("");
  } catch (const std::exception&) {
    throw UsageError("grid spec has non-numeric fields: '" + spec + "'");
  }
  if (n < 1) throw UsageError("grid needs at least one point");
  if (lo > hi) throw UsageError("grid lower bound exceeds upper bound");
  if (mode != "log" && mode != "lin") throw UsageError("grid mode must be log or lin");
  if (mode == "log" && !(lo > 0.0)) throw UsageError("log grid needs positive bounds");
  if (n == 1 && lo != hi) throw UsageError("a one-point grid needs lo == hi");
  const double a = mode == "log" ? std::log(lo) : lo;
  const double b = mode == "log" ? std::log(hi) : hi;
  std::vector<double> out;
  for (long i = 0; i < n; ++i) {
    const double t = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    const double v = a + (b - a) * t;
    out.push_back(mode == "log" ? std::exp(v) : v);
  }
  if (mode == "log") {
    out.front() = lo;
    out.back() = hi;
  }
  return out;
}

std::size_t SensitivityReport::expected_cells() const {
  std::size_t n = 1;
  for (auto s : axis_sizes) n *= s;
  return n;
}

std::size_t SensitivityReport::failed() const {
  return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return !c.ok; }));
}

double SensitivityReport::robust_fraction() const {
  std::size_t ok = 0, same = 0;
  for (const auto& c : cells) {
    if (!c.ok) continue;
    ++ok;
    same += c.indicator == 1 ? 1 : 0;
  }
  return ok == 0 ? 0.0 : static_cast<double>(same) / static_cast<double>(ok);
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void SensitivityReport::write_csv(std::ostream& out) const {
  const std::size_t k = cells.empty() ? 0 : cells.front().gamma.size();
  out << "cell";
  for (std::size_t i = 0; i < k; ++i) out << ",gamma_" << i + 1;
  out << ",likelihood,data_variant,member,status,divergence_kind,divergence,divergence_raw,robust,decision,indicator,"
         "disagreement";
  for (const auto& n : summary_names) out << "," << n;
  out << ",message\n";
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& cell = cells[c];
    out << c;
    for (double g : cell.gamma) out << "," << num(g);
    out << "," << cell.likelihood << "," << cell.data_variant << "," << cell.member << ","
        << (cell.ok ? "ok" : "failed") << "," << divergence_kind << ",";
    if (cell.ok) {
      out << num(cell.divergence) << "," << num(cell.divergence_raw) << ","
          << (cell.robust ? (*cell.robust ? "1" : "0") : "") << "," << cell.decision << "," << cell.indicator << ","
          << num(cell.disagreement);
    } else {
      out << ",,,,,";
    }
    for (std::size_t j = 0; j < summary_names.size(); ++j) {
      out << ",";
      if (cell.ok && static_cast<Eigen::Index>(j) < cell.summary.size()) out << num(cell.summary(static_cast<Eigen::Index>(j)));
    }
    out << "," << csv_escape(cell.message) << "\n";
  }
}

namespace {

std::vector<std::vector<double>> gamma_points(const GridSpec& spec) {
  const std::size_t k = spec.baseline.gamma.size();
  if (spec.gamma_axes.empty()) return {spec.baseline.gamma};
  for (const auto& axis : spec.gamma_axes) {
    if (axis.empty()) throw UsageError("empty gamma axis");
    for (double g : axis) {
      if (!(g > 0.0) || !std::isfinite(g)) throw UsageError("gamma grid values must be positive");
    }
  }
  if (k == 0) throw UsageError("the model has no scalable prior components");
  std::vector<std::vector<double>> out;
  if (spec.gamma_axes.size() == 1) {
    for (double g : spec.gamma_axes.front()) out.emplace_back(k, g);
    return out;
  }
  if (spec.gamma_axes.size() != k) {
    throw UsageError("got " + std::to_string(spec.gamma_axes.size()) + " gamma axes for " + std::to_string(k) +
                     " scaling exponents; give one shared axis or one per exponent");
  }
  std::vector<std::size_t> at(k, 0);
  while (true) {
    std::vector<double> g(k);
    for (std::size_t i = 0; i < k; ++i) g[i] = spec.gamma_axes[i][at[i]];
    out.push_back(std::move(g));
    std::size_t i = k;
    while (i > 0) {
      --i;
      if (++at[i] < spec.gamma_axes[i].size()) break;
      at[i] = 0;
      if (i == 0) return out;
    }
  }
}

bool same_context(const ContextVector& a, const ContextVector& b) {
  if (a.likelihood_choice != b.likelihood_choice || a.gamma.size() != b.gamma.size()) return false;
  for (std::size_t i = 0; i < a.gamma.size(); ++i) {
    if (std::abs(std::log(a.gamma[i]) - std::log(b.gamma[i])) > 1e-12) return false;
  }
  return true;
}

}  // namespace

SensitivityReport run_sensitivity_grid(const Ensemble& ensemble, const Eigen::MatrixXd& x_obs, const GridSpec& spec,
                                       const std::vector<std::string>& parameter_names) {
  if (ensemble.members.empty()) throw UsageError("ensemble has no members");
  const auto& arch = ensemble.architecture();
  const bool models = arch.target == TargetKind::Models;
  if (models && spec.rule.kind != DecisionRuleKind::ArgmaxModel) {
    throw UsageError("model comparison supports only the argmax decision rule");
  }
  if (!models && spec.rule.kind == DecisionRuleKind::ArgmaxModel) {
    throw UsageError("argmax rule needs a model-comparison ensemble");
  }
  if (!models && spec.n_draws < 2) throw UsageError("need at least two posterior draws per cell");
  spec.baseline.validate();

  SensitivityReport report;
  report.target = arch.target;
  report.divergence_kind = models ? (spec.kl_direction == KlDirection::BaselineToCell ? "kl_baseline_cell" : "kl_cell_baseline")
                                  : "mmd2";
  report.decision_rule = spec.rule.name();
  if (models) {
    for (int j = 0; j < arch.n_models; ++j) report.summary_names.push_back("p_model_" + std::to_string(j));
  } else {
    for (std::size_t d = 0; d < arch.theta_dim; ++d) {
      report.summary_names.push_back("mean_" + (d < parameter_names.size() ? parameter_names[d] : "theta_" + std::to_string(d)));
    }
  }

  const auto gammas = gamma_points(spec);
  std::vector<int> likelihoods = spec.likelihood_choices;
  if (likelihoods.empty()) likelihoods.push_back(spec.baseline.likelihood_choice);

  std::vector<Eigen::MatrixXd> variants{x_obs};
  if (spec.data_mode == DataVariantMode::Bootstrap) {
    if (spec.bootstrap < 1) throw UsageError("bootstrap mode needs at least one variant");
    Rng rng = derive_stream(spec.seed, 0, 0xb0075);
    for (auto& v : bootstrap_variants(x_obs, spec.bootstrap - 1, rng)) variants.push_back(std::move(v));
  } else if (spec.data_mode == DataVariantMode::LeaveOneOut) {
    for (auto& v : loo_variants(x_obs)) variants.push_back(std::move(v));
  }

  const std::size_t M = ensemble.size();
  report.axis_sizes = {gammas.size(), likelihoods.size(), variants.size(), M};

  // Summary networks see only the data, so each (variant, member) is summarized once.
  std::vector<std::vector<Eigen::VectorXd>> summaries(variants.size(), std::vector<Eigen::VectorXd>(M));
  std::vector<std::vector<std::string>> summary_errors(variants.size(), std::vector<std::string>(M));
  for (std::size_t v = 0; v < variants.size(); ++v) {
    for (std::size_t m = 0; m < M; ++m) {
      try {
        summaries[v][m] = ensemble.members[m].model.summary(variants[v]);
      } catch (const std::exception& e) {
        summary_errors[v][m] = e.what();
      }
    }
  }

  auto infer = [&](std::size_t v, std::size_t m, const ContextVector& ctx, Rng& rng) {
    if (!summary_errors[v][m].empty()) throw NumericError(summary_errors[v][m]);
    Posterior p;
    const auto& model = ensemble.members[m].model;
    if (models) {
      p.probs = model.probs_from_summary(summaries[v][m], ctx);
    } else {
      p.draws = model.sample_from_summary(summaries[v][m], ctx, spec.n_draws, rng);
    }
    return p;
  };

  // A member whose baseline posterior fails has no reference, so all its cells fail.
  std::vector<Posterior> baseline(M);
  std::vector<Eigen::MatrixXd> baseline_projected(M);
  std::vector<std::string> baseline_errors(M);
  report.baseline_decisions.assign(M, 0);
  for (std::size_t m = 0; m < M; ++m) {
    try {
      Rng rng = derive_stream(spec.seed, m, 0xba5e);
      baseline[m] = infer(0, m, spec.baseline, rng);
      if (!models) baseline_projected[m] = spec.projection.apply(baseline[m].draws);
      report.baseline_decisions[m] = decide(spec.rule, models ? baseline[m] : Posterior{baseline_projected[m], {}});
    } catch (const std::exception& e) {
      baseline_errors[m] = std::string("baseline posterior failed: ") + e.what();
    }
  }

  report.cells.reserve(report.expected_cells());
  std::size_t group = 0;
  for (const auto& g : gammas) {
    for (int lik : likelihoods) {
      for (std::size_t v = 0; v < variants.size(); ++v, ++group) {
        ContextVector ctx{g, lik, spec.baseline.likelihood_cardinality};
        const bool at_baseline = v == 0 && same_context(ctx, spec.baseline);
        const std::size_t first = report.cells.size();
        for (std::size_t m = 0; m < M; ++m) {
          SensitivityCell cell;
          cell.gamma = g;
          cell.likelihood = lik;
          cell.data_variant = v;
          cell.member = m;
          try {
            if (!baseline_errors[m].empty()) throw NumericError(baseline_errors[m]);
            Posterior post;
            if (at_baseline) {
              post = baseline[m];
            } else {
              Rng rng = derive_stream(spec.seed, group + 1, m);
              post = infer(v, m, ctx, rng);
            }
            if (models) {
              cell.summary = post.probs;
              if (!at_baseline) {
                cell.divergence_raw = spec.kl_direction == KlDirection::BaselineToCell
                                          ? kl_categorical(baseline[m].probs, post.probs)
                                          : kl_categorical(post.probs, baseline[m].probs);
              }
              cell.decision = decide(spec.rule, post);
            } else {
              cell.summary = post.draws.colwise().mean().transpose();
              const Eigen::MatrixXd projected = spec.projection.apply(post.draws);
              if (!at_baseline) cell.divergence_raw = mmd_squared_unbiased(baseline_projected[m], projected);
              cell.decision = decide(spec.rule, Posterior{projected, {}});
            }
            if (!std::isfinite(cell.divergence_raw) && !std::isinf(cell.divergence_raw)) {
              throw NumericError("non-finite divergence");
            }
            cell.divergence = std::max(0.0, cell.divergence_raw);
            if (spec.threshold) cell.robust = cell.divergence < *spec.threshold;
            cell.indicator = cell.decision == report.baseline_decisions[m] ? 1 : 0;
          } catch (const std::exception& e) {
            cell.ok = false;
            cell.message = e.what();
          }
          report.cells.push_back(std::move(cell));
        }
        std::vector<Eigen::VectorXd> outputs;
        for (std::size_t c = first; c < report.cells.size(); ++c) {
          if (report.cells[c].ok) outputs.push_back(report.cells[c].summary);
        }
        const double dis = outputs.empty() ? std::numeric_limits<double>::quiet_NaN()
                                           : across_member_sd(outputs).maxCoeff();
        for (std::size_t c = first; c < report.cells.size(); ++c) report.cells[c].disagreement = dis;
      }
    }
  }
  return report;
}

}  // namespace amortsens
