#include "amortsens/nnet.hpp"

#include <cmath>
#include <numbers>

#include "amortsens/errors.hpp"

namespace amortsens {

using ad::Var;

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

Dense make_dense(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                 bool zero = false) {
  Dense d;
  d.weight = store.add(name + ".w", in, out);
  d.bias = store.add(name + ".b", 1, out);
  if (!zero) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> unif(-limit, limit);
    auto& w = store[d.weight].value;
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = unif(rng);
    }
  }
  return d;
}

Mlp make_mlp(ParameterStore& store, const std::string& name, Eigen::Index in, Eigen::Index hidden, int n_hidden,
             Eigen::Index out, Rng& rng, bool zero_output) {
  Mlp m;
  Eigen::Index width = in;
  for (int l = 0; l < n_hidden; ++l) {
    m.layers.push_back(make_dense(store, name + "." + std::to_string(l), width, hidden, rng));
    width = hidden;
  }
  m.layers.push_back(make_dense(store, name + ".out", width, out, rng, zero_output));
  return m;
}

Var activate(ad::Tape& t, Var x, Activation a) {
  switch (a) {
    case Activation::Silu: return ad::silu(t, x);
    case Activation::Tanh: return ad::tanh(t, x);
    case Activation::None: return x;
  }
  return x;
}

void check_finite(const ad::Tape& t, Var v, const std::string& where) {
  if (!t.value(v).allFinite()) throw NumericError("non-finite activations in " + where);
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string_view summary_kind_name(SummaryKind kind) {
  return kind == SummaryKind::DeepSet ? "deepset" : "recurrent";
}

SummaryKind parse_summary_kind(std::string_view name) {
  if (name == "deepset") return SummaryKind::DeepSet;
  if (name == "recurrent") return SummaryKind::Recurrent;
  throw UsageError("unknown summary network '" + std::string(name) + "'");
}

std::string_view feature_map_name(FeatureMap map) {
  switch (map) {
    case FeatureMap::Identity: return "identity";
    case FeatureMap::Log1p: return "log1p";
    case FeatureMap::SignedTime: return "signed_time";
  }
  return "identity";
}

FeatureMap parse_feature_map(std::string_view name) {
  for (auto m : {FeatureMap::Identity, FeatureMap::Log1p, FeatureMap::SignedTime}) {
    if (feature_map_name(m) == name) return m;
  }
  throw UsageError("unknown feature map '" + std::string(name) + "'");
}

std::size_t Architecture::feature_dim() const {
  return feature_map == FeatureMap::SignedTime ? 3 * obs_dim : obs_dim;
}

void Architecture::validate() const {
  if (obs_dim < 1) throw UsageError("architecture needs obs_dim >= 1");
  if (summary_hidden < 1 || summary_dim < 1) throw UsageError("summary sizes must be positive");
  if (target == TargetKind::Parameters) {
    if (theta_dim < 1) throw UsageError("architecture needs theta_dim >= 1");
    if (flow_blocks < 1 || flow_hidden < 1 || flow_layers < 0) throw UsageError("invalid flow sizes");
    if (!(clamp > 0.0)) throw UsageError("clamp bound must be positive");
    if (!theta_scales.empty() && theta_scales.size() != theta_dim) {
      throw UsageError("theta_scales must match theta_dim");
    }
  } else {
    if (n_models < 2) throw UsageError("classifier needs at least two models");
    if (classifier_hidden < 1 || classifier_layers < 0) throw UsageError("invalid classifier sizes");
  }
}

Architecture default_architecture(const Task& task) {
  const auto layout = task.layout();
  Architecture a;
  a.target = layout.target;
  a.theta_dim = layout.theta_dim;
  a.n_models = layout.n_models;
  a.obs_dim = layout.obs_dim;
  a.context_dim = layout.context_dim();
  a.feature_map = task.feature_map();
  a.theta_scales = task.theta_scales();
  if (task.kind() == TaskKind::Sir) {
    a.summary = SummaryKind::Recurrent;
    a.summary_hidden = 32;
    a.summary_dim = 16;
  }
  return a;
}

std::size_t ParameterStore::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  params_.push_back({std::move(name), Eigen::MatrixXd::Zero(rows, cols), Eigen::MatrixXd::Zero(rows, cols)});
  return params_.size() - 1;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
}

Scope::Scope(ad::Tape& tape, const ParameterStore& params, ParameterStore* trainable)
    : tape_(tape), params_(params), trainable_(trainable), bound_(params.size()) {}

Var Scope::param(std::size_t index) {
  auto& slot = bound_.at(index);
  if (!slot) {
    slot = (trainable_ != nullptr && tape_.recording()) ? tape_.parameter((*trainable_)[index])
                                                        : tape_.constant(params_[index].value);
  }
  return *slot;
}

Var Dense::forward(Scope& s, Var x) const {
  auto& t = s.tape();
  return ad::add_row(t, ad::matmul(t, x, s.param(weight)), s.param(bias));
}

Var Mlp::forward(Scope& s, Var x) const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    x = layers[l].forward(s, x);
    if (l + 1 < layers.size() || activate_output) x = activate(s.tape(), x, hidden);
  }
  return x;
}

Approximator::Approximator(Architecture arch, std::uint64_t init_seed) : arch_(std::move(arch)) {
  arch_.validate();
  Rng rng(init_seed);
  const auto f = static_cast<Eigen::Index>(arch_.feature_dim());
  const Eigen::Index h = arch_.summary_hidden;
  const Eigen::Index sdim = arch_.summary_dim;

  if (arch_.summary == SummaryKind::DeepSet) {
    set_inner_ = make_mlp(params_, "set.inner", f, h, 1, h, rng, false);
    set_inner_.activate_output = true;
    set_outer_ = make_mlp(params_, "set.outer", h, h, 1, sdim, rng, false);
  } else {
    auto input = [&](const char* n) { return make_dense(params_, std::string("gru.") + n, f, h, rng); };
    auto recur = [&](const char* n) { return make_dense(params_, std::string("gru.") + n, h, h, rng); };
    // The input transform carries the gate bias; the recurrent one's bias is dropped.
    Dense z = input("z"), r = input("r"), n = input("n");
    Dense uz = recur("uz"), ur = recur("ur"), un = recur("un");
    gru_.wz = z.weight; gru_.bz = z.bias; gru_.uz = uz.weight;
    gru_.wr = r.weight; gru_.br = r.bias; gru_.ur = ur.weight;
    gru_.wn = n.weight; gru_.bn = n.bias; gru_.un = un.weight;
    gru_.head = make_dense(params_, "gru.head", h, sdim, rng);
  }

  const auto cond_dim = static_cast<Eigen::Index>(sdim + static_cast<Eigen::Index>(arch_.context_dim));
  if (arch_.target == TargetKind::Parameters) {
    const int dim = static_cast<int>(arch_.theta_dim);
    for (int k = 0; k < arch_.flow_blocks; ++k) {
      CouplingBlock b;
      for (int i = 0; i < dim; ++i) {
        const bool is_active = dim == 1 || (i % 2) == (k % 2);
        (is_active ? b.active : b.passive).push_back(i);
      }
      const auto in = static_cast<Eigen::Index>(b.passive.size()) + cond_dim;
      const auto out = static_cast<Eigen::Index>(2 * b.active.size());
      b.subnet = make_mlp(params_, "flow." + std::to_string(k), in, arch_.flow_hidden, arch_.flow_layers, out,
                          rng, true);
      blocks_.push_back(std::move(b));
    }
  } else {
    classifier_ = make_mlp(params_, "classifier", cond_dim, arch_.classifier_hidden, arch_.classifier_layers,
                           arch_.n_models, rng, false);
  }
}

void Approximator::set_standardizers(Standardizer features, Standardizer theta) {
  if (features.mean.size() != 0 && static_cast<std::size_t>(features.mean.size()) != arch_.feature_dim()) {
    throw UsageError("feature standardizer has the wrong size");
  }
  if (theta.mean.size() != 0 && static_cast<std::size_t>(theta.mean.size()) != arch_.theta_dim) {
    throw UsageError("theta standardizer has the wrong size");
  }
  features_ = std::move(features);
  theta_ = std::move(theta);
}

namespace {

Eigen::MatrixXd apply_feature_map(FeatureMap map, const Eigen::MatrixXd& raw) {
  switch (map) {
    case FeatureMap::Identity: return raw;
    case FeatureMap::Log1p: return raw.array().max(0.0).log1p().matrix();
    case FeatureMap::SignedTime: {
      Eigen::MatrixXd out(raw.rows(), 3 * raw.cols());
      for (Eigen::Index j = 0; j < raw.cols(); ++j) {
        out.col(3 * j) = raw.col(j);
        out.col(3 * j + 1) = raw.col(j).cwiseAbs();
        out.col(3 * j + 2) = raw.col(j).unaryExpr([](double v) { return v < 0.0 ? -1.0 : 1.0; });
      }
      return out;
    }
  }
  return raw;
}

Standardizer fit(const Eigen::MatrixXd& values) {
  Standardizer s;
  s.mean = values.colwise().mean().transpose();
  s.sd.resize(values.cols());
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    const double var = (values.col(j).array() - s.mean(j)).square().mean();
    s.sd(j) = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return s;
}

}  // namespace

void Approximator::fit_standardizers(const SimulationBatch& data) {
  if (data.empty()) throw UsageError("cannot fit standardizers on an empty dataset");
  const auto& l = data.layout();
  Eigen::MatrixXd feats(static_cast<Eigen::Index>(data.rows() * l.obs_rows),
                        static_cast<Eigen::Index>(arch_.feature_dim()));
  for (std::size_t i = 0; i < data.rows(); ++i) {
    feats.middleRows(static_cast<Eigen::Index>(i * l.obs_rows), static_cast<Eigen::Index>(l.obs_rows)) =
        apply_feature_map(arch_.feature_map, data.data(i));
  }
  features_ = fit(feats);
  if (arch_.target == TargetKind::Parameters) {
    theta_ = Standardizer{};
    Eigen::MatrixXd thetas(static_cast<Eigen::Index>(data.rows()), static_cast<Eigen::Index>(arch_.theta_dim));
    for (std::size_t i = 0; i < data.rows(); ++i) thetas.row(static_cast<Eigen::Index>(i)) = data.theta(i).transpose();
    theta_ = fit(to_latent_space(thetas));
  }
}

Eigen::MatrixXd Approximator::features(const Eigen::MatrixXd& raw) const {
  if (static_cast<std::size_t>(raw.cols()) != arch_.obs_dim) {
    throw UsageError("observation has " + std::to_string(raw.cols()) + " columns, network expects " +
                     std::to_string(arch_.obs_dim));
  }
  if (raw.rows() == 0) throw UsageError("cannot summarize an empty dataset");
  Eigen::MatrixXd f = apply_feature_map(arch_.feature_map, raw);
  if (features_.mean.size() > 0) {
    f = ((f.rowwise() - features_.mean.transpose()).array().rowwise() / features_.sd.transpose().array()).matrix();
  }
  return f;
}

Eigen::MatrixXd Approximator::to_latent_space(const Eigen::MatrixXd& theta, Eigen::VectorXd* log_jacobian) const {
  if (static_cast<std::size_t>(theta.cols()) != arch_.theta_dim) throw UsageError("theta has the wrong dimension");
  Eigen::MatrixXd u = theta;
  Eigen::VectorXd lj = Eigen::VectorXd::Zero(theta.rows());
  for (Eigen::Index d = 0; d < theta.cols(); ++d) {
    const bool log_scale = !arch_.theta_scales.empty() && arch_.theta_scales[static_cast<std::size_t>(d)] == ThetaScale::Log;
    if (log_scale) {
      lj -= theta.col(d).array().log().matrix();
      u.col(d) = theta.col(d).array().log().matrix();
    }
    if (theta_.mean.size() > 0) {
      u.col(d) = ((u.col(d).array() - theta_.mean(d)) / theta_.sd(d)).matrix();
      lj.array() -= std::log(theta_.sd(d));
    }
  }
  if (log_jacobian != nullptr) *log_jacobian = lj;
  return u;
}

Eigen::MatrixXd Approximator::from_latent_space(const Eigen::MatrixXd& u) const {
  Eigen::MatrixXd theta = u;
  for (Eigen::Index d = 0; d < u.cols(); ++d) {
    if (theta_.mean.size() > 0) theta.col(d) = (u.col(d).array() * theta_.sd(d) + theta_.mean(d)).matrix();
    const bool log_scale = !arch_.theta_scales.empty() && arch_.theta_scales[static_cast<std::size_t>(d)] == ThetaScale::Log;
    if (log_scale) theta.col(d) = theta.col(d).array().exp().matrix();
  }
  return theta;
}

Var Approximator::summarize(Scope& s, const std::vector<Eigen::MatrixXd>& sets) const {
  auto& t = s.tape();
  if (sets.empty()) throw UsageError("summarize needs at least one dataset");
  const Eigen::Index n = sets.front().rows();
  const Eigen::Index f = sets.front().cols();
  if (n == 0) throw UsageError("cannot summarize an empty dataset");
  for (const auto& m : sets) {
    if (m.rows() != n || m.cols() != f) throw UsageError("datasets in one batch must share their shape");
  }
  if (static_cast<std::size_t>(f) != arch_.feature_dim()) throw UsageError("feature dimension mismatch");
  const auto b = static_cast<Eigen::Index>(sets.size());

  if (arch_.summary == SummaryKind::DeepSet) {
    Eigen::MatrixXd stacked(b * n, f);
    for (Eigen::Index i = 0; i < b; ++i) stacked.middleRows(i * n, n) = sets[static_cast<std::size_t>(i)];
    Var h = set_inner_.forward(s, t.constant(std::move(stacked)));
    Var pooled = ad::segment_mean(t, h, static_cast<int>(n));
    return set_outer_.forward(s, pooled);
  }

  Var h = t.constant(Eigen::MatrixXd::Zero(b, arch_.summary_hidden));
  for (Eigen::Index step = 0; step < n; ++step) {
    Eigen::MatrixXd xt(b, f);
    for (Eigen::Index i = 0; i < b; ++i) xt.row(i) = sets[static_cast<std::size_t>(i)].row(step);
    Var x = t.constant(std::move(xt));
    auto gate = [&](std::size_t w, std::size_t u, std::size_t bias, Var state) {
      return ad::add(t, ad::add_row(t, ad::matmul(t, x, s.param(w)), s.param(bias)),
                     ad::matmul(t, state, s.param(u)));
    };
    Var z = ad::sigmoid(t, gate(gru_.wz, gru_.uz, gru_.bz, h));
    Var r = ad::sigmoid(t, gate(gru_.wr, gru_.ur, gru_.br, h));
    Var cand = ad::tanh(t, gate(gru_.wn, gru_.un, gru_.bn, ad::mul(t, r, h)));
    h = ad::add(t, cand, ad::mul(t, z, ad::sub(t, h, cand)));
  }
  return gru_.head.forward(s, h);
}

Var Approximator::condition(Scope& s, Var summary, const Eigen::MatrixXd& contexts) const {
  auto& t = s.tape();
  if (static_cast<std::size_t>(contexts.cols()) != arch_.context_dim) throw UsageError("context dimension mismatch");
  if (contexts.cols() == 0) return summary;
  return ad::concat_cols(t, summary, t.constant(contexts));
}

FlowOutput Approximator::flow_forward(Scope& s, Var u, Var cond) const {
  if (arch_.target != TargetKind::Parameters) throw UsageError("approximator has no flow");
  auto& t = s.tape();
  const int dim = static_cast<int>(arch_.theta_dim);
  Var x = u;
  Var log_det = t.constant(Eigen::MatrixXd::Zero(t.value(u).rows(), 1));
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const auto& b = blocks_[k];
    const int q = static_cast<int>(b.active.size());
    Var xp = ad::select_cols(t, x, b.passive);
    Var st = b.subnet.forward(s, ad::concat_cols(t, xp, cond));
    Var sc = ad::soft_clamp(t, ad::slice_cols(t, st, 0, q), arch_.clamp);
    Var sh = ad::slice_cols(t, st, q, q);
    Var ya = ad::add(t, ad::mul(t, ad::select_cols(t, x, b.active), ad::exp(t, sc)), sh);
    x = ad::merge_cols(t, xp, b.passive, ya, b.active, dim);
    log_det = ad::add(t, log_det, ad::row_sum(t, sc));
    check_finite(t, x, "coupling block " + std::to_string(k));
  }
  return {x, log_det};
}

Var Approximator::flow_inverse(Scope& s, Var z, Var cond) const {
  if (arch_.target != TargetKind::Parameters) throw UsageError("approximator has no flow");
  auto& t = s.tape();
  const int dim = static_cast<int>(arch_.theta_dim);
  Var x = z;
  for (std::size_t k = blocks_.size(); k-- > 0;) {
    const auto& b = blocks_[k];
    const int q = static_cast<int>(b.active.size());
    Var xp = ad::select_cols(t, x, b.passive);
    Var st = b.subnet.forward(s, ad::concat_cols(t, xp, cond));
    Var sc = ad::soft_clamp(t, ad::slice_cols(t, st, 0, q), arch_.clamp);
    Var sh = ad::slice_cols(t, st, q, q);
    Var xa = ad::mul(t, ad::sub(t, ad::select_cols(t, x, b.active), sh), ad::exp(t, ad::scale(t, sc, -1.0)));
    x = ad::merge_cols(t, xp, b.passive, xa, b.active, dim);
    check_finite(t, x, "coupling block " + std::to_string(k));
  }
  return x;
}

Var Approximator::logits(Scope& s, Var cond) const {
  if (arch_.target != TargetKind::Models) throw UsageError("approximator has no classifier");
  return classifier_.forward(s, cond);
}

Approximator::Prepared Approximator::Prepared::subset(const std::vector<std::size_t>& rows) const {
  Prepared out;
  out.features.reserve(rows.size());
  out.contexts.resize(static_cast<Eigen::Index>(rows.size()), contexts.cols());
  if (latent.size() > 0) {
    out.latent.resize(static_cast<Eigen::Index>(rows.size()), latent.cols());
    out.log_jacobian.resize(static_cast<Eigen::Index>(rows.size()));
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    const auto ii = static_cast<Eigen::Index>(i);
    const auto rr = static_cast<Eigen::Index>(r);
    out.features.push_back(features.at(r));
    out.contexts.row(ii) = contexts.row(rr);
    if (latent.size() > 0) {
      out.latent.row(ii) = latent.row(rr);
      out.log_jacobian(ii) = log_jacobian(rr);
    }
    if (!labels.empty()) out.labels.push_back(labels[r]);
  }
  return out;
}

Approximator::Prepared Approximator::prepare(const SimulationBatch& batch,
                                             const std::vector<std::size_t>& rows) const {
  const auto& l = batch.layout();
  if (l.target != arch_.target || l.obs_dim != arch_.obs_dim || l.context_dim() != arch_.context_dim ||
      (l.target == TargetKind::Parameters && l.theta_dim != arch_.theta_dim) ||
      (l.target == TargetKind::Models && l.n_models != arch_.n_models)) {
    throw UsageError("dataset layout does not match the network architecture");
  }
  Prepared p;
  p.contexts.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(arch_.context_dim));
  Eigen::MatrixXd thetas;
  if (l.target == TargetKind::Parameters) {
    thetas.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(arch_.theta_dim));
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    p.features.push_back(features(batch.data(rows[i])));
    p.contexts.row(ii) = to_vector(encode_context(batch.context(rows[i]))).transpose();
    if (l.target == TargetKind::Parameters) {
      thetas.row(ii) = batch.theta(rows[i]).transpose();
    } else {
      p.labels.push_back(batch.label(rows[i]));
    }
  }
  if (l.target == TargetKind::Parameters) p.latent = to_latent_space(thetas, &p.log_jacobian);
  return p;
}

Approximator::Prepared Approximator::prepare(const SimulationBatch& batch) const {
  std::vector<std::size_t> rows(batch.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return prepare(batch, rows);
}

Var Approximator::npe_loss(Scope& s, const Prepared& rows) const {
  auto& t = s.tape();
  if (rows.size() == 0) throw UsageError("empty batch");
  if (!rows.latent.allFinite()) {
    for (Eigen::Index i = 0; i < rows.latent.rows(); ++i) {
      if (!rows.latent.row(i).allFinite()) throw NumericError("non-finite target at row " + std::to_string(i));
    }
  }
  Var cond = condition(s, summarize(s, rows.features), rows.contexts);
  auto [z, log_det] = flow_forward(s, t.constant(rows.latent), cond);
  const double d = static_cast<double>(arch_.theta_dim);
  // Per row: 0.5 |z|^2 + (D/2) log 2 pi - log_det - log|du/dtheta|
  Var nll = ad::sub(t, ad::scale(t, ad::row_sum(t, ad::square(t, z)), 0.5), log_det);
  const auto& values = t.value(nll);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    if (!std::isfinite(values(i, 0))) throw NumericError("non-finite loss at row " + std::to_string(i));
  }
  return ad::add_scalar(t, ad::mean(t, nll), d * kLogSqrt2Pi - rows.log_jacobian.mean());
}

Var Approximator::bmc_loss(Scope& s, const Prepared& rows) const {
  auto& t = s.tape();
  if (rows.size() == 0) throw UsageError("empty batch");
  Var cond = condition(s, summarize(s, rows.features), rows.contexts);
  Var out = ad::softmax_cross_entropy(t, logits(s, cond), rows.labels);
  if (!std::isfinite(t.value(out)(0, 0))) {
    const auto& l = t.value(logits(s, cond));
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      if (!l.row(i).allFinite()) throw NumericError("non-finite loss at row " + std::to_string(i));
    }
    throw NumericError("non-finite classification loss");
  }
  return out;
}

Var Approximator::loss(Scope& s, const Prepared& rows) const {
  return arch_.target == TargetKind::Parameters ? npe_loss(s, rows) : bmc_loss(s, rows);
}

void Approximator::check_context(const ContextVector& ctx) const {
  ctx.validate();
  if (ctx.encoded_size() != arch_.context_dim) {
    throw UsageError("context encodes to " + std::to_string(ctx.encoded_size()) + " values, network expects " +
                     std::to_string(arch_.context_dim));
  }
}

Eigen::VectorXd Approximator::summary(const Eigen::MatrixXd& raw) const {
  ad::Tape tape(false);
  Scope s(tape, params_);
  return tape.value(summarize(s, {features(raw)})).row(0).transpose();
}

Eigen::MatrixXd Approximator::flow_condition(const Eigen::VectorXd& summary, const ContextVector& ctx,
                                             std::size_t rows) const {
  check_context(ctx);
  if (summary.size() != arch_.summary_dim) throw UsageError("summary has the wrong dimension");
  const auto enc = encode_context(ctx);
  Eigen::RowVectorXd c(summary.size() + static_cast<Eigen::Index>(enc.size()));
  c << summary.transpose(), to_vector(enc).transpose();
  return c.replicate(static_cast<Eigen::Index>(rows), 1);
}

Eigen::MatrixXd Approximator::sample_from_summary(const Eigen::VectorXd& summary, const ContextVector& ctx,
                                                  std::size_t n_draws, Rng& rng) const {
  if (arch_.target != TargetKind::Parameters) throw UsageError("checkpoint is not a posterior estimator");
  if (n_draws == 0) throw UsageError("n_draws must be positive");
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd z(static_cast<Eigen::Index>(n_draws), static_cast<Eigen::Index>(arch_.theta_dim));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index d = 0; d < z.cols(); ++d) z(i, d) = gauss(rng);
  }
  ad::Tape tape(false);
  Scope s(tape, params_);
  Var cond = tape.constant(flow_condition(summary, ctx, n_draws));
  Var u = flow_inverse(s, tape.constant(std::move(z)), cond);
  return from_latent_space(tape.value(u));
}

Eigen::MatrixXd Approximator::sample_posterior(const Eigen::MatrixXd& raw, const ContextVector& ctx,
                                               std::size_t n_draws, Rng& rng) const {
  return sample_from_summary(summary(raw), ctx, n_draws, rng);
}

Eigen::VectorXd Approximator::log_posterior(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& raw,
                                            const ContextVector& ctx) const {
  Eigen::VectorXd lj;
  const Eigen::MatrixXd u = to_latent_space(theta, &lj);
  ad::Tape tape(false);
  Scope s(tape, params_);
  Var cond = tape.constant(flow_condition(summary(raw), ctx, static_cast<std::size_t>(theta.rows())));
  auto [z, log_det] = flow_forward(s, tape.constant(u), cond);
  const auto& zv = tape.value(z);
  const double d = static_cast<double>(arch_.theta_dim);
  Eigen::VectorXd out = -0.5 * zv.rowwise().squaredNorm();
  out.array() -= d * kLogSqrt2Pi;
  out += tape.value(log_det).col(0) + lj;
  return out;
}

Eigen::VectorXd Approximator::probs_from_summary(const Eigen::VectorXd& summary, const ContextVector& ctx) const {
  if (arch_.target != TargetKind::Models) throw UsageError("checkpoint is not a model classifier");
  ad::Tape tape(false);
  Scope s(tape, params_);
  Var l = logits(s, tape.constant(flow_condition(summary, ctx, 1)));
  Eigen::VectorXd v = tape.value(l).row(0).transpose();
  v.array() -= v.maxCoeff();
  v = v.array().exp().matrix();
  return v / v.sum();
}

Eigen::VectorXd Approximator::predict_model_probs(const Eigen::MatrixXd& raw, const ContextVector& ctx) const {
  return probs_from_summary(summary(raw), ctx);
}

}  // namespace amortsens
