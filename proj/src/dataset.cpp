#include "amortsens/dataset.hpp"

#include <bit>
#include <cstdio>
#include <cstring>

#include "amortsens/errors.hpp"

namespace amortsens {

static_assert(std::endian::native == std::endian::little, "payload format assumes a little-endian host");

namespace {

template <typename T>
void append_bytes(std::vector<unsigned char>& out, const std::vector<T>& values) {
  const auto* p = reinterpret_cast<const unsigned char*>(values.data());
  out.insert(out.end(), p, p + values.size() * sizeof(T));
}

}  // namespace

std::uint64_t fnv1a64(const unsigned char* data, std::size_t size, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

void SimulationBatch::append_common(const ContextVector& ctx, const Eigen::MatrixXd& data) {
  if (ctx.gamma.size() != layout_.gamma_size || ctx.likelihood_cardinality != layout_.likelihood_cardinality) {
    throw UsageError("context does not match dataset layout");
  }
  if (static_cast<std::size_t>(data.rows()) != layout_.obs_rows ||
      static_cast<std::size_t>(data.cols()) != layout_.obs_dim) {
    throw UsageError("simulated data shape does not match dataset layout");
  }
  for (double g : ctx.gamma) gammas_.push_back(static_cast<float>(g));
  likelihoods_.push_back(ctx.likelihood_choice);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) x_.push_back(static_cast<float>(data(i, j)));
  }
}

void SimulationBatch::append_parameters(const ContextVector& ctx, const Eigen::VectorXd& theta,
                                        const Eigen::MatrixXd& data) {
  if (layout_.target != TargetKind::Parameters) throw UsageError("dataset holds model indices");
  if (static_cast<std::size_t>(theta.size()) != layout_.theta_dim) throw UsageError("theta size mismatch");
  append_common(ctx, data);
  for (double v : theta) theta_.push_back(static_cast<float>(v));
}

void SimulationBatch::append_model(const ContextVector& ctx, int model, const Eigen::MatrixXd& data) {
  if (layout_.target != TargetKind::Models) throw UsageError("dataset holds parameters");
  if (model < 0 || model >= layout_.n_models) throw UsageError("model index out of range");
  append_common(ctx, data);
  labels_.push_back(model);
}

ContextVector SimulationBatch::context(std::size_t row) const {
  ContextVector ctx;
  ctx.gamma.resize(layout_.gamma_size);
  for (std::size_t k = 0; k < layout_.gamma_size; ++k) ctx.gamma[k] = gammas_[row * layout_.gamma_size + k];
  ctx.likelihood_choice = likelihoods_.at(row);
  ctx.likelihood_cardinality = layout_.likelihood_cardinality;
  return ctx;
}

Eigen::VectorXd SimulationBatch::theta(std::size_t row) const {
  if (layout_.target != TargetKind::Parameters) throw UsageError("dataset holds model indices");
  Eigen::VectorXd t(static_cast<Eigen::Index>(layout_.theta_dim));
  for (std::size_t d = 0; d < layout_.theta_dim; ++d) t(static_cast<Eigen::Index>(d)) = theta_.at(row * layout_.theta_dim + d);
  return t;
}

int SimulationBatch::label(std::size_t row) const {
  if (layout_.target != TargetKind::Models) throw UsageError("dataset holds parameters");
  return labels_.at(row);
}

Eigen::MatrixXd SimulationBatch::data(std::size_t row) const {
  const std::size_t block = layout_.obs_rows * layout_.obs_dim;
  if (row >= rows()) throw UsageError("row index out of range");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(layout_.obs_rows), static_cast<Eigen::Index>(layout_.obs_dim));
  const float* p = x_.data() + row * block;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = *p++;
  }
  return m;
}

SimulationBatch SimulationBatch::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows()) throw UsageError("invalid dataset slice");
  SimulationBatch out(layout_);
  const auto k = layout_.gamma_size;
  const auto block = layout_.obs_rows * layout_.obs_dim;
  out.gammas_.assign(gammas_.begin() + begin * k, gammas_.begin() + end * k);
  out.likelihoods_.assign(likelihoods_.begin() + begin, likelihoods_.begin() + end);
  if (layout_.target == TargetKind::Parameters) {
    const auto d = layout_.theta_dim;
    out.theta_.assign(theta_.begin() + begin * d, theta_.begin() + end * d);
  } else {
    out.labels_.assign(labels_.begin() + begin, labels_.begin() + end);
  }
  out.x_.assign(x_.begin() + begin * block, x_.begin() + end * block);
  return out;
}

std::vector<unsigned char> SimulationBatch::payload_bytes() const {
  std::vector<unsigned char> out;
  append_bytes(out, gammas_);
  append_bytes(out, likelihoods_);
  append_bytes(out, theta_);
  append_bytes(out, labels_);
  append_bytes(out, x_);
  return out;
}

std::string SimulationBatch::content_hash() const {
  const auto bytes = payload_bytes();
  return hex64(fnv1a64(bytes.data(), bytes.size()));
}

SimulationBatch SimulationBatch::from_arrays(DatasetLayout layout, std::vector<float> gammas,
                                             std::vector<std::int32_t> likelihoods,
                                             std::vector<float> theta, std::vector<std::int32_t> labels,
                                             std::vector<float> x) {
  const std::size_t n = likelihoods.size();
  const bool pe = layout.target == TargetKind::Parameters;
  if (gammas.size() != n * layout.gamma_size || x.size() != n * layout.obs_rows * layout.obs_dim ||
      theta.size() != (pe ? n * layout.theta_dim : 0) || labels.size() != (pe ? 0 : n)) {
    throw DataIntegrityError("dataset arrays do not match the declared layout");
  }
  SimulationBatch out(layout);
  out.gammas_ = std::move(gammas);
  out.likelihoods_ = std::move(likelihoods);
  out.theta_ = std::move(theta);
  out.labels_ = std::move(labels);
  out.x_ = std::move(x);
  return out;
}

}  // namespace amortsens
