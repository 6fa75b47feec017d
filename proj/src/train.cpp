#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "amortsens/errors.hpp"
#include "amortsens/nnet.hpp"

namespace amortsens {

void TrainConfig::validate() const {
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw UsageError("learning_rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw UsageError("Adam epsilon must be positive");
  if (!(clip_norm > 0.0)) throw UsageError("clip_norm must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw UsageError("validation_fraction must lie in [0, 1)");
  }
}

double cosine_learning_rate(double initial, std::size_t step, std::size_t total_steps) {
  if (total_steps <= 1) return initial;
  const double frac = static_cast<double>(std::min(step, total_steps - 1)) / static_cast<double>(total_steps - 1);
  const double lr = initial * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  // cos(pi) is not exactly -1 in floating point
  return step + 1 >= total_steps ? 0.0 : lr;
}

void Adam::step(ParameterStore& params, double lr) {
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : params.all()) {
      m_.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    if (lr == 0.0) continue;
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + epsilon_);
  }
}

double clip_gradients(ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.all()) sq += p.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const double f = max_norm / norm;
    for (auto& p : params.all()) p.grad *= f;
  }
  return norm;
}

namespace {

double batched_loss(const Approximator& model, const Approximator::Prepared& data, std::size_t chunk) {
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) rows.push_back(i);
    ad::Tape tape(false);
    Scope s(tape, model.parameters());
    total += tape.value(model.loss(s, data.subset(rows)))(0, 0) * static_cast<double>(rows.size());
  }
  return total / static_cast<double>(data.size());
}

}  // namespace

double evaluate_loss(const Approximator& model, const SimulationBatch& batch) {
  if (batch.empty()) throw UsageError("cannot evaluate on an empty dataset");
  return batched_loss(model, model.prepare(batch), 256);
}

Checkpoint train(const TrainConfig& config, const SimulationBatch& dataset, const Architecture& arch,
                 std::uint64_t seed) {
  config.validate();
  if (dataset.empty()) throw UsageError("training set is empty");

  Checkpoint ck;
  ck.train = config;
  ck.seed = seed;
  ck.dataset_hash = dataset.content_hash();
  ck.model = Approximator(arch, mix_seed(seed));

  const std::size_t n = dataset.rows();
  auto n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = n - 1;
  const std::size_t n_train = n - n_val;

  // Rows are exchangeable draws, so the tail serves as the validation split.
  ck.model.fit_standardizers(dataset.slice(0, n_train));
  const auto prepared = ck.model.prepare(dataset);
  std::vector<std::size_t> train_rows(n_train);
  std::iota(train_rows.begin(), train_rows.end(), 0);
  std::vector<std::size_t> val_rows(n_val);
  std::iota(val_rows.begin(), val_rows.end(), n_train);

  const auto batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t per_epoch = (n_train + batch - 1) / batch;
  const std::size_t total_steps = per_epoch * static_cast<std::size_t>(config.epochs);

  Adam adam(config.beta1, config.beta2, config.epsilon);
  auto& params = ck.model.parameters();
  std::size_t step = 0;
  int bad_streak = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle = derive_stream(seed, static_cast<std::uint64_t>(epoch), 0x5eed);
    std::shuffle(train_rows.begin(), train_rows.end(), shuffle);
    double epoch_sum = 0.0;
    std::size_t epoch_rows = 0;
    for (std::size_t start = 0; start < n_train; start += batch, ++step) {
      const std::vector<std::size_t> rows(train_rows.begin() + static_cast<std::ptrdiff_t>(start),
                                          train_rows.begin() + static_cast<std::ptrdiff_t>(std::min(n_train, start + batch)));
      const double lr = config.cosine_decay ? cosine_learning_rate(config.learning_rate, step, total_steps)
                                            : config.learning_rate;
      params.zero_grad();
      double value = std::numeric_limits<double>::quiet_NaN();
      std::string failure;
      try {
        ad::Tape tape(true);
        Scope s(tape, params, &params);
        ad::Var l = ck.model.loss(s, prepared.subset(rows));
        value = tape.value(l)(0, 0);
        if (std::isfinite(value)) tape.backward(l);
      } catch (const NumericError& e) {
        failure = e.what();
      }
      const double norm = std::isfinite(value) ? clip_gradients(params, config.clip_norm) : 0.0;
      if (!std::isfinite(value) || !std::isfinite(norm)) {
        if (++bad_streak >= 3) {
          throw NumericError("training diverged: three consecutive non-finite batches (epoch " +
                             std::to_string(epoch) + ", step " + std::to_string(step) + ")" +
                             (failure.empty() ? std::string() : ": " + failure));
        }
        continue;
      }
      bad_streak = 0;
      adam.step(params, lr);
      epoch_sum += value * static_cast<double>(rows.size());
      epoch_rows += rows.size();
    }
    ck.epoch_losses.push_back(epoch_rows > 0 ? epoch_sum / static_cast<double>(epoch_rows)
                                             : std::numeric_limits<double>::quiet_NaN());
  }
  ck.validation_loss = n_val > 0 ? batched_loss(ck.model, prepared.subset(val_rows), 256) : ck.epoch_losses.back();
  return ck;
}

}  // namespace amortsens
