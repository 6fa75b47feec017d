#pragma once

// Neural approximators: summary networks (deep set, gated recurrent), a
// conditional affine-coupling flow for parameter posteriors and a softmax
// classifier for model posteriors. Both heads are conditioned on the learned
// summary concatenated with the encoded context.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "amortsens/autodiff.hpp"
#include "amortsens/context.hpp"
#include "amortsens/dataset.hpp"
#include "amortsens/random.hpp"
#include "amortsens/tasks.hpp"

namespace amortsens {

enum class SummaryKind { DeepSet, Recurrent };

std::string_view summary_kind_name(SummaryKind kind);
SummaryKind parse_summary_kind(std::string_view name);
std::string_view feature_map_name(FeatureMap map);
FeatureMap parse_feature_map(std::string_view name);

struct Architecture {
  TargetKind target = TargetKind::Parameters;
  std::size_t theta_dim = 1;
  int n_models = 0;
  std::size_t obs_dim = 1;
  std::size_t context_dim = 0;
  FeatureMap feature_map = FeatureMap::Identity;
  std::vector<ThetaScale> theta_scales;  // empty means identity everywhere

  SummaryKind summary = SummaryKind::DeepSet;
  int summary_hidden = 64;  // deep-set width, or recurrent hidden size
  int summary_dim = 8;

  int flow_blocks = 6;
  int flow_hidden = 64;
  int flow_layers = 2;
  double clamp = 1.9;

  int classifier_hidden = 64;
  int classifier_layers = 2;

  /// Number of input features after the feature map.
  std::size_t feature_dim() const;
  void validate() const;
  bool operator==(const Architecture&) const = default;
};

/// Architecture sized for a task's data layout.
Architecture default_architecture(const Task& task);

class ParameterStore {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols);
  ad::Parameter& operator[](std::size_t i) { return params_[i]; }
  const ad::Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  std::vector<ad::Parameter>& all() { return params_; }
  const std::vector<ad::Parameter>& all() const { return params_; }
  void zero_grad();

 private:
  std::vector<ad::Parameter> params_;
};

/// Binds parameters to one tape, creating each leaf at most once.
class Scope {
 public:
  Scope(ad::Tape& tape, const ParameterStore& params, ParameterStore* trainable = nullptr);
  ad::Tape& tape() { return tape_; }
  ad::Var param(std::size_t index);

 private:
  ad::Tape& tape_;
  const ParameterStore& params_;
  ParameterStore* trainable_;
  std::vector<std::optional<ad::Var>> bound_;
};

enum class Activation { None, Silu, Tanh };

struct Dense {
  std::size_t weight = 0;
  std::size_t bias = 0;
  ad::Var forward(Scope& s, ad::Var x) const;
};

struct Mlp {
  std::vector<Dense> layers;
  Activation hidden = Activation::Silu;
  bool activate_output = false;
  ad::Var forward(Scope& s, ad::Var x) const;
};

struct CouplingBlock {
  std::vector<int> passive;
  std::vector<int> active;
  Mlp subnet;  // (passive ++ condition) -> (scale ++ shift) for the active coordinates
};

struct FlowOutput {
  ad::Var z;
  ad::Var log_det;  // rows x 1
};

/// Per-dimension affine standardization.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  bool operator==(const Standardizer&) const = default;
};

class Approximator {
 public:
  Approximator() = default;
  /// Randomly initialized network; the coupling heads start at the identity.
  Approximator(Architecture arch, std::uint64_t init_seed);

  const Architecture& architecture() const { return arch_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  const Standardizer& feature_standardizer() const { return features_; }
  const Standardizer& theta_standardizer() const { return theta_; }
  void set_standardizers(Standardizer features, Standardizer theta);
  /// Fit both standardizers to a training set.
  void fit_standardizers(const SimulationBatch& data);

  /// Feature map and standardization of one raw dataset (rows x obs_dim).
  Eigen::MatrixXd features(const Eigen::MatrixXd& raw) const;
  /// Flow coordinates of parameters, and the log-Jacobian of that map per row.
  Eigen::MatrixXd to_latent_space(const Eigen::MatrixXd& theta, Eigen::VectorXd* log_jacobian = nullptr) const;
  Eigen::MatrixXd from_latent_space(const Eigen::MatrixXd& u) const;

  // Differentiable pieces.
  ad::Var summarize(Scope& s, const std::vector<Eigen::MatrixXd>& feature_sets) const;
  ad::Var condition(Scope& s, ad::Var summary, const Eigen::MatrixXd& contexts) const;
  FlowOutput flow_forward(Scope& s, ad::Var u, ad::Var cond) const;
  ad::Var flow_inverse(Scope& s, ad::Var z, ad::Var cond) const;
  ad::Var logits(Scope& s, ad::Var cond) const;

  /// Network-ready view of dataset rows: features, encoded contexts and
  /// targets (flow coordinates with their log-Jacobian, or labels).
  struct Prepared {
    std::vector<Eigen::MatrixXd> features;
    Eigen::MatrixXd contexts;
    Eigen::MatrixXd latent;
    Eigen::VectorXd log_jacobian;
    std::vector<int> labels;
    std::size_t size() const { return features.size(); }
    Prepared subset(const std::vector<std::size_t>& rows) const;
  };
  Prepared prepare(const SimulationBatch& batch, const std::vector<std::size_t>& rows) const;
  Prepared prepare(const SimulationBatch& batch) const;

  /// Mean negative log posterior density of the rows (parameter space).
  ad::Var npe_loss(Scope& s, const Prepared& rows) const;
  /// Mean cross entropy of the rows' model labels.
  ad::Var bmc_loss(Scope& s, const Prepared& rows) const;
  /// Whichever of the two matches the target kind.
  ad::Var loss(Scope& s, const Prepared& rows) const;

  // Inference.
  Eigen::VectorXd summary(const Eigen::MatrixXd& raw) const;
  Eigen::MatrixXd sample_posterior(const Eigen::MatrixXd& raw, const ContextVector& ctx,
                                   std::size_t n_draws, Rng& rng) const;
  Eigen::MatrixXd sample_from_summary(const Eigen::VectorXd& summary, const ContextVector& ctx,
                                      std::size_t n_draws, Rng& rng) const;
  /// log q(theta | x, ctx) for each row of theta.
  Eigen::VectorXd log_posterior(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& raw,
                                const ContextVector& ctx) const;
  Eigen::VectorXd predict_model_probs(const Eigen::MatrixXd& raw, const ContextVector& ctx) const;
  Eigen::VectorXd probs_from_summary(const Eigen::VectorXd& summary, const ContextVector& ctx) const;

  std::vector<CouplingBlock>& blocks() { return blocks_; }
  const std::vector<CouplingBlock>& blocks() const { return blocks_; }

 private:
  void check_context(const ContextVector& ctx) const;
  Eigen::MatrixXd flow_condition(const Eigen::VectorXd& summary, const ContextVector& ctx,
                                 std::size_t rows) const;

  Architecture arch_;
  ParameterStore params_;
  Standardizer features_;
  Standardizer theta_;

  // Summary network
  Mlp set_inner_;
  Mlp set_outer_;
  struct Gru {
    std::size_t wz = 0, uz = 0, bz = 0, wr = 0, ur = 0, br = 0, wn = 0, un = 0, bn = 0;
    Dense head;
  } gru_;

  std::vector<CouplingBlock> blocks_;
  Mlp classifier_;
};

struct TrainConfig {
  int epochs = 40;
  int batch_size = 64;
  double learning_rate = 1e-3;
  bool cosine_decay = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
  double validation_fraction = 0.05;
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Serialized state of one trained approximator.
struct Checkpoint {
  Approximator model;
  TrainConfig train;
  std::vector<double> epoch_losses;
  double validation_loss = 0.0;
  std::string dataset_hash;
  std::uint64_t seed = 0;
  std::string experiment;  // config snapshot, JSON text
};

/// Learning rate at `step` of `total_steps` (0-based); ends at exactly 0.
double cosine_learning_rate(double initial, std::size_t step, std::size_t total_steps);

class Adam {
 public:
  Adam(double beta1, double beta2, double epsilon) : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}
  void step(ParameterStore& params, double lr);

 private:
  double beta1_, beta2_, epsilon_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

/// Rescales all gradients so their joint norm is at most max_norm; returns the
/// norm before clipping.
double clip_gradients(ParameterStore& params, double max_norm);

/// Mini-batch Adam training, deterministic given the seed.
/// Throws NumericError after three consecutive non-finite batch losses.
Checkpoint train(const TrainConfig& config, const SimulationBatch& dataset, const Architecture& arch,
                 std::uint64_t seed);

/// Loss of a finished model over all rows of a batch.
double evaluate_loss(const Approximator& model, const SimulationBatch& batch);

}  // namespace amortsens
