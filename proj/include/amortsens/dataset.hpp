#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "amortsens/context.hpp"

namespace amortsens {

enum class TargetKind { Parameters, Models };

struct DatasetLayout {
  TargetKind target = TargetKind::Parameters;
  std::size_t gamma_size = 0;
  int likelihood_cardinality = 1;
  std::size_t theta_dim = 0;  // Parameters only
  int n_models = 0;           // Models only
  std::size_t obs_rows = 0;
  std::size_t obs_dim = 0;

  std::size_t context_dim() const {
    return gamma_size + (likelihood_cardinality > 1 ? static_cast<std::size_t>(likelihood_cardinality) : 0);
  }
  bool operator==(const DatasetLayout&) const = default;
};

/// Aligned simulation records: context, target (parameters or model index) and
/// simulated data. Values are held at the 32-bit precision they are stored with.
class SimulationBatch {
 public:
  SimulationBatch() = default;
  explicit SimulationBatch(DatasetLayout layout) : layout_(layout) {}

  const DatasetLayout& layout() const { return layout_; }
  std::size_t rows() const { return likelihoods_.size(); }
  bool empty() const { return rows() == 0; }

  void append_parameters(const ContextVector& ctx, const Eigen::VectorXd& theta,
                         const Eigen::MatrixXd& data);
  void append_model(const ContextVector& ctx, int model, const Eigen::MatrixXd& data);

  ContextVector context(std::size_t row) const;
  Eigen::VectorXd theta(std::size_t row) const;
  int label(std::size_t row) const;
  Eigen::MatrixXd data(std::size_t row) const;

  /// Rows [begin, end) as a new batch.
  SimulationBatch slice(std::size_t begin, std::size_t end) const;

  /// FNV-1a over the little-endian payload, as 16 hex digits.
  std::string content_hash() const;

  const std::vector<float>& gammas() const { return gammas_; }
  const std::vector<std::int32_t>& likelihoods() const { return likelihoods_; }
  const std::vector<float>& thetas() const { return theta_; }
  const std::vector<std::int32_t>& labels() const { return labels_; }
  const std::vector<float>& observations() const { return x_; }

  /// Reassemble from raw arrays (used by the file loader); validates sizes.
  static SimulationBatch from_arrays(DatasetLayout layout, std::vector<float> gammas,
                                     std::vector<std::int32_t> likelihoods, std::vector<float> theta,
                                     std::vector<std::int32_t> labels, std::vector<float> x);

  /// Serialized payload bytes in file order.
  std::vector<unsigned char> payload_bytes() const;

 private:
  void append_common(const ContextVector& ctx, const Eigen::MatrixXd& data);

  DatasetLayout layout_;
  std::vector<float> gammas_;
  std::vector<std::int32_t> likelihoods_;
  std::vector<float> theta_;
  std::vector<std::int32_t> labels_;
  std::vector<float> x_;
};

std::uint64_t fnv1a64(const unsigned char* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace amortsens
