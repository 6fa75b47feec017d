#pragma once

// On-disk formats: a JSON manifest next to a raw little-endian payload for
// datasets and checkpoints, ensemble manifests, and observed-data CSV files.
// Every write goes to a temporary file that is then renamed into place.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "amortsens/dataset.hpp"
#include "amortsens/ensemble.hpp"
#include "amortsens/nnet.hpp"

namespace amortsens {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

/// Payload of `manifest` lives at the same path with extension .bin.
fs::path payload_path(const fs::path& manifest);

/// Writes dataset manifest + payload. `experiment` is a JSON config snapshot.
void save_dataset(const SimulationBatch& batch, const fs::path& manifest, const std::string& experiment = "{}");
/// Throws DataIntegrityError when the payload does not match the manifest.
SimulationBatch load_dataset(const fs::path& manifest);

std::string checkpoint_manifest(const Checkpoint& ck);
std::vector<unsigned char> checkpoint_payload(const Checkpoint& ck);
void save_checkpoint(const Checkpoint& ck, const fs::path& manifest);
Checkpoint load_checkpoint(const fs::path& manifest);

struct EnsembleManifest {
  std::vector<fs::path> members;  // relative to the manifest's directory
  std::string dataset_hash;
  std::vector<std::uint64_t> seeds;
};

void save_ensemble_manifest(const EnsembleManifest& m, const fs::path& manifest);
EnsembleManifest load_ensemble_manifest(const fs::path& manifest);
/// Loads every member; rejects members whose dataset hash differs.
Ensemble load_ensemble(const fs::path& manifest);
/// A single checkpoint or an ensemble manifest.
Ensemble load_models(const fs::path& path);

/// Reads a numeric CSV with a header row naming exactly `columns`.
Eigen::MatrixXd read_observations_csv(const fs::path& path, const std::vector<std::string>& columns);
void write_observations_csv(const Eigen::MatrixXd& data, const std::vector<std::string>& columns,
                            const fs::path& path);

}  // namespace amortsens
