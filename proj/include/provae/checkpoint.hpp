#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "provae/vae.hpp"

namespace provae {

class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointFormatVersion = 1;

/// One row of the training metrics file (header epoch,lb_train,lb_test,elbo_test).
struct MetricsRow {
  std::size_t epoch = 0;
  double lb_train = 0;
  double lb_test = 0;
  double elbo_test = 0;
};

/// Provenance stored next to the parameters.
struct CheckpointInfo {
  double eps_train = 0;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::string data;      // dataset kind used for training
  std::string data_dir;  // where it was read from (empty for generated data)
  std::size_t blob_side = 0;
  std::vector<MetricsRow> history;
};

struct Checkpoint {
  VaeModel model;
  CheckpointInfo info;
};

/// Writes manifest.json plus one little-endian f32 blob per parameter.
void save_checkpoint(const std::filesystem::path& dir, const VaeModel& model,
                     const CheckpointInfo& info);

/// Rebuilds the model from the manifest and reads every blob. Throws
/// CheckpointError on version mismatch, missing blob or size mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace provae
