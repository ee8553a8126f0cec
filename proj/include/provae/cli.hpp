#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "provae/data.hpp"

namespace provae::cli {

struct TrainOptions {
  std::string data = "blobs";  // mnist | blobs | cifar10
  std::string data_dir;
  double eps_train = 0.0;
  std::size_t epochs = 10;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::size_t latent = 50;
  double sigma0 = 0.70710678118654752;
  std::uint64_t seed = 0;
  std::size_t limit = 0;       // training images (0: all; blobs default 1000)
  std::size_t test_limit = 0;  // test images (0: all; blobs default 256)
  std::filesystem::path out;
  std::string preset = "dense";
  std::size_t hidden = 256;
  std::size_t filters1 = 32;
  std::size_t filters2 = 64;
  std::size_t side = 8;  // blobs image side
  std::string optimizer = "sgd";
  std::size_t eps_warmup = 0;
};

struct AttackOptions {
  std::filesystem::path ckpt;
  std::vector<double> eps_list{0.0};
  std::size_t steps = 40;
  std::optional<double> step_size;
  std::size_t n_samples = 100;
  std::size_t n_noise = 4;
  std::size_t restarts = 0;
  std::uint64_t seed = 0;
  std::filesystem::path report;
  std::string data_dir;  // overrides the directory recorded in the checkpoint
};

struct CertifyOptions {
  std::filesystem::path ckpt;
  double eps = 0.0;
  double alpha = 0.0;
  std::size_t n_noise = 16;
  std::size_t n_samples = 100;
  std::uint64_t seed = 0;
  std::filesystem::path report;
  std::string data_dir;
};

struct ImageOptions {
  std::filesystem::path ckpt;
  std::size_t n = 16;
  std::filesystem::path out;
  std::uint64_t seed = 0;
  bool attacked = false;
  double eps = 0.1;
  std::size_t steps = 40;
  std::string data_dir;
};

/// Summary of a certify run.
struct CertifySummary {
  std::size_t certified = 0;
  std::size_t total = 0;
  double fraction() const { return total ? static_cast<double>(certified) / total : 0.0; }
};

/// (train, test) split for a dataset kind.
std::pair<Dataset, Dataset> load_data(const std::string& kind, const std::string& dir,
                                      std::size_t limit, std::size_t test_limit,
                                      std::size_t side);

void cmd_train(const TrainOptions& opts, std::ostream& log);
void cmd_attack(const AttackOptions& opts, std::ostream& log);
CertifySummary cmd_certify(const CertifyOptions& opts, std::ostream& log);
void cmd_sample(const ImageOptions& opts, std::ostream& log);
void cmd_reconstruct(const ImageOptions& opts, std::ostream& log);

/// Parses `args` (without the program name) and dispatches. Returns the
/// process exit code; errors are reported on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace provae::cli
