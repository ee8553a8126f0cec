#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "provae/tensor.hpp"

namespace provae {

/// Malformed file contents (bad magic, unsupported layout).
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// File shorter than its header promises.
class TruncatedFileError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Images sharing one [C, H, W] shape, values in [0, 1].
struct Dataset {
  std::string name;
  std::string split = "train";
  Shape image_shape{1, 1, 1};
  std::vector<Tensor> images;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

/// Reads an IDX image file (magic 2051, big-endian dims, u8 pixels / 255).
Dataset load_idx(const std::filesystem::path& path, std::size_t limit = 0);
/// Writes pixels as round(255 * v) with the image magic.
void write_idx(const std::filesystem::path& path, const Dataset& dataset);

/// CIFAR10 binary batch: 3073-byte records, label byte discarded, [3, 32, 32].
Dataset load_cifar10_batch(const std::filesystem::path& path, std::size_t limit = 0);

/// `n` side x side images, each one Gaussian bump at a seeded random centre.
Dataset synthetic_blobs(std::size_t n, std::size_t side, std::uint64_t seed);

/// First `limit` images (all when limit is 0 or exceeds the size).
Dataset take(const Dataset& dataset, std::size_t limit);

/// Seeded shuffle of [0, n) cut into batches of `batch_size`; the last batch
/// may be short.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed);

/// Stacked [B, C, H, W] batches following batch_indices.
std::vector<Tensor> batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed);

/// Stacks the selected images into a [B, C, H, W] batch.
Tensor gather(const Dataset& dataset, const std::vector<std::size_t>& indices);

/// u8 pixel value of a [0, 1] intensity.
std::uint8_t to_pixel_byte(double v);

}  // namespace provae
