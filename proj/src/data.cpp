#include "provae/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "provae/vae.hpp"

namespace provae {

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

std::uint8_t to_pixel_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

Dataset load_idx(const std::filesystem::path& path, std::size_t limit) {
  const auto bytes = read_all(path);
  if (bytes.size() < 16)
    throw TruncatedFileError(path.string() + ": " + std::to_string(bytes.size()) +
                             " bytes is shorter than the 16-byte IDX image header");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxImageMagic)
    throw FormatError(path.string() + ": IDX magic " + std::to_string(magic) +
                      " is not the image magic 2051");
  const std::size_t count = read_be32(bytes, 4);
  const std::size_t rows = read_be32(bytes, 8);
  const std::size_t cols = read_be32(bytes, 12);
  if (rows == 0 || cols == 0) throw FormatError(path.string() + ": zero image extent");
  const std::size_t pixels = rows * cols;
  if (bytes.size() < 16 + count * pixels)
    throw TruncatedFileError(path.string() + ": header declares " + std::to_string(count) +
                             " images of " + std::to_string(rows) + "x" + std::to_string(cols) +
                             " but only " + std::to_string(bytes.size() - 16) +
                             " payload bytes are present");
  Dataset ds;
  ds.name = path.filename().string();
  ds.image_shape = Shape{1, rows, cols};
  const std::size_t n = limit ? std::min(limit, count) : count;
  ds.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img(ds.image_shape);
    const unsigned char* src = bytes.data() + 16 + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p) img[p] = src[p] / 255.0;
    ds.images.push_back(std::move(img));
  }
  return ds;
}

void write_idx(const std::filesystem::path& path, const Dataset& dataset) {
  if (dataset.image_shape.rank() != 3 || dataset.image_shape[0] != 1)
    throw FormatError("IDX image files hold single-channel images, got " +
                      dataset.image_shape.str());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_be32(out, kIdxImageMagic);
  write_be32(out, static_cast<std::uint32_t>(dataset.size()));
  write_be32(out, static_cast<std::uint32_t>(dataset.image_shape[1]));
  write_be32(out, static_cast<std::uint32_t>(dataset.image_shape[2]));
  std::vector<char> buf;
  for (const auto& img : dataset.images) {
    buf.resize(img.numel());
    std::transform(img.values().begin(), img.values().end(), buf.begin(),
                   [](double v) { return static_cast<char>(to_pixel_byte(v)); });
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

Dataset load_cifar10_batch(const std::filesystem::path& path, std::size_t limit) {
  constexpr std::size_t kRecord = 3073;
  constexpr std::size_t kPixels = 3072;
  const auto bytes = read_all(path);
  if (bytes.empty() || bytes.size() % kRecord != 0)
    throw TruncatedFileError(path.string() + ": size " + std::to_string(bytes.size()) +
                             " is not a multiple of the 3073-byte CIFAR10 record");
  const std::size_t count = bytes.size() / kRecord;
  const std::size_t n = limit ? std::min(limit, count) : count;
  Dataset ds;
  ds.name = path.filename().string();
  ds.image_shape = Shape{3, 32, 32};
  for (std::size_t i = 0; i < n; ++i) {
    Tensor img(ds.image_shape);
    const unsigned char* src = bytes.data() + i * kRecord + 1;
    for (std::size_t p = 0; p < kPixels; ++p) img[p] = src[p] / 255.0;
    ds.images.push_back(std::move(img));
  }
  return ds;
}

Dataset synthetic_blobs(std::size_t n, std::size_t side, std::uint64_t seed) {
  if (n == 0) throw ContractError("synthetic_blobs: n must be at least 1");
  if (side < 4) throw ContractError("synthetic_blobs: side must be at least 4");
  std::mt19937_64 rng(seed);
  const double s = static_cast<double>(side);
  std::uniform_real_distribution<double> centre(1.0, s - 2.0);
  std::uniform_real_distribution<double> width(s / 10.0, s / 5.0);
  std::uniform_real_distribution<double> amplitude(0.7, 1.2);
  Dataset ds;
  ds.name = "blobs";
  ds.image_shape = Shape{1, side, side};
  ds.images.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double cy = centre(rng), cx = centre(rng), w = width(rng), a = amplitude(rng);
    Tensor img(ds.image_shape);
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) {
        const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(j) - cx;
        img[i * side + j] = std::clamp(a * std::exp(-(dy * dy + dx * dx) / (2 * w * w)), 0.0, 1.0);
      }
    ds.images.push_back(std::move(img));
  }
  return ds;
}

Dataset take(const Dataset& dataset, std::size_t limit) {
  if (limit == 0 || limit >= dataset.size()) return dataset;
  Dataset out = dataset;
  out.images.resize(limit, Tensor(dataset.image_shape));
  return out;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed) {
  if (n == 0) throw ContractError("batches: dataset is empty");
  if (batch_size == 0) throw ContractError("batches: batch size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Tensor gather(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  std::vector<Tensor> picked;
  picked.reserve(indices.size());
  for (auto i : indices) picked.push_back(dataset.images.at(i));
  return stack(picked);
}

std::vector<Tensor> batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed) {
  std::vector<Tensor> out;
  for (const auto& idx : batch_indices(dataset.size(), batch_size, seed))
    out.push_back(gather(dataset, idx));
  return out;
}

}  // namespace provae
