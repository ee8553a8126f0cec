#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "provae/tensor.hpp"

namespace provae {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Tiles [C, H, W] images (channels averaged) into a grid of `columns`
/// (0 picks ceil(sqrt(n))). Unused cells are black.
GrayImage montage(std::span<const Tensor> images, std::size_t columns = 0);

/// Binary PGM (P5), maxval 255.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace provae
