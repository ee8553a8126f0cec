#include "provae/image.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "provae/data.hpp"

namespace provae {

GrayImage montage(std::span<const Tensor> images, std::size_t columns) {
  if (images.empty()) throw ContractError("montage: no images");
  const Shape& s = images.front().shape();
  if (s.rank() != 3) throw DimensionError("montage: expected [C, H, W] images, got " + s.str());
  const std::size_t c = s[0], h = s[1], w = s[2];
  const std::size_t n = images.size();
  if (columns == 0)
    columns = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const std::size_t rows = (n + columns - 1) / columns;
  GrayImage out{columns * w, rows * h, {}};
  out.pixels.assign(out.width * out.height, 0);
  for (std::size_t k = 0; k < n; ++k) {
    if (images[k].shape() != s)
      throw DimensionError("montage: image " + std::to_string(k) + " has shape " +
                           images[k].shape().str());
    const std::size_t oy = (k / columns) * h, ox = (k % columns) * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double v = 0;
        for (std::size_t ch = 0; ch < c; ++ch) v += images[k][(ch * h + y) * w + x];
        out.pixels[(oy + y) * out.width + ox + x] = to_pixel_byte(v / static_cast<double>(c));
      }
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string magic;
  GrayImage img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255)
    throw FormatError(path.string() + ": not an 8-bit binary PGM");
  in.get();
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw TruncatedFileError(path.string() + ": pixel payload truncated");
  return img;
}

}  // namespace provae
