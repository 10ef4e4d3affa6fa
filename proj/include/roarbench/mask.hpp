#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "roarbench/tensor.hpp"

namespace roarbench {

struct AttributionMap;

// Binary per-pixel removal mask over an H x W grid. Set bits are removed.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1
  double drop_rate = 0.0;
  std::string source;
  double tv = 0.0;

  std::size_t popcount() const;
  bool at(std::size_t y, std::size_t x) const { return bits[y * width + x] != 0; }
};

// Builds a Mask from raw bits and fills in its total variation.
Mask make_mask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits,
               double drop_rate, std::string source);

// Number of pixels removed at drop rate t on an n-pixel grid: round(t * n).
std::size_t drop_count(double t, std::size_t pixels);

// Marks exactly drop_count(t, H*W) largest values of a 2-D map. Ties go to the
// lower flat index.
Mask top_t_mask(const AttributionMap& map, double t);
Mask top_t_mask(std::span<const double> values, std::size_t height, std::size_t width, double t,
                std::string source = {});

// (1 - m) * x, broadcast over channels. x is (C, H, W) or (N, C, H, W) with
// N == 1; float images use the overload below.
Tensor apply_mask(const Tensor& x, const Mask& m);
void apply_mask_inplace(std::span<float> image, std::size_t channels, const Mask& m);

// Anisotropic total variation over interior neighbour pairs, divided by H*W.
double total_variation(const Mask& m);

}  // namespace roarbench
