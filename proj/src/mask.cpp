#include "roarbench/mask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "roarbench/attribution.hpp"
#include "roarbench/error.hpp"

namespace roarbench {

std::size_t Mask::popcount() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Mask make_mask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits, double drop_rate,
               std::string source) {
  if (bits.size() != height * width) throw InvalidInput("mask bit count does not match H*W");
  Mask m{height, width, std::move(bits), drop_rate, std::move(source), 0.0};
  m.tv = total_variation(m);
  return m;
}

std::size_t drop_count(double t, std::size_t pixels) {
  return static_cast<std::size_t>(std::llround(t * static_cast<double>(pixels)));
}

Mask top_t_mask(std::span<const double> values, std::size_t height, std::size_t width, double t,
                std::string source) {
  if (!(t > 0.0 && t < 1.0)) throw InvalidInput("drop rate must lie in (0, 1), got " + std::to_string(t));
  const std::size_t n = height * width;
  if (values.size() != n || n == 0) throw InvalidInput("top_t_mask expects a non-empty 2-D map");
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidInput("attribution map contains a non-finite value");
  }
  const std::size_t k = drop_count(t, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Larger value first; equal values keep ascending flat index.
  auto before = [&](std::size_t a, std::size_t b) {
    return values[a] > values[b] || (values[a] == values[b] && a < b);
  };
  if (k < n) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
  std::vector<std::uint8_t> bits(n, 0);
  for (std::size_t i = 0; i < k; ++i) bits[order[i]] = 1;
  return make_mask(height, width, std::move(bits), t, std::move(source));
}

Mask top_t_mask(const AttributionMap& map, double t) {
  if (map.shape.size() != 2) {
    throw InvalidInput("top_t_mask needs a 2-D map; reduce channels first (got rank " +
                       std::to_string(map.shape.size()) + ")");
  }
  return top_t_mask(map.values, map.shape[0], map.shape[1], t, method_name(map.method));
}

Tensor apply_mask(const Tensor& x, const Mask& m) {
  if (!x.defined() || x.dim() < 2) throw InvalidInput("apply_mask needs an image tensor");
  const std::size_t H = x.size(x.dim() - 2), W = x.size(x.dim() - 1);
  if (H != m.height || W != m.width) {
    throw InvalidInput("mask " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                       " does not match image " + shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const std::size_t plane = H * W;
  for (std::size_t base = 0; base < out.size(); base += plane) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (m.bits[i]) out[base + i] = 0.0;
    }
  }
  return Tensor(x.shape(), std::move(out));
}

void apply_mask_inplace(std::span<float> image, std::size_t channels, const Mask& m) {
  const std::size_t plane = m.height * m.width;
  if (image.size() != channels * plane) throw InvalidInput("mask does not match image size");
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (m.bits[i]) image[c * plane + i] = 0.0f;
    }
  }
}

double total_variation(const Mask& m) {
  const std::size_t H = m.height, W = m.width;
  if (H * W == 0) return 0.0;
  std::size_t changes = 0;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const auto v = m.bits[y * W + x];
      if (y + 1 < H && m.bits[(y + 1) * W + x] != v) ++changes;
      if (x + 1 < W && m.bits[y * W + x + 1] != v) ++changes;
    }
  }
  return static_cast<double>(changes) / static_cast<double>(H * W);
}

}  // namespace roarbench
