#include "roarbench/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "roarbench/error.hpp"

namespace roarbench {

namespace {

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto N = static_cast<std::ptrdiff_t>(n);
  while (i < 0 || i >= N) i = i < 0 ? -i - 1 : 2 * N - i - 1;
  return static_cast<std::size_t>(i);
}

std::vector<double> gaussian_kernel(double sigma, double truncate) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(truncate * sigma));
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    w[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : w) v /= total;
  return w;
}

// One separable pass along rows (axis 1) or columns (axis 0). Each output is
// written as centre + sum w (v - centre), which keeps constant windows exact,
// then clamped to the window range against rounding.
std::vector<double> convolve_axis(const std::vector<double>& in, std::size_t H, std::size_t W,
                                  const std::vector<double>& w, int axis) {
  const auto radius = static_cast<std::ptrdiff_t>(w.size() / 2);
  std::vector<double> out(in.size());
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double centre = in[y * W + x];
      double acc = 0.0, lo = centre, hi = centre;
      for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
        const double v = axis == 1 ? in[y * W + reflect(static_cast<std::ptrdiff_t>(x) + d, W)]
                                   : in[reflect(static_cast<std::ptrdiff_t>(y) + d, H) * W + x];
        acc += w[static_cast<std::size_t>(d + radius)] * (v - centre);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      out[y * W + x] = std::clamp(centre + acc, lo, hi);
    }
  }
  return out;
}

std::vector<double> max_axis(const std::vector<double>& in, std::size_t H, std::size_t W, int kernel,
                             int axis) {
  const std::ptrdiff_t radius = kernel / 2;
  std::vector<double> out(in.size());
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      double m = in[y * W + x];
      for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
        const double v = axis == 1 ? in[y * W + reflect(static_cast<std::ptrdiff_t>(x) + d, W)]
                                   : in[reflect(static_cast<std::ptrdiff_t>(y) + d, H) * W + x];
        m = std::max(m, v);
      }
      out[y * W + x] = m;
    }
  }
  return out;
}

}  // namespace

std::string to_string(PostprocKind k) {
  switch (k) {
    case PostprocKind::Plain: return "plain";
    case PostprocKind::Gaussian: return "gaussian";
    case PostprocKind::MaxPool: return "maxpool";
  }
  return "plain";
}

PostprocKind parse_postproc_kind(const std::string& name) {
  if (name == "plain") return PostprocKind::Plain;
  if (name == "gaussian") return PostprocKind::Gaussian;
  if (name == "maxpool") return PostprocKind::MaxPool;
  throw InvalidInput("unknown post-processing '" + name + "' (expected plain, gaussian or maxpool)");
}

void PostprocSpec::validate() const {
  if (kind == PostprocKind::Gaussian && !(sigma > 0.0)) throw InvalidInput("gaussian sigma must be > 0");
  if (kind == PostprocKind::Gaussian && !(truncate > 0.0)) throw InvalidInput("gaussian truncate must be > 0");
  if (kind == PostprocKind::MaxPool && (kernel < 3 || kernel % 2 == 0)) {
    throw InvalidInput("maxpool kernel must be odd and >= 3");
  }
}

AttributionMap apply(const PostprocSpec& spec, const AttributionMap& a) {
  spec.validate();
  if (a.shape.size() != 2) {
    throw InvalidInput("post-processing needs a 2-D map; reduce channels first (got rank " +
                       std::to_string(a.shape.size()) + ")");
  }
  const std::size_t H = a.shape[0], W = a.shape[1];
  AttributionMap out = a;
  switch (spec.kind) {
    case PostprocKind::Plain: break;
    case PostprocKind::Gaussian: {
      const auto w = gaussian_kernel(spec.sigma, spec.truncate);
      out.values = convolve_axis(convolve_axis(a.values, H, W, w, 0), H, W, w, 1);
      break;
    }
    case PostprocKind::MaxPool:
      out.values = max_axis(max_axis(a.values, H, W, spec.kernel, 0), H, W, spec.kernel, 1);
      break;
  }
  return out;
}

AttributionMap reduce_channels(const AttributionMap& a) {
  if (a.shape.size() == 2) return a;
  if (a.shape.size() != 3) throw InvalidInput("reduce_channels expects a (C, H, W) map");
  const std::size_t C = a.shape[0], plane = a.shape[1] * a.shape[2];
  AttributionMap out = a;
  out.shape = {a.shape[1], a.shape[2]};
  out.values.assign(plane, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < plane; ++i) out.values[i] += a.values[c * plane + i];
  }
  return out;
}

AttributionMap upsample_nearest(const AttributionMap& a, std::size_t height, std::size_t width) {
  if (a.shape.size() != 2) throw InvalidInput("upsample_nearest needs a 2-D map");
  const std::size_t h = a.shape[0], w = a.shape[1];
  if (height < h || width < w) {
    throw InvalidInput("upsample target " + std::to_string(height) + "x" + std::to_string(width) +
                       " is smaller than the " + std::to_string(h) + "x" + std::to_string(w) + " source");
  }
  AttributionMap out = a;
  out.shape = {height, width};
  out.values.resize(height * width);
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      out.values[i * width + j] = a.values[(i * h / height) * w + j * w / width];
    }
  }
  return out;
}

AttributionMap postprocess(const PostprocSpec& spec, const AttributionMap& a, std::size_t height,
                           std::size_t width) {
  AttributionMap m = apply(spec, reduce_channels(a));
  if (m.shape[0] != height || m.shape[1] != width) m = upsample_nearest(m, height, width);
  return m;
}

}  // namespace roarbench
