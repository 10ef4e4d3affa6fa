#include "roarbench/attribution.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "roarbench/error.hpp"
#include "roarbench/rng.hpp"

namespace roarbench {

namespace {

constexpr std::array<const char*, 10> kMethodNames{
    "grad", "gi", "ig", "sg", "sgsq", "vg", "gc", "sobel", "rand", "block"};

// (C, H, W) or (1, C, H, W) -> values and the (C, H, W) shape.
struct Sample {
  Shape shape;
  std::vector<double> values;
};

Sample as_sample(const Tensor& x) {
  if (!x.defined()) throw InvalidInput("attribution input is undefined");
  if (x.dim() == 3) return {x.shape(), {x.data().begin(), x.data().end()}};
  if (x.dim() == 4 && x.size(0) == 1) {
    return {Shape(x.shape().begin() + 1, x.shape().end()), {x.data().begin(), x.data().end()}};
  }
  throw InvalidInput("attribution expects a single (C, H, W) sample, got " + shape_str(x.shape()));
}

Shape batch_shape(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

AttributionMap make_map(Shape shape, std::vector<double> values, Method m) {
  AttributionMap a;
  a.shape = std::move(shape);
  a.values = std::move(values);
  a.method = m;
  return a;
}

// Running mean (and optionally M2) so that n identical inputs reproduce the
// input bit for bit and give exactly zero variance.
struct Welford {
  explicit Welford(std::size_t n) : mean(n, 0.0), m2(n, 0.0) {}
  void add(std::span<const double> v) {
    ++count;
    const double inv = 1.0 / static_cast<double>(count);
    for (std::size_t i = 0; i < mean.size(); ++i) {
      const double delta = v[i] - mean[i];
      mean[i] += delta * inv;
      m2[i] += delta * (v[i] - mean[i]);
    }
  }
  std::size_t count = 0;
  std::vector<double> mean;
  std::vector<double> m2;
};

enum class SmoothKind { Mean, MeanOfSquares, Variance };

AttributionMap smooth_family(const Classifier& model, const Tensor& x, int y, const EstimatorConfig& cfg,
                             std::size_t sample_id, SmoothKind kind) {
  cfg.validate();
  const Sample s = as_sample(x);
  const std::size_t n = static_cast<std::size_t>(cfg.ensemble_n);
  if (kind == SmoothKind::Variance && n < 2) throw InvalidInput("VarGrad needs ensemble_n >= 2");

  const auto [lo, hi] = std::minmax_element(s.values.begin(), s.values.end());
  const double sigma = cfg.sg_noise_frac * (*hi - *lo);
  const std::uint64_t seed = SeedBuilder(cfg.seed).add("smoothgrad-noise").add(sample_id).seed();
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  const std::size_t numel = s.values.size();
  std::vector<double> noisy(n * numel);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < numel; ++i) {
      const double eps = noise(rng);
      noisy[j * numel + i] = sigma > 0.0 ? s.values[i] + sigma * eps : s.values[i];
    }
  }
  const std::vector<int> ys(n, y);
  const Tensor g = input_gradients(model, Tensor(batch_shape(n, s.shape), std::move(noisy)), ys);

  Welford acc(numel);
  std::vector<double> sq(numel);
  for (std::size_t j = 0; j < n; ++j) {
    const auto gj = g.data().subspan(j * numel, numel);
    if (kind == SmoothKind::MeanOfSquares) {
      for (std::size_t i = 0; i < numel; ++i) sq[i] = gj[i] * gj[i];
      acc.add(sq);
    } else {
      acc.add(gj);
    }
  }

  Method method = Method::SG;
  std::vector<double> out = std::move(acc.mean);
  if (kind == SmoothKind::MeanOfSquares) method = Method::SG_SQ;
  if (kind == SmoothKind::Variance) {
    method = Method::VG;
    out = std::move(acc.m2);
    for (auto& v : out) v /= static_cast<double>(n - 1);
  }
  AttributionMap a = make_map(s.shape, std::move(out), method);
  a.sample_id = sample_id;
  a.seed = seed;
  return a;
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto N = static_cast<std::ptrdiff_t>(n);
  // Half-sample symmetric: ... b a | a b c ... c b a | a b ...
  while (i < 0 || i >= N) i = i < 0 ? -i - 1 : 2 * N - i - 1;
  return static_cast<std::size_t>(i);
}

}  // namespace

std::string method_name(Method m) { return kMethodNames[static_cast<std::size_t>(m)]; }

Method parse_method(const std::string& name) {
  for (std::size_t i = 0; i < kMethodNames.size(); ++i) {
    if (name == kMethodNames[i]) return static_cast<Method>(i);
  }
  throw InvalidInput("unknown attribution method '" + name + "'");
}

void EstimatorConfig::validate() const {
  if (ig_steps < 1) throw InvalidInput("ig_steps must be >= 1");
  if (ensemble_n < 1) throw InvalidInput("ensemble_n must be >= 1");
  if (!(sg_noise_frac >= 0.0)) throw InvalidInput("sg_noise_frac must be >= 0");
}

AttributionMap grad(const Classifier& model, const Tensor& x, int y) {
  const Sample s = as_sample(x);
  const int ys[] = {y};
  const Tensor g = input_gradients(model, Tensor(batch_shape(1, s.shape), s.values), ys);
  return make_map(s.shape, {g.data().begin(), g.data().end()}, Method::Grad);
}

AttributionMap grad_times_input(const Classifier& model, const Tensor& x, int y) {
  const Sample s = as_sample(x);
  AttributionMap a = grad(model, x, y);
  for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] *= s.values[i];
  a.method = Method::GI;
  return a;
}

AttributionMap integrated_gradients(const Classifier& model, const Tensor& x, int y,
                                    const EstimatorConfig& cfg) {
  cfg.validate();
  const Sample s = as_sample(x);
  const std::size_t k = static_cast<std::size_t>(cfg.ig_steps), numel = s.values.size();
  std::vector<double> path(k * numel);
  for (std::size_t j = 1; j <= k; ++j) {
    const double alpha = static_cast<double>(j) / static_cast<double>(k);
    for (std::size_t i = 0; i < numel; ++i) path[(j - 1) * numel + i] = alpha * s.values[i];
  }
  const std::vector<int> ys(k, y);
  const Tensor g = input_gradients(model, Tensor(batch_shape(k, s.shape), std::move(path)), ys);
  Welford acc(numel);
  for (std::size_t j = 0; j < k; ++j) acc.add(g.data().subspan(j * numel, numel));
  for (std::size_t i = 0; i < numel; ++i) acc.mean[i] *= s.values[i];
  return make_map(s.shape, std::move(acc.mean), Method::IG);
}

AttributionMap smoothgrad(const Classifier& model, const Tensor& x, int y, const EstimatorConfig& cfg,
                          std::size_t sample_id) {
  return smooth_family(model, x, y, cfg, sample_id, SmoothKind::Mean);
}

AttributionMap smoothgrad_sq(const Classifier& model, const Tensor& x, int y,
                             const EstimatorConfig& cfg, std::size_t sample_id) {
  return smooth_family(model, x, y, cfg, sample_id, SmoothKind::MeanOfSquares);
}

AttributionMap vargrad(const Classifier& model, const Tensor& x, int y, const EstimatorConfig& cfg,
                       std::size_t sample_id) {
  return smooth_family(model, x, y, cfg, sample_id, SmoothKind::Variance);
}

AttributionMap gradcam_from_features(const Tensor& features, std::span<const double> feature_grad) {
  if (!features.defined() || (features.dim() != 3 && !(features.dim() == 4 && features.size(0) == 1))) {
    throw InvalidInput("gradcam expects (K, H', W') feature maps of one sample");
  }
  const std::size_t off = features.dim() - 3;
  const std::size_t K = features.size(off), H = features.size(off + 1), W = features.size(off + 2);
  if (feature_grad.size() != K * H * W) throw InvalidInput("gradcam: gradient does not match features");
  const auto A = features.data();
  std::vector<double> cam(H * W, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const auto gk = feature_grad.subspan(k * H * W, H * W);
    const double w = std::accumulate(gk.begin(), gk.end(), 0.0) / static_cast<double>(H * W);
    for (std::size_t i = 0; i < H * W; ++i) cam[i] += w * A[k * H * W + i];
  }
  for (auto& v : cam) v = std::max(v, 0.0);
  return make_map({H, W}, std::move(cam), Method::GC);
}

AttributionMap gradcam(const Classifier& model, const Tensor& x, int y) {
  const Sample s = as_sample(x);
  if (y < 0 || y >= model.num_classes()) throw InvalidInput("class index out of range");
  const std::unique_ptr<Classifier> frozen = model.clone();
  for (auto p : frozen->parameters()) p.set_requires_grad(false);
  // The input only needs to be on the tape so that the feature maps are.
  Tensor input(batch_shape(1, s.shape), s.values, true);
  const ForwardResult fr = frozen->forward(input);
  if (!fr.features.defined()) {
    throw UnsupportedMethod("Grad-CAM needs a model with convolutional feature maps");
  }
  const int ys[] = {y};
  ops::sum(ops::pick(fr.logits, ys)).backward();
  return gradcam_from_features(fr.features, fr.features.grad());
}

AttributionMap sobel(const Tensor& x) {
  const Sample s = as_sample(x);
  const std::size_t C = s.shape[0], H = s.shape[1], W = s.shape[2];
  std::vector<double> gray(H * W, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < H * W; ++i) gray[i] += s.values[c * H * W + i];
  }
  for (auto& v : gray) v /= static_cast<double>(C);

  auto at = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) { return gray[reflect(yy, H) * W + reflect(xx, W)]; };
  // Written as differences of opposite taps so that flat regions give exactly 0.
  constexpr double kSmooth[3] = {1.0, 2.0, 1.0};
  std::vector<double> out(H * W);
  for (std::size_t yy = 0; yy < H; ++yy) {
    for (std::size_t xx = 0; xx < W; ++xx) {
      const auto y0 = static_cast<std::ptrdiff_t>(yy), x0 = static_cast<std::ptrdiff_t>(xx);
      double gx = 0.0, gy = 0.0;
      for (int d = -1; d <= 1; ++d) {
        gx += kSmooth[d + 1] * (at(y0 + d, x0 + 1) - at(y0 + d, x0 - 1));
        gy += kSmooth[d + 1] * (at(y0 + 1, x0 + d) - at(y0 - 1, x0 + d));
      }
      out[yy * W + xx] = gx * gx + gy * gy;
    }
  }
  AttributionMap a = make_map({H, W}, std::move(out), Method::Sobel);
  a.squared = true;
  return a;
}

AttributionMap pixel_random(std::size_t height, std::size_t width, std::uint64_t seed) {
  if (height == 0 || width == 0) throw InvalidInput("pixel_random needs a non-empty grid");
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(height * width);
  for (auto& x : v) x = u(rng);
  AttributionMap a = make_map({height, width}, std::move(v), Method::PixelRandom);
  a.seed = seed;
  return a;
}

AttributionMap block_random(std::size_t height, std::size_t width, std::uint64_t seed) {
  if (height == 0 || width == 0) throw InvalidInput("block_random needs a non-empty grid");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> py(0, height - 1), px(0, width - 1);
  const std::size_t cy = py(rng), cx = px(rng);

  // Grow [top, bottom] x [left, right] one full edge strip at a time, cycling
  // top, right, bottom, left and skipping sides that hit the border. Each
  // strip is emitted from the end nearest the previous one, so every prefix
  // of the order is a rectangle plus one contiguous adjacent strip.
  std::vector<std::size_t> order{cy * width + cx};
  order.reserve(height * width);
  std::size_t top = cy, bottom = cy, left = cx, right = cx;
  int side = 0;
  while (order.size() < height * width) {
    switch (side) {
      case 0:
        if (top > 0) {
          --top;
          for (std::size_t x = left; x <= right; ++x) order.push_back(top * width + x);
        }
        break;
      case 1:
        if (right + 1 < width) {
          ++right;
          for (std::size_t y = top; y <= bottom; ++y) order.push_back(y * width + right);
        }
        break;
      case 2:
        if (bottom + 1 < height) {
          ++bottom;
          for (std::size_t x = right + 1; x-- > left;) order.push_back(bottom * width + x);
        }
        break;
      default:
        if (left > 0) {
          --left;
          for (std::size_t y = bottom + 1; y-- > top;) order.push_back(y * width + left);
        }
        break;
    }
    side = (side + 1) % 4;
  }

  std::vector<double> v(height * width);
  const auto n = static_cast<double>(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) v[order[r]] = n - static_cast<double>(r);
  AttributionMap a = make_map({height, width}, std::move(v), Method::BlockRandom);
  a.seed = seed;
  a.note = "centre=(" + std::to_string(cy) + "," + std::to_string(cx) + ")";
  return a;
}

AttributionMap square(const AttributionMap& map) {
  if (map.method == Method::VG) throw InvalidInput("squaring does not apply to VarGrad");
  if (map.squared) throw InvalidInput("attribution map is already squared");
  AttributionMap out = map;
  for (auto& v : out.values) v *= v;
  out.squared = true;
  return out;
}

std::vector<AttributionMap> attribute_dataset(const Classifier& model, const Dataset& data,
                                              std::span<const int> classes, Method method,
                                              const EstimatorConfig& cfg) {
  if (classes.size() != data.size()) throw InvalidInput("one class per sample is required");
  cfg.validate();
  std::vector<AttributionMap> maps;
  maps.reserve(data.size());
  const Shape sample_shape{data.channels, data.height, data.width};
  const std::size_t numel = data.sample_numel();

  if (method == Method::Grad || method == Method::GI) {
    constexpr std::size_t kChunk = 128;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
      idx.clear();
      for (std::size_t i = start; i < std::min(data.size(), start + kChunk); ++i) idx.push_back(i);
      const Tensor batch = data.batch(idx);
      const std::vector<int> ys(classes.begin() + static_cast<std::ptrdiff_t>(start),
                                classes.begin() + static_cast<std::ptrdiff_t>(start + idx.size()));
      const Tensor g = input_gradients(model, batch, ys);
      for (std::size_t n = 0; n < idx.size(); ++n) {
        std::vector<double> v(g.data().begin() + static_cast<std::ptrdiff_t>(n * numel),
                              g.data().begin() + static_cast<std::ptrdiff_t>((n + 1) * numel));
        if (method == Method::GI) {
          const auto x = batch.data().subspan(n * numel, numel);
          for (std::size_t i = 0; i < numel; ++i) v[i] *= x[i];
        }
        AttributionMap a = make_map(sample_shape, std::move(v), method);
        a.sample_id = idx[n];
        maps.push_back(std::move(a));
      }
    }
    return maps;
  }

  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::uint64_t sample_seed = SeedBuilder(cfg.seed).add(method_name(method)).add(i).seed();
    AttributionMap a;
    switch (method) {
      case Method::IG: a = integrated_gradients(model, data.image_tensor(i), classes[i], cfg); break;
      case Method::SG: a = smoothgrad(model, data.image_tensor(i), classes[i], cfg, i); break;
      case Method::SG_SQ: a = smoothgrad_sq(model, data.image_tensor(i), classes[i], cfg, i); break;
      case Method::VG: a = vargrad(model, data.image_tensor(i), classes[i], cfg, i); break;
      case Method::GC: a = gradcam(model, data.image_tensor(i), classes[i]); break;
      case Method::Sobel: a = sobel(data.image_tensor(i)); break;
      case Method::PixelRandom: a = pixel_random(data.height, data.width, sample_seed); break;
      case Method::BlockRandom: a = block_random(data.height, data.width, sample_seed); break;
      default: break;
    }
    a.sample_id = i;
    maps.push_back(std::move(a));
  }
  return maps;
}

}  // namespace roarbench
