#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "roarbench/dataset.hpp"
#include "roarbench/model.hpp"
#include "roarbench/tensor.hpp"

namespace roarbench {

enum class Method { Grad, GI, IG, SG, SG_SQ, VG, GC, Sobel, PixelRandom, BlockRandom };

std::string method_name(Method m);
Method parse_method(const std::string& name);

// Per-pixel importance scores produced by one estimator for one sample.
struct AttributionMap {
  Shape shape;                 // (C, H, W), or (H, W) for model-free and Grad-CAM maps
  std::vector<double> values;  // row-major
  Method method = Method::Grad;
  bool squared = false;
  std::size_t sample_id = 0;
  std::uint64_t seed = 0;
  std::string note;            // free-form provenance, e.g. the BlockRandom centre
};

struct EstimatorConfig {
  int ig_steps = 25;
  int ensemble_n = 15;
  double sg_noise_frac = 0.15;
  std::uint64_t seed = 0;

  void validate() const;
};

// x is one sample, (C, H, W) or (1, C, H, W); y is the explained class.
AttributionMap grad(const Classifier& model, const Tensor& x, int y);
AttributionMap grad_times_input(const Classifier& model, const Tensor& x, int y);

// Right-endpoint Riemann sum from the zero baseline:
//   a_i = x_i * (1/k) * sum_{j=1..k} d f_y(j/k * x) / d x_i
AttributionMap integrated_gradients(const Classifier& model, const Tensor& x, int y,
                                    const EstimatorConfig& cfg);

// The SmoothGrad family shares one set of noisy copies per (cfg.seed, sample_id):
// x + eps, eps ~ N(0, sigma^2) with sigma = sg_noise_frac * (max(x) - min(x)).
AttributionMap smoothgrad(const Classifier& model, const Tensor& x, int y, const EstimatorConfig& cfg,
                          std::size_t sample_id = 0);
AttributionMap smoothgrad_sq(const Classifier& model, const Tensor& x, int y,
                             const EstimatorConfig& cfg, std::size_t sample_id = 0);
// Unbiased (n - 1) variance of the noisy gradients.
AttributionMap vargrad(const Classifier& model, const Tensor& x, int y, const EstimatorConfig& cfg,
                       std::size_t sample_id = 0);

// ReLU(sum_k w_k A^k), w_k the spatial mean of d f_y / d A^k, at the
// resolution of the last convolutional feature map.
AttributionMap gradcam(const Classifier& model, const Tensor& x, int y);
// Same combination rule on explicit (K, H', W') activations and gradients.
AttributionMap gradcam_from_features(const Tensor& features, std::span<const double> feature_grad);

// g_x^2 + g_y^2 of 3x3 Sobel filters on the channel-mean image, reflect boundary.
AttributionMap sobel(const Tensor& x);

// I.i.d. uniform scores over an H x W grid.
AttributionMap pixel_random(std::size_t height, std::size_t width, std::uint64_t seed);
// Scores whose top-n set, for every n, is a rectangle grown around a random
// centre plus at most one partial edge strip; always 4-connected.
AttributionMap block_random(std::size_t height, std::size_t width, std::uint64_t seed);

// Elementwise square. Rejects VarGrad and maps that are already squared.
AttributionMap square(const AttributionMap& map);

// Attributes every sample of `data` at `classes[i]`; stochastic estimators
// use the stream (cfg.seed, sample index).
std::vector<AttributionMap> attribute_dataset(const Classifier& model, const Dataset& data,
                                              std::span<const int> classes, Method method,
                                              const EstimatorConfig& cfg);

}  // namespace roarbench
