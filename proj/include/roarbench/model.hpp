#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "roarbench/dataset.hpp"
#include "roarbench/tensor.hpp"

namespace roarbench {

struct ForwardResult {
  Tensor logits;    // (N, C)
  Tensor features;  // last convolutional activation (N, K, H', W'); undefined if the model has none
};

// A pre-softmax classifier f(x; theta).
class Classifier {
 public:
  virtual ~Classifier() = default;

  // Records a tape whenever any parameter or the batch requires a gradient.
  virtual ForwardResult forward(const Tensor& batch) const = 0;
  virtual int num_classes() const = 0;
  virtual std::size_t in_channels() const = 0;
  virtual std::vector<Tensor> parameters() const = 0;
  virtual std::unique_ptr<Classifier> clone() const = 0;

  // Piecewise-linear regime of the network at each sample: one entry per
  // ReLU unit (active or not) and per pooling window (winning offset).
  // Two inputs with equal patterns lie on the same linear piece.
  virtual std::vector<int> activation_pattern(const Tensor& /*batch*/) const { return {}; }

  Tensor logits(const Tensor& batch) const { return forward(batch).logits; }
  std::size_t parameter_count() const;
  // FNV-1a over the raw parameter bytes; used to prove a model was not mutated.
  std::uint64_t checksum() const;
};

// The fixed benchmark architecture:
//   conv3x3(8) - ReLU - maxpool2 - conv3x3(16) - ReLU - global average pool - dense(C)
// Copies are deep.
class ConvNet final : public Classifier {
 public:
  static constexpr std::size_t kConv1Channels = 8;
  static constexpr std::size_t kConv2Channels = 16;
  static constexpr std::size_t kKernel = 3;
  static constexpr std::size_t kPool = 2;

  struct Params {
    Tensor conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b;
  };

  // He-uniform weights and zero biases drawn from `seed`.
  ConvNet(std::size_t in_channels, int num_classes, std::uint64_t seed);
  explicit ConvNet(Params params);

  ConvNet(const ConvNet& other);
  ConvNet& operator=(const ConvNet& other);
  ConvNet(ConvNet&&) noexcept = default;
  ConvNet& operator=(ConvNet&&) noexcept = default;

  ForwardResult forward(const Tensor& batch) const override;
  int num_classes() const override { return num_classes_; }
  std::size_t in_channels() const override { return in_channels_; }
  std::vector<Tensor> parameters() const override;
  std::unique_ptr<Classifier> clone() const override;
  std::vector<int> activation_pattern(const Tensor& batch) const override;

  const Params& params() const { return params_; }
  Params& params() { return params_; }

  static std::size_t parameter_count_for(std::size_t in_channels, int num_classes);

 private:
  Params params_;
  std::size_t in_channels_ = 0;
  int num_classes_ = 0;
};

using Model = ConvNet;

// f(x) = W vec(x) + b over a fixed input shape. It has no convolutional
// features, which makes it the reference for closed-form attribution checks.
class LinearModel final : public Classifier {
 public:
  LinearModel(Shape input_shape, Tensor weight, Tensor bias);
  LinearModel(const LinearModel& other);
  LinearModel& operator=(const LinearModel& other);
  LinearModel(LinearModel&&) noexcept = default;
  LinearModel& operator=(LinearModel&&) noexcept = default;

  ForwardResult forward(const Tensor& batch) const override;
  int num_classes() const override { return static_cast<int>(weight_.size(0)); }
  std::size_t in_channels() const override { return input_shape_.at(0); }
  std::vector<Tensor> parameters() const override { return {weight_, bias_}; }
  std::unique_ptr<Classifier> clone() const override;

  const Tensor& weight() const { return weight_; }
  const Shape& input_shape() const { return input_shape_; }

 private:
  Shape input_shape_;
  Tensor weight_;
  Tensor bias_;
};

enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  int epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  LrSchedule lr_schedule = LrSchedule::Constant;
  std::uint64_t seed = 0;

  void validate() const;
};

std::string to_string(LrSchedule s);
LrSchedule parse_lr_schedule(const std::string& s);

// Learning rate for optimizer step `step` of `total_steps`.
double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps);

// SGD with momentum and L2 weight decay on mean softmax cross-entropy.
// Shuffling is driven by cfg.seed alone, so equal inputs give equal bits.
void fit(Classifier& model, const Dataset& data, const TrainConfig& cfg);

template <class M>
M train(M model, const Dataset& data, const TrainConfig& cfg) {
  fit(model, data, cfg);
  return model;
}

// Argmax over logits, lowest class index on ties.
int argmax_class(std::span<const double> logits);
std::vector<int> predict(const Classifier& model, const Dataset& data);
double evaluate(const Classifier& model, const Dataset& data);

// d f(x)_y / d x for a single sample; the result has the shape of x.
Tensor input_gradient(const Classifier& model, const Tensor& x, int y);

// Per-sample input gradients of a batch (N, C, H, W) at classes ys. Samples
// do not interact in these models, so one backward pass serves all of them.
Tensor input_gradients(const Classifier& model, const Tensor& batch, std::span<const int> ys);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;        // coordinates whose stencil crosses a kink
  std::vector<std::size_t> excluded_input;  // flat input indices among the excluded
  bool passed = false;
};

// Compares reverse-mode gradients of the mean cross-entropy against class 0
// with central differences (step h) over every parameter and input entry.
// A coordinate is excluded when x +- h changes the activation pattern.
GradCheckReport gradient_check(const Classifier& model, const Tensor& x, double tol,
                               double h = 1e-3);

// Raw parameter dump: "RLMD", u32 version, u32 in_channels, u32 classes, then
// every parameter as float64 in parameters() order.
void save_model(const ConvNet& model, const std::filesystem::path& path);
ConvNet load_model(const std::filesystem::path& path);

}  // namespace roarbench
