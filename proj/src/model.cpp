#include "roarbench/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

#include "roarbench/error.hpp"
#include "roarbench/rng.hpp"

namespace roarbench {

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor deep_copy(const Tensor& t) {
  Tensor c = t.detach();
  c.set_requires_grad(t.requires_grad());
  return c;
}

ConvNet::Params copy_params(const ConvNet::Params& p) {
  return {deep_copy(p.conv1_w), deep_copy(p.conv1_b), deep_copy(p.conv2_w),
          deep_copy(p.conv2_b), deep_copy(p.fc_w),    deep_copy(p.fc_b)};
}

Tensor as_batch(const Tensor& x) {
  if (x.dim() == 4) return x;
  if (x.dim() == 3) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    return Tensor(std::move(s), std::vector<double>(x.data().begin(), x.data().end()));
  }
  throw InvalidInput("expected a (C, H, W) sample or (N, C, H, W) batch, got " + shape_str(x.shape()));
}

void check_batch(const Classifier& model, const Tensor& batch) {
  if (!batch.defined() || batch.dim() != 4) {
    throw InvalidInput("batch must be (N, C, H, W), got " +
                       (batch.defined() ? shape_str(batch.shape()) : std::string("undefined")));
  }
  if (batch.size(1) != model.in_channels()) {
    throw InvalidInput("batch has " + std::to_string(batch.size(1)) + " channels, model expects " +
                       std::to_string(model.in_channels()));
  }
}

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw ParseError(ParseError::Kind::Truncated, static_cast<std::size_t>(is.gcount()),
                     "truncated model file " + path.string());
  }
  return v;
}

}  // namespace

std::size_t Classifier::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

std::uint64_t Classifier::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : parameters()) {
    for (double v : p.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

// --- ConvNet ---------------------------------------------------------------

ConvNet::ConvNet(std::size_t in_channels, int num_classes, std::uint64_t seed)
    : in_channels_(in_channels), num_classes_(num_classes) {
  if (in_channels == 0 || num_classes < 2) {
    throw InvalidInput("ConvNet needs at least one input channel and two classes");
  }
  Rng rng(SeedBuilder(seed).add("convnet-init").seed());
  const std::size_t k2 = kKernel * kKernel;
  const auto C = static_cast<std::size_t>(num_classes);
  params_.conv1_w = he_uniform({kConv1Channels, in_channels, kKernel, kKernel}, in_channels * k2, rng);
  params_.conv1_b = Tensor({kConv1Channels}, true);
  params_.conv2_w = he_uniform({kConv2Channels, kConv1Channels, kKernel, kKernel}, kConv1Channels * k2, rng);
  params_.conv2_b = Tensor({kConv2Channels}, true);
  params_.fc_w = he_uniform({C, kConv2Channels}, kConv2Channels, rng);
  params_.fc_b = Tensor({C}, true);
}

ConvNet::ConvNet(Params params) : params_(std::move(params)) {
  const auto& p = params_;
  for (const Tensor* t : {&p.conv1_w, &p.conv1_b, &p.conv2_w, &p.conv2_b, &p.fc_w, &p.fc_b}) {
    if (!t->defined()) throw InvalidInput("ConvNet: missing parameter tensor");
  }
  if (p.conv1_w.dim() != 4 || p.conv2_w.dim() != 4 || p.fc_w.dim() != 2 ||
      p.conv1_w.size(0) != kConv1Channels || p.conv2_w.size(0) != kConv2Channels ||
      p.conv2_w.size(1) != kConv1Channels || p.fc_w.size(1) != kConv2Channels ||
      p.conv1_b.numel() != kConv1Channels || p.conv2_b.numel() != kConv2Channels ||
      p.fc_b.numel() != p.fc_w.size(0)) {
    throw InvalidInput("ConvNet: parameter shapes do not match the fixed architecture");
  }
  in_channels_ = p.conv1_w.size(1);
  num_classes_ = static_cast<int>(p.fc_w.size(0));
}

ConvNet::ConvNet(const ConvNet& other)
    : params_(copy_params(other.params_)),
      in_channels_(other.in_channels_),
      num_classes_(other.num_classes_) {}

ConvNet& ConvNet::operator=(const ConvNet& other) {
  if (this != &other) {
    params_ = copy_params(other.params_);
    in_channels_ = other.in_channels_;
    num_classes_ = other.num_classes_;
  }
  return *this;
}

ForwardResult ConvNet::forward(const Tensor& batch) const {
  check_batch(*this, batch);
  const auto& p = params_;
  Tensor h = ops::relu(ops::conv2d(batch, p.conv1_w, p.conv1_b));
  h = ops::max_pool2d(h, kPool);
  Tensor features = ops::relu(ops::conv2d(h, p.conv2_w, p.conv2_b));
  Tensor logits = ops::linear(ops::global_avg_pool(features), p.fc_w, p.fc_b);
  return {std::move(logits), std::move(features)};
}

std::vector<Tensor> ConvNet::parameters() const {
  const auto& p = params_;
  return {p.conv1_w, p.conv1_b, p.conv2_w, p.conv2_b, p.fc_w, p.fc_b};
}

std::unique_ptr<Classifier> ConvNet::clone() const { return std::make_unique<ConvNet>(*this); }

std::vector<int> ConvNet::activation_pattern(const Tensor& batch) const {
  check_batch(*this, batch);
  NoGradGuard no_grad;
  const auto& p = params_;
  std::vector<int> pattern;
  const Tensor z1 = ops::conv2d(batch, p.conv1_w, p.conv1_b);
  for (double v : z1.data()) pattern.push_back(v > 0.0);
  const Tensor a1 = ops::relu(z1);
  // Winning offset inside each pooling window, same scan order as max_pool2d.
  const std::size_t NC = a1.size(0) * a1.size(1), H = a1.size(2), W = a1.size(3);
  const auto av = a1.data();
  for (std::size_t nc = 0; nc < NC; ++nc) {
    const double* ip = av.data() + nc * H * W;
    for (std::size_t yo = 0; yo < H / kPool; ++yo) {
      for (std::size_t xo = 0; xo < W / kPool; ++xo) {
        int best = 0;
        double best_v = ip[yo * kPool * W + xo * kPool];
        for (std::size_t dy = 0; dy < kPool; ++dy) {
          for (std::size_t dx = 0; dx < kPool; ++dx) {
            const double v = ip[(yo * kPool + dy) * W + xo * kPool + dx];
            if (v > best_v) {
              best_v = v;
              best = static_cast<int>(dy * kPool + dx);
            }
          }
        }
        pattern.push_back(best);
      }
    }
  }
  const Tensor z2 = ops::conv2d(ops::max_pool2d(a1, kPool), p.conv2_w, p.conv2_b);
  for (double v : z2.data()) pattern.push_back(v > 0.0);
  return pattern;
}

std::size_t ConvNet::parameter_count_for(std::size_t in_channels, int num_classes) {
  const std::size_t k2 = kKernel * kKernel;
  const auto C = static_cast<std::size_t>(num_classes);
  return kConv1Channels * in_channels * k2 + kConv1Channels + kConv2Channels * kConv1Channels * k2 +
         kConv2Channels + C * kConv2Channels + C;
}

// --- LinearModel -----------------------------------------------------------

LinearModel::LinearModel(Shape input_shape, Tensor weight, Tensor bias)
    : input_shape_(std::move(input_shape)), weight_(std::move(weight)), bias_(std::move(bias)) {
  if (input_shape_.size() != 3) throw InvalidInput("LinearModel input shape must be (C, H, W)");
  if (weight_.dim() != 2 || weight_.size(1) != shape_numel(input_shape_) || bias_.dim() != 1 ||
      bias_.size(0) != weight_.size(0)) {
    throw InvalidInput("LinearModel: weight must be (C, C_in*H*W) and bias (C)");
  }
}

LinearModel::LinearModel(const LinearModel& other)
    : input_shape_(other.input_shape_),
      weight_(deep_copy(other.weight_)),
      bias_(deep_copy(other.bias_)) {}

LinearModel& LinearModel::operator=(const LinearModel& other) {
  if (this != &other) {
    input_shape_ = other.input_shape_;
    weight_ = deep_copy(other.weight_);
    bias_ = deep_copy(other.bias_);
  }
  return *this;
}

ForwardResult LinearModel::forward(const Tensor& batch) const {
  check_batch(*this, batch);
  if (!std::equal(input_shape_.begin(), input_shape_.end(), batch.shape().begin() + 1)) {
    throw InvalidInput("LinearModel expects samples of shape " + shape_str(input_shape_) +
                       ", got batch " + shape_str(batch.shape()));
  }
  return {ops::linear(batch, weight_, bias_), Tensor{}};
}

std::unique_ptr<Classifier> LinearModel::clone() const { return std::make_unique<LinearModel>(*this); }

// --- training --------------------------------------------------------------

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidInput("epochs must be >= 1, got " + std::to_string(epochs));
  if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidInput("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInput("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw InvalidInput("weight_decay must be >= 0");
}

std::string to_string(LrSchedule s) { return s == LrSchedule::Cosine ? "cosine" : "constant"; }

LrSchedule parse_lr_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::Constant;
  if (s == "cosine") return LrSchedule::Cosine;
  throw InvalidInput("unknown lr schedule '" + s + "' (expected constant or cosine)");
}

double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (cfg.lr_schedule == LrSchedule::Constant || total_steps == 0) return cfg.learning_rate;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * frac));
}

void fit(Classifier& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw InvalidInput("cannot train on an empty dataset");
  for (int y : data.labels) {
    if (y < 0 || y >= model.num_classes()) {
      throw InvalidInput("label " + std::to_string(y) + " outside [0, " +
                         std::to_string(model.num_classes()) + ")");
    }
  }

  auto params = model.parameters();
  std::vector<std::vector<double>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.numel(), 0.0);

  Rng rng(SeedBuilder(cfg.seed).add("shuffle").seed());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const std::size_t steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      for (auto& p : params) p.zero_grad();

      const Tensor loss = ops::softmax_cross_entropy(model.logits(data.batch(idx)), data.batch_labels(idx));
      if (!std::isfinite(loss.item())) {
        throw TrainingDiverged(epoch, "training diverged at epoch " + std::to_string(epoch) +
                                          " (loss " + std::to_string(loss.item()) + ")");
      }
      loss.backward();

      const double lr = learning_rate_at(cfg, step++, total_steps);
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto w = params[k].mutable_data();
        auto& v = velocity[k];
        if (!params[k].has_grad()) continue;
        const auto g = params[k].grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double d = g[i] + cfg.weight_decay * w[i];
          v[i] = cfg.momentum * v[i] + d;
          w[i] -= lr * v[i];
        }
      }
    }
  }
  for (auto& p : params) {
    p.zero_grad();
    for (double w : p.data()) {
      if (!std::isfinite(w)) throw TrainingDiverged(cfg.epochs - 1, "training diverged: non-finite parameter");
    }
  }
}

int argmax_class(std::span<const double> logits) {
  if (logits.empty()) throw InvalidInput("argmax over empty logits");
  // max_element returns the first maximum, i.e. the lowest index on ties.
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

std::vector<int> predict(const Classifier& model, const Dataset& data) {
  NoGradGuard no_grad;
  constexpr std::size_t kChunk = 256;
  std::vector<int> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + kChunk); ++i) idx.push_back(i);
    const Tensor z = model.logits(data.batch(idx));
    const auto C = static_cast<std::size_t>(model.num_classes());
    for (std::size_t n = 0; n < idx.size(); ++n) out.push_back(argmax_class(z.data().subspan(n * C, C)));
  }
  return out;
}

double evaluate(const Classifier& model, const Dataset& data) {
  if (data.size() == 0) throw InvalidInput("cannot evaluate on an empty dataset");
  const auto pred = predict(model, data);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

Tensor input_gradients(const Classifier& model, const Tensor& batch, std::span<const int> ys) {
  check_batch(model, batch);
  for (int y : ys) {
    if (y < 0 || y >= model.num_classes()) {
      throw InvalidInput("class index " + std::to_string(y) + " out of range [0, " +
                         std::to_string(model.num_classes()) + ")");
    }
  }
  // The input is the only leaf on the tape. Working on a frozen copy keeps
  // the shared model untouched, so concurrent callers never race on it.
  const std::unique_ptr<Classifier> frozen = model.clone();
  for (auto p : frozen->parameters()) p.set_requires_grad(false);
  Tensor x = batch.detach();
  x.set_requires_grad(true);
  ops::sum(ops::pick(frozen->logits(x), ys)).backward();
  return Tensor(x.shape(), std::vector<double>(x.grad().begin(), x.grad().end()));
}

Tensor input_gradient(const Classifier& model, const Tensor& x, int y) {
  const Tensor b = as_batch(x);
  if (b.size(0) != 1) throw InvalidInput("input_gradient expects a single sample");
  const int ys[] = {y};
  Tensor g = input_gradients(model, b, ys);
  return Tensor(x.shape(), std::vector<double>(g.data().begin(), g.data().end()));
}

GradCheckReport gradient_check(const Classifier& model, const Tensor& x, double tol, double h) {
  if (!(tol > 0.0)) throw InvalidInput("gradient_check tolerance must be > 0");
  const std::unique_ptr<Classifier> work = model.clone();
  Tensor input = as_batch(x).detach();
  input.set_requires_grad(true);
  const std::vector<int> labels(input.size(0), 0);

  auto loss_at = [&]() {
    NoGradGuard no_grad;
    return ops::softmax_cross_entropy(work->logits(input), labels).item();
  };

  auto params = work->parameters();
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  ops::softmax_cross_entropy(work->logits(input), labels).backward();

  std::vector<Tensor> targets = params;
  targets.push_back(input);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : targets) analytic.emplace_back(t.grad().begin(), t.grad().end());
  for (auto& t : targets) t.zero_grad();

  const std::vector<int> base_pattern = work->activation_pattern(input);
  GradCheckReport report;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    auto values = targets[k].mutable_data();
    const bool is_input = k + 1 == targets.size();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = loss_at();
      const bool up_same = work->activation_pattern(input) == base_pattern;
      values[i] = orig - h;
      const double down = loss_at();
      const bool down_same = work->activation_pattern(input) == base_pattern;
      values[i] = orig;
      if (!up_same || !down_same) {
        ++report.excluded;
        if (is_input) report.excluded_input.push_back(i);
        continue;
      }
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      // Entries below 1e-8 in magnitude are compared absolutely; central
      // differences cannot resolve them relative to round-off.
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
      ++report.checked;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

void save_model(const ConvNet& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(path.string(), "cannot open for writing");
  os.write("RLMD", 4);
  write_pod<std::uint32_t>(os, 1);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.in_channels()));
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.num_classes()));
  for (const auto& p : model.parameters()) {
    for (double v : p.data()) write_pod(os, v);
  }
  if (!os) throw IoError(path.string(), "write failed");
}

ConvNet load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string(), "cannot open for reading");
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, "RLMD", 4) != 0) {
    throw ParseError(ParseError::Kind::BadMagic, 0, "not a model file: " + path.string());
  }
  if (read_pod<std::uint32_t>(is, path) != 1) {
    throw ParseError(ParseError::Kind::BadVersion, 4, "unsupported model version in " + path.string());
  }
  const auto in_ch = read_pod<std::uint32_t>(is, path);
  const auto classes = read_pod<std::uint32_t>(is, path);
  if (in_ch == 0 || in_ch > 64 || classes < 2 || classes > 4096) {
    throw ParseError(ParseError::Kind::DimensionOverflow, 8, "implausible model dimensions in " + path.string());
  }
  ConvNet model(in_ch, static_cast<int>(classes), 0);
  for (auto p : model.parameters()) {
    for (auto& v : p.mutable_data()) v = read_pod<double>(is, path);
  }
  return model;
}

}  // namespace roarbench
