#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "roarbench/error.hpp"
#include "roarbench/model.hpp"
#include "roarbench/rng.hpp"
#include "roarbench/tensor.hpp"

using namespace roarbench;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Direct six-loop convolution with zero padding, for comparison.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t N = x.size(0), Ci = x.size(1), H = x.size(2), W = x.size(3);
  const std::size_t Co = w.size(0), k = w.size(2);
  const long r = static_cast<long>(k / 2);
  std::vector<double> out(N * Co * H * W, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          double s = b.data()[o];
          for (std::size_t c = 0; c < Ci; ++c)
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) {
                const long yy = static_cast<long>(y) + static_cast<long>(i) - r;
                const long xs = static_cast<long>(xx) + static_cast<long>(j) - r;
                if (yy < 0 || xs < 0 || yy >= static_cast<long>(H) || xs >= static_cast<long>(W)) continue;
                s += w.data()[((o * Ci + c) * k + i) * k + j] *
                     x.data()[((n * Ci + c) * H + static_cast<std::size_t>(yy)) * W + static_cast<std::size_t>(xs)];
              }
          out[((n * Co + o) * H + y) * W + xx] = s;
        }
  return out;
}

Dataset two_blob_dataset(std::size_t n, std::uint64_t seed) {
  // Class 0 is bright on the left half, class 1 on the right half.
  Dataset ds;
  ds.num_classes = 2;
  ds.channels = 1;
  ds.height = 8;
  ds.width = 8;
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 0.2);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 8; ++c) {
        const bool lit = (c < 4) == (y == 0);
        ds.pixels.push_back(static_cast<float>(u(rng) + (lit ? 0.8 : 0.0)));
      }
    ds.labels.push_back(y);
  }
  return ds;
}

}  // namespace

TEST_CASE("backward of sum gives ones") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  ops::sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("relu backward") {
  Tensor x({2}, {-1.0, 2.0}, true);
  ops::sum(ops::relu(x)).backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("backward on a non-scalar is rejected") {
  Tensor x({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(ops::relu(x).backward(), ContractViolation);
}

TEST_CASE("gradients accumulate across backward calls") {
  Tensor x({3}, {1, 2, 3}, true);
  ops::sum(x).backward();
  ops::sum(x).backward();
  for (double g : x.grad()) CHECK(g == 2.0);
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("no-grad guard records nothing") {
  Tensor x({2}, {1.0, 2.0}, true);
  Tensor y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = ops::sum(ops::relu(x));
  }
  CHECK(grad_enabled());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("conv2d forward matches a direct loop") {
  Tensor x({2, 3, 5, 6}, random_values(2 * 3 * 5 * 6, 1));
  Tensor w({4, 3, 3, 3}, random_values(4 * 3 * 9, 2));
  Tensor b({4}, random_values(4, 3));
  const Tensor y = ops::conv2d(x, w, b);
  const auto ref = naive_conv(x, w, b);
  REQUIRE(y.numel() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv2d backward matches finite differences") {
  Tensor x({1, 2, 4, 4}, random_values(32, 4), true);
  Tensor w({3, 2, 3, 3}, random_values(54, 5), true);
  Tensor b({3}, random_values(3, 6), true);
  // Weighted sum so that each output has a distinct upstream gradient.
  const auto coef = random_values(3 * 16, 7);
  auto loss = [&]() {
    const Tensor y = ops::conv2d(x, w, b);
    double s = 0.0;
    for (std::size_t i = 0; i < coef.size(); ++i) s += coef[i] * y.data()[i];
    return s;
  };
  // sum(y * coef) as a one-output linear layer over the flattened conv output.
  ops::sum(ops::linear(ops::conv2d(x, w, b), Tensor({1, 48}, coef), Tensor({1}, std::vector<double>{0.0})))
      .backward();
  for (Tensor t : {x, w, b}) {
    auto v = t.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + 1e-5;
      const double up = loss();
      v[i] = orig - 1e-5;
      const double down = loss();
      v[i] = orig;
      CHECK(t.grad()[i] == doctest::Approx((up - down) / 2e-5).epsilon(1e-6));
    }
  }
}

TEST_CASE("max pool keeps the first maximum and routes its gradient") {
  Tensor x({1, 1, 2, 4}, {1, 3, 3, 0, 3, 2, 0, 3}, true);
  const Tensor y = ops::max_pool2d(x, 2);
  REQUIRE(y.shape() == Shape{1, 1, 1, 2});
  CHECK(y.data()[0] == 3.0);
  CHECK(y.data()[1] == 3.0);
  ops::sum(y).backward();
  const std::vector<double> expected{0, 1, 1, 0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < 8; ++i) CHECK(x.grad()[i] == expected[i]);
}

TEST_CASE("global average pool and its gradient") {
  Tensor x({1, 2, 2, 2}, {1, 2, 3, 4, 10, 10, 10, 10}, true);
  const Tensor y = ops::global_avg_pool(x);
  CHECK(y.data()[0] == 2.5);
  CHECK(y.data()[1] == 10.0);
  ops::sum(y).backward();
  for (double g : x.grad()) CHECK(g == 0.25);
}

TEST_CASE("a zero dense layer yields zero logits") {
  ConvNet net(1, 4, 11);
  auto& p = net.params();
  for (auto& v : p.fc_w.mutable_data()) v = 0.0;
  for (auto& v : p.fc_b.mutable_data()) v = 0.0;
  Tensor x({3, 1, 8, 8}, random_values(3 * 64, 12, 0.0, 1.0));
  const Tensor logits = net.logits(x);
  for (double v : logits.data()) CHECK(v == 0.0);
}

TEST_CASE("cross-entropy of uniform logits is ln C") {
  for (int C : {2, 4, 10}) {
    Tensor logits({2, static_cast<std::size_t>(C)}, std::vector<double>(2 * static_cast<std::size_t>(C), 0.7));
    const int y[] = {0, C - 1};
    CHECK(ops::softmax_cross_entropy(logits, y).item() == doctest::Approx(std::log(C)).epsilon(1e-14));
  }
}

TEST_CASE("cross-entropy is stable for large logits") {
  Tensor logits({1, 2}, {1000.0, 0.0});
  const int y[] = {1};
  CHECK(ops::softmax_cross_entropy(logits, y).item() == doctest::Approx(1000.0));
}

TEST_CASE("gradient check on a linear model") {
  const Shape in{1, 4, 4};
  LinearModel lin(in, Tensor({3, 16}, random_values(48, 21)), Tensor({3}, random_values(3, 22)));
  Tensor x({1, 1, 4, 4}, random_values(16, 23));
  const auto r = gradient_check(lin, x, 1e-8, 1e-4);
  CHECK(r.excluded == 0);
  CHECK(r.checked == 48 + 3 + 16);
  CHECK(r.max_rel_error < 1e-8);
  CHECK(r.passed);
}

TEST_CASE("gradient check excludes a coordinate sitting on a ReLU kink") {
  ConvNet net(1, 2, 31);
  auto& p = net.params();
  // conv1 as identity on channel 0 with zero bias, so pre-activation == input.
  for (auto& v : p.conv1_w.mutable_data()) v = 0.0;
  p.conv1_w.mutable_data()[4] = 1.0;
  Tensor x({1, 1, 4, 4}, random_values(16, 32, 0.2, 1.0));
  x.mutable_data()[5] = 0.0;  // exactly at the kink of channel 0
  const auto r = gradient_check(net, x, 1e-4);
  CHECK(r.excluded >= 1);
  CHECK(std::find(r.excluded_input.begin(), r.excluded_input.end(), 5u) != r.excluded_input.end());
}

TEST_CASE("gradient check on the conv net") {
  ConvNet net(1, 4, 41);
  Tensor x({1, 1, 8, 8}, random_values(64, 42, 0.0, 1.0));
  const auto r = gradient_check(net, x, 1e-4);
  CHECK(r.checked > 0);
  CHECK(r.passed);
}

TEST_CASE("input gradient of a linear model is the class row") {
  const Shape in{1, 2, 3};
  const auto w = random_values(12, 51);
  LinearModel lin(in, Tensor({2, 6}, w), Tensor({2}, {0.5, -0.5}));
  const Tensor g = input_gradient(lin, Tensor({1, 2, 3}, random_values(6, 52)), 1);
  CHECK(g.shape() == Shape{1, 2, 3});
  for (std::size_t i = 0; i < 6; ++i) CHECK(g.data()[i] == w[6 + i]);
}

TEST_CASE("batched input gradients equal per-sample ones") {
  ConvNet net(1, 4, 61);
  Tensor batch({3, 1, 8, 8}, random_values(192, 62, 0.0, 1.0));
  const int ys[] = {0, 2, 3};
  const Tensor g = input_gradients(net, batch, ys);
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor one({1, 1, 8, 8}, std::vector<double>(batch.data().begin() + static_cast<long>(n * 64),
                                                 batch.data().begin() + static_cast<long>((n + 1) * 64)));
    const Tensor gi = input_gradient(net, one, ys[n]);
    for (std::size_t i = 0; i < 64; ++i) CHECK(g.data()[n * 64 + i] == doctest::Approx(gi.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("input gradient leaves the model untouched") {
  ConvNet net(1, 4, 71);
  const auto before = net.checksum();
  (void)input_gradient(net, Tensor({1, 1, 8, 8}, random_values(64, 72)), 0);
  CHECK(net.checksum() == before);
}

TEST_CASE("argmax breaks ties toward the lowest class") {
  const double a[] = {0.2, 0.7, 0.7, 0.1};
  CHECK(argmax_class(a) == 1);
  const double b[] = {3.0, 3.0};
  CHECK(argmax_class(b) == 0);
}

TEST_CASE("evaluate on a hand-built model") {
  // Logit c = x[c] for a 1x1x2 input: the prediction is the larger pixel.
  LinearModel lin({1, 1, 2}, Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0}));
  Dataset ds;
  ds.num_classes = 2;
  ds.height = 1;
  ds.width = 2;
  ds.pixels = {0.9f, 0.1f, 0.2f, 0.8f, 0.6f, 0.3f, 0.5f, 0.5f};
  ds.labels = {0, 1, 1, 0};
  // Predictions: 0, 1, 0, 0 (tie) -> correct on samples 0, 1, 3.
  CHECK(predict(lin, ds) == std::vector<int>{0, 1, 0, 0});
  CHECK(evaluate(lin, ds) == doctest::Approx(0.75));
}

TEST_CASE("training rejects a bad configuration") {
  ConvNet net(1, 2, 81);
  const Dataset ds = two_blob_dataset(8, 82);
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(fit(net, ds, cfg), InvalidInput);
  cfg.epochs = 1;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(fit(net, ds, cfg), InvalidInput);
}

TEST_CASE("training is deterministic") {
  const Dataset ds = two_blob_dataset(64, 91);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 92;
  const ConvNet a = train(ConvNet(1, 2, 93), ds, cfg);
  const ConvNet b = train(ConvNet(1, 2, 93), ds, cfg);
  CHECK(a.checksum() == b.checksum());
  cfg.seed = 94;
  const ConvNet c = train(ConvNet(1, 2, 93), ds, cfg);
  CHECK(a.checksum() != c.checksum());
}

TEST_CASE("training separates a trivially separable set") {
  const Dataset ds = two_blob_dataset(256, 101);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 102;
  const ConvNet net = train(ConvNet(1, 2, 103), ds, cfg);
  CHECK(evaluate(net, ds) >= 0.99);
}

TEST_CASE("learning rate schedules") {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  CHECK(learning_rate_at(cfg, 5, 10) == 0.1);
  cfg.lr_schedule = LrSchedule::Cosine;
  CHECK(learning_rate_at(cfg, 0, 10) == doctest::Approx(0.1));
  CHECK(learning_rate_at(cfg, 5, 10) == doctest::Approx(0.05));
  CHECK(parse_lr_schedule(to_string(LrSchedule::Cosine)) == LrSchedule::Cosine);
  CHECK_THROWS_AS(parse_lr_schedule("step"), InvalidInput);
}

TEST_CASE("model save and load round trip") {
  const ConvNet net(1, 4, 111);
  const auto path = std::filesystem::temp_directory_path() / "roarbench_test_model.rlmd";
  save_model(net, path);
  const ConvNet back = load_model(path);
  CHECK(back.checksum() == net.checksum());
  CHECK(back.num_classes() == 4);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_model(path), IoError);
}

TEST_CASE("clone is deep") {
  const ConvNet net(1, 3, 121);
  auto copy = net.clone();
  copy->parameters()[0].mutable_data()[0] += 1.0;
  CHECK(copy->checksum() != net.checksum());
}
