#include "doctest.h"

#include <cmath>
#include <queue>
#include <random>

#include "roarbench/attribution.hpp"
#include "roarbench/error.hpp"
#include "roarbench/mask.hpp"
#include "roarbench/rng.hpp"

using namespace roarbench;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

struct LinearFixture {
  static constexpr std::size_t C = 2, H = 3, W = 4, D = C * H * W;
  std::vector<double> w = random_values(3 * D, 1);
  LinearModel model{{C, H, W}, Tensor({3, D}, w), Tensor({3}, {0.1, -0.2, 0.3})};
  std::vector<double> xv = random_values(D, 2, 0.0, 1.0);
  Tensor x{{C, H, W}, xv};
  double w_at(int y, std::size_t i) const { return w[static_cast<std::size_t>(y) * D + i]; }
};

bool four_connected(const Mask& m) {
  const std::size_t n = m.popcount();
  if (n == 0) return true;
  std::vector<std::uint8_t> seen(m.bits.size(), 0);
  std::size_t start = 0;
  while (!m.bits[start]) ++start;
  std::queue<std::size_t> q;
  q.push(start);
  seen[start] = 1;
  std::size_t reached = 0;
  while (!q.empty()) {
    const std::size_t i = q.front();
    q.pop();
    ++reached;
    const std::size_t y = i / m.width, x = i % m.width;
    auto visit = [&](std::size_t j) {
      if (m.bits[j] && !seen[j]) {
        seen[j] = 1;
        q.push(j);
      }
    };
    if (y > 0) visit(i - m.width);
    if (y + 1 < m.height) visit(i + m.width);
    if (x > 0) visit(i - 1);
    if (x + 1 < m.width) visit(i + 1);
  }
  return reached == n;
}

double logit(const Classifier& m, const std::vector<double>& x, const Shape& shape, int y) {
  Shape s{1};
  s.insert(s.end(), shape.begin(), shape.end());
  const Tensor l = m.logits(Tensor(s, x));
  return l.data()[static_cast<std::size_t>(y)];
}

}  // namespace

TEST_CASE("method names round trip") {
  for (int i = 0; i < 10; ++i) {
    const auto m = static_cast<Method>(i);
    CHECK(parse_method(method_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_method("lime"), InvalidInput);
}

TEST_CASE("gradient family on a linear model is closed form") {
  LinearFixture f;
  const int y = 2;
  const auto g = grad(f.model, f.x, y);
  const auto gi = grad_times_input(f.model, f.x, y);
  CHECK(g.shape == Shape{2, 3, 4});
  for (std::size_t i = 0; i < f.D; ++i) {
    CHECK(g.values[i] == f.w_at(y, i));
    CHECK(gi.values[i] == f.w_at(y, i) * f.xv[i]);
  }
}

TEST_CASE("integrated gradients on a linear model equals x times W_y exactly") {
  LinearFixture f;
  for (int k : {1, 25}) {
    EstimatorConfig cfg;
    cfg.ig_steps = k;
    const auto a = integrated_gradients(f.model, f.x, 1, cfg);
    for (std::size_t i = 0; i < f.D; ++i) CHECK(a.values[i] == f.xv[i] * f.w_at(1, i));
  }
}

TEST_CASE("SmoothGrad on a linear model is the gradient; VarGrad is zero") {
  LinearFixture f;
  EstimatorConfig cfg;
  cfg.ensemble_n = 8;
  cfg.seed = 3;
  const auto sg = smoothgrad(f.model, f.x, 0, cfg);
  const auto vg = vargrad(f.model, f.x, 0, cfg);
  const auto sq = smoothgrad_sq(f.model, f.x, 0, cfg);
  for (std::size_t i = 0; i < f.D; ++i) {
    CHECK(sg.values[i] == f.w_at(0, i));
    CHECK(vg.values[i] == 0.0);
    CHECK(sq.values[i] == doctest::Approx(f.w_at(0, i) * f.w_at(0, i)).epsilon(1e-15));
  }
}

TEST_CASE("zero noise collapses the SmoothGrad family") {
  ConvNet net(1, 4, 11);
  Tensor x({1, 8, 8}, random_values(64, 12, 0.0, 1.0));
  EstimatorConfig cfg;
  cfg.sg_noise_frac = 0.0;
  cfg.ensemble_n = 5;
  const auto g = grad(net, x, 1);
  const auto sg = smoothgrad(net, x, 1, cfg);
  const auto vg = vargrad(net, x, 1, cfg);
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(sg.values[i] == g.values[i]);
    CHECK(vg.values[i] == 0.0);
  }
}

TEST_CASE("SmoothGrad and VarGrad match a direct re-implementation") {
  ConvNet net(1, 4, 21);
  const auto xv = random_values(64, 22, 0.0, 1.0);
  Tensor x({1, 8, 8}, xv);
  EstimatorConfig cfg;
  cfg.ensemble_n = 6;
  cfg.sg_noise_frac = 0.2;
  cfg.seed = 23;
  const std::size_t sample = 4;
  const auto sg = smoothgrad(net, x, 2, cfg, sample);
  const auto vg = vargrad(net, x, 2, cfg, sample);

  // Same noise stream, plain two-pass mean and variance.
  const auto [lo, hi] = std::minmax_element(xv.begin(), xv.end());
  const double sigma = 0.2 * (*hi - *lo);
  Rng rng(SeedBuilder(23).add("smoothgrad-noise").add(sample).seed());
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<std::vector<double>> grads;
  for (int j = 0; j < 6; ++j) {
    std::vector<double> noisy(64);
    for (std::size_t i = 0; i < 64; ++i) noisy[i] = xv[i] + sigma * n01(rng);
    const Tensor gj = input_gradient(net, Tensor({1, 1, 8, 8}, noisy), 2);
    grads.emplace_back(gj.data().begin(), gj.data().end());
  }
  for (std::size_t i = 0; i < 64; ++i) {
    double mean = 0.0;
    for (const auto& gj : grads) mean += gj[i];
    mean /= 6.0;
    double var = 0.0;
    for (const auto& gj : grads) var += (gj[i] - mean) * (gj[i] - mean);
    var /= 5.0;
    CHECK(sg.values[i] == doctest::Approx(mean).epsilon(1e-10).scale(1e-12));
    CHECK(vg.values[i] == doctest::Approx(var).epsilon(1e-9).scale(1e-14));
  }
}

TEST_CASE("VarGrad needs at least two samples") {
  LinearFixture f;
  EstimatorConfig cfg;
  cfg.ensemble_n = 1;
  CHECK_THROWS_AS(vargrad(f.model, f.x, 0, cfg), InvalidInput);
  cfg.ensemble_n = 0;
  CHECK_THROWS_AS(smoothgrad(f.model, f.x, 0, cfg), InvalidInput);
}

TEST_CASE("integrated gradients is complete on the conv net") {
  ConvNet net(1, 4, 31);
  const auto xv = random_values(64, 32, 0.0, 1.0);
  EstimatorConfig cfg;
  cfg.ig_steps = 300;
  const auto a = integrated_gradients(net, Tensor({1, 8, 8}, xv), 3, cfg);
  const double total = std::accumulate(a.values.begin(), a.values.end(), 0.0);
  const double gap = logit(net, xv, {1, 8, 8}, 3) - logit(net, std::vector<double>(64, 0.0), {1, 8, 8}, 3);
  CHECK(std::abs(total - gap) <= 1e-3 * std::abs(gap) + 1e-6);
}

TEST_CASE("Grad-CAM combination rule") {
  SUBCASE("zero feature maps give a zero map") {
    Tensor A({2, 2, 2}, std::vector<double>(8, 0.0));
    const auto cam = gradcam_from_features(A, random_values(8, 41));
    for (double v : cam.values) CHECK(v == 0.0);
  }
  SUBCASE("negative weight is clipped by the ReLU") {
    Tensor A({1, 2, 2}, {1, 2, 3, 4});
    const std::vector<double> g(4, -1.0);
    const auto cam = gradcam_from_features(A, g);
    for (double v : cam.values) CHECK(v == 0.0);
  }
  SUBCASE("hand computed 2x2") {
    // w0 = mean(1,1,1,1) = 1, w1 = mean(2,0,0,0) = 0.5
    Tensor A({2, 2, 2}, {1, 0, 0, 1, 0, 2, 2, 0});
    const std::vector<double> g{1, 1, 1, 1, 2, 0, 0, 0};
    const auto cam = gradcam_from_features(A, g);
    CHECK(cam.shape == Shape{2, 2});
    CHECK(cam.values == std::vector<double>{1, 1, 1, 1});
  }
  SUBCASE("mismatched gradient") {
    Tensor A({1, 2, 2}, {1, 2, 3, 4});
    CHECK_THROWS_AS(gradcam_from_features(A, std::vector<double>(3, 0.0)), InvalidInput);
  }
}

TEST_CASE("Grad-CAM on the conv net") {
  ConvNet net(1, 4, 51);
  Tensor x({1, 16, 16}, random_values(256, 52, 0.0, 1.0));
  const auto before = net.checksum();
  const auto cam = gradcam(net, x, 1);
  CHECK(cam.shape == Shape{8, 8});
  for (double v : cam.values) CHECK(v >= 0.0);
  CHECK(net.checksum() == before);
  LinearFixture f;
  CHECK_THROWS_AS(gradcam(f.model, f.x, 0), UnsupportedMethod);
}

TEST_CASE("Sobel on a constant image is zero") {
  Tensor x({2, 5, 5}, std::vector<double>(50, 0.7));
  const auto s = sobel(x);
  CHECK(s.shape == Shape{5, 5});
  CHECK(s.squared);
  for (double v : s.values) CHECK(v == 0.0);
}

TEST_CASE("Sobel on a vertical step edge") {
  // Columns 0-1 are 0, columns 2-3 are 1, four rows.
  std::vector<double> v(16);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) v[y * 4 + x] = x >= 2 ? 1.0 : 0.0;
  const auto s = sobel(Tensor({1, 4, 4}, v));
  // Next to the edge gx = (1 + 2 + 1) * (1 - 0) = 4, gy = 0; reflected borders see no change.
  for (std::size_t y = 0; y < 4; ++y) {
    CHECK(s.values[y * 4 + 0] == 0.0);
    CHECK(s.values[y * 4 + 1] == 16.0);
    CHECK(s.values[y * 4 + 2] == 16.0);
    CHECK(s.values[y * 4 + 3] == 0.0);
  }
}

TEST_CASE("model-free baselines ignore the model") {
  const SynthSpec spec{SynthKind::Shapes, 1, 16, 16, 4, 8, 4, 0.3, 9};
  const SynthData d = generate(spec);
  const ConvNet a(1, 4, 61), b(1, 4, 62);
  const std::vector<int> cls(d.test.labels);
  for (Method m : {Method::Sobel, Method::PixelRandom, Method::BlockRandom}) {
    EstimatorConfig cfg;
    cfg.seed = 63;
    const auto ma = attribute_dataset(a, d.test, cls, m, cfg);
    const auto mb = attribute_dataset(b, d.test, cls, m, cfg);
    for (std::size_t i = 0; i < ma.size(); ++i) CHECK(ma[i].values == mb[i].values);
  }
}

TEST_CASE("PixelRandom at t = 0.5 removes half the pixels") {
  const auto a = pixel_random(16, 16, 71);
  for (double v : a.values) CHECK((v >= 0.0 && v < 1.0));
  CHECK(top_t_mask(a, 0.5).popcount() == 128);
  CHECK(pixel_random(16, 16, 71).values == a.values);
  CHECK(pixel_random(16, 16, 72).values != a.values);
}

TEST_CASE("BlockRandom top sets are 4-connected at every size") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{16, 16}, {5, 9}, {1, 7}}) {
      const auto a = block_random(h, w, seed);
      std::vector<double> sorted = a.values;
      std::sort(sorted.begin(), sorted.end());
      // A permutation of 1..n.
      for (std::size_t i = 0; i < sorted.size(); ++i) REQUIRE(sorted[i] == static_cast<double>(i + 1));
      std::vector<std::uint8_t> bits(h * w, 0);
      std::vector<std::size_t> order(h * w);
      for (std::size_t i = 0; i < order.size(); ++i) order[h * w - static_cast<std::size_t>(a.values[i])] = i;
      for (std::size_t n = 0; n < order.size(); ++n) {
        bits[order[n]] = 1;
        const Mask m = make_mask(h, w, bits, 0.0, "block");
        REQUIRE(four_connected(m));
      }
    }
  }
  for (double t : {0.1, 0.3, 0.5, 0.9}) CHECK(four_connected(top_t_mask(block_random(16, 16, 81), t)));
}

TEST_CASE("BlockRandom masks have lower TV than PixelRandom ones") {
  double tv_block = 0.0, tv_pixel = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    tv_block += top_t_mask(block_random(16, 16, s), 0.3).tv;
    tv_pixel += top_t_mask(pixel_random(16, 16, s), 0.3).tv;
  }
  CHECK(tv_block < tv_pixel);
}

TEST_CASE("squaring rules") {
  LinearFixture f;
  const auto g = grad(f.model, f.x, 0);
  const auto g2 = square(g);
  CHECK(g2.squared);
  for (std::size_t i = 0; i < g.values.size(); ++i) CHECK(g2.values[i] == g.values[i] * g.values[i]);
  CHECK_THROWS_AS(square(g2), InvalidInput);
  EstimatorConfig cfg;
  CHECK_THROWS_AS(square(vargrad(f.model, f.x, 0, cfg)), InvalidInput);
  CHECK_THROWS_AS(square(sobel(f.x)), InvalidInput);
}

TEST_CASE("gradients are larger on the signal pixels of a trained model") {
  SynthSpec spec;
  spec.n_train = 1000;
  spec.n_test = 100;
  spec.seed = 91;
  const SynthData d = generate(spec);
  TrainConfig tc;
  tc.epochs = 8;
  tc.seed = 92;
  const ConvNet net = train(ConvNet(1, 4, 93), d.train, tc);
  REQUIRE(evaluate(net, d.test) > 0.8);
  const auto maps = attribute_dataset(net, d.test, d.test.labels, Method::Grad, EstimatorConfig{});
  double in = 0.0, out = 0.0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    for (std::size_t p = 0; p < 256; ++p) {
      if (d.test_masks[i].bits[p]) {
        in += std::abs(maps[i].values[p]);
        ++n_in;
      } else {
        out += std::abs(maps[i].values[p]);
        ++n_out;
      }
    }
  }
  CHECK(in / static_cast<double>(n_in) > out / static_cast<double>(n_out));
}

TEST_CASE("attribute_dataset agrees with the per-sample estimators") {
  const SynthSpec spec{SynthKind::Shapes, 1, 16, 16, 4, 8, 3, 0.3, 101};
  const SynthData d = generate(spec);
  const ConvNet net(1, 4, 102);
  EstimatorConfig cfg;
  cfg.ig_steps = 5;
  cfg.ensemble_n = 3;
  cfg.seed = 103;
  const auto gi = attribute_dataset(net, d.test, d.test.labels, Method::GI, cfg);
  const auto sg = attribute_dataset(net, d.test, d.test.labels, Method::SG, cfg);
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    const auto ref = grad_times_input(net, d.test.image_tensor(i), d.test.labels[i]);
    for (std::size_t p = 0; p < 256; ++p) CHECK(gi[i].values[p] == doctest::Approx(ref.values[p]).epsilon(1e-12));
    CHECK(sg[i].values == smoothgrad(net, d.test.image_tensor(i), d.test.labels[i], cfg, i).values);
  }
  const std::vector<int> short_classes{0};
  CHECK_THROWS_AS(attribute_dataset(net, d.test, short_classes, Method::Grad, cfg), InvalidInput);
}
