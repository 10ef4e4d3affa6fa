#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>

#include "roarbench/error.hpp"
#include "roarbench/pipeline.hpp"
#include "roarbench/rng.hpp"

using namespace roarbench;

namespace {

SynthSpec tiny_spec() {
  SynthSpec s;
  s.height = 8;
  s.width = 8;
  s.n_train = 64;
  s.n_test = 32;
  s.seed = 3;
  return s;
}

TrainConfig tiny_train() {
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 16;
  return tc;
}

ProtocolConfig tiny_protocol(Mode mode = Mode::Roar) {
  ProtocolConfig cfg;
  cfg.mode = mode;
  cfg.trials = 2;
  cfg.drop_rates = {0.1, 0.5};
  cfg.methods = {MethodSpec::parse("grad2"), MethodSpec::parse("rand")};
  cfg.postprocs = {PostprocSpec{}, PostprocSpec{PostprocKind::MaxPool, 1.0, 3, 4.0}};
  cfg.seed = 4;
  return cfg;
}

RunRecord rec(std::string method, double t, int trial, double acc) {
  RunRecord r;
  r.method = std::move(method);
  r.postproc = "plain";
  r.drop_rate = t;
  r.trial = trial;
  r.accuracy = acc;
  r.mean_mask_tv = acc / 2;
  return r;
}

bool same_results(const std::vector<RunRecord>& a, const std::vector<RunRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].method != b[i].method || a[i].postproc != b[i].postproc || a[i].drop_rate != b[i].drop_rate ||
        a[i].trial != b[i].trial || a[i].seed != b[i].seed || a[i].accuracy != b[i].accuracy ||
        a[i].mean_mask_tv != b[i].mean_mask_tv || a[i].failed != b[i].failed) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("method specs") {
  CHECK(MethodSpec::parse("grad2") == MethodSpec{Method::Grad, true});
  CHECK(MethodSpec::parse("ig") == MethodSpec{Method::IG, false});
  CHECK(MethodSpec::parse("gc2").name() == "gc2");
  CHECK(MethodSpec::parse("vg").name() == "vg");
  for (const char* bad : {"vg2", "sgsq2", "sobel2", "rand2", "block2", "foo", "", "2"}) {
    CHECK_THROWS_AS(MethodSpec::parse(bad), InvalidInput);
  }
  CHECK(parse_mode("road") == Mode::Road);
  CHECK_THROWS_AS(parse_mode("roam"), InvalidInput);
}

TEST_CASE("protocol validation") {
  ProtocolConfig cfg = tiny_protocol();
  cfg.drop_rates = {0.0};
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  cfg = tiny_protocol();
  cfg.trials = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  cfg = tiny_protocol();
  cfg.methods.clear();
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  cfg = tiny_protocol();
  CHECK_THROWS_AS(road_run(cfg, tiny_spec(), tiny_train()), InvalidInput);
}

TEST_CASE("cell seeds separate every coordinate") {
  const auto base = cell_seed(1, "grad2", "plain", 0.1, 0);
  CHECK(base == cell_seed(1, "grad2", "plain", 0.1, 0));
  CHECK(base != cell_seed(2, "grad2", "plain", 0.1, 0));
  CHECK(base != cell_seed(1, "grad", "plain", 0.1, 0));
  CHECK(base != cell_seed(1, "grad2", "gaussian", 0.1, 0));
  CHECK(base != cell_seed(1, "grad2", "plain", 0.3, 0));
  CHECK(base != cell_seed(1, "grad2", "plain", 0.1, 1));
  // A rate read back from text keys the same stream.
  CHECK(base == cell_seed(1, "grad2", "plain", std::stod("0.100000"), 0));
}

TEST_CASE("aggregate") {
  SUBCASE("two trials") {
    const std::vector<RunRecord> r{rec("grad2", 0.1, 0, 0.5), rec("grad2", 0.1, 1, 0.7)};
    const auto agg = aggregate(r);
    const auto& row = agg.at({"grad2", "plain", 0.1});
    CHECK(row.mean_accuracy == doctest::Approx(0.6));
    CHECK(row.std_accuracy == doctest::Approx(std::sqrt(0.02)));
    CHECK(row.std_accuracy == doctest::Approx(0.141421356).epsilon(1e-8));
    CHECK(row.mean_tv == doctest::Approx(0.3));
    CHECK(row.count == 2);
  }
  SUBCASE("single trial") {
    const std::vector<RunRecord> r{rec("ig2", 0.5, 0, 0.4)};
    const auto& row = aggregate(r).at({"ig2", "plain", 0.5});
    CHECK(row.std_accuracy == 0.0);
    CHECK(row.count == 1);
  }
  SUBCASE("order invariance") {
    std::vector<RunRecord> r;
    Rng rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (const char* m : {"a", "b"})
      for (double t : {0.1, 0.3})
        for (int trial = 0; trial < 5; ++trial) r.push_back(rec(m, t, trial, u(rng)));
    const auto ref = aggregate(r);
    for (int k = 0; k < 5; ++k) {
      std::shuffle(r.begin(), r.end(), rng);
      const auto agg = aggregate(r);
      REQUIRE(agg.size() == ref.size());
      for (const auto& [key, row] : ref) {
        CHECK(agg.at(key).mean_accuracy == doctest::Approx(row.mean_accuracy).epsilon(1e-14));
        CHECK(agg.at(key).std_accuracy == doctest::Approx(row.std_accuracy).epsilon(1e-12));
      }
    }
  }
  SUBCASE("failed records are skipped") {
    std::vector<RunRecord> r{rec("grad2", 0.1, 0, 0.5), rec("grad2", 0.1, 1, 0.7)};
    r[1].failed = true;
    r[1].accuracy = std::nan("");
    const auto& row = aggregate(r).at({"grad2", "plain", 0.1});
    CHECK(row.mean_accuracy == 0.5);
    CHECK(row.count == 1);
  }
}

TEST_CASE("Laplace imputation") {
  SUBCASE("single pixel takes the mean of its four neighbours") {
    std::vector<double> plane{0, 1, 0, 2, 9, 3, 0, 4, 0};
    std::vector<std::uint8_t> bits(9, 0);
    bits[4] = 1;
    const Mask m = make_mask(3, 3, bits, 0.0, "t");
    impute_laplace(plane, m);
    CHECK(plane[4] == (1.0 + 2.0 + 3.0 + 4.0) / 4.0);
    CHECK(plane[0] == 0.0);
    CHECK(plane[1] == 1.0);
  }
  SUBCASE("empty mask is the identity") {
    std::vector<double> plane{1, 2, 3, 4};
    const auto copy = plane;
    const Mask m = make_mask(2, 2, std::vector<std::uint8_t>(4, 0), 0.0, "t");
    CHECK(impute_laplace(plane, m) == 0);
    CHECK(plane == copy);
  }
  SUBCASE("linear ramp is reproduced") {
    // A harmonic function is its own interpolant.
    std::vector<double> plane(36);
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 6; ++x) plane[y * 6 + x] = 0.5 * static_cast<double>(x) + 0.25 * static_cast<double>(y);
    const auto ref = plane;
    std::vector<std::uint8_t> bits(36, 0);
    for (std::size_t y = 1; y < 5; ++y)
      for (std::size_t x = 1; x < 5; ++x) {
        bits[y * 6 + x] = 1;
        plane[y * 6 + x] = 0.0;
      }
    impute_laplace(plane, make_mask(6, 6, bits, 0.0, "t"), 1e-12);
    for (std::size_t i = 0; i < 36; ++i) CHECK(plane[i] == doctest::Approx(ref[i]).epsilon(1e-9));
  }
  SUBCASE("fully masked grid has no boundary and is filled with zeros") {
    std::vector<double> plane(4, 1.0);
    const Mask m = make_mask(2, 2, std::vector<std::uint8_t>(4, 1), 0.0, "t");
    CHECK(impute_laplace(plane, m) == 0);
    CHECK(plane == std::vector<double>(4, 0.0));
  }
}

TEST_CASE("ROAD imputation only touches masked pixels") {
  const SynthData d = generate(tiny_spec());
  std::vector<Mask> masks;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    masks.push_back(top_t_mask(pixel_random(8, 8, i), 0.3));
  }
  const Dataset a = road_impute(d.test, masks, 0.01, 7);
  const Dataset b = road_impute(d.test, masks, 0.01, 7);
  CHECK(same_samples(a, b));
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    for (std::size_t p = 0; p < 64; ++p) {
      if (!masks[i].bits[p]) CHECK(a.image(i)[p] == d.test.image(i)[p]);
    }
  }
  const std::vector<Mask> empty(d.test.size(), make_mask(8, 8, std::vector<std::uint8_t>(64, 0), 0.0, "t"));
  CHECK(same_samples(road_impute(d.test, empty, 0.01, 7), d.test));
}

TEST_CASE("masked datasets drop exactly round(t*H*W) pixels") {
  ProtocolConfig cfg = tiny_protocol();
  const SynthData d = generate(tiny_spec());
  std::mutex mu;
  std::size_t seen = 0;
  RunHooks hooks;
  hooks.on_masks = [&](const CellInfo& c, std::span<const Mask> train, std::span<const Mask> test) {
    std::lock_guard lock(mu);
    ++seen;
    CHECK(train.size() == d.train.size());
    CHECK(test.size() == d.test.size());
    for (const auto& m : train) CHECK(m.popcount() == drop_count(c.drop_rate, 64));
    for (const auto& m : test) CHECK(m.popcount() == drop_count(c.drop_rate, 64));
    const Dataset masked = mask_dataset(d.train, train);
    for (std::size_t i = 0; i < masked.size(); ++i) {
      for (std::size_t p = 0; p < 64; ++p) {
        if (train[i].bits[p]) CHECK(masked.image(i)[p] == 0.0f);
      }
    }
  };
  const auto records = run_protocol(cfg, d, "shapes", tiny_train(), hooks);
  CHECK(seen == records.size());
}

TEST_CASE("ROAR records are ordered, complete and reproducible") {
  const ProtocolConfig cfg = tiny_protocol();
  const auto a = roar_run(cfg, tiny_spec(), tiny_train());
  REQUIRE(a.size() == 2 * 2 * 2 * 2);
  std::size_t i = 0;
  for (const char* m : {"grad2", "rand"})
    for (const char* p : {"plain", "maxpool"})
      for (double t : {0.1, 0.5})
        for (int trial = 0; trial < 2; ++trial, ++i) {
          CHECK(a[i].method == m);
          CHECK(a[i].postproc == p);
          CHECK(a[i].drop_rate == t);
          CHECK(a[i].trial == trial);
          CHECK(a[i].mode == Mode::Roar);
          CHECK_FALSE(a[i].failed);
          CHECK((a[i].accuracy >= 0.0 && a[i].accuracy <= 1.0));
          CHECK(a[i].seed == cell_seed(cfg.seed, m, p, t, trial));
        }
  CHECK(same_results(a, roar_run(cfg, tiny_spec(), tiny_train())));
  ProtocolConfig threaded = cfg;
  threaded.jobs = 3;
  CHECK(same_results(a, roar_run(threaded, tiny_spec(), tiny_train())));
}

TEST_CASE("adding a method leaves existing cells unchanged") {
  ProtocolConfig cfg = tiny_protocol();
  cfg.methods = {MethodSpec::parse("rand")};
  cfg.postprocs = {PostprocSpec{}};
  cfg.trials = 1;
  const auto one = roar_run(cfg, tiny_spec(), tiny_train());
  cfg.methods.insert(cfg.methods.begin(), MethodSpec::parse("block"));
  const auto two = roar_run(cfg, tiny_spec(), tiny_train());
  REQUIRE(two.size() == 2 * one.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(two[one.size() + i].accuracy == one[i].accuracy);
    CHECK(two[one.size() + i].mean_mask_tv == one[i].mean_mask_tv);
  }
}

TEST_CASE("ROAD keeps the original model") {
  ProtocolConfig cfg = tiny_protocol(Mode::Road);
  const SynthData d = generate(tiny_spec());
  std::vector<std::uint64_t> sums;
  RunHooks hooks;
  hooks.on_model = [&](int, const ConvNet& m) { sums.push_back(m.checksum()); };
  const auto recs = run_protocol(cfg, d, "shapes", tiny_train(), hooks);
  CHECK(sums.size() == 2);
  for (const auto& r : recs) {
    CHECK(r.mode == Mode::Road);
    CHECK(r.mean_mask_tv > 0.0);
  }
  // Same trial seeds give the same trained models.
  const auto again = run_protocol(cfg, d, "shapes", tiny_train(), hooks);
  CHECK(sums.size() == 4);
  CHECK(sums[0] == sums[2]);
  CHECK(sums[1] == sums[3]);
  CHECK(same_results(recs, again));
}

TEST_CASE("diverged training marks records failed") {
  ProtocolConfig cfg = tiny_protocol();
  cfg.methods = {MethodSpec::parse("rand")};
  cfg.trials = 1;
  TrainConfig tc = tiny_train();
  tc.learning_rate = 1e300;
  tc.momentum = 0.0;
  const auto recs = roar_run(cfg, tiny_spec(), tc);
  REQUIRE_FALSE(recs.empty());
  for (const auto& r : recs) {
    CHECK(r.failed);
    CHECK(std::isnan(r.accuracy));
    CHECK_FALSE(r.error.empty());
  }
  CHECK(aggregate(recs).empty());
}

TEST_CASE("checkpoints resume finished cells") {
  const auto dir = std::filesystem::temp_directory_path() / "roarbench_test_ckpt";
  std::filesystem::remove_all(dir);
  ProtocolConfig cfg = tiny_protocol();
  cfg.methods = {MethodSpec::parse("rand")};
  cfg.postprocs = {PostprocSpec{}};
  cfg.checkpoint_dir = dir;
  const auto first = roar_run(cfg, tiny_spec(), tiny_train());
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) files += e.path().extension() == ".cell";
  CHECK(files == first.size());

  // Tamper with one stored accuracy: the resumed run must return it verbatim,
  // which proves the cell was loaded rather than recomputed.
  const auto resumed_plain = roar_run(cfg, tiny_spec(), tiny_train());
  CHECK(same_results(first, resumed_plain));
  const auto cell = dir / "rand_plain_0.100000_1.cell";
  REQUIRE(std::filesystem::exists(cell));
  std::string fp, acc, rest;
  {
    std::ifstream in(cell);
    in >> fp >> acc;
    std::getline(in, rest);
  }
  {
    std::ofstream out(cell, std::ios::trunc);
    out << fp << " 0.125" << rest << "\n";
  }
  const auto resumed = roar_run(cfg, tiny_spec(), tiny_train());
  std::size_t changed = 0;
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (resumed[i].drop_rate == 0.1 && resumed[i].trial == 1) {
      CHECK(resumed[i].accuracy == 0.125);
      ++changed;
    } else {
      CHECK(resumed[i].accuracy == first[i].accuracy);
    }
  }
  CHECK(changed == 1);

  // Different training config invalidates every checkpoint.
  TrainConfig other = tiny_train();
  other.epochs = 2;
  const auto fresh = roar_run(cfg, tiny_spec(), other);
  CHECK(fresh.size() == first.size());
  std::filesystem::remove_all(dir);
}

TEST_CASE("parallel_for runs every index and reports the first error") {
  std::vector<int> hit(50, 0);
  parallel_for(50, 4, [&](std::size_t i) { hit[i] += 1; });
  CHECK(std::all_of(hit.begin(), hit.end(), [](int h) { return h == 1; }));
  try {
    parallel_for(20, 3, [](std::size_t i) {
      if (i == 7 || i == 13) throw InvalidInput("boom " + std::to_string(i));
    });
    FAIL("expected an exception");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()) == "boom 7");
  }
}
