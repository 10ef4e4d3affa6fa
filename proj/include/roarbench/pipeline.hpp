#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "roarbench/attribution.hpp"
#include "roarbench/dataset.hpp"
#include "roarbench/mask.hpp"
#include "roarbench/model.hpp"
#include "roarbench/postproc.hpp"

namespace roarbench {

// An estimator plus whether its map is squared: "grad", "grad2", "vg", ...
struct MethodSpec {
  Method method = Method::Grad;
  bool squared = false;

  std::string name() const;
  static MethodSpec parse(const std::string& name);
  friend bool operator==(const MethodSpec&, const MethodSpec&) = default;
};

enum class Mode { Roar, Road };
std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

struct ProtocolConfig {
  std::vector<double> drop_rates{0.1, 0.3, 0.5};
  int trials = 5;
  std::vector<MethodSpec> methods;
  std::vector<PostprocSpec> postprocs{PostprocSpec{}};
  Mode mode = Mode::Roar;
  double road_noise_std = 0.01;
  EstimatorConfig estimator;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  // When set, each finished cell is stored here and skipped on the next run.
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

struct RunRecord {
  std::string dataset;
  std::string method;
  std::string postproc;
  double drop_rate = 0.0;
  int trial = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double mean_mask_tv = 0.0;
  Mode mode = Mode::Roar;
  double wall_time = 0.0;  // seconds; not part of the determinism contract
  bool failed = false;
  std::string error;
};

struct CellInfo {
  std::string method;
  std::string postproc;
  double drop_rate = 0.0;
  int trial = 0;
};

// Optional observers. Called from worker threads when jobs > 1.
struct RunHooks {
  // The trained model of each trial, before any cell runs.
  std::function<void(int trial, const ConvNet& model)> on_model;
  // Masks of one cell: train masks (empty under ROAD) and test masks.
  std::function<void(const CellInfo&, std::span<const Mask> train, std::span<const Mask> test)> on_masks;
};

// Per-cell stream: hash(seed, method, postproc, t, trial).
std::uint64_t cell_seed(std::uint64_t seed, const std::string& method, const std::string& postproc, double t,
                        int trial);

// Remove-and-retrain. Records come out ordered by method, postproc, t, trial.
std::vector<RunRecord> roar_run(const ProtocolConfig& cfg, const SynthSpec& spec, const TrainConfig& train_cfg);
// Noisy Laplace imputation of the test set, scored with the original model.
std::vector<RunRecord> road_run(const ProtocolConfig& cfg, const SynthSpec& spec, const TrainConfig& train_cfg);
// Shared driver on pre-built data; dispatches on cfg.mode.
std::vector<RunRecord> run_protocol(const ProtocolConfig& cfg, const SynthData& data, const std::string& dataset,
                                    const TrainConfig& train_cfg, const RunHooks& hooks = {});

// Copy of `data` with masks[i] applied to sample i.
Dataset mask_dataset(const Dataset& data, std::span<const Mask> masks);

// Replaces masked pixels of one (H, W) plane by the discrete harmonic
// interpolant of the unmasked ones (Jacobi, max residual < tol). Returns the
// iteration count; throws NumericalError after 10*H*W iterations.
std::size_t impute_laplace(std::span<double> plane, const Mask& mask, double tol = 1e-6);
// Laplace imputation of every channel plus N(0, noise_std^2) on imputed pixels.
Dataset road_impute(const Dataset& data, std::span<const Mask> masks, double noise_std, std::uint64_t seed);

struct AggregateRow {
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation; 0 for one trial
  double mean_tv = 0.0;
  std::size_t count = 0;
};
using AggregateKey = std::tuple<std::string, std::string, double>;  // method, postproc, t
// Failed records are skipped.
std::map<AggregateKey, AggregateRow> aggregate(std::span<const RunRecord> records);

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace roarbench
