#include "roarbench/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "roarbench/error.hpp"
#include "roarbench/rng.hpp"

namespace roarbench {

namespace {

bool squarable(Method m) {
  return m != Method::VG && m != Method::SG_SQ && m != Method::Sobel && m != Method::PixelRandom &&
         m != Method::BlockRandom;
}

std::string rate_str(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", t);
  return buf;
}

struct Trial {
  int index = 0;
  std::uint64_t seed = 0;
};

struct Cell {
  std::size_t method = 0, postproc = 0, rate = 0;
  int trial = 0;
  std::size_t slot = 0;  // position in the output
};

// Fingerprint of everything a cell result depends on, so stale checkpoints
// from another configuration are never reused.
std::uint64_t fingerprint(const ProtocolConfig& cfg, const SynthData& data, const TrainConfig& tc) {
  SeedBuilder b(cfg.seed);
  b.add(to_string(cfg.mode)).add(cfg.road_noise_std);
  b.add(cfg.estimator.ig_steps).add(cfg.estimator.ensemble_n).add(cfg.estimator.sg_noise_frac);
  b.add(cfg.estimator.seed);
  b.add(tc.epochs).add(tc.batch_size).add(tc.learning_rate).add(tc.momentum).add(tc.weight_decay);
  b.add(to_string(tc.lr_schedule));
  for (const Dataset* d : {&data.train, &data.test}) {
    b.add(d->size()).add(d->channels).add(d->height).add(d->width).add(d->num_classes);
    std::uint64_t h = 1469598103934665603ull;
    for (float p : d->pixels) {
      std::uint32_t u;
      std::memcpy(&u, &p, sizeof u);
      h = (h ^ u) * 1099511628211ull;
    }
    for (int l : d->labels) h = (h ^ static_cast<std::uint32_t>(l)) * 1099511628211ull;
    b.add(h);
  }
  for (const auto& p : cfg.postprocs) b.add(to_string(p.kind)).add(p.sigma).add(p.kernel).add(p.truncate);
  return b.seed();
}

std::filesystem::path checkpoint_path(const ProtocolConfig& cfg, const RunRecord& r) {
  return cfg.checkpoint_dir /
         (r.method + "_" + r.postproc + "_" + rate_str(r.drop_rate) + "_" + std::to_string(r.trial) + ".cell");
}

std::optional<RunRecord> load_checkpoint(const std::filesystem::path& path, std::uint64_t fp, RunRecord r) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::uint64_t stored = 0;
  int failed = 0;
  if (!(in >> stored >> r.accuracy >> r.mean_mask_tv >> r.seed >> failed >> r.wall_time) || stored != fp) {
    return std::nullopt;
  }
  r.failed = failed != 0;
  return r;
}

void save_checkpoint(const std::filesystem::path& path, std::uint64_t fp, const RunRecord& r) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    char buf[256];
    std::snprintf(buf, sizeof buf, "%llu %.17g %.17g %llu %d %.17g\n", static_cast<unsigned long long>(fp),
                  r.accuracy, r.mean_mask_tv, static_cast<unsigned long long>(r.seed), r.failed ? 1 : 0,
                  r.wall_time);
    out << buf;
    if (!out) throw IoError(tmp, "cannot write checkpoint");
  }
  std::filesystem::rename(tmp, path);
}

std::vector<AttributionMap> attribute(const ConvNet& model, const Dataset& data, const MethodSpec& m,
                                      const EstimatorConfig& est) {
  const std::vector<int> classes = predict(model, data);
  auto maps = attribute_dataset(model, data, classes, m.method, est);
  if (m.squared) {
    for (auto& a : maps) a = square(a);
  }
  return maps;
}

std::vector<Mask> make_masks(const std::vector<AttributionMap>& maps, const PostprocSpec& pp, double t,
                             std::size_t H, std::size_t W) {
  std::vector<Mask> masks;
  masks.reserve(maps.size());
  for (const auto& a : maps) masks.push_back(top_t_mask(postprocess(pp, a, H, W), t));
  return masks;
}

double mean_tv(std::span<const Mask> masks) {
  double s = 0.0;
  for (const auto& m : masks) s += m.tv;
  return masks.empty() ? 0.0 : s / static_cast<double>(masks.size());
}

}  // namespace

std::string MethodSpec::name() const { return method_name(method) + (squared ? "2" : ""); }

MethodSpec MethodSpec::parse(const std::string& name) {
  MethodSpec m;
  std::string base = name;
  if (!base.empty() && base.back() == '2') {
    m.squared = true;
    base.pop_back();
  }
  m.method = parse_method(base);
  if (m.squared && !squarable(m.method)) throw InvalidInput("method '" + base + "' cannot be squared");
  return m;
}

std::string to_string(Mode m) { return m == Mode::Roar ? "roar" : "road"; }

Mode parse_mode(const std::string& s) {
  if (s == "roar") return Mode::Roar;
  if (s == "road") return Mode::Road;
  throw InvalidInput("unknown mode '" + s + "' (expected roar or road)");
}

void ProtocolConfig::validate() const {
  if (drop_rates.empty()) throw InvalidInput("at least one drop rate is required");
  for (double t : drop_rates) {
    if (!(t > 0.0 && t < 1.0)) throw InvalidInput("drop rate " + std::to_string(t) + " is outside (0, 1)");
  }
  if (trials < 1) throw InvalidInput("trials must be >= 1");
  if (methods.empty()) throw InvalidInput("at least one method is required");
  if (postprocs.empty()) throw InvalidInput("at least one post-processing is required");
  for (const auto& p : postprocs) p.validate();
  for (const auto& m : methods) {
    if (m.squared && !squarable(m.method)) throw InvalidInput(m.name() + " is not a valid method");
  }
  if (!(road_noise_std >= 0.0)) throw InvalidInput("road_noise_std must be >= 0");
  estimator.validate();
}

std::uint64_t cell_seed(std::uint64_t seed, const std::string& method, const std::string& postproc, double t,
                        int trial) {
  return SeedBuilder(seed).add("cell").add(method).add(postproc).add(t).add(trial).seed();
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t error_index = n;
  std::exception_ptr error;
  {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < std::min(jobs, n); ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (i < error_index) {
              error_index = i;
              error = std::current_exception();
            }
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

Dataset mask_dataset(const Dataset& data, std::span<const Mask> masks) {
  if (masks.size() != data.size()) throw InvalidInput("one mask per sample is required");
  Dataset out = data;
  for (std::size_t i = 0; i < out.size(); ++i) apply_mask_inplace(out.image(i), out.channels, masks[i]);
  return out;
}

std::size_t impute_laplace(std::span<double> plane, const Mask& mask, double tol) {
  const std::size_t H = mask.height, W = mask.width;
  if (plane.size() != H * W) throw InvalidInput("impute_laplace: plane does not match mask");
  std::vector<std::size_t> holes;
  double known = 0.0;
  for (std::size_t i = 0; i < H * W; ++i) {
    if (mask.bits[i]) holes.push_back(i);
    else known += plane[i];
  }
  if (holes.empty()) return 0;
  const std::size_t n_known = H * W - holes.size();
  const double init = n_known > 0 ? known / static_cast<double>(n_known) : 0.0;
  for (std::size_t i : holes) plane[i] = init;
  if (n_known == 0) return 0;

  std::vector<double> next(holes.size());
  const std::size_t max_iter = 10 * H * W;
  double residual = 0.0;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    residual = 0.0;
    for (std::size_t k = 0; k < holes.size(); ++k) {
      const std::size_t i = holes[k], y = i / W, x = i % W;
      double sum = 0.0;
      int count = 0;
      // up, down, left, right
      if (y > 0) sum += plane[i - W], ++count;
      if (y + 1 < H) sum += plane[i + W], ++count;
      if (x > 0) sum += plane[i - 1], ++count;
      if (x + 1 < W) sum += plane[i + 1], ++count;
      next[k] = sum / count;
      residual = std::max(residual, std::abs(next[k] - plane[i]));
    }
    for (std::size_t k = 0; k < holes.size(); ++k) plane[holes[k]] = next[k];
    if (residual < tol) return it;
  }
  throw NumericalError("Laplace imputation did not converge: " + std::to_string(holes.size()) +
                       " unknowns on a " + std::to_string(H) + "x" + std::to_string(W) + " grid, residual " +
                       std::to_string(residual) + " after " + std::to_string(max_iter) + " iterations");
}

Dataset road_impute(const Dataset& data, std::span<const Mask> masks, double noise_std, std::uint64_t seed) {
  if (masks.size() != data.size()) throw InvalidInput("one mask per sample is required");
  Dataset out = data;
  const std::size_t plane = data.height * data.width;
  std::vector<double> buf(plane);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(SeedBuilder(seed).add(i).seed());
    auto img = out.image(i);
    for (std::size_t c = 0; c < out.channels; ++c) {
      auto px = img.subspan(c * plane, plane);
      std::copy(px.begin(), px.end(), buf.begin());
      impute_laplace(buf, masks[i]);
      for (std::size_t p = 0; p < plane; ++p) {
        if (!masks[i].bits[p]) continue;
        double v = buf[p];
        if (noise_std > 0.0) v += noise_std * noise(rng);
        px[p] = static_cast<float>(v);
      }
    }
  }
  return out;
}

std::vector<RunRecord> run_protocol(const ProtocolConfig& cfg, const SynthData& data, const std::string& dataset,
                                    const TrainConfig& train_cfg, const RunHooks& hooks) {
  cfg.validate();
  train_cfg.validate();
  data.train.validate();
  data.test.validate();
  const bool roar = cfg.mode == Mode::Roar;
  const std::size_t H = data.train.height, W = data.train.width;
  const std::uint64_t fp = fingerprint(cfg, data, train_cfg);
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  const std::size_t nm = cfg.methods.size(), np = cfg.postprocs.size(), nt = cfg.drop_rates.size();
  std::vector<RunRecord> records(nm * np * nt * static_cast<std::size_t>(cfg.trials));
  std::vector<bool> done(records.size(), false);
  auto slot_of = [&](std::size_t m, std::size_t p, std::size_t r, int trial) {
    return ((m * np + p) * nt + r) * static_cast<std::size_t>(cfg.trials) + static_cast<std::size_t>(trial);
  };

  for (std::size_t m = 0; m < nm; ++m) {
    for (std::size_t p = 0; p < np; ++p) {
      for (std::size_t r = 0; r < nt; ++r) {
        for (int trial = 0; trial < cfg.trials; ++trial) {
          RunRecord& rec = records[slot_of(m, p, r, trial)];
          rec.dataset = dataset;
          rec.method = cfg.methods[m].name();
          rec.postproc = to_string(cfg.postprocs[p].kind);
          rec.drop_rate = cfg.drop_rates[r];
          rec.trial = trial;
          rec.mode = cfg.mode;
          rec.seed = cell_seed(cfg.seed, rec.method, rec.postproc, rec.drop_rate, trial);
          if (!cfg.checkpoint_dir.empty()) {
            if (auto saved = load_checkpoint(checkpoint_path(cfg, rec), fp, rec)) {
              rec = *saved;
              done[slot_of(m, p, r, trial)] = true;
            }
          }
        }
      }
    }
  }

  for (int trial = 0; trial < cfg.trials; ++trial) {
    std::vector<Cell> cells;
    std::vector<bool> method_needed(nm, false);
    for (std::size_t m = 0; m < nm; ++m) {
      for (std::size_t p = 0; p < np; ++p) {
        for (std::size_t r = 0; r < nt; ++r) {
          const std::size_t slot = slot_of(m, p, r, trial);
          if (done[slot]) continue;
          cells.push_back({m, p, r, trial, slot});
          method_needed[m] = true;
        }
      }
    }
    if (cells.empty()) continue;

    // One model per trial explains every cell of that trial.
    const std::uint64_t trial_seed = SeedBuilder(cfg.seed).add("trial").add(trial).seed();
    TrainConfig tc = train_cfg;
    tc.seed = trial_seed;
    std::optional<ConvNet> model;
    std::string model_error;
    try {
      model = train(ConvNet(data.train.channels, data.train.num_classes, trial_seed), data.train, tc);
    } catch (const TrainingDiverged& e) {
      model_error = e.what();
    }
    if (!model) {
      for (const Cell& c : cells) {
        records[c.slot].failed = true;
        records[c.slot].accuracy = std::nan("");
        records[c.slot].error = model_error;
      }
      continue;
    }
    if (hooks.on_model) hooks.on_model(trial, *model);
    const std::uint64_t model_checksum = model->checksum();

    std::vector<std::vector<AttributionMap>> train_maps(nm), test_maps(nm);
    parallel_for(nm, cfg.jobs, [&](std::size_t m) {
      if (!method_needed[m]) return;
      EstimatorConfig est = cfg.estimator;
      est.seed = SeedBuilder(cfg.seed).add("attribution").add(cfg.estimator.seed).add(trial).seed();
      if (roar) train_maps[m] = attribute(*model, data.train, cfg.methods[m], est);
      test_maps[m] = attribute(*model, data.test, cfg.methods[m], est);
    });

    parallel_for(cells.size(), cfg.jobs, [&](std::size_t k) {
      const Cell& c = cells[k];
      RunRecord& rec = records[c.slot];
      const auto start = std::chrono::steady_clock::now();
      const PostprocSpec& pp = cfg.postprocs[c.postproc];
      const double t = cfg.drop_rates[c.rate];
      const CellInfo info{rec.method, rec.postproc, t, trial};
      try {
        const std::vector<Mask> test_masks = make_masks(test_maps[c.method], pp, t, H, W);
        if (roar) {
          const std::vector<Mask> train_masks = make_masks(train_maps[c.method], pp, t, H, W);
          if (hooks.on_masks) hooks.on_masks(info, train_masks, test_masks);
          const Dataset train_masked = mask_dataset(data.train, train_masks);
          const Dataset test_masked = mask_dataset(data.test, test_masks);
          TrainConfig retrain_cfg = train_cfg;
          retrain_cfg.seed = SeedBuilder(rec.seed).add("retrain").seed();
          const ConvNet fresh =
              train(ConvNet(data.train.channels, data.train.num_classes, retrain_cfg.seed), train_masked, retrain_cfg);
          rec.accuracy = evaluate(fresh, test_masked);
          rec.mean_mask_tv = mean_tv(train_masks);
        } else {
          if (hooks.on_masks) hooks.on_masks(info, {}, test_masks);
          const Dataset imputed =
              road_impute(data.test, test_masks, cfg.road_noise_std, SeedBuilder(rec.seed).add("road-noise").seed());
          rec.accuracy = evaluate(*model, imputed);
          rec.mean_mask_tv = mean_tv(test_masks);
        }
      } catch (const TrainingDiverged& e) {
        rec.failed = true;
        rec.accuracy = std::nan("");
        rec.error = e.what();
      }
      rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (!cfg.checkpoint_dir.empty()) save_checkpoint(checkpoint_path(cfg, rec), fp, rec);
    });

    if (model->checksum() != model_checksum) {
      throw ContractViolation("the trial model changed while its cells were evaluated");
    }
  }
  return records;
}

std::vector<RunRecord> roar_run(const ProtocolConfig& cfg, const SynthSpec& spec, const TrainConfig& train_cfg) {
  if (cfg.mode != Mode::Roar) throw InvalidInput("roar_run needs mode=roar");
  return run_protocol(cfg, generate(spec), to_string(spec.kind), train_cfg);
}

std::vector<RunRecord> road_run(const ProtocolConfig& cfg, const SynthSpec& spec, const TrainConfig& train_cfg) {
  if (cfg.mode != Mode::Road) throw InvalidInput("road_run needs mode=road");
  return run_protocol(cfg, generate(spec), to_string(spec.kind), train_cfg);
}

std::map<AggregateKey, AggregateRow> aggregate(std::span<const RunRecord> records) {
  std::map<AggregateKey, std::vector<const RunRecord*>> groups;
  for (const auto& r : records) {
    if (!r.failed) groups[{r.method, r.postproc, r.drop_rate}].push_back(&r);
  }
  std::map<AggregateKey, AggregateRow> out;
  for (auto& [key, rs] : groups) {
    // Sum in trial order so the result does not depend on record order.
    std::sort(rs.begin(), rs.end(), [](const RunRecord* a, const RunRecord* b) {
      return std::tie(a->trial, a->accuracy, a->mean_mask_tv) < std::tie(b->trial, b->accuracy, b->mean_mask_tv);
    });
    AggregateRow row;
    row.count = rs.size();
    for (const auto* r : rs) {
      row.mean_accuracy += r->accuracy;
      row.mean_tv += r->mean_mask_tv;
    }
    row.mean_accuracy /= static_cast<double>(row.count);
    row.mean_tv /= static_cast<double>(row.count);
    if (row.count > 1) {
      double ss = 0.0;
      for (const auto* r : rs) ss += (r->accuracy - row.mean_accuracy) * (r->accuracy - row.mean_accuracy);
      row.std_accuracy = std::sqrt(ss / static_cast<double>(row.count - 1));
    }
    out[key] = row;
  }
  return out;
}

}  // namespace roarbench
