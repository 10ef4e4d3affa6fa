#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "roarbench/dataset.hpp"
#include "roarbench/error.hpp"
#include "roarbench/mioracle.hpp"
#include "roarbench/model.hpp"
#include "roarbench/pipeline.hpp"
#include "roarbench/report.hpp"
#include "roarbench/rng.hpp"

namespace roarbench {

namespace {

struct CliOptions {
  std::string config;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::size_t jobs = 1;
  std::string drop_rates = "0.1,0.3,0.5";
  std::string methods = "grad2";
  std::string postprocs = "plain";

  std::string kind = "shapes";
  std::size_t height = 16, width = 16, n_train = 2000, n_test = 500, channels = 1;
  int classes = 4;
  double noise = SynthSpec{}.noise_std;
  std::string train_file, test_file;
  bool csv = false;

  int epochs = TrainConfig{}.epochs;
  std::size_t batch_size = TrainConfig{}.batch_size;
  double lr = TrainConfig{}.learning_rate;
  double momentum = TrainConfig{}.momentum;
  double weight_decay = TrainConfig{}.weight_decay;
  std::string lr_schedule = "constant";

  int trials = 5;
  int ig_steps = EstimatorConfig{}.ig_steps;
  int ensemble_n = EstimatorConfig{}.ensemble_n;
  double sg_noise = EstimatorConfig{}.sg_noise_frac;
  double road_noise = 0.01;
  double sigma = 1.0;
  int kernel = 3;
  bool checkpoint = false;
  std::string output;

  std::string model;
  std::vector<std::size_t> indices{0};

  std::string world = "default";
  std::size_t sweep = 1000;
  std::size_t budget = 1'000'000;

  std::vector<std::string> inputs;
};

// Raised while turning option strings into configurations; maps to exit 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  return out;
}

template <class F>
auto as_usage(F&& f) {
  try {
    return f();
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  } catch (const std::invalid_argument&) {
    throw UsageError("malformed number in option list");
  } catch (const std::out_of_range&) {
    throw UsageError("number out of range in option list");
  }
}

void add_data_options(CLI::App* sub, CliOptions& o) {
  sub->add_option("--kind", o.kind, "Dataset kind: shapes, block-signal or scatter-signal")->capture_default_str();
  sub->add_option("--height", o.height, "Image height")->capture_default_str();
  sub->add_option("--width", o.width, "Image width")->capture_default_str();
  sub->add_option("--channels", o.channels, "Image channels")->capture_default_str();
  sub->add_option("--classes", o.classes, "Number of classes")->capture_default_str();
  sub->add_option("--n-train", o.n_train, "Training samples")->capture_default_str();
  sub->add_option("--n-test", o.n_test, "Test samples")->capture_default_str();
  sub->add_option("--noise", o.noise, "Pixel noise standard deviation")->capture_default_str();
  sub->add_option("--train-file", o.train_file, "Load the training set from an RLAB file");
  sub->add_option("--test-file", o.test_file, "Load the test set from an RLAB file");
}

void add_train_options(CLI::App* sub, CliOptions& o) {
  sub->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
  sub->add_option("--batch-size", o.batch_size, "Minibatch size")->capture_default_str();
  sub->add_option("--lr", o.lr, "Learning rate")->capture_default_str();
  sub->add_option("--momentum", o.momentum, "SGD momentum")->capture_default_str();
  sub->add_option("--weight-decay", o.weight_decay, "L2 weight decay")->capture_default_str();
  sub->add_option("--lr-schedule", o.lr_schedule, "constant or cosine")->capture_default_str();
}

void add_estimator_options(CLI::App* sub, CliOptions& o) {
  sub->add_option("--ig-steps", o.ig_steps, "Integrated Gradients steps")->capture_default_str();
  sub->add_option("--ensemble-n", o.ensemble_n, "SmoothGrad/VarGrad samples")->capture_default_str();
  sub->add_option("--sg-noise", o.sg_noise, "SmoothGrad noise as a fraction of the input range")
      ->capture_default_str();
  sub->add_option("--sigma", o.sigma, "Gaussian post-processing sigma")->capture_default_str();
  sub->add_option("--kernel", o.kernel, "Max-pool post-processing kernel")->capture_default_str();
}

SynthSpec synth_spec(const CliOptions& o) {
  return as_usage([&] {
    SynthSpec s;
    s.kind = parse_synth_kind(o.kind);
    s.height = o.height;
    s.width = o.width;
    s.channels = o.channels;
    s.num_classes = o.classes;
    s.n_train = o.n_train;
    s.n_test = o.n_test;
    s.noise_std = o.noise;
    s.seed = o.seed;
    s.validate();
    if (o.train_file.empty() != o.test_file.empty()) {
      throw InvalidInput("--train-file and --test-file must be given together");
    }
    return s;
  });
}

TrainConfig train_config(const CliOptions& o) {
  return as_usage([&] {
    TrainConfig t;
    t.epochs = o.epochs;
    t.batch_size = o.batch_size;
    t.learning_rate = o.lr;
    t.momentum = o.momentum;
    t.weight_decay = o.weight_decay;
    t.lr_schedule = parse_lr_schedule(o.lr_schedule);
    t.seed = o.seed;
    t.validate();
    return t;
  });
}

std::vector<PostprocSpec> postproc_list(const CliOptions& o) {
  return as_usage([&] {
    std::vector<PostprocSpec> out;
    for (const auto& name : split_list(o.postprocs)) {
      PostprocSpec p;
      p.kind = parse_postproc_kind(name);
      p.sigma = o.sigma;
      p.kernel = o.kernel;
      p.validate();
      out.push_back(p);
    }
    if (out.empty()) throw InvalidInput("--postprocs is empty");
    return out;
  });
}

std::vector<MethodSpec> method_list(const CliOptions& o) {
  return as_usage([&] {
    std::vector<MethodSpec> out;
    for (const auto& name : split_list(o.methods)) out.push_back(MethodSpec::parse(name));
    if (out.empty()) throw InvalidInput("--methods is empty");
    return out;
  });
}

std::vector<double> rate_list(const CliOptions& o) {
  return as_usage([&] {
    std::vector<double> out;
    for (const auto& s : split_list(o.drop_rates)) {
      std::size_t used = 0;
      const double t = std::stod(s, &used);
      if (used != s.size()) throw InvalidInput("malformed drop rate '" + s + "'");
      if (!(t > 0.0 && t < 1.0)) throw InvalidInput("drop rate " + s + " is outside (0, 1)");
      out.push_back(t);
    }
    if (out.empty()) throw InvalidInput("--drop-rates is empty");
    return out;
  });
}

EstimatorConfig estimator_config(const CliOptions& o) {
  return as_usage([&] {
    EstimatorConfig e;
    e.ig_steps = o.ig_steps;
    e.ensemble_n = o.ensemble_n;
    e.sg_noise_frac = o.sg_noise;
    e.seed = o.seed;
    e.validate();
    return e;
  });
}

struct LoadedData {
  SynthData data;
  std::string name;
};

LoadedData load_or_generate(const CliOptions& o, const SynthSpec& spec) {
  LoadedData d;
  if (!o.train_file.empty()) {
    d.data.train = load(o.train_file);
    d.data.test = load(o.test_file);
    d.name = d.data.train.name;
  } else {
    d.data = generate(spec);
    d.name = to_string(spec.kind);
  }
  return d;
}

std::filesystem::path out_path(const CliOptions& o, const std::string& file) {
  std::filesystem::create_directories(o.out_dir);
  return std::filesystem::path(o.out_dir) / file;
}

ConvNet train_model(const CliOptions& o, const Dataset& train_set, const TrainConfig& tc) {
  const std::uint64_t s = SeedBuilder(o.seed).add("cli-model").seed();
  TrainConfig cfg = tc;
  cfg.seed = s;
  return train(ConvNet(train_set.channels, train_set.num_classes, s), train_set, cfg);
}

int cmd_gen_data(const CliOptions& o, std::ostream& out) {
  const SynthSpec spec = synth_spec(o);
  const SynthData d = generate(spec);
  const std::string base = to_string(spec.kind);
  save(d.train, out_path(o, base + "-train.rlab"));
  save(d.test, out_path(o, base + "-test.rlab"));
  if (o.csv) {
    export_csv(d.train, out_path(o, base + "-train.csv"));
    export_csv(d.test, out_path(o, base + "-test.csv"));
  }
  out << "wrote " << d.train.size() << " training and " << d.test.size() << " test samples to " << o.out_dir
      << "\n";
  return 0;
}

int cmd_train(const CliOptions& o, std::ostream& out) {
  const SynthSpec spec = synth_spec(o);
  const TrainConfig tc = train_config(o);
  const LoadedData d = load_or_generate(o, spec);
  const ConvNet model = train_model(o, d.data.train, tc);
  const auto path = out_path(o, o.output.empty() ? "model.rlmd" : o.output);
  save_model(model, path);
  char buf[128];
  std::snprintf(buf, sizeof buf, "train accuracy %.6f, test accuracy %.6f\n", evaluate(model, d.data.train),
                evaluate(model, d.data.test));
  out << buf << "model written to " << path.string() << "\n";
  return 0;
}

int cmd_attribute(const CliOptions& o, std::ostream& out) {
  const SynthSpec spec = synth_spec(o);
  const TrainConfig tc = train_config(o);
  const auto methods = method_list(o);
  const auto postprocs = postproc_list(o);
  const double t = rate_list(o).front();
  const EstimatorConfig est = estimator_config(o);
  const LoadedData d = load_or_generate(o, spec);
  const ConvNet model = o.model.empty() ? train_model(o, d.data.train, tc) : load_model(o.model);
  const Dataset& test = d.data.test;
  for (std::size_t i : o.indices) {
    if (i >= test.size()) throw InvalidInput("sample index " + std::to_string(i) + " is out of range");
    Dataset one = test;
    one.pixels.assign(test.image(i).begin(), test.image(i).end());
    one.labels = {test.labels[i]};
    const std::vector<int> cls = predict(model, one);
    const std::string tag = std::to_string(i);
    std::vector<double> img(one.pixels.begin(), one.pixels.end());
    write_pgm(img, one.height * one.channels, one.width, out_path(o, "input_" + tag + ".pgm"));
    for (const auto& m : methods) {
      AttributionMap a = attribute_dataset(model, one, cls, m.method, est).front();
      if (m.squared) a = square(a);
      write_pgm(a, out_path(o, m.name() + "_" + tag + "_raw.pgm"));
      for (const auto& pp : postprocs) {
        const std::string stem = m.name() + "_" + to_string(pp.kind) + "_" + tag;
        const AttributionMap filtered = postprocess(pp, a, one.height, one.width);
        const Mask mask = top_t_mask(filtered, t);
        write_pgm(filtered, out_path(o, stem + "_map.pgm"));
        write_pgm(mask, out_path(o, stem + "_mask.pgm"));
        Dataset masked = mask_dataset(one, std::span<const Mask>(&mask, 1));
        std::vector<double> mv(masked.pixels.begin(), masked.pixels.end());
        write_pgm(mv, one.height * one.channels, one.width, out_path(o, stem + "_masked.pgm"));
        char buf[160];
        std::snprintf(buf, sizeof buf, "sample %zu class %d %-6s %-8s t=%.2f mask tv %.4f\n", i, cls[0],
                      m.name().c_str(), to_string(pp.kind).c_str(), t, mask.tv);
        out << buf;
      }
    }
  }
  return 0;
}

int cmd_protocol(const CliOptions& o, Mode mode, std::ostream& out) {
  const SynthSpec spec = synth_spec(o);
  const TrainConfig tc = train_config(o);
  ProtocolConfig cfg;
  cfg.mode = mode;
  cfg.methods = method_list(o);
  cfg.postprocs = postproc_list(o);
  cfg.drop_rates = rate_list(o);
  cfg.trials = o.trials;
  cfg.road_noise_std = o.road_noise;
  cfg.estimator = estimator_config(o);
  cfg.seed = o.seed;
  cfg.jobs = std::max<std::size_t>(1, o.jobs);
  as_usage([&] {
    cfg.validate();
    return 0;
  });
  const LoadedData d = load_or_generate(o, spec);
  if (o.checkpoint) cfg.checkpoint_dir = std::filesystem::path(o.out_dir) / (to_string(mode) + "-checkpoints");
  const auto records = run_protocol(cfg, d.data, d.name, tc);
  const auto path = out_path(o, o.output.empty() ? to_string(mode) + ".csv" : o.output);
  write_csv(records, path);
  for (const auto& [key, row] : aggregate(records)) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-8s %-9s t=%.2f accuracy %.4f +- %.4f (n=%zu) mask tv %.4f\n",
                  std::get<0>(key).c_str(), std::get<1>(key).c_str(), std::get<2>(key), row.mean_accuracy,
                  row.std_accuracy, row.count, row.mean_tv);
    out << buf;
  }
  const auto failed = std::count_if(records.begin(), records.end(), [](const RunRecord& r) { return r.failed; });
  if (failed > 0) out << failed << " cell(s) failed; see the nan rows in the CSV\n";
  out << records.size() << " records written to " << path.string() << "\n";
  return 0;
}

int cmd_mi_check(const CliOptions& o, std::ostream& out) {
  mi::World w;
  if (o.world == "default") {
    w = mi::default_world();
  } else {
    std::ifstream in(o.world);
    if (!in) throw IoError(o.world, "cannot open world file");
    w = mi::parse_world({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()});
  }
  const auto rep = mi::conjecture_search(w, o.budget);
  out << mi::format_report(w, rep);
  const auto sweep = mi::dpi_sweep(o.seed, o.sweep);
  char buf[200];
  std::snprintf(buf, sizeof buf, "DPI sweep: %zu random (world, k) pairs, %zu violations, max excess %.3g\n",
                sweep.pairs, sweep.violations, sweep.max_excess);
  out << buf;
  return sweep.violations == 0 ? 0 : 2;
}

int cmd_report(const CliOptions& o, std::ostream& out) {
  std::vector<RunRecord> records;
  for (const auto& in : o.inputs) {
    auto r = read_csv(in);
    records.insert(records.end(), r.begin(), r.end());
  }
  std::ostringstream text;
  text << "method,postproc,drop_rate,mean_accuracy,std_accuracy,trials,mean_mask_tv\n";
  for (const auto& [key, row] : aggregate(records)) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f,%zu,%.6f\n", std::get<0>(key).c_str(),
                  std::get<1>(key).c_str(), std::get<2>(key), row.mean_accuracy, row.std_accuracy, row.count,
                  row.mean_tv);
    text << buf;
  }
  text << "\nfit of accuracy on mask tv over plain methods\ndrop_rate,slope,intercept,r_squared,points\n";
  for (const auto& [t, fit] : tv_accuracy_fits(records)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%zu\n", t, fit.slope, fit.intercept, fit.r_squared,
                  fit.n_points);
    text << buf;
  }
  out << text.str();
  if (!o.output.empty()) {
    std::ofstream f(out_path(o, o.output), std::ios::binary | std::ios::trunc);
    f << text.str();
    if (!f) throw IoError(o.output, "cannot write report");
  }
  return 0;
}

// Finds --config in the raw arguments (either form).
std::string find_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return {};
}

}  // namespace

int run_cli(const std::vector<std::string>& args_in, std::ostream& out, std::ostream& err) {
  CliOptions o;
  CLI::App app{"Remove-and-retrain attribution benchmark on synthetic images", "roarbench"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.footer("Settings precedence: command-line flags, then --config file (key=value lines), then defaults.");
  app.add_option("--config", o.config, "key=value settings file; keys are long flag names");
  app.add_option("--seed", o.seed, "Master seed")->capture_default_str();
  app.add_option("--out-dir", o.out_dir, "Directory for outputs")->capture_default_str();
  app.add_option("--jobs", o.jobs, "Parallel cells")->capture_default_str();
  app.add_option("--drop-rates", o.drop_rates, "Comma-separated drop rates in (0, 1)")->capture_default_str();
  app.add_option("--methods", o.methods,
                 "Comma-separated methods: grad gi ig sg sgsq vg gc sobel rand block; suffix 2 squares")
      ->capture_default_str();
  app.add_option("--postprocs", o.postprocs, "Comma-separated post-processings: plain gaussian maxpool")
      ->capture_default_str();

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset as RLAB files");
  add_data_options(gen, o);
  gen->add_flag("--csv", o.csv, "Also export CSV");

  auto* trn = app.add_subcommand("train", "Train the benchmark CNN and save it");
  add_data_options(trn, o);
  add_train_options(trn, o);
  trn->add_option("--output", o.output, "Model file name inside --out-dir");

  auto* att = app.add_subcommand("attribute", "Write attribution maps, masks and masked images as PGM");
  add_data_options(att, o);
  add_train_options(att, o);
  add_estimator_options(att, o);
  att->add_option("--model", o.model, "Model file (trains a fresh model if omitted)");
  att->add_option("--index", o.indices, "Test sample indices")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);

  CLI::App* roar = nullptr;
  CLI::App* road = nullptr;
  for (auto [name, help, slot] : {std::tuple{"roar", "Remove-and-retrain sweep", &roar},
                                  std::tuple{"road", "Remove-and-debias sweep (no retraining)", &road}}) {
    auto* sub = app.add_subcommand(name, help);
    add_data_options(sub, o);
    add_train_options(sub, o);
    add_estimator_options(sub, o);
    sub->add_option("--trials", o.trials, "Trials per cell")->capture_default_str();
    sub->add_option("--road-noise", o.road_noise, "Noise added to imputed pixels")->capture_default_str();
    sub->add_flag("--checkpoint", o.checkpoint, "Store finished cells and resume from them");
    sub->add_option("--output", o.output, "CSV file name inside --out-dir");
    *slot = sub;
  }

  auto* mic = app.add_subcommand("mi-check", "Exact information checks on a discrete world");
  mic->add_option("--world", o.world, "'default' or a world file")->capture_default_str();
  mic->add_option("--sweep", o.sweep, "Random (world, k) pairs for the DPI sweep")->capture_default_str();
  mic->add_option("--budget", o.budget, "Maximum coarsenings to examine")->capture_default_str();

  auto* rep = app.add_subcommand("report", "Aggregate run CSVs and fit accuracy against mask TV");
  rep->add_option("--input", o.inputs, "Run CSV files")->required()->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  rep->add_option("--output", o.output, "Also write the report to this file inside --out-dir");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::vector<std::string> args = args_in;
  try {
    // Config values go before any flag so the flags, parsed later, win.
    if (const std::string cfg_path = find_config(args); !cfg_path.empty()) {
      const auto cfg = load_config(cfg_path);
      auto sub_it = std::find_if(args.begin(), args.end(), [&](const std::string& a) {
        return app.get_subcommand_no_throw(a) != nullptr;
      });
      CLI::App* sub = sub_it == args.end() ? nullptr : app.get_subcommand_no_throw(*sub_it);
      std::vector<std::string> global, local;
      for (const auto& [key, value] : cfg) {
        if (key == "config") continue;
        const std::string flag = "--" + key;
        if (app.get_option_no_throw(flag)) {
          global.push_back(flag + "=" + value);
        } else if (sub && sub->get_option_no_throw(flag)) {
          local.push_back(flag + "=" + value);
        } else {
          const auto subs = app.get_subcommands({});
          const bool known = std::any_of(subs.begin(), subs.end(),
                                         [&](CLI::App* s) { return s->get_option_no_throw(flag) != nullptr; });
          if (!known) throw UsageError("unknown key '" + key + "' in config file " + cfg_path);
        }
      }
      if (sub) {
        const auto pos = std::distance(args.begin(), sub_it) + 1;
        args.insert(args.begin() + pos, local.begin(), local.end());
      }
      args.insert(args.begin(), global.begin(), global.end());
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o, out);
    if (trn->parsed()) return cmd_train(o, out);
    if (att->parsed()) return cmd_attribute(o, out);
    if (roar->parsed()) return cmd_protocol(o, Mode::Roar, out);
    if (road->parsed()) return cmd_protocol(o, Mode::Road, out);
    if (mic->parsed()) return cmd_mi_check(o, out);
    if (rep->parsed()) return cmd_report(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  err << app.help();
  return 1;
}

}  // namespace roarbench
