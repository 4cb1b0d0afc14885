#include "bhnd/cli.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "bhnd/checkpoint.h"
#include "bhnd/data.h"
#include "bhnd/grad_suite.h"
#include "bhnd/ops.h"
#include "bhnd/report.h"
#include "bhnd/training.h"

namespace bhnd {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using training::TrainConfig;

struct UsageError : Error {
  using Error::Error;
};

/// A setting reachable both as --name on the command line and as "name" in
/// the JSON config file. Flags win over the file, the file over defaults.
class Settings {
 public:
  explicit Settings(CLI::App* app) : app_(app) {}

  template <typename V>
  CLI::Option* add(const std::string& name, V& target, const std::string& help) {
    CLI::Option* opt = nullptr;
    if constexpr (std::is_same_v<V, bool>) {
      opt = app_->add_flag("--" + name, target, help);
    } else {
      opt = app_->add_option("--" + name, target, help)->capture_default_str();
    }
    knobs_.push_back({name, opt, [&target, name](const json& j) {
                        try {
                          target = j.get<V>();
                        } catch (const json::exception&) {
                          throw UsageError("config key '" + name + "' has the wrong type");
                        }
                      }});
    return opt;
  }

  CLI::Option* add_path(const std::string& name, fs::path& target, const std::string& help) {
    auto* opt = app_->add_option("--" + name, target, help)->capture_default_str();
    knobs_.push_back({name, opt, [&target, name](const json& j) {
                        if (!j.is_string()) throw UsageError("config key '" + name + "' must be a string");
                        target = j.get<std::string>();
                      }});
    return opt;
  }

  /// Applies the config file (if given) to every setting not set by a flag.
  void resolve(const std::string& config_path) {
    if (config_path.empty()) return;
    std::ifstream in(config_path);
    if (!in) throw UsageError("cannot open config file " + config_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw UsageError("config file " + config_path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw UsageError("config file " + config_path + " must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
      auto it = std::find_if(knobs_.begin(), knobs_.end(), [&](const Knob& k) { return k.name == key; });
      if (it == knobs_.end()) throw UsageError("unknown config key '" + key + "' in " + config_path);
      if (it->option->count() == 0) it->apply(value);
    }
  }

  bool given(const std::string& name) const {
    for (const auto& k : knobs_) {
      if (k.name == name) return k.option->count() > 0;
    }
    return false;
  }

 private:
  struct Knob {
    std::string name;
    CLI::Option* option;
    std::function<void(const json&)> apply;
  };
  CLI::App* app_;
  std::vector<Knob> knobs_;
};

json config_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"labeled_fraction", c.labeled_fraction},
          {"eval_interval", c.eval_interval},
          {"log_interval", c.log_interval},
          {"sample_interval", c.sample_interval},
          {"checkpoint_interval", c.checkpoint_interval},
          {"latent_dim", c.latent_dim},
          {"adam_beta1", c.adam_beta1},
          {"grid_count", c.grid_count},
          {"grid_columns", c.grid_columns},
          {"eval_batch_size", c.eval_batch_size},
          {"out_dir", c.out_dir.string()},
          {"resume_from", c.resume_from.string()}};
}

void write_manifest(const fs::path& path, const std::string& command, int argc, char** argv, json body) {
  body["command"] = command;
  body["argv"] = std::vector<std::string>(argv, argv + argc);
  body["build"] = io::build_id();
  body["threads"] = 1;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_file_atomic(path, body.dump(2) + "\n");
}

void log_line(const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); }

/// Writes the resolved configuration without touching any data.
int dry_run(const std::string& command, const TrainConfig& c, const fs::path& data_dir, int argc, char** argv) {
  const json config = config_json(c);
  write_manifest(c.out_dir / "run.json", command, argc, argv,
                 {{"seed", c.seed}, {"config", config}, {"data", {{"dir", data_dir.string()}}}, {"status", "dry-run"}});
  std::printf("%s\n", config.dump(2).c_str());
  return 0;
}

/// When resuming without an explicit --seed or --batch-size, the run adopts
/// the values stored in the checkpoint.
void adopt_resume_counters(TrainConfig& c, const Settings& settings) {
  if (c.resume_from.empty()) return;
  for (const auto& e : io::read_checkpoint(c.resume_from)) {
    if (e.dtype != io::DType::int64 || e.i64.size() != 1) continue;
    if (e.name == "train/seed" && !settings.given("seed")) c.seed = static_cast<std::uint64_t>(e.i64[0]);
    if (e.name == "train/batch_size" && !settings.given("batch-size")) c.batch_size = e.i64[0];
  }
}

struct RecognizerArgs {
  TrainConfig train = TrainConfig::recognizer_defaults();
  fs::path data_dir;
  fs::path out = "runs/recognizer";
  double validation_fraction = 0.0;
  std::int64_t train_limit = 0;
  std::string config;
  bool dry_run = false;
};

struct SganArgs {
  TrainConfig train = TrainConfig::sgan_defaults();
  fs::path data_dir;
  fs::path out = "runs/sgan";
  bool include_test = false;
  std::int64_t max_samples = 0;
  std::string config;
  bool dry_run = false;
};

struct EvalArgs {
  fs::path checkpoint;
  fs::path data_dir;
  std::string split = "test";
  std::int64_t batch_size = 100;
  fs::path manifest;
};

struct GenerateArgs {
  fs::path checkpoint;
  std::int64_t count = 16;
  std::int64_t columns = 4;
  std::uint64_t seed = 0;
  fs::path out = "grid.pgm";
  fs::path manifest;
};

struct GradCheckArgs {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  int shapes = 5;
  fs::path manifest = "grad_check.run.json";
};

void require_data_dir(const fs::path& dir) {
  if (dir.empty()) throw UsageError("--data-dir is required (flag or config file)");
}

int run_train_recognizer(RecognizerArgs& a, Settings& settings, int argc, char** argv) {
  settings.resolve(a.config);
  require_data_dir(a.data_dir);
  if (!(a.validation_fraction >= 0.0 && a.validation_fraction < 1.0)) {
    throw UsageError("--validation-fraction must lie in [0, 1)");
  }
  TrainConfig& c = a.train;
  c.out_dir = a.out;
  adopt_resume_counters(c, settings);
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  if (a.dry_run) return dry_run("train-recognizer", c, a.data_dir, argc, argv);

  auto train = data::load_split(a.data_dir, data::Split::train, data::Rescale::unit);
  if (a.train_limit > 0 && a.train_limit < train.size()) train = train.slice(0, a.train_limit);
  data::Dataset validation;
  std::string validation_source;
  if (a.validation_fraction > 0.0) {
    const auto held = static_cast<std::int64_t>(std::llround(a.validation_fraction * static_cast<double>(train.size())));
    if (held < 1 || held >= train.size()) throw UsageError("--validation-fraction leaves an empty split");
    validation = train.slice(train.size() - held, train.size());
    validation.split = data::Split::validation;
    train = train.slice(0, train.size() - held);
    validation_source = "last " + std::to_string(held) + " training samples";
  } else {
    validation = data::load_split(a.data_dir, data::Split::test, data::Rescale::unit);
    validation.split = data::Split::validation;
    validation_source = "test split";
  }

  json manifest{{"seed", c.seed},
                {"config", config_json(c)},
                {"data", {{"dir", a.data_dir.string()},
                          {"train_samples", train.size()},
                          {"validation_samples", validation.size()},
                          {"validation_source", validation_source}}},
                {"status", "running"}};
  const auto manifest_path = c.out_dir / "run.json";
  write_manifest(manifest_path, "train-recognizer", argc, argv, manifest);
  log_line("train-recognizer: " + std::to_string(train.size()) + " train / " + std::to_string(validation.size()) +
           " validation samples, " + std::to_string(c.steps) + " steps");

  const auto result = training::train_recognizer(c, train, validation, log_line);
  const auto& last = result.metrics.back();
  manifest["status"] = "completed";
  manifest["results"] = {{"final_step", last.step},
                         {"final_validation_loss", last.loss},
                         {"final_validation_accuracy", last.accuracy},
                         {"best_step", result.best_step},
                         {"best_validation_accuracy", result.best_accuracy},
                         {"best_checkpoint", result.best_checkpoint.string()},
                         {"final_checkpoint", result.final_checkpoint.string()}};
  write_manifest(manifest_path, "train-recognizer", argc, argv, manifest);
  std::printf("final validation loss %.6f accuracy %.6f (best %.6f at step %lld)\n", last.loss, last.accuracy,
              result.best_accuracy, static_cast<long long>(result.best_step));
  return 0;
}

int run_train_sgan(SganArgs& a, Settings& settings, int argc, char** argv) {
  settings.resolve(a.config);
  require_data_dir(a.data_dir);
  TrainConfig& c = a.train;
  c.out_dir = a.out;
  adopt_resume_counters(c, settings);
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  if (a.dry_run) return dry_run("train-sgan", c, a.data_dir, argc, argv);

  auto dataset = data::load_split(a.data_dir, data::Split::train, data::Rescale::symmetric);
  if (a.include_test) {
    dataset = data::Dataset::concat(dataset, data::load_split(a.data_dir, data::Split::test, data::Rescale::symmetric));
  }
  if (a.max_samples > 0 && a.max_samples < dataset.size()) dataset = dataset.slice(0, a.max_samples);
  if (dataset.size() < c.batch_size) throw UsageError("dataset is smaller than one batch");

  json manifest{{"seed", c.seed},
                {"config", config_json(c)},
                {"data", {{"dir", a.data_dir.string()}, {"samples", dataset.size()}, {"include_test", a.include_test}}},
                {"status", "running"}};
  const auto manifest_path = c.out_dir / "run.json";
  write_manifest(manifest_path, "train-sgan", argc, argv, manifest);
  log_line("train-sgan: " + std::to_string(dataset.size()) + " samples, " + std::to_string(c.steps) + " steps");

  const auto result = training::train_sgan(c, dataset, log_line);
  manifest["status"] = "completed";
  if (!result.metrics.empty()) {
    const auto& last = result.metrics.back();
    manifest["results"] = {{"final_step", last.step},
                           {"d_loss", last.d_loss},
                           {"d_accuracy", last.d_accuracy},
                           {"g_loss", last.g_loss},
                           {"grid_steps", result.grid_steps}};
    std::printf("step %lld d_loss %.6f d_accuracy %.6f g_loss %.6f\n", static_cast<long long>(last.step), last.d_loss,
                last.d_accuracy, last.g_loss);
  }
  write_manifest(manifest_path, "train-sgan", argc, argv, manifest);
  return 0;
}

int run_eval(const EvalArgs& a, int argc, char** argv) {
  data::Split split;
  if (a.split == "test") {
    split = data::Split::test;
  } else if (a.split == "train") {
    split = data::Split::train;
  } else {
    throw UsageError("--split must be 'train' or 'test'");
  }
  Rng rng(0, streams::init);
  auto model = models::build_recognizer({}, rng);
  io::load_checkpoint(a.checkpoint, model);
  const auto dataset = data::load_split(a.data_dir, split, data::Rescale::unit);
  const auto ev = training::evaluate(model, dataset, a.batch_size);
  std::printf("%s loss %.6f accuracy %.6f (%lld samples)\n", a.split.c_str(), ev.loss, ev.accuracy,
              static_cast<long long>(dataset.size()));
  auto manifest_path = a.manifest;
  if (manifest_path.empty()) manifest_path = fs::path(a.checkpoint.string() + ".eval.json");
  write_manifest(manifest_path, "eval", argc, argv,
                 {{"checkpoint", a.checkpoint.string()},
                  {"data_dir", a.data_dir.string()},
                  {"split", a.split},
                  {"results", {{"loss", ev.loss}, {"accuracy", ev.accuracy}, {"samples", dataset.size()}}}});
  return 0;
}

int run_generate(const GenerateArgs& a, int argc, char** argv) {
  if (a.count < 1 || a.columns < 1) throw UsageError("--count and --columns must be >= 1");
  models::GeneratorSpec spec;
  bool found = false;
  for (const auto& e : io::read_checkpoint(a.checkpoint)) {
    if (e.name == "generator.dense.weight" && e.shape.size() == 2) {
      spec.latent_dim = e.shape[0];
      found = true;
    }
  }
  if (!found) throw FormatError(a.checkpoint.string() + ": no generator parameters in checkpoint");
  Rng init(0, streams::init);
  auto generator = models::build_generator(spec, init);
  io::load_checkpoint(a.checkpoint, generator);

  NoGradGuard no_grad;
  generator.set_mode(nn::Mode::eval);
  Rng rng(a.seed, streams::sample_grid);
  const auto images = generator.forward(randn<float>({a.count, spec.latent_dim}, rng));
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  io::write_image_grid(images, a.columns, a.out);
  const auto geo = io::grid_geometry(a.count, 32, 32, a.columns);
  std::printf("wrote %s (%lldx%lld)\n", a.out.string().c_str(), static_cast<long long>(geo.width),
              static_cast<long long>(geo.height));
  auto manifest_path = a.manifest;
  if (manifest_path.empty()) manifest_path = fs::path(a.out.string() + ".run.json");
  write_manifest(manifest_path, "generate", argc, argv,
                 {{"checkpoint", a.checkpoint.string()},
                  {"seed", a.seed},
                  {"count", a.count},
                  {"columns", a.columns},
                  {"latent_dim", spec.latent_dim},
                  {"out", a.out.string()}});
  return 0;
}

int run_grad_check(const GradCheckArgs& a, int argc, char** argv) {
  if (a.shapes < 1) throw UsageError("--shapes must be >= 1");
  const auto result = run_grad_suite(a.seed, a.tolerance, a.shapes);
  json cases = json::array();
  std::string current;
  double layer_max = 0.0;
  bool layer_ok = true;
  auto flush_layer = [&] {
    if (!current.empty()) {
      std::printf("%-34s max rel error %.3e  %s\n", current.c_str(), layer_max, layer_ok ? "ok" : "FAIL");
    }
  };
  for (const auto& c : result.cases) {
    if (c.layer != current) {
      flush_layer();
      current = c.layer;
      layer_max = 0.0;
      layer_ok = true;
    }
    layer_max = std::max(layer_max, c.report.max_rel_error);
    layer_ok = layer_ok && c.report.passed;
    cases.push_back({{"layer", c.layer}, {"shapes", c.shapes}, {"max_rel_error", c.report.max_rel_error},
                     {"passed", c.report.passed}});
  }
  flush_layer();
  std::printf("%zu checks, max rel error %.3e, %.2f s: %s\n", result.cases.size(), result.max_rel_error,
              result.seconds, result.passed ? "PASS" : "FAIL");
  write_manifest(a.manifest, "grad-check", argc, argv,
                 {{"seed", a.seed},
                  {"tolerance", a.tolerance},
                  {"shapes_per_layer", a.shapes},
                  {"results", {{"passed", result.passed}, {"max_rel_error", result.max_rel_error},
                               {"seconds", result.seconds}, {"cases", cases}}}});
  return result.passed ? 0 : 2;
}

}  // namespace

int cli_dispatch(int argc, char** argv) {
  CLI::App app{"Digit recognizer and semi-supervised GAN trainer"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  RecognizerArgs rec;
  auto* rec_cmd = app.add_subcommand("train-recognizer", "Train the six-block recognizer with RMSprop");
  Settings rec_settings(rec_cmd);
  rec_settings.add_path("data-dir", rec.data_dir, "Directory with train-/t10k- IDX files (.gz optional)");
  rec_settings.add("steps", rec.train.steps, "Mini-batch updates");
  rec_settings.add("lr", rec.train.learning_rate, "RMSprop learning rate");
  rec_settings.add("batch-size", rec.train.batch_size, "Mini-batch size");
  rec_settings.add("seed", rec.train.seed, "Random seed");
  rec_settings.add_path("out", rec.out, "Output directory");
  rec_settings.add("eval-every", rec.train.eval_interval, "Validation interval in steps (0: start and end only)");
  rec_settings.add("eval-batch-size", rec.train.eval_batch_size, "Batch size for validation passes");
  rec_settings.add("checkpoint-every", rec.train.checkpoint_interval, "Resumable checkpoint interval (0: end only)");
  rec_settings.add_path("resume", rec.train.resume_from, "Resume from a checkpoint.ckpt of an earlier run");
  rec_settings.add("validation-fraction", rec.validation_fraction,
                   "Hold out this fraction of the training split (0: validate on the test split)");
  rec_settings.add("train-limit", rec.train_limit, "Use only the first N training samples (0: all)");
  rec_cmd->add_option("--config", rec.config, "JSON file with any of the above settings");
  rec_cmd->add_flag("--dry-run", rec.dry_run, "Write run.json with the resolved settings and exit");

  SganArgs gan;
  auto* gan_cmd = app.add_subcommand("train-sgan", "Train the semi-supervised GAN with Adam");
  Settings gan_settings(gan_cmd);
  gan_settings.add_path("data-dir", gan.data_dir, "Directory with train-/t10k- IDX files (.gz optional)");
  gan_settings.add("steps", gan.train.steps, "Alternating training steps");
  gan_settings.add("lr", gan.train.learning_rate, "Adam learning rate");
  gan_settings.add("beta1", gan.train.adam_beta1, "Adam beta1");
  gan_settings.add("batch-size", gan.train.batch_size, "Mini-batch size");
  gan_settings.add("latent-dim", gan.train.latent_dim, "Latent vector size");
  gan_settings.add("labeled-fraction", gan.train.labeled_fraction, "Fraction of real samples that keep labels");
  gan_settings.add("seed", gan.train.seed, "Random seed");
  gan_settings.add_path("out", gan.out, "Output directory");
  gan_settings.add("sample-every", gan.train.sample_interval, "Sample grid interval in steps (0: first/last only)");
  gan_settings.add("log-every", gan.train.log_interval, "Metrics row interval in steps");
  gan_settings.add("checkpoint-every", gan.train.checkpoint_interval, "Resumable checkpoint interval (0: end only)");
  gan_settings.add("grid-count", gan.train.grid_count, "Images per sample grid");
  gan_settings.add("grid-columns", gan.train.grid_columns, "Columns per sample grid");
  gan_settings.add_path("resume", gan.train.resume_from, "Resume from a checkpoint.ckpt of an earlier run");
  gan_settings.add("include-test", gan.include_test, "Also train on the test split");
  gan_settings.add("max-samples", gan.max_samples, "Use only the first N samples (0: all)");
  gan_cmd->add_option("--config", gan.config, "JSON file with any of the above settings");
  gan_cmd->add_flag("--dry-run", gan.dry_run, "Write run.json with the resolved settings and exit");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a recognizer checkpoint");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data-dir", ev.data_dir, "Directory with IDX files")->required();
  eval_cmd->add_option("--split", ev.split, "train or test")->capture_default_str();
  eval_cmd->add_option("--batch-size", ev.batch_size, "Evaluation batch size")->capture_default_str();
  eval_cmd->add_option("--manifest", ev.manifest, "Manifest path (default: <checkpoint>.eval.json)");

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate", "Write a sample grid from an SGAN checkpoint");
  gen_cmd->add_option("--checkpoint", gen.checkpoint, "Checkpoint file")->required();
  gen_cmd->add_option("--count", gen.count, "Number of images")->capture_default_str();
  gen_cmd->add_option("--columns", gen.columns, "Grid columns")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Latent seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output PGM path")->capture_default_str();
  gen_cmd->add_option("--manifest", gen.manifest, "Manifest path (default: <out>.run.json)");

  GradCheckArgs gc;
  auto* gc_cmd = app.add_subcommand("grad-check", "Run the float64 gradient suite");
  gc_cmd->add_option("--seed", gc.seed, "Shape seed")->capture_default_str();
  gc_cmd->add_option("--tolerance", gc.tolerance, "Maximum relative error")->capture_default_str();
  gc_cmd->add_option("--shapes", gc.shapes, "Random shapes per layer")->capture_default_str();
  gc_cmd->add_option("--manifest", gc.manifest, "Manifest path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*rec_cmd) return run_train_recognizer(rec, rec_settings, argc, argv);
    if (*gan_cmd) return run_train_sgan(gan, gan_settings, argc, argv);
    if (*eval_cmd) return run_eval(ev, argc, argv);
    if (*gen_cmd) return run_generate(gen, argc, argv);
    if (*gc_cmd) return run_grad_check(gc, argc, argv);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}

}  // namespace bhnd
