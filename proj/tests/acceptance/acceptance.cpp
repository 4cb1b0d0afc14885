// One line per acceptance criterion: "[PASS] <n> <name>: <measurement>".
// Results also go to acceptance_<n>.json in the working directory.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>

#include "bhnd/checkpoint.h"
#include "bhnd/cli.h"
#include "bhnd/data.h"
#include "bhnd/grad_suite.h"
#include "bhnd/ops.h"
#include "bhnd/report.h"
#include "bhnd/training.h"
#include "golden.h"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace bhnd;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
  json record = json::object();
};

struct Context {
  fs::path data_dir;
  fs::path work_dir;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

Outcome gradient_suite(const Context&) {
  const auto result = run_grad_suite(0, 1e-4, 5);
  std::map<std::string, int> shapes;
  for (const auto& c : result.cases) ++shapes[c.layer];
  const std::vector<std::string> required = {
      "conv2d same stride 1", "conv2d same stride 2",   "conv2d valid stride 1",
      "conv2d valid stride 2", "maxpool2d ceil",        "batchnorm train",
      "dense",                "upsample2x",             "relu",
      "leaky_relu",           "tanh",                   "sigmoid",
      "softmax + categorical CE", "sigmoid + binary CE"};
  std::string missing;
  for (const auto& name : required) {
    if (shapes[name] < 5) missing += " " + name;
  }
  Outcome o;
  o.passed = result.passed && result.max_rel_error < 1e-4 && result.seconds < 60.0 && missing.empty();
  o.detail = fmt("%zu checks, max rel error %.3e (< 1e-4), %.2f s (< 60 s)", result.cases.size(),
                 result.max_rel_error, result.seconds);
  if (!missing.empty()) o.detail += "; fewer than 5 shapes for:" + missing;
  o.record = {{"checks", result.cases.size()}, {"max_rel_error", result.max_rel_error}, {"seconds", result.seconds}};
  return o;
}

Outcome conv_oracle(const Context&) {
  const auto start = Clock::now();
  Rng rng(2024);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };
  double worst = 0.0;
  int configs = 0;
  while (configs < 100) {
    const int n = pick(1, 3), c = pick(1, 4), o = pick(1, 5), k = pick(1, 5), stride = pick(1, 3);
    const int h = pick(1, 12), w = pick(1, 12);
    const auto padding = rng.below(2) ? nn::Padding::same : nn::Padding::valid;
    if (padding == nn::Padding::valid && (h < k || w < k)) continue;
    const auto x = randn<double>({n, c, h, w}, rng);
    const auto weight = randn<double>({o, c, k, k}, rng);
    const auto bias = randn<double>({o}, rng);
    const auto fast = nn::conv2d(x, weight, bias, {stride, padding});
    const auto slow = nn::conv2d_naive_oracle(x, weight, bias, {stride, padding});
    if (fast.shape() != slow.shape()) {
      Outcome o;
      o.detail = "shape mismatch " + to_string(fast.shape()) + " vs " + to_string(slow.shape());
      return o;
    }
    for (std::int64_t i = 0; i < fast.numel(); ++i) worst = std::max(worst, std::abs(fast.at(i) - slow.at(i)));
    ++configs;
  }
  const double secs = seconds_since(start);
  Outcome o;
  o.passed = worst <= 1e-6 && secs < 30.0;
  o.detail = fmt("%d configurations, max abs diff %.3e (<= 1e-6), %.2f s (< 30 s)", configs, worst, secs);
  o.record = {{"configurations", configs}, {"max_abs_diff", worst}, {"seconds", secs}};
  return o;
}

Outcome architecture(const Context&) {
  Rng rng(0);
  const auto recognizer = models::build_recognizer({}, rng);
  const auto generator = models::build_generator({}, rng);
  const auto discriminator = models::build_discriminator({}, rng);
  std::vector<std::string> problems;

  const auto trace = models::trace_shapes(recognizer, {2, 1, 32, 32});
  if (trace.size() != test::kRecognizerTrace.size()) {
    problems.push_back(fmt("recognizer trace has %zu entries, golden %zu", trace.size(),
                           test::kRecognizerTrace.size()));
  } else {
    for (std::size_t i = 0; i < trace.size(); ++i) {
      const auto& g = test::kRecognizerTrace[i];
      if (trace[i].layer != g.layer || trace[i].shape != test::batched(2, g.shape)) {
        problems.push_back("recognizer " + trace[i].layer + " " + to_string(trace[i].shape) + " vs golden " +
                           g.layer + " " + to_string(test::batched(2, g.shape)));
      }
    }
  }
  const auto params = recognizer.parameters();
  if (params.size() != test::kRecognizerParameters.size()) {
    problems.push_back("recognizer parameter count differs from golden list");
  } else {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].tensor.shape() != test::kRecognizerParameters[i].shape) problems.push_back(params[i].name);
    }
  }

  const auto g_trace = models::trace_shapes(generator, {2, 100});
  if (g_trace.back().shape != Shape{2, 1, 32, 32}) problems.push_back("generator ends " + to_string(g_trace.back().shape));

  const auto d_trace = models::trace_shapes(discriminator, {2, 1, 32, 32});
  std::int64_t flatten = -1, class_width = -1;
  for (const auto& e : d_trace) {
    if (e.layer == "flatten") flatten = e.shape[1];
    if (e.layer == "class.softmax") class_width = e.shape[1];
  }
  if (flatten != 1024) problems.push_back(fmt("discriminator flatten width %lld", static_cast<long long>(flatten)));
  if (class_width != 11) problems.push_back(fmt("class head width %lld", static_cast<long long>(class_width)));

  Outcome o;
  o.passed = problems.empty();
  o.detail = fmt("recognizer %zu trace entries / %zu parameter tensors match golden; generator -> %s; "
                 "discriminator flatten %lld, class head %lld",
                 trace.size(), params.size(), to_string(g_trace.back().shape).c_str(),
                 static_cast<long long>(flatten), static_cast<long long>(class_width));
  for (const auto& p : problems) o.detail += "\n    mismatch: " + p;
  o.record = {{"recognizer_trace_entries", trace.size()},
              {"discriminator_flatten", flatten},
              {"class_head_width", class_width},
              {"problems", problems}};
  return o;
}

Outcome overfit(const Context& ctx) {
  const auto start = Clock::now();
  const auto train = data::load_split(ctx.data_dir, data::Split::train, data::Rescale::unit).slice(0, 64);
  auto config = training::TrainConfig::recognizer_defaults();
  config.batch_size = 32;
  config.learning_rate = 0.001;
  config.seed = 0;
  training::RecognizerTrainer trainer(config, train.size());
  std::int64_t reached = -1;
  double acc = 0.0;
  for (std::int64_t step = 1; step <= 500; ++step) {
    trainer.step(train);
    if (step % 10 == 0 || step == 500) {
      acc = training::evaluate(trainer.model(), train, 64).accuracy;
      std::fprintf(stderr, "  overfit step %lld: training accuracy %.4f\n", static_cast<long long>(step), acc);
      if (acc == 1.0) {
        reached = step;
        break;
      }
    }
  }
  const double secs = seconds_since(start);
  Outcome o;
  o.passed = reached > 0 && secs < 600.0;
  o.detail = reached > 0 ? fmt("100%% training accuracy on 64 samples after %lld steps (<= 500), %.0f s (< 600 s)",
                               static_cast<long long>(reached), secs)
                         : fmt("training accuracy %.4f after 500 steps, %.0f s", acc, secs);
  o.record = {{"steps_to_100", reached}, {"final_accuracy", acc}, {"seconds", secs}};
  return o;
}

Outcome recognition(const Context& ctx) {
  const auto start = Clock::now();
  const auto train = data::load_split(ctx.data_dir, data::Split::train, data::Rescale::unit);
  auto test = data::load_split(ctx.data_dir, data::Split::test, data::Rescale::unit);
  test.split = data::Split::validation;
  auto config = training::TrainConfig::recognizer_defaults();
  config.batch_size = 64;
  config.learning_rate = 0.001;
  config.seed = 0;
  // Two epochs of updates, counting the ragged last batch of each epoch.
  const std::int64_t per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  config.steps = 2 * per_epoch;
  config.eval_interval = per_epoch / 4;
  config.out_dir = ctx.work_dir / "recognition";
  const auto result = training::train_recognizer(config, train, test, [](const std::string& line) {
    if (line.find("validation") != std::string::npos) std::fprintf(stderr, "  %s\n", line.c_str());
  });
  const auto& last = result.metrics.back();
  const double secs = seconds_since(start);
  Outcome o;
  o.passed = last.accuracy >= 0.95 && secs <= 4 * 3600.0;
  o.detail = fmt("test accuracy %.4f after 2 epochs (%lld steps, >= 0.95), best %.4f at step %lld, %.0f s (<= 4 h)",
                 last.accuracy, static_cast<long long>(last.step), result.best_accuracy,
                 static_cast<long long>(result.best_step), secs);
  json curve = json::array();
  for (const auto& r : result.metrics) {
    if (r.split == "validation") curve.push_back({{"step", r.step}, {"loss", r.loss}, {"accuracy", r.accuracy}});
  }
  o.record = {{"train_samples", train.size()},
              {"test_samples", test.size()},
              {"steps", last.step},
              {"final_test_accuracy", last.accuracy},
              {"final_test_loss", last.loss},
              {"best_test_accuracy", result.best_accuracy},
              {"best_step", result.best_step},
              {"validation_curve", curve},
              {"seconds", secs}};
  return o;
}

Outcome sgan_desk_run(const Context& ctx) {
  const auto start = Clock::now();
  const auto dataset =
      data::load_split(ctx.data_dir, data::Split::train, data::Rescale::symmetric).slice(0, 10000);
  auto config = training::TrainConfig::sgan_defaults();
  config.steps = 2000;
  config.batch_size = 32;
  config.learning_rate = 0.002;
  config.adam_beta1 = 0.5;
  config.sample_interval = 500;
  config.seed = 0;
  config.out_dir = ctx.work_dir / "sgan";
  auto result = training::train_sgan(config, dataset, [](const std::string& line) {
    if (line.find("grid") != std::string::npos) std::fprintf(stderr, "  %s\n", line.c_str());
  });

  bool finite = true, in_range = true;
  for (const auto& s : result.steps) {
    finite = finite && std::isfinite(s.d_loss) && std::isfinite(s.g_loss);
    in_range = in_range && s.fake_min >= -1.0 && s.fake_max <= 1.0;
  }
  const double g0 = result.steps.front().g_loss;

  // The batch step 2000 would generate: train mode, latent stream at counter 2000.
  NoGradGuard no_grad;
  Rng rng(config.seed, streams::latent, static_cast<std::uint64_t>(config.steps));
  auto& generator = result.generator;
  generator.set_mode(nn::Mode::train);
  generator.set_update_running_stats(false);
  const auto fake = generator.forward(randn<float>({config.batch_size, config.latent_dim}, rng), &rng);
  double mean = 0.0, sq = 0.0, lo = 1.0, hi = -1.0;
  for (float v : fake.data()) {
    mean += v;
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  mean /= static_cast<double>(fake.numel());
  for (float v : fake.data()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(fake.numel()));
  in_range = in_range && lo >= -1.0 && hi <= 1.0;

  const std::vector<std::int64_t> expected_grids{0, 500, 1000, 1500, 2000};
  bool grids = result.grid_steps == expected_grids;
  for (const auto& p : result.grids) grids = grids && fs::exists(p);

  const bool a = finite, b = std::abs(g0 - std::numbers::ln2) <= 0.15, c = sd > 0.05, d = in_range, e = grids;
  const double secs = seconds_since(start);
  Outcome o;
  o.passed = a && b && c && d && e;
  o.detail = fmt("(a) losses finite over %zu steps: %s; (b) step-0 g_loss %.4f in 0.693 +- 0.15: %s; "
                 "(c) step-2000 pixel std %.4f > 0.05: %s; (d) pixels in [%.4f, %.4f] within [-1, 1]: %s; "
                 "(e) grids at 0/500/1000/1500/2000: %s; final d_loss %.4f g_loss %.4f; %.0f s",
                 result.steps.size(), a ? "yes" : "NO", g0, b ? "yes" : "NO", sd, c ? "yes" : "NO", lo, hi,
                 d ? "yes" : "NO", e ? "yes" : "NO", result.steps.back().d_loss, result.steps.back().g_loss, secs);
  o.record = {{"steps", result.steps.size()},
              {"finite", a},
              {"g_loss_step0", g0},
              {"pixel_std_step2000", sd},
              {"pixel_min", lo},
              {"pixel_max", hi},
              {"grid_steps", result.grid_steps},
              {"final_d_loss", result.steps.back().d_loss},
              {"final_g_loss", result.steps.back().g_loss},
              {"final_d_accuracy", result.steps.back().d_accuracy},
              {"seconds", secs}};
  return o;
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "bhnd");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli_dispatch(static_cast<int>(argv.size()), argv.data());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(const Context& ctx) {
  const auto start = Clock::now();
  const auto root = ctx.work_dir / "determinism";
  fs::remove_all(root);
  auto run = [&](const std::string& name, const std::string& steps, std::vector<std::string> extra = {}) {
    std::vector<std::string> args = {"train-recognizer", "--data-dir", ctx.data_dir.string(), "--steps", steps,
                                     "--seed", "7", "--eval-every", "25", "--validation-fraction", "0.01",
                                     "--out", (root / name).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    return cli(args);
  };
  Outcome o;
  if (run("a", "100") != 0 || run("b", "100") != 0 || run("c", "50") != 0 ||
      run("c", "100", {"--resume", (root / "c" / "checkpoint.ckpt").string()}) != 0) {
    o.detail = "a training run failed";
    return o;
  }
  const auto a = read_text(root / "a" / "metrics.csv");
  const auto b = read_text(root / "b" / "metrics.csv");
  const auto c = read_text(root / "c" / "metrics.csv");
  const bool same = !a.empty() && a == b;

  // Row "50,train" is the loss of the batch consumed by update 51; row
  // "51,train" is the first measurement of the model after update 51.
  auto row = [](const std::string& csv, const std::string& prefix) {
    const auto at = csv.find("\n" + prefix);
    if (at == std::string::npos) return std::string();
    return csv.substr(at + 1, csv.find('\n', at + 1) - at - 1);
  };
  const auto a51 = row(a, "51,train,"), c51 = row(c, "51,train,");
  const bool resumed = !a51.empty() && a51 == c51 && a == c;
  const auto lines = std::count(a.begin(), a.end(), '\n');
  const double secs = seconds_since(start);
  o.passed = same && resumed;
  o.detail = fmt("two runs byte-identical over 100 steps (%lld CSV lines): %s; resume at 50 equals the uninterrupted "
                 "run (step 51 row '%s'): %s; %.0f s",
                 static_cast<long long>(lines), same ? "yes" : "NO", c51.c_str(), resumed ? "yes" : "NO", secs);
  o.record = {{"identical", same}, {"resume_matches", resumed}, {"row_51", a51}, {"seconds", secs}};
  return o;
}

Outcome loss_anchors(const Context&) {
  std::vector<float> onehot(10 * 4, 0.0f);
  for (int i = 0; i < 4; ++i) onehot[static_cast<std::size_t>(i * 10 + (3 * i) % 10)] = 1.0f;
  const auto uniform = nn::softmax(Tensor<float>::zeros({4, 10}));
  const double cce = nn::categorical_cross_entropy(uniform, Tensor<float>::from({4, 10}, onehot)).item();
  const double bce =
      nn::binary_cross_entropy(Tensor<float>::full({4, 1}, 0.5f), Tensor<float>::from({4, 1}, {1, 0, 1, 1})).item();
  const double e1 = std::abs(cce - std::log(10.0)), e2 = std::abs(bce - std::numbers::ln2);
  Outcome o;
  o.passed = e1 <= 1e-4 && e2 <= 1e-4;
  o.detail = fmt("uniform 10-class CE %.7f (ln 10 = %.7f, |diff| %.1e <= 1e-4); validity 0.5 BCE %.7f "
                 "(ln 2 = %.7f, |diff| %.1e <= 1e-4)",
                 cce, std::log(10.0), e1, bce, std::numbers::ln2, e2);
  o.record = {{"categorical_ce", cce}, {"binary_ce", bce}};
  return o;
}

struct Criterion {
  int id;
  const char* name;
  bool needs_data;
  std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  Context ctx;
  ctx.data_dir = BHND_DATA_DIR;
  ctx.work_dir = "acceptance_runs";
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--data-dir", ctx.data_dir, "MNIST IDX directory")->capture_default_str();
  app.add_option("--work-dir", ctx.work_dir, "Directory for run outputs")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "gradient suite", false, gradient_suite},
      {2, "convolution oracle", false, conv_oracle},
      {3, "architecture fidelity", false, architecture},
      {4, "overfit sanity", true, overfit},
      {5, "desk-scale recognition", true, recognition},
      {6, "SGAN desk run", true, sgan_desk_run},
      {7, "determinism", true, determinism},
      {8, "closed-form loss anchors", false, loss_anchors},
  };

  fs::create_directories(ctx.work_dir);
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    try {
      if (c.needs_data && !fs::exists(ctx.data_dir)) {
        o.detail = "data directory " + ctx.data_dir.string() + " not found";
      } else {
        o = c.run(ctx);
      }
    } catch (const std::exception& e) {
      o.passed = false;
      o.detail = std::string("error: ") + e.what();
    }
    failures += !o.passed;
    std::printf("[%s] %d %s: %s\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    json record = o.record;
    record["criterion"] = c.id;
    record["name"] = c.name;
    record["passed"] = o.passed;
    record["detail"] = o.detail;
    record["build"] = io::build_id();
    record["data_dir"] = ctx.data_dir.string();
    io::write_file_atomic(ctx.work_dir / ("acceptance_" + std::to_string(c.id) + ".json"), record.dump(2) + "\n");
  }
  return failures == 0 ? 0 : 1;
}
