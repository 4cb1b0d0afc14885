#include "bhnd/training.h"

#include <cmath>
#include <numeric>

#include "bhnd/checkpoint.h"
#include "bhnd/nn/functional.h"
#include "bhnd/ops.h"
#include "bhnd/report.h"

namespace bhnd::training {

namespace fs = std::filesystem;

TrainConfig TrainConfig::recognizer_defaults() { return {}; }

TrainConfig TrainConfig::sgan_defaults() {
  TrainConfig c;
  c.steps = 300000;
  c.learning_rate = 0.002;
  c.sample_interval = 100000;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ContractError("invalid training config: " + msg); };
  if (steps < 1) fail("steps must be >= 1");
  if (batch_size < 1) fail("batch size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) fail("learning rate must be positive");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) fail("labeled fraction must lie in (0, 1]");
  if (eval_interval < 0) fail("eval interval must be >= 0");
  if (log_interval < 1) fail("log interval must be >= 1");
  if (sample_interval < 0) fail("sample interval must be >= 0");
  if (checkpoint_interval < 0) fail("checkpoint interval must be >= 0");
  if (latent_dim < 1) fail("latent dim must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam beta1 must lie in [0, 1)");
  if (grid_count < 1 || grid_columns < 1) fail("grid count and columns must be >= 1");
  if (eval_batch_size < 1) fail("eval batch size must be >= 1");
}

double accuracy(const Tensor<float>& probs, std::span<const int> labels) {
  if (probs.ndim() != 2 || probs.dim(0) != static_cast<std::int64_t>(labels.size())) {
    throw DimensionError("accuracy: probabilities " + to_string(probs.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) return 0.0;
  const auto p = probs.data();
  const std::int64_t k = probs.dim(1);
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = p.subspan(i * static_cast<std::size_t>(k), static_cast<std::size_t>(k));
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    hits += best == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

Evaluation evaluate(ModelGraph& model, const data::Dataset& dataset, std::int64_t batch_size) {
  if (dataset.size() == 0) throw ContractError("evaluate: empty dataset");
  if (batch_size < 1) throw ContractError("evaluate: batch size must be >= 1");
  NoGradGuard no_grad;
  const auto previous = model.mode();
  model.set_mode(nn::Mode::eval);
  double loss_sum = 0.0, hit_sum = 0.0;
  for (std::int64_t begin = 0; begin < dataset.size(); begin += batch_size) {
    const std::int64_t end = std::min(begin + batch_size, dataset.size());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const auto batch = data::gather(dataset, idx);
    const auto probs = model.forward(batch.images);
    const auto targets = data::one_hot(batch.labels, static_cast<int>(probs.dim(1)));
    const double n = static_cast<double>(end - begin);
    loss_sum += nn::categorical_cross_entropy(probs, targets).item() * n;
    hit_sum += accuracy(probs, batch.labels) * n;
  }
  model.set_mode(previous);
  const double total = static_cast<double>(dataset.size());
  return {loss_sum / total, hit_sum / total};
}

namespace {

ModelGraph make_recognizer(const models::RecognizerSpec& spec, std::uint64_t seed) {
  Rng rng(seed, streams::init);
  return models::build_recognizer(spec, rng);
}

std::int64_t as_counter(std::uint64_t v) { return static_cast<std::int64_t>(v); }

void check_resumed(const char* what, std::int64_t stored, std::int64_t configured) {
  if (stored != configured) {
    throw ContractError(std::string("cannot resume: checkpoint ") + what + " is " + std::to_string(stored) +
                        ", configuration has " + std::to_string(configured));
  }
}

std::string fmt(const char* format, double a, double b) {
  char buf[128];
  std::snprintf(buf, sizeof buf, format, a, b);
  return buf;
}

}  // namespace

RecognizerTrainer::RecognizerTrainer(const TrainConfig& config, std::int64_t dataset_size,
                                     const models::RecognizerSpec& spec)
    : config_(config),
      model_(make_recognizer(spec, config.seed)),
      optimizer_(model_.parameters(), optim::RmspropOptions{config.learning_rate}),
      batches_(dataset_size, config.batch_size, config.seed, false),
      seed_(as_counter(config.seed)) {
  config.validate();
}

Evaluation RecognizerTrainer::step(const data::Dataset& train) {
  const auto batch = data::gather(train, batches_.batch(steps_done_));
  Rng dropout_rng(config_.seed, streams::dropout, static_cast<std::uint64_t>(steps_done_));
  model_.set_mode(nn::Mode::train);
  optimizer_.zero_grad();
  const auto probs = model_.forward(batch.images, &dropout_rng);
  const auto targets = data::one_hot(batch.labels, static_cast<int>(probs.dim(1)));
  const auto loss = nn::categorical_cross_entropy(probs, targets);
  const Evaluation result{loss.item(), accuracy(probs, batch.labels)};
  if (!std::isfinite(result.loss)) {
    throw NumericError("non-finite recognizer loss at step " + std::to_string(steps_done_));
  }
  backward(loss);
  optimizer_.step();
  ++steps_done_;
  return result;
}

void RecognizerTrainer::save(const fs::path& path) {
  std::int64_t batch = config_.batch_size;
  io::StateDict state;
  state.add_graph(model_);
  state.add_optimizer(model_.name(), optimizer_);
  state.add_counter("train/step", &steps_done_);
  state.add_counter("train/seed", &seed_);
  state.add_counter("train/batch_size", &batch);
  io::save_checkpoint(state, path);
}

void RecognizerTrainer::load(const fs::path& path) {
  std::int64_t seed = 0, batch = 0, step = 0;
  io::StateDict state;
  state.add_graph(model_);
  state.add_optimizer(model_.name(), optimizer_);
  state.add_counter("train/step", &step);
  state.add_counter("train/seed", &seed);
  state.add_counter("train/batch_size", &batch);
  io::load_checkpoint(path, state);
  check_resumed("seed", seed, seed_);
  check_resumed("batch size", batch, config_.batch_size);
  steps_done_ = step;
}

RecognizerResult train_recognizer(const TrainConfig& config, const data::Dataset& train,
                                  const data::Dataset& validation, const ProgressFn& progress) {
  config.validate();
  RecognizerTrainer trainer(config, train.size());
  RecognizerResult result{ModelGraph("recognizer"), {}, -1, -1.0, {}, {}};
  const bool files = !config.out_dir.empty();
  if (files) fs::create_directories(config.out_dir);
  const fs::path csv = config.out_dir / "metrics.csv";
  const fs::path resumable = config.out_dir / "checkpoint.ckpt";

  if (!config.resume_from.empty()) {
    trainer.load(config.resume_from);
    if (trainer.steps_done() > config.steps) {
      throw ContractError("cannot resume: checkpoint is at step " + std::to_string(trainer.steps_done()) +
                          ", beyond the configured " + std::to_string(config.steps) + " steps");
    }
    if (files && fs::exists(csv)) {
      for (auto& row : io::read_recognizer_csv(csv)) {
        if (row.step >= trainer.steps_done()) continue;
        if (row.split == "validation" && row.accuracy > result.best_accuracy) {
          result.best_accuracy = row.accuracy;
          result.best_step = row.step;
        }
        result.metrics.push_back(std::move(row));
      }
    }
    if (progress) progress("resumed at step " + std::to_string(trainer.steps_done()));
  }
  if (files && fs::exists(config.out_dir / "best.ckpt")) result.best_checkpoint = config.out_dir / "best.ckpt";

  auto flush = [&] {
    if (files) io::write_metrics_csv(result.metrics, csv);
  };

  for (std::int64_t s = trainer.steps_done();; ++s) {
    const bool eval_due = s == config.steps || (config.eval_interval > 0 ? s % config.eval_interval == 0 : s == 0);
    if (eval_due) {
      const auto ev = evaluate(trainer.model(), validation, config.eval_batch_size);
      result.metrics.push_back({s, "validation", ev.loss, ev.accuracy});
      if (progress) progress("step " + std::to_string(s) + fmt(" validation loss %.4f accuracy %.4f", ev.loss, ev.accuracy));
      if (ev.accuracy > result.best_accuracy) {
        result.best_accuracy = ev.accuracy;
        result.best_step = s;
        if (files) {
          result.best_checkpoint = config.out_dir / "best.ckpt";
          io::save_checkpoint(trainer.model(), nullptr, result.best_checkpoint);
        }
      }
    }
    if (s == config.steps) break;

    Evaluation ev;
    try {
      ev = trainer.step(train);
    } catch (const NumericError& e) {
      flush();
      std::string msg = e.what();
      msg += files && fs::exists(resumable) ? "; last good checkpoint: " + resumable.string()
                                            : "; no checkpoint was written";
      throw NumericError(msg);
    }
    result.metrics.push_back({s, "train", ev.loss, ev.accuracy});
    if (progress && (s + 1) % 10 == 0) {
      progress("step " + std::to_string(s) + fmt(" train loss %.4f accuracy %.4f", ev.loss, ev.accuracy));
    }
    if (files && config.checkpoint_interval > 0 && (s + 1) % config.checkpoint_interval == 0) {
      trainer.save(resumable);
      flush();
    }
  }

  flush();
  if (files) {
    trainer.save(resumable);
    result.final_checkpoint = config.out_dir / "final.ckpt";
    trainer.save(result.final_checkpoint);
  }
  result.model = std::move(trainer.model());
  return result;
}

std::vector<std::uint8_t> labeled_mask(std::int64_t n, double fraction, std::uint64_t seed) {
  if (n < 0) throw ContractError("labeled_mask: negative size");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractError("labeled fraction must lie in (0, 1]");
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 1);
  if (fraction == 1.0) return mask;
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, streams::labeled_mask);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  const auto keep = static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(n)));
  for (std::int64_t i = keep; i < n; ++i) mask[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 0;
  return mask;
}

double sgan_generator_phase(ModelGraph& discriminator, const Tensor<float>& fake, Rng& rng,
                            optim::Adam& g_optimizer) {
  // The discriminator passes gradients but keeps its state.
  discriminator.set_trainable(false);
  discriminator.set_update_running_stats(false);
  g_optimizer.zero_grad();
  const auto validity = discriminator.forward_all(fake, &rng)[0];
  const auto g_loss = nn::binary_cross_entropy(validity, Tensor<float>::full({fake.dim(0), 1}, 1.0f));
  const double value = g_loss.item();
  if (std::isfinite(value)) backward(g_loss);
  discriminator.set_trainable(true);
  discriminator.set_update_running_stats(true);
  if (!std::isfinite(value)) throw NumericError("non-finite loss in the generator phase");
  g_optimizer.step();
  return value;
}

SganStepResult sgan_train_step(ModelGraph& generator, ModelGraph& discriminator, const Tensor<float>& x,
                               std::span<const int> y, std::span<const std::uint8_t> labeled, Rng& rng,
                               optim::Adam& g_optimizer, optim::Adam& d_optimizer) {
  const std::int64_t batch = x.dim(0);
  if (static_cast<std::int64_t>(y.size()) != batch || static_cast<std::int64_t>(labeled.size()) != batch) {
    throw DimensionError("sgan step: batch of " + std::to_string(batch) + " images with " +
                         std::to_string(y.size()) + " labels and " + std::to_string(labeled.size()) + " mask entries");
  }
  // The generator's first parameter is its input dense weight [latent, width].
  const std::int64_t latent = generator.parameters().front().tensor.dim(0);
  const auto z = randn<float>({batch, latent}, rng);

  generator.set_mode(nn::Mode::train);
  discriminator.set_mode(nn::Mode::train);
  const auto fake = generator.forward(z, &rng);

  SganStepResult r;
  {
    const auto f = fake.data();
    const auto [lo, hi] = std::minmax_element(f.begin(), f.end());
    r.fake_min = *lo;
    r.fake_max = *hi;
    double mean = 0.0, sq = 0.0;
    for (float v : f) mean += v;
    mean /= static_cast<double>(f.size());
    for (float v : f) sq += (v - mean) * (v - mean);
    r.fake_std = std::sqrt(sq / static_cast<double>(f.size()));
  }

  // Discriminator phase.
  discriminator.set_trainable(true);
  discriminator.set_update_running_stats(true);
  d_optimizer.zero_grad();
  const auto ones = Tensor<float>::full({batch, 1}, 1.0f);
  const auto zeros = Tensor<float>::zeros({batch, 1});
  const auto real_out = discriminator.forward_all(x, &rng);
  const auto fake_out = discriminator.forward_all(fake.detach(), &rng);
  const int classes = static_cast<int>(real_out[1].dim(1));
  const int fake_class = classes - 1;
  const std::vector<int> fake_labels(static_cast<std::size_t>(batch), fake_class);
  const auto real_loss = add(nn::binary_cross_entropy(real_out[0], ones),
                             nn::categorical_cross_entropy(real_out[1], data::one_hot(y, classes), labeled));
  const auto fake_loss = add(nn::binary_cross_entropy(fake_out[0], zeros),
                             nn::categorical_cross_entropy(fake_out[1], data::one_hot(fake_labels, classes)));
  const auto d_loss = scale(add(real_loss, fake_loss), 0.5f);
  r.d_loss = d_loss.item();
  if (!std::isfinite(r.d_loss)) throw NumericError("non-finite loss in the discriminator phase");

  std::int64_t hits = 0, counted = 0;
  for (const auto* out : {&real_out[1], &fake_out[1]}) {
    const auto p = out->data();
    const bool is_real = out == &real_out[1];
    for (std::int64_t i = 0; i < batch; ++i) {
      const auto row = p.subspan(static_cast<std::size_t>(i * classes), static_cast<std::size_t>(classes));
      double total = 0.0;
      for (float v : row) total += v;
      r.max_class_row_error = std::max(r.max_class_row_error, std::abs(total - 1.0));
      if (is_real && !labeled[static_cast<std::size_t>(i)]) continue;
      const int target = is_real ? y[static_cast<std::size_t>(i)] : fake_class;
      hits += (std::max_element(row.begin(), row.end()) - row.begin()) == target;
      ++counted;
    }
  }
  r.d_accuracy = static_cast<double>(hits) / static_cast<double>(counted);

  backward(d_loss);
  d_optimizer.step();

  r.g_loss = sgan_generator_phase(discriminator, fake, rng, g_optimizer);
  return r;
}

namespace {

struct SganModels {
  ModelGraph generator;
  ModelGraph discriminator;
};

SganModels make_sgan(const models::GeneratorSpec& g_spec, const models::DiscriminatorSpec& d_spec,
                     std::uint64_t seed) {
  Rng rng(seed, streams::init);
  auto g = models::build_generator(g_spec, rng);
  auto d = models::build_discriminator(d_spec, rng);
  return {std::move(g), std::move(d)};
}

models::GeneratorSpec with_latent(models::GeneratorSpec spec, std::int64_t latent) {
  spec.latent_dim = latent;
  return spec;
}

}  // namespace

SganTrainer::SganTrainer(const TrainConfig& config, const data::Dataset& dataset, const models::GeneratorSpec& g_spec,
                         const models::DiscriminatorSpec& d_spec)
    : config_(config),
      dataset_(dataset),
      generator_("generator"),
      discriminator_("discriminator"),
      g_optimizer_({}),
      d_optimizer_({}),
      batches_(dataset.size(), config.batch_size, config.seed, true),
      labeled_(labeled_mask(dataset.size(), config.labeled_fraction, config.seed)),
      seed_(as_counter(config.seed)) {
  config.validate();
  if (dataset.range != data::Rescale::symmetric) throw ContractError("SGAN training needs [-1, 1] images");
  auto built = make_sgan(with_latent(g_spec, config.latent_dim), d_spec, config.seed);
  generator_ = std::move(built.generator);
  discriminator_ = std::move(built.discriminator);
  const optim::AdamOptions options{config.learning_rate, config.adam_beta1};
  g_optimizer_ = optim::Adam(generator_.parameters(), options);
  d_optimizer_ = optim::Adam(discriminator_.parameters(), options);
}

SganStepResult SganTrainer::step() {
  const auto batch = data::gather(dataset_, batches_.batch(steps_done_));
  std::vector<std::uint8_t> labeled;
  labeled.reserve(batch.indices.size());
  for (auto i : batch.indices) labeled.push_back(labeled_[static_cast<std::size_t>(i)]);
  Rng rng(config_.seed, streams::latent, static_cast<std::uint64_t>(steps_done_));
  const auto r = sgan_train_step(generator_, discriminator_, batch.images, batch.labels, labeled, rng,
                                 g_optimizer_, d_optimizer_);
  ++steps_done_;
  return r;
}

Tensor<float> SganTrainer::sample_grid() {
  NoGradGuard no_grad;
  Rng rng(config_.seed, streams::sample_grid);
  const auto z = randn<float>({config_.grid_count, config_.latent_dim}, rng);
  const auto previous = generator_.mode();
  generator_.set_mode(nn::Mode::eval);
  auto images = generator_.forward(z);
  generator_.set_mode(previous);
  return images;
}

void SganTrainer::save(const fs::path& path) {
  std::int64_t batch = config_.batch_size;
  io::StateDict state;
  state.add_graph(generator_);
  state.add_graph(discriminator_);
  state.add_optimizer(generator_.name(), g_optimizer_);
  state.add_optimizer(discriminator_.name(), d_optimizer_);
  state.add_counter("train/step", &steps_done_);
  state.add_counter("train/seed", &seed_);
  state.add_counter("train/batch_size", &batch);
  io::save_checkpoint(state, path);
}

void SganTrainer::load(const fs::path& path) {
  std::int64_t seed = 0, batch = 0, step = 0;
  io::StateDict state;
  state.add_graph(generator_);
  state.add_graph(discriminator_);
  state.add_optimizer(generator_.name(), g_optimizer_);
  state.add_optimizer(discriminator_.name(), d_optimizer_);
  state.add_counter("train/step", &step);
  state.add_counter("train/seed", &seed);
  state.add_counter("train/batch_size", &batch);
  io::load_checkpoint(path, state);
  check_resumed("seed", seed, seed_);
  check_resumed("batch size", batch, config_.batch_size);
  steps_done_ = step;
}

SganResult train_sgan(const TrainConfig& config, const data::Dataset& dataset, const ProgressFn& progress) {
  config.validate();
  SganTrainer trainer(config, dataset);
  SganResult result{ModelGraph("generator"), ModelGraph("discriminator"), {}, {}, {}, {}};
  const bool files = !config.out_dir.empty();
  if (files) fs::create_directories(config.out_dir);
  const fs::path csv = config.out_dir / "metrics.csv";
  const fs::path resumable = config.out_dir / "checkpoint.ckpt";

  if (!config.resume_from.empty()) {
    trainer.load(config.resume_from);
    if (trainer.steps_done() > config.steps) {
      throw ContractError("cannot resume: checkpoint is at step " + std::to_string(trainer.steps_done()) +
                          ", beyond the configured " + std::to_string(config.steps) + " steps");
    }
    if (files && fs::exists(csv)) {
      for (auto& row : io::read_sgan_csv(csv)) {
        if (row.step < trainer.steps_done()) result.metrics.push_back(row);
      }
    }
    if (progress) progress("resumed at step " + std::to_string(trainer.steps_done()));
  }

  auto flush = [&] {
    if (files) io::write_metrics_csv(result.metrics, csv);
  };
  auto emit_grid = [&](std::int64_t s) {
    result.grid_steps.push_back(s);
    if (!files) return;
    const auto path = config.out_dir / ("samples_" + std::to_string(s) + ".pgm");
    io::write_image_grid(trainer.sample_grid(), config.grid_columns, path);
    result.grids.push_back(path);
  };

  for (std::int64_t s = trainer.steps_done();; ++s) {
    const bool grid_due = s == 0 || s == config.steps || (config.sample_interval > 0 && s % config.sample_interval == 0);
    if (grid_due) emit_grid(s);
    if (s == config.steps) break;

    SganStepResult r;
    try {
      r = trainer.step();
    } catch (const NumericError& e) {
      flush();
      std::string msg = "SGAN step " + std::to_string(s) + ": " + e.what();
      msg += files && fs::exists(resumable) ? "; last good checkpoint: " + resumable.string()
                                            : "; no checkpoint was written";
      throw NumericError(msg);
    }
    result.steps.push_back(r);
    if (s % config.log_interval == 0 || s + 1 == config.steps) {
      result.metrics.push_back({s, r.d_loss, r.d_accuracy, r.g_loss});
    }
    if (progress && (s + 1) % 50 == 0) {
      progress("step " + std::to_string(s) + fmt(" d_loss %.4f g_loss %.4f", r.d_loss, r.g_loss));
    }
    if (files && config.checkpoint_interval > 0 && (s + 1) % config.checkpoint_interval == 0) {
      trainer.save(resumable);
      flush();
    }
  }

  flush();
  if (files) {
    trainer.save(resumable);
    trainer.save(config.out_dir / "final.ckpt");
  }
  result.generator = std::move(trainer.generator());
  result.discriminator = std::move(trainer.discriminator());
  return result;
}

}  // namespace bhnd::training
