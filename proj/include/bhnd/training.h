#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bhnd/data.h"
#include "bhnd/metrics.h"
#include "bhnd/models.h"
#include "bhnd/optim.h"

namespace bhnd::training {

using models::ModelGraph;

struct TrainConfig {
  std::int64_t steps = 19550;
  std::int64_t batch_size = 64;
  double learning_rate = 0.001;
  std::uint64_t seed = 0;
  /// Fraction of real SGAN samples whose labels are used (0, 1].
  double labeled_fraction = 1.0;
  /// Recognizer: validation every N updates (0 = only at start and end).
  std::int64_t eval_interval = 500;
  /// SGAN: metrics row every N steps.
  std::int64_t log_interval = 1;
  /// SGAN: sample grid every N steps (0 = first and last step only).
  std::int64_t sample_interval = 0;
  /// Resumable checkpoint every N steps (0 = only at the end).
  std::int64_t checkpoint_interval = 0;
  std::int64_t latent_dim = 100;
  double adam_beta1 = 0.5;
  std::int64_t grid_count = 16;
  std::int64_t grid_columns = 4;
  std::int64_t eval_batch_size = 100;
  /// Empty: keep everything in memory and write nothing.
  std::filesystem::path out_dir;
  /// Checkpoint written by an earlier run with the same configuration.
  std::filesystem::path resume_from;

  static TrainConfig recognizer_defaults();
  static TrainConfig sgan_defaults();
  /// Throws ContractError naming the first invalid field.
  void validate() const;
};

using ProgressFn = std::function<void(const std::string&)>;

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean categorical cross-entropy and argmax accuracy of a single-head
/// classifier, in eval mode without a tape. The graph's mode is restored.
Evaluation evaluate(ModelGraph& model, const data::Dataset& dataset, std::int64_t batch_size = 100);

/// Batch accuracy of probability rows against integer labels.
double accuracy(const Tensor<float>& probs, std::span<const int> labels);

/// Recognizer training state. The update taking the model from s to s + 1
/// completed updates uses batch s of the shuffled order and dropout masks
/// from Rng(seed, streams::dropout, s), so a run restored from a checkpoint
/// continues exactly.
class RecognizerTrainer {
 public:
  RecognizerTrainer(const TrainConfig& config, std::int64_t dataset_size, const models::RecognizerSpec& spec = {});

  /// One RMSprop update on the next batch; returns the pre-update batch
  /// loss and accuracy. Throws NumericError on a non-finite loss before any
  /// parameter changes.
  Evaluation step(const data::Dataset& train);

  std::int64_t steps_done() const { return steps_done_; }
  ModelGraph& model() { return model_; }
  optim::Rmsprop& optimizer() { return optimizer_; }

  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

 private:
  TrainConfig config_;
  ModelGraph model_;
  optim::Rmsprop optimizer_;
  data::BatchIterator batches_;
  std::int64_t steps_done_ = 0;
  std::int64_t seed_;
};

struct RecognizerResult {
  ModelGraph model;
  RecognizerMetrics metrics;
  std::int64_t best_step = -1;
  double best_accuracy = -1.0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path final_checkpoint;
};

/// Runs config.steps updates in total (counting any restored from
/// config.resume_from). A row at step s describes the model after s
/// updates: train rows hold the loss of the batch consumed by update s + 1,
/// validation rows are taken at s = 0, eval_interval, ... and after the last
/// update. With an output directory the run writes metrics.csv,
/// checkpoint.ckpt (resumable), best.ckpt and final.ckpt.
RecognizerResult train_recognizer(const TrainConfig& config, const data::Dataset& train,
                                  const data::Dataset& validation, const ProgressFn& progress = {});

struct SganStepResult {
  double d_loss = 0.0;
  double d_accuracy = 0.0;
  double g_loss = 0.0;
  // Statistics of the generated batch of this step.
  double fake_min = 0.0;
  double fake_max = 0.0;
  double fake_std = 0.0;
  double max_class_row_error = 0.0;  // max |sum(class row) - 1|
};

/// One alternating step on a real batch x (symmetric range) with labels y.
///   1. z ~ N(0, 1) of shape [B, latent] from `rng`; fake = G(z).
///   2. Discriminator update: real rows target validity 1 and class y, fake
///      rows validity 0 and class 10; d_loss is the mean of the real and
///      fake composites, each binary CE + categorical CE. Real rows with a
///      zero `labeled` entry contribute only the binary term.
///   3. Generator update through the discriminator with its parameters
///      frozen and its running statistics untouched: g_loss = binary CE of
///      D(fake) validity against 1.
/// d_accuracy is the class-head accuracy over labeled real rows and fake
/// rows. Dropout masks are drawn from `rng` after z. Non-finite losses raise
/// NumericError naming the phase.
SganStepResult sgan_train_step(ModelGraph& generator, ModelGraph& discriminator, const Tensor<float>& x,
                               std::span<const int> y, std::span<const std::uint8_t> labeled, Rng& rng,
                               optim::Adam& g_optimizer, optim::Adam& d_optimizer);

/// Step 3 above on its own: `fake` must still be attached to the generator's
/// tape. Returns g_loss; the discriminator's parameters and running
/// statistics are left untouched.
double sgan_generator_phase(ModelGraph& discriminator, const Tensor<float>& fake, Rng& rng,
                            optim::Adam& g_optimizer);

/// Which training samples keep their labels: round(fraction * n) of them,
/// chosen by Rng(seed, streams::labeled_mask).
std::vector<std::uint8_t> labeled_mask(std::int64_t n, double fraction, std::uint64_t seed);

class SganTrainer {
 public:
  SganTrainer(const TrainConfig& config, const data::Dataset& dataset, const models::GeneratorSpec& g_spec = {},
              const models::DiscriminatorSpec& d_spec = {});

  SganStepResult step();
  /// Generator output for the fixed grid latents, in eval mode.
  Tensor<float> sample_grid();

  std::int64_t steps_done() const { return steps_done_; }
  ModelGraph& generator() { return generator_; }
  ModelGraph& discriminator() { return discriminator_; }

  void save(const std::filesystem::path& path);
  void load(const std::filesystem::path& path);

 private:
  TrainConfig config_;
  const data::Dataset& dataset_;
  ModelGraph generator_;
  ModelGraph discriminator_;
  optim::Adam g_optimizer_;
  optim::Adam d_optimizer_;
  data::BatchIterator batches_;
  std::vector<std::uint8_t> labeled_;
  std::int64_t steps_done_ = 0;
  std::int64_t seed_;
};

struct SganResult {
  ModelGraph generator;
  ModelGraph discriminator;
  SganMetrics metrics;
  std::vector<SganStepResult> steps;  // every step run in this call
  std::vector<std::filesystem::path> grids;
  std::vector<std::int64_t> grid_steps;
};

/// Row step s is the step run on the models after s updates, logged every
/// log_interval steps and at the last step. Sample grids samples_<s>.pgm
/// come from the generator after s updates, at s = 0, every sample_interval
/// and at the end. Files as for train_recognizer.
SganResult train_sgan(const TrainConfig& config, const data::Dataset& dataset, const ProgressFn& progress = {});

}  // namespace bhnd::training
