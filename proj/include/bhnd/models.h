#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bhnd/nn/layers.h"

namespace bhnd::models {

using nn::Init;
using nn::Layer;
using nn::Mode;
using nn::NamedTensor;

struct TraceEntry {
  std::string layer;  // qualified name, e.g. "block2.pool"
  Shape shape;        // output shape of that layer
};

/// A sequential trunk optionally followed by parallel heads that all read the
/// trunk output. Parameter and buffer names are "<graph>.<layer>.<role>", with
/// head layers qualified by the head name.
class ModelGraph {
 public:
  explicit ModelGraph(std::string name) : name_(std::move(name)) {}

  ModelGraph(ModelGraph&&) = default;
  ModelGraph& operator=(ModelGraph&&) = default;

  const std::string& name() const { return name_; }

  void add(std::unique_ptr<Layer> layer);
  void add_head(std::string head, std::vector<std::unique_ptr<Layer>> layers);

  /// Single-output forward; throws ContractError on a multi-head graph.
  Tensor<float> forward(const Tensor<float>& x, Rng* rng = nullptr);
  /// Trunk output when there are no heads, else one tensor per head in order.
  std::vector<Tensor<float>> forward_all(const Tensor<float>& x, Rng* rng = nullptr);

  /// Static propagation; incompatibilities raise DimensionError naming the
  /// first offending layer and both shapes.
  std::vector<TraceEntry> trace_shapes(const Shape& input) const;

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;
  std::int64_t parameter_count() const;

  void zero_grad();
  /// Toggles requires_grad on every parameter; a frozen graph still passes
  /// gradients through to its input.
  void set_trainable(bool trainable);

  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }
  bool update_running_stats() const { return update_running_stats_; }
  void set_update_running_stats(bool on) { update_running_stats_ = on; }

  const std::vector<std::string>& head_names() const { return head_names_; }

 private:
  Tensor<float> run(std::vector<std::unique_ptr<Layer>>& layers, Tensor<float> x, nn::ForwardContext& ctx);

  std::string name_;
  std::vector<std::unique_ptr<Layer>> trunk_;
  std::vector<std::string> head_names_;
  std::vector<std::vector<std::unique_ptr<Layer>>> heads_;
  Mode mode_ = Mode::eval;
  bool update_running_stats_ = true;
};

struct BlockSpec {
  int convs;
  std::int64_t filters;
  std::int64_t kernel;
};

struct RecognizerSpec {
  std::int64_t in_channels = 1;
  std::int64_t image_size = 32;  // square input extent; sizes the first dense layer
  std::vector<BlockSpec> blocks = {{2, 32, 2}, {3, 64, 3}, {2, 128, 5}, {2, 256, 5}, {2, 384, 5}, {2, 512, 5}};
  std::vector<std::int64_t> hidden = {1024, 5120};
  double dropout = 0.5;
  std::int64_t classes = 10;
  Init output_init = Init::zeros;
};

struct GeneratorSpec {
  std::int64_t latent_dim = 100;
  std::int64_t base_channels = 128;
  std::int64_t base_size = 8;
  std::vector<std::int64_t> conv_filters = {128, 64};  // one per upsample
  std::int64_t kernel = 3;
  std::int64_t out_channels = 1;
};

struct DiscriminatorSpec {
  std::int64_t in_channels = 1;
  std::int64_t image_size = 32;
  std::vector<std::int64_t> filters = {32, 64, 128, 256};
  std::vector<bool> batchnorm = {false, true, true, false};
  std::int64_t kernel = 3;
  int stride = 2;
  double leaky_slope = 0.2;
  double dropout = 0.25;
  std::int64_t classes = 10;  // class head has classes + 1 outputs
  Init output_init = Init::zeros;
};

ModelGraph build_recognizer(const RecognizerSpec& spec, Rng& rng);
ModelGraph build_generator(const GeneratorSpec& spec, Rng& rng);
/// Heads, in order: "validity" (N,1) and "class" (N, classes + 1).
ModelGraph build_discriminator(const DiscriminatorSpec& spec, Rng& rng);

std::vector<TraceEntry> trace_shapes(const ModelGraph& graph, const Shape& input);

}  // namespace bhnd::models
