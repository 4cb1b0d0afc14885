#include "bhnd/models.h"

#include <set>

namespace bhnd::models {

using namespace nn;

void ModelGraph::add(std::unique_ptr<Layer> layer) {
  if (!heads_.empty()) throw ContractError("ModelGraph '" + name_ + "': trunk layer added after heads");
  trunk_.push_back(std::move(layer));
}

void ModelGraph::add_head(std::string head, std::vector<std::unique_ptr<Layer>> layers) {
  head_names_.push_back(std::move(head));
  heads_.push_back(std::move(layers));
}

Tensor<float> ModelGraph::run(std::vector<std::unique_ptr<Layer>>& layers, Tensor<float> x, ForwardContext& ctx) {
  for (auto& layer : layers) x = layer->forward(x, ctx);
  return x;
}

std::vector<Tensor<float>> ModelGraph::forward_all(const Tensor<float>& x, Rng* rng) {
  ForwardContext ctx{mode_, rng, update_running_stats_};
  Tensor<float> trunk = run(trunk_, x, ctx);
  if (heads_.empty()) return {trunk};
  std::vector<Tensor<float>> outputs;
  for (auto& head : heads_) outputs.push_back(run(head, trunk, ctx));
  return outputs;
}

Tensor<float> ModelGraph::forward(const Tensor<float>& x, Rng* rng) {
  if (heads_.size() > 1) throw ContractError("ModelGraph '" + name_ + "' has several heads; use forward_all");
  return forward_all(x, rng).front();
}

std::vector<TraceEntry> ModelGraph::trace_shapes(const Shape& input) const {
  std::vector<TraceEntry> trace;
  Shape shape = input;
  for (const auto& layer : trunk_) {
    shape = layer->output_shape(shape);
    trace.push_back({layer->name(), shape});
  }
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    Shape head_shape = shape;
    for (const auto& layer : heads_[h]) {
      head_shape = layer->output_shape(head_shape);
      trace.push_back({head_names_[h] + "." + layer->name(), head_shape});
    }
  }
  return trace;
}

namespace {

template <typename Fn>
void for_each_layer(const std::string& graph, const std::vector<std::unique_ptr<Layer>>& trunk,
                    const std::vector<std::string>& head_names,
                    const std::vector<std::vector<std::unique_ptr<Layer>>>& heads, Fn&& fn) {
  for (const auto& layer : trunk) fn(graph + "." + layer->name() + ".", *layer);
  for (std::size_t h = 0; h < heads.size(); ++h) {
    for (const auto& layer : heads[h]) fn(graph + "." + head_names[h] + "." + layer->name() + ".", *layer);
  }
}

}  // namespace

std::vector<NamedTensor> ModelGraph::parameters() const {
  std::vector<NamedTensor> out;
  for_each_layer(name_, trunk_, head_names_, heads_, [&](const std::string& prefix, const Layer& layer) {
    for (auto& p : layer.parameters()) out.push_back({prefix + p.name, p.tensor});
  });
  return out;
}

std::vector<NamedTensor> ModelGraph::buffers() const {
  std::vector<NamedTensor> out;
  for_each_layer(name_, trunk_, head_names_, heads_, [&](const std::string& prefix, const Layer& layer) {
    for (auto& b : layer.buffers()) out.push_back({prefix + b.name, b.tensor});
  });
  return out;
}

std::int64_t ModelGraph::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.numel();
  return total;
}

void ModelGraph::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

void ModelGraph::set_trainable(bool trainable) {
  for (auto& p : parameters()) p.tensor.set_requires_grad(trainable);
}

namespace {

void check_unique_names(const ModelGraph& graph) {
  std::set<std::string> seen;
  for (const auto& p : graph.parameters()) {
    if (!seen.insert(p.name).second) throw ContractError("duplicate parameter name " + p.name);
  }
}

}  // namespace

ModelGraph build_recognizer(const RecognizerSpec& spec, Rng& rng) {
  ModelGraph g("recognizer");
  std::int64_t channels = spec.in_channels;
  std::int64_t extent = spec.image_size;
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
    const auto& block = spec.blocks[b];
    const std::string prefix = "block" + std::to_string(b + 1) + ".";
    for (int c = 1; c <= block.convs; ++c) {
      const std::string id = std::to_string(c);
      g.add(std::make_unique<Conv2dLayer>(
          prefix + "conv" + id,
          Conv2dSpec::make(channels, block.filters, block.kernel, 1, Padding::same, Init::he_uniform, rng)));
      g.add(std::make_unique<ActivationLayer>(prefix + "relu" + id, Activation::relu));
      channels = block.filters;
    }
    g.add(std::make_unique<MaxPool2dLayer>(prefix + "pool", 2, 2, true));
    g.add(std::make_unique<BatchNorm2dLayer>(prefix + "bn", BatchNormSpec::make(channels)));
    extent = nn::pool_output_extent(extent, 2, 2, true);
  }
  g.add(std::make_unique<FlattenLayer>("flatten"));
  std::int64_t width = channels * extent * extent;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    const std::string id = std::to_string(i + 1);
    g.add(std::make_unique<DenseLayer>("fc" + id, width, spec.hidden[i], Init::he_uniform, rng));
    g.add(std::make_unique<ActivationLayer>("fc" + id + "_relu", Activation::relu));
    g.add(std::make_unique<DropoutLayer>("dropout" + id, spec.dropout));
    width = spec.hidden[i];
  }
  g.add(std::make_unique<DenseLayer>("fc" + std::to_string(spec.hidden.size() + 1), width, spec.classes,
                                     spec.output_init, rng));
  g.add(std::make_unique<SoftmaxLayer>("softmax"));
  check_unique_names(g);
  return g;
}

ModelGraph build_generator(const GeneratorSpec& spec, Rng& rng) {
  if (spec.latent_dim < 1) throw ContractError("generator latent dim must be >= 1");
  ModelGraph g("generator");
  const std::int64_t width = spec.base_channels * spec.base_size * spec.base_size;
  g.add(std::make_unique<DenseLayer>("dense", spec.latent_dim, width, Init::he_uniform, rng));
  g.add(std::make_unique<ReshapeLayer>("reshape", Shape{spec.base_channels, spec.base_size, spec.base_size}));
  g.add(std::make_unique<BatchNorm2dLayer>("bn0", BatchNormSpec::make(spec.base_channels)));
  std::int64_t channels = spec.base_channels;
  for (std::size_t i = 0; i < spec.conv_filters.size(); ++i) {
    const std::string id = std::to_string(i + 1);
    g.add(std::make_unique<Upsample2xLayer>("upsample" + id));
    g.add(std::make_unique<Conv2dLayer>(
        "conv" + id,
        Conv2dSpec::make(channels, spec.conv_filters[i], spec.kernel, 1, Padding::same, Init::he_uniform, rng)));
    g.add(std::make_unique<ActivationLayer>("relu" + id, Activation::relu));
    g.add(std::make_unique<BatchNorm2dLayer>("bn" + id, BatchNormSpec::make(spec.conv_filters[i])));
    channels = spec.conv_filters[i];
  }
  g.add(std::make_unique<Conv2dLayer>(
      "conv_out",
      Conv2dSpec::make(channels, spec.out_channels, spec.kernel, 1, Padding::same, Init::xavier_uniform, rng)));
  g.add(std::make_unique<ActivationLayer>("tanh", Activation::tanh));
  check_unique_names(g);
  return g;
}

ModelGraph build_discriminator(const DiscriminatorSpec& spec, Rng& rng) {
  if (spec.classes < 1) throw ContractError("discriminator needs at least one class");
  if (spec.batchnorm.size() != spec.filters.size()) {
    throw ContractError("discriminator spec: batchnorm flags must match the conv count");
  }
  ModelGraph g("discriminator");
  std::int64_t channels = spec.in_channels;
  std::int64_t size = spec.image_size;
  for (std::size_t i = 0; i < spec.filters.size(); ++i) {
    const std::string id = std::to_string(i + 1);
    g.add(std::make_unique<Conv2dLayer>(
        "conv" + id,
        Conv2dSpec::make(channels, spec.filters[i], spec.kernel, spec.stride, Padding::same, Init::he_uniform, rng)));
    g.add(std::make_unique<ActivationLayer>("lrelu" + id, Activation::leaky_relu, spec.leaky_slope));
    g.add(std::make_unique<DropoutLayer>("dropout" + id, spec.dropout));
    if (spec.batchnorm[i]) g.add(std::make_unique<BatchNorm2dLayer>("bn" + id, BatchNormSpec::make(spec.filters[i])));
    channels = spec.filters[i];
    size = conv_axis(size, spec.kernel, spec.stride, Padding::same).output;
  }
  g.add(std::make_unique<FlattenLayer>("flatten"));
  const std::int64_t width = channels * size * size;

  std::vector<std::unique_ptr<Layer>> validity;
  validity.push_back(std::make_unique<DenseLayer>("dense", width, 1, spec.output_init, rng));
  validity.push_back(std::make_unique<ActivationLayer>("sigmoid", Activation::sigmoid));
  g.add_head("validity", std::move(validity));

  std::vector<std::unique_ptr<Layer>> classes;
  classes.push_back(std::make_unique<DenseLayer>("dense", width, spec.classes + 1, spec.output_init, rng));
  classes.push_back(std::make_unique<SoftmaxLayer>("softmax"));
  g.add_head("class", std::move(classes));
  check_unique_names(g);
  return g;
}

std::vector<TraceEntry> trace_shapes(const ModelGraph& graph, const Shape& input) {
  return graph.trace_shapes(input);
}

}  // namespace bhnd::models
