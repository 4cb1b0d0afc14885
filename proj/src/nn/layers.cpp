#include "bhnd/nn/layers.h"

#include <cmath>

#include "bhnd/ops.h"

namespace bhnd::nn {

namespace {

DimensionError layer_error(const Layer& layer, const Shape& input, const std::string& expected) {
  return DimensionError(layer.kind() + " '" + layer.name() + "': input " + to_string(input) + ", expected " +
                        expected);
}

}  // namespace

Tensor<float> init_tensor(const Shape& shape, Init init, std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
  Tensor<float> t;
  switch (init) {
    case Init::he_uniform: {
      const float limit = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
      t = uniform<float>(shape, -limit, limit, rng);
      break;
    }
    case Init::xavier_uniform: {
      const float limit = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
      t = uniform<float>(shape, -limit, limit, rng);
      break;
    }
    case Init::zeros:
      t = Tensor<float>::zeros(shape);
      break;
  }
  t.set_requires_grad(true);
  return t;
}

Conv2dSpec Conv2dSpec::make(std::int64_t in, std::int64_t out, std::int64_t kernel, int stride, Padding padding,
                            Init init, Rng& rng) {
  Conv2dSpec spec;
  spec.in_channels = in;
  spec.out_channels = out;
  spec.kernel_h = spec.kernel_w = kernel;
  spec.stride = stride;
  spec.padding = padding;
  spec.weight = init_tensor({out, in, kernel, kernel}, init, in * kernel * kernel, out * kernel * kernel, rng);
  spec.bias = Tensor<float>::zeros({out});
  spec.bias.set_requires_grad(true);
  return spec;
}

BatchNormSpec BatchNormSpec::make(std::int64_t channels, double momentum, double epsilon) {
  BatchNormSpec spec;
  spec.channels = channels;
  spec.gamma = Tensor<float>::full({channels}, 1.0f);
  spec.gamma.set_requires_grad(true);
  spec.beta = Tensor<float>::zeros({channels});
  spec.beta.set_requires_grad(true);
  spec.running_mean = Tensor<float>::zeros({channels});
  spec.running_var = Tensor<float>::full({channels}, 1.0f);
  spec.momentum = momentum;
  spec.epsilon = epsilon;
  return spec;
}

Tensor<float> Conv2dLayer::forward(const Tensor<float>& x, ForwardContext&) {
  return conv2d(x, spec_.weight, spec_.bias, spec_.options());
}

Shape Conv2dLayer::output_shape(const Shape& input) const {
  if (input.size() != 4 || input[1] != spec_.in_channels) {
    throw layer_error(*this, input, "(N," + std::to_string(spec_.in_channels) + ",H,W)");
  }
  const auto rows = conv_axis(input[2], spec_.kernel_h, spec_.stride, spec_.padding);
  const auto cols = conv_axis(input[3], spec_.kernel_w, spec_.stride, spec_.padding);
  return {input[0], spec_.out_channels, rows.output, cols.output};
}

std::vector<NamedTensor> Conv2dLayer::parameters() const { return {{"weight", spec_.weight}, {"bias", spec_.bias}}; }

Tensor<float> MaxPool2dLayer::forward(const Tensor<float>& x, ForwardContext&) {
  return maxpool2d(x, window_, stride_, ceil_mode_);
}

Shape MaxPool2dLayer::output_shape(const Shape& input) const {
  if (input.size() != 4) throw layer_error(*this, input, "(N,C,H,W)");
  const auto h = pool_output_extent(input[2], window_, stride_, ceil_mode_);
  const auto w = pool_output_extent(input[3], window_, stride_, ceil_mode_);
  if (h < 1 || w < 1) throw layer_error(*this, input, "spatial extents >= window");
  return {input[0], input[1], h, w};
}

Tensor<float> BatchNorm2dLayer::forward(const Tensor<float>& x, ForwardContext& ctx) {
  RunningStats<float> running{spec_.running_mean.mutable_data(), spec_.running_var.mutable_data()};
  if (ctx.mode == Mode::train && !ctx.update_running_stats) {
    return batchnorm2d<float>(x, spec_.gamma, spec_.beta, ctx.mode, nullptr, spec_.momentum, spec_.epsilon);
  }
  return batchnorm2d(x, spec_.gamma, spec_.beta, ctx.mode, &running, spec_.momentum, spec_.epsilon);
}

Shape BatchNorm2dLayer::output_shape(const Shape& input) const {
  if ((input.size() != 4 && input.size() != 2) || input[1] != spec_.channels) {
    throw layer_error(*this, input, "(N," + std::to_string(spec_.channels) + ",...)");
  }
  return input;
}

std::vector<NamedTensor> BatchNorm2dLayer::parameters() const {
  return {{"gamma", spec_.gamma}, {"beta", spec_.beta}};
}

std::vector<NamedTensor> BatchNorm2dLayer::buffers() const {
  return {{"running_mean", spec_.running_mean}, {"running_var", spec_.running_var}};
}

DenseLayer::DenseLayer(std::string name, std::int64_t in, std::int64_t out, Init init, Rng& rng)
    : Layer(std::move(name)),
      weight_(init_tensor({in, out}, init, in, out, rng)),
      bias_(Tensor<float>::zeros({out})) {
  bias_.set_requires_grad(true);
}

Tensor<float> DenseLayer::forward(const Tensor<float>& x, ForwardContext&) { return dense(x, weight_, bias_); }

Shape DenseLayer::output_shape(const Shape& input) const {
  if (input.size() != 2 || input[1] != weight_.dim(0)) {
    throw layer_error(*this, input, "(N," + std::to_string(weight_.dim(0)) + ")");
  }
  return {input[0], weight_.dim(1)};
}

std::vector<NamedTensor> DenseLayer::parameters() const { return {{"weight", weight_}, {"bias", bias_}}; }

DropoutLayer::DropoutLayer(std::string name, double rate) : Layer(std::move(name)), rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must lie in [0, 1)");
}

Tensor<float> DropoutLayer::forward(const Tensor<float>& x, ForwardContext& ctx) {
  if (ctx.mode == Mode::train && rate_ > 0.0 && !ctx.rng) {
    throw ContractError("dropout '" + name() + "': train mode needs a random stream");
  }
  Rng unused(0);
  return dropout(x, rate_, ctx.mode, ctx.rng ? *ctx.rng : unused);
}

Tensor<float> Upsample2xLayer::forward(const Tensor<float>& x, ForwardContext&) { return upsample2x(x); }

Shape Upsample2xLayer::output_shape(const Shape& input) const {
  if (input.size() != 4) throw layer_error(*this, input, "(N,C,H,W)");
  return {input[0], input[1], 2 * input[2], 2 * input[3]};
}

std::string ActivationLayer::kind() const {
  switch (activation_) {
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "activation";
}

Tensor<float> ActivationLayer::forward(const Tensor<float>& x, ForwardContext&) {
  return activation(x, activation_, alpha_);
}

Tensor<float> SoftmaxLayer::forward(const Tensor<float>& x, ForwardContext&) { return softmax(x); }

Shape SoftmaxLayer::output_shape(const Shape& input) const {
  if (input.size() != 2) throw layer_error(*this, input, "(N,K)");
  return input;
}

Tensor<float> FlattenLayer::forward(const Tensor<float>& x, ForwardContext&) { return flatten(x); }

Shape FlattenLayer::output_shape(const Shape& input) const {
  if (input.empty()) throw layer_error(*this, input, "a batch axis");
  return {input[0], numel(input) / input[0]};
}

Tensor<float> ReshapeLayer::forward(const Tensor<float>& x, ForwardContext&) {
  Shape shape{x.dim(0)};
  shape.insert(shape.end(), target_.begin(), target_.end());
  return reshape(x, shape);
}

Shape ReshapeLayer::output_shape(const Shape& input) const {
  if (input.size() != 2 || input[1] != numel(target_)) {
    throw layer_error(*this, input, "(N," + std::to_string(numel(target_)) + ")");
  }
  Shape shape{input[0]};
  shape.insert(shape.end(), target_.begin(), target_.end());
  return shape;
}

}  // namespace bhnd::nn
