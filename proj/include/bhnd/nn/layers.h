#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bhnd/nn/functional.h"

namespace bhnd::nn {

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

struct ForwardContext {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;  // required by dropout in train mode
  bool update_running_stats = true;
};

enum class Init { he_uniform, xavier_uniform, zeros };

/// Fills a fresh leaf tensor; fans are the receptive-field-scaled counts.
Tensor<float> init_tensor(const Shape& shape, Init init, std::int64_t fan_in, std::int64_t fan_out, Rng& rng);

struct Conv2dSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel_h = 3;
  std::int64_t kernel_w = 3;
  int stride = 1;
  Padding padding = Padding::same;
  Tensor<float> weight;  // [out, in, kh, kw]
  Tensor<float> bias;    // [out]

  static Conv2dSpec make(std::int64_t in, std::int64_t out, std::int64_t kernel, int stride, Padding padding,
                         Init init, Rng& rng);
  Conv2dOptions options() const { return {stride, padding}; }
};

struct BatchNormSpec {
  std::int64_t channels = 1;
  Tensor<float> gamma;
  Tensor<float> beta;
  Tensor<float> running_mean;
  Tensor<float> running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  static BatchNormSpec make(std::int64_t channels, double momentum = 0.9, double epsilon = 1e-5);
};

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const { return name_; }
  virtual std::string kind() const = 0;
  virtual Tensor<float> forward(const Tensor<float>& x, ForwardContext& ctx) = 0;
  /// Static shape rule; throws DimensionError on incompatible input.
  virtual Shape output_shape(const Shape& input) const = 0;
  /// Trainable tensors, names relative to the layer.
  virtual std::vector<NamedTensor> parameters() const { return {}; }
  /// Non-trainable state (batch-norm running statistics).
  virtual std::vector<NamedTensor> buffers() const { return {}; }

 private:
  std::string name_;
};

class Conv2dLayer : public Layer {
 public:
  Conv2dLayer(std::string name, Conv2dSpec spec) : Layer(std::move(name)), spec_(std::move(spec)) {}
  std::string kind() const override { return "conv2d"; }
  Tensor<float> forward(const Tensor<float>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& input) const override;
  std::vector<NamedTensor> parameters() const override;
  const Conv2dSpec& spec() const { return spec_; }

 private:
  Conv2dSpec spec_;
};

class MaxPool2dLayer : public Layer {
 public:
  MaxPool2dLayer(std::string name, int window = 2, int stride = 2, bool ceil_mode = true)
      : Layer(std::move(name)), window_(window), stride_(stride), ceil_mode_(ceil_mode) {}
  std::string kind() const override { return "maxpool2d"; }
  Tensor<float> forward(const Tensor<float>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& input) const override;

 private:
  int window_, stride_;
  bool ceil_mode_;
};

class BatchNorm2dLayer : public Layer {
 public:
  BatchNorm2dLayer(std::string name, BatchNormSpec spec) : Layer(std::move(name)), spec_(std::move(spec)) {}
  std::string kind() const override { return "batchnorm2d"; }
  Tensor<float> forward(const Tensor<float>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& input) const override;
  std::vector<NamedTensor> parameters() const override;
  std::vector<NamedTensor> buffers() const override;
  const BatchNormSpec& spec() const { return spec_; }

 private:
  BatchNormSpec spec_;
};

class DenseLayer : public Layer {
 public:
  DenseLayer(std::string name, std::int64_t in, std::int64_t out, Init init, Rng& rng);
  std::string kind() const override { return "dense"; }
  Tensor<float> forward(const Tensor<float>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& input) const override;
  std::vector<NamedTensor> parameters() const override;

 private:
  Tensor<float> weight_;  // [in, out]
  Tensor<float> bias_;
};

class DropoutLayer : public Layer {
 public:
  DropoutLayer(std::string name, double rate);
  std::string kind() const override { return "dropout"; }
  Tensor<float> forward(const Tensor<float>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& input) const override { return input; }

 private:
  double rate_;
};

class Upsample2xLayer : public Layer {
 public:
  using Layer::Layer;
  std::string kind() const override { return "upsample2x"; }
  Tensor<float> forward(const Tensor<float>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& input) const override;
};

class ActivationLayer : public Layer {
 public:
  ActivationLayer(std::string name, Activation activation, double alpha = kDefaultLeakySlope)
      : Layer(std::move(name)), activation_(activation), alpha_(alpha) {}
  std::string kind() const override;
  Tensor<float> forward(const Tensor<float>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& input) const override { return input; }

 private:
  Activation activation_;
  double alpha_;
};

class SoftmaxLayer : public Layer {
 public:
  using Layer::Layer;
  std::string kind() const override { return "softmax"; }
  Tensor<float> forward(const Tensor<float>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& input) const override;
};

class FlattenLayer : public Layer {
 public:
  using Layer::Layer;
  std::string kind() const override { return "flatten"; }
  Tensor<float> forward(const Tensor<float>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& input) const override;
};

/// [N, prod(target)] -> [N, target...].
class ReshapeLayer : public Layer {
 public:
  ReshapeLayer(std::string name, Shape target) : Layer(std::move(name)), target_(std::move(target)) {}
  std::string kind() const override { return "reshape"; }
  Tensor<float> forward(const Tensor<float>& x, ForwardContext& ctx) override;
  Shape output_shape(const Shape& input) const override;

 private:
  Shape target_;
};

}  // namespace bhnd::nn
