#pragma once

#include <span>

#include "bhnd/rng.h"
#include "bhnd/tensor.h"

namespace bhnd::nn {

enum class Mode { train, eval };

enum class Padding { same, valid };

struct Conv2dOptions {
  int stride = 1;
  Padding padding = Padding::same;
};

/// Spatial geometry of one convolution axis.
struct ConvAxis {
  std::int64_t pad_before = 0;
  std::int64_t output = 0;
};

/// Same padding pads k-1 in total, floor((k-1)/2) before and the rest after,
/// giving ceil(input / stride) outputs. Valid padding needs input >= kernel.
ConvAxis conv_axis(std::int64_t input, std::int64_t kernel, int stride, Padding padding);

/// Cross-correlation (no kernel flip) of x[N,C,H,W] with weight[O,C,kh,kw]
/// plus bias[O]. Lowered to im2col + GEMM over the whole batch.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dOptions options);

/// Direct nested-loop convolution sharing no code with conv2d; forward only.
template <typename T>
Tensor<T> conv2d_naive_oracle(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                              Conv2dOptions options);

/// Max pooling. In ceil mode partial border windows reduce over whatever
/// elements they cover, so a 1x1 map stays 1x1. Ties route the gradient to
/// the first maximum in row-major window order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int window = 2, int stride = 2, bool ceil_mode = true);

std::int64_t pool_output_extent(std::int64_t input, int window, int stride, bool ceil_mode);

/// Running statistics owned by a batch-norm layer.
template <typename T>
struct RunningStats {
  std::span<T> mean;
  std::span<T> var;
};

/// Per-channel batch normalization of x[N,C,H,W] (or x[N,C]).
///
/// Train mode normalizes with the biased batch variance and, when `running`
/// is given, updates running = momentum * running + (1 - momentum) * batch.
/// Eval mode normalizes with the running statistics, which must be given.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Mode mode,
                      const RunningStats<T>* running, double momentum = 0.9, double epsilon = 1e-5);

/// x[N,D] * W[D,U] + b[U].
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Inverted dropout: in train mode each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate); eval mode is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng);

/// Nearest-neighbour 2x upsampling of x[N,C,H,W].
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x);

enum class Activation { relu, leaky_relu, tanh, sigmoid };

inline constexpr double kDefaultLeakySlope = 0.2;

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind, double alpha = kDefaultLeakySlope);

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return activation(x, Activation::relu);
}

/// Row-wise softmax of logits[N,K] with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean over rows of -sum(target * log(clamp(prob))). Targets must be one-hot.
template <typename T>
Tensor<T> categorical_cross_entropy(const Tensor<T>& probs, const Tensor<T>& targets);

/// As above, but only rows with a nonzero mask entry contribute; the mean is
/// taken over those rows (0 when none are selected).
template <typename T>
Tensor<T> categorical_cross_entropy(const Tensor<T>& probs, const Tensor<T>& targets,
                                    std::span<const std::uint8_t> row_mask);

/// Mean of -[t log p + (1-t) log(1-p)] with p clamped; targets in {0, 1}.
template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& p, const Tensor<T>& targets);

}  // namespace bhnd::nn
