#include <cmath>
#include <memory>

#include "bhnd/nn/functional.h"
#include "gemm.h"

namespace bhnd::nn {

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.ndim() != 2 || weight.ndim() != 2 || x.dim(1) != weight.dim(0)) {
    throw DimensionError("dense: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(weight.shape()));
  }
  if (bias.ndim() != 1 || bias.dim(0) != weight.dim(1)) {
    throw DimensionError("dense: bias " + to_string(bias.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  const long n = x.dim(0), d = x.dim(1), u = weight.dim(1);
  std::vector<T> out(static_cast<std::size_t>(n * u));
  detail::gemm<T>(false, false, n, u, d, x.data().data(), weight.data().data(), false, out.data());
  const auto b = bias.data();
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < u; ++j) out[static_cast<std::size_t>(i * u + j)] += b[static_cast<std::size_t>(j)];

  return Tensor<T>::make_result({n, u}, std::move(out), "dense", {x, weight, bias}, [n, d, u](detail::Node<T>& self) {
    auto& X = *self.inputs[0];
    auto& W = *self.inputs[1];
    auto& B = *self.inputs[2];
    if (X.requires_grad) detail::gemm<T>(false, true, n, d, u, self.grad.data(), W.data.data(), true, X.grad_buffer().data());
    if (W.requires_grad) detail::gemm<T>(true, false, d, u, n, X.data.data(), self.grad.data(), true, W.grad_buffer().data());
    if (B.requires_grad) {
      auto db = B.grad_buffer();
      for (long j = 0; j < u; ++j) {
        double acc = 0.0;
        for (long i = 0; i < n; ++i) acc += self.grad[static_cast<std::size_t>(i * u + j)];
        db[static_cast<std::size_t>(j)] += static_cast<T>(acc);
      }
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ContractError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) {
    std::vector<T> out(x.data().begin(), x.data().end());
    return Tensor<T>::make_result(x.shape(), std::move(out), "dropout", {x},
                                  [](detail::Node<T>& self) { accumulate<T>(*self.inputs[0], self.grad); });
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
  for (auto& m : *mask) m = rng.uniform() < rate ? T(0) : keep_scale;
  std::vector<T> out(mask->size());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * (*mask)[i];
  return Tensor<T>::make_result(x.shape(), std::move(out), "dropout", {x}, [mask](detail::Node<T>& self) {
    auto dx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * (*mask)[i];
  });
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind, double alpha) {
  const auto xs = x.data();
  std::vector<T> out(xs.size());
  const T slope = static_cast<T>(alpha);
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] > T(0) ? xs[i] : T(0);
      break;
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] > T(0) ? xs[i] : slope * xs[i];
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xs[i]);
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) {
        // Branch on sign so exp never overflows.
        const T v = xs[i];
        if (v >= T(0)) {
          out[i] = T(1) / (T(1) + std::exp(-v));
        } else {
          const T e = std::exp(v);
          out[i] = e / (T(1) + e);
        }
      }
      break;
  }
  static constexpr const char* names[] = {"relu", "leaky_relu", "tanh", "sigmoid"};
  return Tensor<T>::make_result(x.shape(), std::move(out), names[static_cast<int>(kind)], {x},
                                [kind, slope](detail::Node<T>& self) {
                                  auto& X = *self.inputs[0];
                                  auto dx = X.grad_buffer();
                                  const auto& y = self.data;
                                  for (std::size_t i = 0; i < dx.size(); ++i) {
                                    T d;
                                    switch (kind) {
                                      case Activation::relu: d = X.data[i] > T(0) ? T(1) : T(0); break;
                                      case Activation::leaky_relu: d = X.data[i] > T(0) ? T(1) : slope; break;
                                      case Activation::tanh: d = T(1) - y[i] * y[i]; break;
                                      default: d = y[i] * (T(1) - y[i]); break;
                                    }
                                    dx[i] += self.grad[i] * d;
                                  }
                                });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.ndim() != 2) throw DimensionError("softmax: expects [N,K], got " + to_string(logits.shape()));
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  const auto zs = logits.data();
  std::vector<T> out(zs.size());
  for (std::int64_t i = 0; i < n; ++i) {
    const T* z = zs.data() + i * k;
    T* p = out.data() + i * k;
    T top = z[0];
    for (std::int64_t j = 1; j < k; ++j) top = std::max(top, z[j]);
    double total = 0.0;
    for (std::int64_t j = 0; j < k; ++j) {
      p[j] = std::exp(z[j] - top);
      total += p[j];
    }
    for (std::int64_t j = 0; j < k; ++j) p[j] = static_cast<T>(p[j] / total);
  }
  return Tensor<T>::make_result(logits.shape(), std::move(out), "softmax", {logits}, [n, k](detail::Node<T>& self) {
    auto dz = self.inputs[0]->grad_buffer();
    for (std::int64_t i = 0; i < n; ++i) {
      const T* y = self.data.data() + i * k;
      const T* g = self.grad.data() + i * k;
      double dot = 0.0;
      for (std::int64_t j = 0; j < k; ++j) dot += static_cast<double>(g[j]) * y[j];
      for (std::int64_t j = 0; j < k; ++j) dz[static_cast<std::size_t>(i * k + j)] += static_cast<T>(y[j] * (g[j] - dot));
    }
  });
}

#define BHND_INSTANTIATE(T)                                                           \
  template Tensor<T> dense<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, Mode, Rng&);                \
  template Tensor<T> activation<T>(const Tensor<T>&, Activation, double);             \
  template Tensor<T> softmax<T>(const Tensor<T>&);

BHND_INSTANTIATE(float)
BHND_INSTANTIATE(double)

}  // namespace bhnd::nn
