#include <cmath>
#include <memory>

#include "bhnd/nn/functional.h"

namespace bhnd::nn {

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Mode mode,
                      const RunningStats<T>* running, double momentum, double epsilon) {
  if (x.ndim() != 4 && x.ndim() != 2) {
    throw DimensionError("batchnorm2d: input must be NCHW or NC, got " + to_string(x.shape()));
  }
  const std::int64_t n = x.dim(0), c = x.dim(1);
  const std::int64_t plane = x.ndim() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("batchnorm2d: " + std::to_string(c) + " channels but gamma " + to_string(gamma.shape()) +
                         " and beta " + to_string(beta.shape()));
  }
  if (running && (static_cast<std::int64_t>(running->mean.size()) != c ||
                  static_cast<std::int64_t>(running->var.size()) != c)) {
    throw DimensionError("batchnorm2d: running statistics do not have " + std::to_string(c) + " channels");
  }
  if (mode == Mode::eval && !running) throw ContractError("batchnorm2d: eval mode needs running statistics");

  const auto xs = x.data();
  const auto gs = gamma.data();
  const auto bs = beta.data();
  const std::int64_t count = n * plane;
  auto at = [c, plane](std::int64_t i, std::int64_t ch, std::int64_t p) {
    return static_cast<std::size_t>((i * c + ch) * plane + p);
  };

  // Normalized input and per-channel 1/sqrt(var + eps), saved for backward.
  auto xhat = std::make_shared<std::vector<T>>(xs.size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double mu, var;
    if (mode == Mode::train) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t p = 0; p < plane; ++p) acc += xs[at(i, ch, p)];
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t p = 0; p < plane; ++p) {
          const double d = xs[at(i, ch, p)] - mu;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      if (running) {
        auto& rm = running->mean[static_cast<std::size_t>(ch)];
        auto& rv = running->var[static_cast<std::size_t>(ch)];
        rm = static_cast<T>(momentum * rm + (1.0 - momentum) * mu);
        rv = static_cast<T>(momentum * rv + (1.0 - momentum) * var);
      }
    } else {
      mu = running->mean[static_cast<std::size_t>(ch)];
      var = running->var[static_cast<std::size_t>(ch)];
    }
    const double is = 1.0 / std::sqrt(var + epsilon);
    (*inv_std)[static_cast<std::size_t>(ch)] = is;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t p = 0; p < plane; ++p) (*xhat)[at(i, ch, p)] = static_cast<T>((xs[at(i, ch, p)] - mu) * is);
  }

  std::vector<T> out(xs.size());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t p = 0; p < plane; ++p) {
        const auto k = at(i, ch, p);
        out[k] = gs[static_cast<std::size_t>(ch)] * (*xhat)[k] + bs[static_cast<std::size_t>(ch)];
      }

  return Tensor<T>::make_result(
      x.shape(), std::move(out), "batchnorm2d", {x, gamma, beta},
      [xhat, inv_std, n, c, plane, mode, at](detail::Node<T>& self) {
        auto& X = *self.inputs[0];
        auto& G = *self.inputs[1];
        auto& B = *self.inputs[2];
        const double m = static_cast<double>(n * plane);
        for (std::int64_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t p = 0; p < plane; ++p) {
              const auto k = at(i, ch, p);
              sum_dy += self.grad[k];
              sum_dy_xhat += static_cast<double>(self.grad[k]) * (*xhat)[k];
            }
          }
          if (G.requires_grad) G.grad_buffer()[static_cast<std::size_t>(ch)] += static_cast<T>(sum_dy_xhat);
          if (B.requires_grad) B.grad_buffer()[static_cast<std::size_t>(ch)] += static_cast<T>(sum_dy);
          if (!X.requires_grad) continue;
          auto dx = X.grad_buffer();
          const double scale = G.data[static_cast<std::size_t>(ch)] * (*inv_std)[static_cast<std::size_t>(ch)];
          for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t p = 0; p < plane; ++p) {
              const auto k = at(i, ch, p);
              if (mode == Mode::train) {
                dx[k] += static_cast<T>(scale / m * (m * self.grad[k] - sum_dy - (*xhat)[k] * sum_dy_xhat));
              } else {
                dx[k] += static_cast<T>(scale * self.grad[k]);
              }
            }
          }
        }
      });
}

template Tensor<float> batchnorm2d<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, Mode,
                                          const RunningStats<float>*, double, double);
template Tensor<double> batchnorm2d<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                            Mode, const RunningStats<double>*, double, double);

}  // namespace bhnd::nn
