#include <algorithm>
#include <memory>

#include "bhnd/nn/functional.h"
#include "gemm.h"

namespace bhnd::nn {

ConvAxis conv_axis(std::int64_t input, std::int64_t kernel, int stride, Padding padding) {
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (padding == Padding::same) {
    return {(kernel - 1) / 2, (input + stride - 1) / stride};
  }
  if (input < kernel) {
    throw DimensionError("conv2d: valid padding needs input extent " + std::to_string(input) +
                         " >= kernel " + std::to_string(kernel));
  }
  return {0, (input - kernel) / stride + 1};
}

namespace {

struct ConvGeometry {
  std::int64_t n, c, h, w;
  std::int64_t o, kh, kw;
  std::int64_t stride;
  ConvAxis rows, cols;
  std::int64_t patch() const { return c * kh * kw; }
  std::int64_t plane() const { return rows.output * cols.output; }
};

template <typename T>
ConvGeometry check_conv(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dOptions options) {
  if (x.ndim() != 4) throw DimensionError("conv2d: input must be NCHW, got " + to_string(x.shape()));
  if (weight.ndim() != 4) throw DimensionError("conv2d: weight must be OIHW, got " + to_string(weight.shape()));
  if (x.dim(1) != weight.dim(1)) {
    throw DimensionError("conv2d: input " + to_string(x.shape()) + " has " + std::to_string(x.dim(1)) +
                         " channels but weight " + to_string(weight.shape()) + " expects " +
                         std::to_string(weight.dim(1)));
  }
  if (bias.ndim() != 1 || bias.dim(0) != weight.dim(0)) {
    throw DimensionError("conv2d: bias " + to_string(bias.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), weight.dim(3),
                 options.stride, {}, {}};
  g.rows = conv_axis(g.h, g.kh, options.stride, options.padding);
  g.cols = conv_axis(g.w, g.kw, options.stride, options.padding);
  return g;
}

// cols[(c,ki,kj), (n,oh,ow)] = x[n, c, oh*s - pad + ki, ow*s - pad + kj] or 0.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::int64_t np = g.n * g.plane();
  for (std::int64_t c = 0; c < g.c; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * np;
        for (std::int64_t n = 0; n < g.n; ++n) {
          const T* src = x + (n * g.c + c) * g.h * g.w;
          for (std::int64_t oh = 0; oh < g.rows.output; ++oh) {
            const std::int64_t ih = oh * g.stride - g.rows.pad_before + ki;
            T* dst = row + (n * g.rows.output + oh) * g.cols.output;
            if (ih < 0 || ih >= g.h) {
              std::fill(dst, dst + g.cols.output, T(0));
              continue;
            }
            for (std::int64_t ow = 0; ow < g.cols.output; ++ow) {
              const std::int64_t iw = ow * g.stride - g.cols.pad_before + kj;
              dst[ow] = (iw >= 0 && iw < g.w) ? src[ih * g.w + iw] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_accumulate(const ConvGeometry& g, const T* cols, T* dx) {
  const std::int64_t np = g.n * g.plane();
  for (std::int64_t c = 0; c < g.c; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * np;
        for (std::int64_t n = 0; n < g.n; ++n) {
          T* dst = dx + (n * g.c + c) * g.h * g.w;
          for (std::int64_t oh = 0; oh < g.rows.output; ++oh) {
            const std::int64_t ih = oh * g.stride - g.rows.pad_before + ki;
            if (ih < 0 || ih >= g.h) continue;
            const T* src = row + (n * g.rows.output + oh) * g.cols.output;
            for (std::int64_t ow = 0; ow < g.cols.output; ++ow) {
              const std::int64_t iw = ow * g.stride - g.cols.pad_before + kj;
              if (iw >= 0 && iw < g.w) dst[ih * g.w + iw] += src[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dOptions options) {
  const ConvGeometry g = check_conv(x, weight, bias, options);
  const std::int64_t k = g.patch(), p = g.plane(), np = g.n * p;

  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(k * np));
  im2col(g, x.data().data(), cols->data());

  // [O, N*P] then scatter to NCHW with the bias.
  std::vector<T> flat(static_cast<std::size_t>(g.o * np));
  detail::gemm<T>(false, false, g.o, np, k, weight.data().data(), cols->data(), false, flat.data());
  std::vector<T> out(flat.size());
  const auto b = bias.data();
  for (std::int64_t o = 0; o < g.o; ++o) {
    for (std::int64_t n = 0; n < g.n; ++n) {
      const T* src = flat.data() + o * np + n * p;
      T* dst = out.data() + (n * g.o + o) * p;
      for (std::int64_t i = 0; i < p; ++i) dst[i] = src[i] + b[o];
    }
  }

  const bool keep_cols = GradMode::enabled() && weight.requires_grad();
  if (!keep_cols) cols.reset();
  return Tensor<T>::make_result(
      {g.n, g.o, g.rows.output, g.cols.output}, std::move(out), "conv2d", {x, weight, bias},
      [g, cols](detail::Node<T>& self) {
        const std::int64_t k = g.patch(), p = g.plane(), np = g.n * p;
        auto& X = *self.inputs[0];
        auto& W = *self.inputs[1];
        auto& B = *self.inputs[2];
        std::vector<T> dflat(static_cast<std::size_t>(g.o * np));
        for (std::int64_t o = 0; o < g.o; ++o) {
          for (std::int64_t n = 0; n < g.n; ++n) {
            const T* src = self.grad.data() + (n * g.o + o) * p;
            std::copy(src, src + p, dflat.data() + o * np + n * p);
          }
        }
        if (B.requires_grad) {
          auto db = B.grad_buffer();
          for (std::int64_t o = 0; o < g.o; ++o) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < np; ++i) acc += dflat[static_cast<std::size_t>(o * np + i)];
            db[static_cast<std::size_t>(o)] += static_cast<T>(acc);
          }
        }
        if (W.requires_grad) {
          detail::gemm<T>(false, true, g.o, k, np, dflat.data(), cols->data(), true, W.grad_buffer().data());
        }
        if (X.requires_grad) {
          std::vector<T> dcols(static_cast<std::size_t>(k * np));
          detail::gemm<T>(true, false, k, np, g.o, W.data.data(), dflat.data(), false, dcols.data());
          col2im_accumulate(g, dcols.data(), X.grad_buffer().data());
        }
      });
}

template <typename T>
Tensor<T> conv2d_naive_oracle(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                              Conv2dOptions options) {
  const ConvGeometry g = check_conv(x, weight, bias, options);
  const auto xs = x.data();
  const auto ws = weight.data();
  const auto bs = bias.data();
  std::vector<T> out(static_cast<std::size_t>(g.n * g.o * g.plane()));
  std::size_t idx = 0;
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t o = 0; o < g.o; ++o) {
      for (std::int64_t oh = 0; oh < g.rows.output; ++oh) {
        for (std::int64_t ow = 0; ow < g.cols.output; ++ow) {
          double acc = bs[static_cast<std::size_t>(o)];
          for (std::int64_t c = 0; c < g.c; ++c) {
            for (std::int64_t ki = 0; ki < g.kh; ++ki) {
              const std::int64_t ih = oh * g.stride - g.rows.pad_before + ki;
              if (ih < 0 || ih >= g.h) continue;
              for (std::int64_t kj = 0; kj < g.kw; ++kj) {
                const std::int64_t iw = ow * g.stride - g.cols.pad_before + kj;
                if (iw < 0 || iw >= g.w) continue;
                acc += static_cast<double>(xs[static_cast<std::size_t>(((n * g.c + c) * g.h + ih) * g.w + iw)]) *
                       static_cast<double>(ws[static_cast<std::size_t>(((o * g.c + c) * g.kh + ki) * g.kw + kj)]);
              }
            }
          }
          out[idx++] = static_cast<T>(acc);
        }
      }
    }
  }
  return Tensor<T>::from({g.n, g.o, g.rows.output, g.cols.output}, std::move(out));
}

template Tensor<float> conv2d<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, Conv2dOptions);
template Tensor<double> conv2d<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                       Conv2dOptions);
template Tensor<float> conv2d_naive_oracle<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                                  Conv2dOptions);
template Tensor<double> conv2d_naive_oracle<double>(const Tensor<double>&, const Tensor<double>&,
                                                    const Tensor<double>&, Conv2dOptions);

}  // namespace bhnd::nn
