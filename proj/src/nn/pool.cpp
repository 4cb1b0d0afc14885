#include <algorithm>
#include <memory>

#include "bhnd/nn/functional.h"

namespace bhnd::nn {

std::int64_t pool_output_extent(std::int64_t input, int window, int stride, bool ceil_mode) {
  if (window < 1 || stride < 1) throw ContractError("maxpool2d: window and stride must be >= 1");
  if (input <= window) return ceil_mode || input == window ? 1 : 0;
  const std::int64_t span = input - window;
  return (ceil_mode ? (span + stride - 1) / stride : span / stride) + 1;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int window, int stride, bool ceil_mode) {
  if (x.ndim() != 4) throw DimensionError("maxpool2d: input must be NCHW, got " + to_string(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t oh = pool_output_extent(h, window, stride, ceil_mode);
  const std::int64_t ow = pool_output_extent(w, window, stride, ceil_mode);
  if (oh < 1 || ow < 1) {
    throw DimensionError("maxpool2d: input " + to_string(x.shape()) + " smaller than window " +
                         std::to_string(window));
  }
  const auto xs = x.data();
  std::vector<T> out(static_cast<std::size_t>(n * c * oh * ow));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  std::size_t idx = 0;
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const std::int64_t base = plane * h * w;
    for (std::int64_t i = 0; i < oh; ++i) {
      const std::int64_t r0 = i * stride, r1 = std::min(r0 + window, h);
      for (std::int64_t j = 0; j < ow; ++j) {
        const std::int64_t c0 = j * stride, c1 = std::min(c0 + window, w);
        std::int64_t best = base + r0 * w + c0;
        for (std::int64_t r = r0; r < r1; ++r) {
          for (std::int64_t q = c0; q < c1; ++q) {
            const std::int64_t at = base + r * w + q;
            if (xs[static_cast<std::size_t>(at)] > xs[static_cast<std::size_t>(best)]) best = at;
          }
        }
        out[idx] = xs[static_cast<std::size_t>(best)];
        (*argmax)[idx++] = best;
      }
    }
  }
  return Tensor<T>::make_result({n, c, oh, ow}, std::move(out), "maxpool2d", {x}, [argmax](detail::Node<T>& self) {
    auto dx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < argmax->size(); ++i) dx[static_cast<std::size_t>((*argmax)[i])] += self.grad[i];
  });
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x) {
  if (x.ndim() != 4) throw DimensionError("upsample2x: input must be NCHW, got " + to_string(x.shape()));
  const std::int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto xs = x.data();
  std::vector<T> out(static_cast<std::size_t>(planes * 4 * h * w));
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t r = 0; r < 2 * h; ++r) {
      for (std::int64_t q = 0; q < 2 * w; ++q) {
        out[static_cast<std::size_t>((p * 2 * h + r) * 2 * w + q)] =
            xs[static_cast<std::size_t>((p * h + r / 2) * w + q / 2)];
      }
    }
  }
  return Tensor<T>::make_result(
      {x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), "upsample2x", {x}, [planes, h, w](detail::Node<T>& self) {
        auto dx = self.inputs[0]->grad_buffer();
        for (std::int64_t p = 0; p < planes; ++p) {
          for (std::int64_t r = 0; r < 2 * h; ++r) {
            for (std::int64_t q = 0; q < 2 * w; ++q) {
              dx[static_cast<std::size_t>((p * h + r / 2) * w + q / 2)] +=
                  self.grad[static_cast<std::size_t>((p * 2 * h + r) * 2 * w + q)];
            }
          }
        }
      });
}

template Tensor<float> maxpool2d<float>(const Tensor<float>&, int, int, bool);
template Tensor<double> maxpool2d<double>(const Tensor<double>&, int, int, bool);
template Tensor<float> upsample2x<float>(const Tensor<float>&);
template Tensor<double> upsample2x<double>(const Tensor<double>&);

}  // namespace bhnd::nn
