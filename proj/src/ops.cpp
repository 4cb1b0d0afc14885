#include "bhnd/ops.h"

#include <cmath>

#include "gemm.h"

namespace bhnd {

namespace {
template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}
}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const long m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  detail::gemm<T>(false, false, m, n, k, a.data().data(), b.data().data(), false, out.data());
  return Tensor<T>::make_result({m, n}, std::move(out), "matmul", {a, b}, [m, n, k](detail::Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {  // dA = dY * B^T
      detail::gemm<T>(false, true, m, k, n, self.grad.data(), B.data.data(), true, A.grad_buffer().data());
    }
    if (B.requires_grad) {  // dB = A^T * dY
      detail::gemm<T>(true, false, k, n, m, A.data.data(), self.grad.data(), true, B.grad_buffer().data());
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), "add", {a, b}, [](detail::Node<T>& self) {
    accumulate<T>(*self.inputs[0], self.grad);
    accumulate<T>(*self.inputs[1], self.grad);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), "sub", {a, b}, [](detail::Node<T>& self) {
    accumulate<T>(*self.inputs[0], self.grad);
    if (self.inputs[1]->requires_grad) {
      auto g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), "mul", {a, b}, [](detail::Node<T>& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      auto g = A.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.data[i];
    }
    if (B.requires_grad) {
      auto g = B.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return Tensor<T>::make_result(x.shape(), std::move(out), "scale", {x}, [factor](detail::Node<T>& self) {
    auto g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double total = 0.0;
  for (T v : x.data()) total += v;
  return Tensor<T>::make_result({}, {static_cast<T>(total)}, "sum", {x}, [](detail::Node<T>& self) {
    auto g = self.inputs[0]->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(x.numel())));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return Tensor<T>::make_result(std::move(shape), std::move(out), "reshape", {x},
                                [](detail::Node<T>& self) { accumulate<T>(*self.inputs[0], self.grad); });
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  if (x.ndim() < 1) throw DimensionError("flatten: needs a batch axis, got " + to_string(x.shape()));
  return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

template <typename T>
Tensor<T> randn(const Shape& shape, Rng& rng) {
  if (shape.empty() || numel(shape) <= 0) throw ContractError("randn: empty shape " + to_string(shape));
  for (auto d : shape) {
    if (d <= 0) throw ContractError("randn: zero extent in " + to_string(shape));
  }
  std::vector<T> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) v = static_cast<T>(rng.normal());
  return Tensor<T>::from(shape, std::move(values));
}

template <typename T>
Tensor<T> uniform(const Shape& shape, T lo, T hi, Rng& rng) {
  std::vector<T> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) v = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from(shape, std::move(values));
}

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

#define BHND_INSTANTIATE(T)                                                \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                        \
  template Tensor<T> sum<T>(const Tensor<T>&);                             \
  template Tensor<T> mean<T>(const Tensor<T>&);                            \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                  \
  template Tensor<T> flatten<T>(const Tensor<T>&);                         \
  template Tensor<T> randn<T>(const Shape&, Rng&);                         \
  template Tensor<T> uniform<T>(const Shape&, T, T, Rng&);                 \
  template bool all_finite<T>(std::span<const T>);

BHND_INSTANTIATE(float)
BHND_INSTANTIATE(double)

}  // namespace bhnd
