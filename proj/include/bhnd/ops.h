#pragma once

#include "bhnd/rng.h"
#include "bhnd/tensor.h"

namespace bhnd {

/// [M,K] x [K,N] -> [M,N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise, operands of identical shape.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

/// Full reductions to a 0-d tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// [N, ...] -> [N, prod(...)].
template <typename T>
Tensor<T> flatten(const Tensor<T>& x);

/// i.i.d. standard normal draws from `rng`.
template <typename T>
Tensor<T> randn(const Shape& shape, Rng& rng);
template <typename T>
Tensor<T> uniform(const Shape& shape, T lo, T hi, Rng& rng);

template <typename T>
bool all_finite(std::span<const T> values);

}  // namespace bhnd
