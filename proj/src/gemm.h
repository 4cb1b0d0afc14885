#pragma once

// Route every product through Eigen's packed GEBP kernel. The small-size
// coefficient path peels loops by buffer alignment, which makes results
// depend on where the allocator placed the operands.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#endif

#include <Eigen/Core>

namespace bhnd::detail {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[M,N] = beta*C + op(A) * op(B), all row-major. beta is 0 or 1.
// op(A) is [M,K]; A is stored [K,M] when trans_a. Same for B.
template <typename T>
void gemm(bool trans_a, bool trans_b, long m, long n, long k, const T* a, const T* b, bool accumulate_into_c, T* c) {
  Eigen::Map<RowMajor<T>> out(c, m, n);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate_into_c) {
      out.noalias() += lhs * rhs;
    } else {
      out.noalias() = lhs * rhs;
    }
  };
  if (!trans_a && !trans_b) {
    run(Eigen::Map<const RowMajor<T>>(a, m, k), Eigen::Map<const RowMajor<T>>(b, k, n));
  } else if (trans_a && !trans_b) {
    run(Eigen::Map<const RowMajor<T>>(a, k, m).transpose(), Eigen::Map<const RowMajor<T>>(b, k, n));
  } else if (!trans_a && trans_b) {
    run(Eigen::Map<const RowMajor<T>>(a, m, k), Eigen::Map<const RowMajor<T>>(b, n, k).transpose());
  } else {
    run(Eigen::Map<const RowMajor<T>>(a, k, m).transpose(), Eigen::Map<const RowMajor<T>>(b, n, k).transpose());
  }
}

}  // namespace bhnd::detail
