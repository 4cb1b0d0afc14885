#include <algorithm>
#include <cmath>
#include <memory>

#include "bhnd/nn/functional.h"

namespace bhnd::nn {

namespace {

template <typename T>
void require_one_hot(const Tensor<T>& targets) {
  const std::int64_t n = targets.dim(0), k = targets.dim(1);
  const auto t = targets.data();
  for (std::int64_t i = 0; i < n; ++i) {
    int ones = 0;
    for (std::int64_t j = 0; j < k; ++j) {
      const T v = t[static_cast<std::size_t>(i * k + j)];
      if (v == T(1)) {
        ++ones;
      } else if (v != T(0)) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) throw ContractError("categorical_cross_entropy: target row " + std::to_string(i) + " is not one-hot");
  }
}

template <typename T>
Tensor<T> cce_impl(const Tensor<T>& probs, const Tensor<T>& targets, std::span<const std::uint8_t> row_mask) {
  if (probs.ndim() != 2 || probs.shape() != targets.shape()) {
    throw DimensionError("categorical_cross_entropy: probs " + to_string(probs.shape()) + " vs targets " +
                         to_string(targets.shape()));
  }
  const std::int64_t n = probs.dim(0), k = probs.dim(1);
  if (!row_mask.empty() && static_cast<std::int64_t>(row_mask.size()) != n) {
    throw DimensionError("categorical_cross_entropy: mask has " + std::to_string(row_mask.size()) + " rows, batch has " +
                         std::to_string(n));
  }
  require_one_hot(targets);

  auto weights = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n), 1.0);
  double selected = static_cast<double>(n);
  if (!row_mask.empty()) {
    selected = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      (*weights)[static_cast<std::size_t>(i)] = row_mask[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      selected += (*weights)[static_cast<std::size_t>(i)];
    }
  }
  const double norm = selected > 0.0 ? 1.0 / selected : 0.0;

  const T lo = static_cast<T>(kProbabilityClamp), hi = static_cast<T>(1.0 - kProbabilityClamp);
  const auto p = probs.data();
  const auto t = targets.data();
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    if ((*weights)[static_cast<std::size_t>(i)] == 0.0) continue;
    for (std::int64_t j = 0; j < k; ++j) {
      const auto at = static_cast<std::size_t>(i * k + j);
      if (t[at] != T(0)) total -= t[at] * std::log(static_cast<double>(std::clamp(p[at], lo, hi)));
    }
  }
  return Tensor<T>::make_result({}, {static_cast<T>(total * norm)}, "categorical_cross_entropy", {probs, targets},
                                [weights, norm, k, lo, hi](detail::Node<T>& self) {
                                  auto& P = *self.inputs[0];
                                  if (!P.requires_grad) return;
                                  auto& Tg = *self.inputs[1];
                                  auto dp = P.grad_buffer();
                                  const double g = self.grad[0] * norm;
                                  for (std::size_t at = 0; at < dp.size(); ++at) {
                                    const double w = (*weights)[at / static_cast<std::size_t>(k)];
                                    const T pv = P.data[at];
                                    if (w == 0.0 || Tg.data[at] == T(0) || pv < lo || pv > hi) continue;
                                    dp[at] += static_cast<T>(-g * w * Tg.data[at] / pv);
                                  }
                                });
}

}  // namespace

template <typename T>
Tensor<T> categorical_cross_entropy(const Tensor<T>& probs, const Tensor<T>& targets) {
  return cce_impl(probs, targets, {});
}

template <typename T>
Tensor<T> categorical_cross_entropy(const Tensor<T>& probs, const Tensor<T>& targets,
                                    std::span<const std::uint8_t> row_mask) {
  if (row_mask.empty()) throw ContractError("categorical_cross_entropy: empty row mask");
  return cce_impl(probs, targets, row_mask);
}

template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& p, const Tensor<T>& targets) {
  if (p.shape() != targets.shape()) {
    throw DimensionError("binary_cross_entropy: p " + to_string(p.shape()) + " vs targets " +
                         to_string(targets.shape()));
  }
  const auto ps = p.data();
  const auto ts = targets.data();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (ts[i] != T(0) && ts[i] != T(1)) {
      throw ContractError("binary_cross_entropy: target element " + std::to_string(i) + " is not 0 or 1");
    }
  }
  const T lo = static_cast<T>(kProbabilityClamp), hi = static_cast<T>(1.0 - kProbabilityClamp);
  double total = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double pc = std::clamp(ps[i], lo, hi);
    total -= ts[i] == T(1) ? std::log(pc) : std::log1p(-pc);
  }
  const double inv_n = 1.0 / static_cast<double>(ps.size());
  return Tensor<T>::make_result({}, {static_cast<T>(total * inv_n)}, "binary_cross_entropy", {p, targets},
                                [inv_n, lo, hi](detail::Node<T>& self) {
                                  auto& P = *self.inputs[0];
                                  if (!P.requires_grad) return;
                                  auto& Tg = *self.inputs[1];
                                  auto dp = P.grad_buffer();
                                  const double g = self.grad[0] * inv_n;
                                  for (std::size_t i = 0; i < dp.size(); ++i) {
                                    const double pv = P.data[i];
                                    if (P.data[i] < lo || P.data[i] > hi) continue;
                                    const double d = Tg.data[i] == T(1) ? -1.0 / pv : 1.0 / (1.0 - pv);
                                    dp[i] += static_cast<T>(g * d);
                                  }
                                });
}

#define BHND_INSTANTIATE(T)                                                                                    \
  template Tensor<T> categorical_cross_entropy<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> categorical_cross_entropy<T>(const Tensor<T>&, const Tensor<T>&,                         \
                                                  std::span<const std::uint8_t>);                             \
  template Tensor<T> binary_cross_entropy<T>(const Tensor<T>&, const Tensor<T>&);

BHND_INSTANTIATE(float)
BHND_INSTANTIATE(double)

}  // namespace bhnd::nn
