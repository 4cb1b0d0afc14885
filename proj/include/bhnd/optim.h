#pragma once

#include <vector>

#include "bhnd/nn/layers.h"

namespace bhnd::optim {

using nn::NamedTensor;

struct RmspropOptions {
  double learning_rate = 0.001;
  double rho = 0.9;
  double epsilon = 1e-8;
};

struct AdamOptions {
  double learning_rate = 0.002;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Shared bookkeeping: the parameter set, per-parameter buffers and a step
/// counter. step() validates every gradient before touching any parameter.
class Optimizer {
 public:
  explicit Optimizer(std::vector<NamedTensor> params) : params_(std::move(params)) {}
  virtual ~Optimizer() = default;

  void step();
  void zero_grad();

  std::int64_t step_count() const { return steps_; }
  void set_step_count(std::int64_t steps) { steps_ = steps; }

  /// Accumulator buffers named "<param>/<slot>"; they alias the live state,
  /// so checkpoint loading can write through them.
  std::vector<NamedTensor> buffers() const;
  const std::vector<NamedTensor>& parameters() const { return params_; }

 protected:
  virtual void update(std::size_t index, std::span<float> param, std::span<const float> grad) = 0;
  std::vector<NamedTensor> params_;
  std::vector<std::vector<NamedTensor>> slots_;  // per parameter
  std::int64_t steps_ = 0;

  void add_slot(const char* slot);
};

/// v <- rho v + (1 - rho) g^2;  theta <- theta - lr g / (sqrt(v) + eps).
class Rmsprop : public Optimizer {
 public:
  Rmsprop(std::vector<NamedTensor> params, RmspropOptions options = {});
  const RmspropOptions& options() const { return options_; }

 protected:
  void update(std::size_t index, std::span<float> param, std::span<const float> grad) override;

 private:
  RmspropOptions options_;
};

/// Adam with bias correction: m_hat = m / (1 - beta1^t), v_hat = v / (1 - beta2^t),
/// theta <- theta - lr m_hat / (sqrt(v_hat) + eps).
class Adam : public Optimizer {
 public:
  Adam(std::vector<NamedTensor> params, AdamOptions options = {});
  const AdamOptions& options() const { return options_; }

 protected:
  void update(std::size_t index, std::span<float> param, std::span<const float> grad) override;

 private:
  AdamOptions options_;
};

}  // namespace bhnd::optim
