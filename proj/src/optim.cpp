#include "bhnd/optim.h"

#include <cmath>

#include "bhnd/ops.h"

namespace bhnd::optim {

void Optimizer::add_slot(const char* slot) {
  slots_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    slots_[i].push_back({params_[i].name + "/" + slot, Tensor<float>::zeros(params_[i].tensor.shape())});
  }
}

void Optimizer::step() {
  for (const auto& p : params_) {
    if (!all_finite(p.tensor.grad())) {
      throw NumericError("optimizer step aborted: non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++steps_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto tensor = params_[i].tensor;
    update(i, tensor.mutable_data(), tensor.grad());
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) {
    auto tensor = p.tensor;
    tensor.zero_grad();
  }
}

std::vector<NamedTensor> Optimizer::buffers() const {
  std::vector<NamedTensor> out;
  for (const auto& per_param : slots_) out.insert(out.end(), per_param.begin(), per_param.end());
  return out;
}

Rmsprop::Rmsprop(std::vector<NamedTensor> params, RmspropOptions options)
    : Optimizer(std::move(params)), options_(options) {
  add_slot("v");
}

void Rmsprop::update(std::size_t index, std::span<float> param, std::span<const float> grad) {
  auto v = slots_[index][0].tensor.mutable_data();
  const double rho = options_.rho, lr = options_.learning_rate, eps = options_.epsilon;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double vi = rho * v[i] + (1.0 - rho) * g * g;
    v[i] = static_cast<float>(vi);
    param[i] = static_cast<float>(param[i] - lr * g / (std::sqrt(vi) + eps));
  }
}

Adam::Adam(std::vector<NamedTensor> params, AdamOptions options) : Optimizer(std::move(params)), options_(options) {
  add_slot("m");
  add_slot("v");
}

void Adam::update(std::size_t index, std::span<float> param, std::span<const float> grad) {
  auto m = slots_[index][0].tensor.mutable_data();
  auto v = slots_[index][1].tensor.mutable_data();
  const double b1 = options_.beta1, b2 = options_.beta2, lr = options_.learning_rate, eps = options_.epsilon;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = b1 * m[i] + (1.0 - b1) * g;
    const double vi = b2 * v[i] + (1.0 - b2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    param[i] = static_cast<float>(param[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
  }
}

}  // namespace bhnd::optim
