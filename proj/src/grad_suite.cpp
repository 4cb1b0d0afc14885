#include "bhnd/grad_suite.h"

#include <chrono>
#include <functional>

#include "bhnd/nn/functional.h"
#include "bhnd/ops.h"

namespace bhnd {

namespace {

using T = Tensor<double>;
using Inputs = std::vector<T>;
using nn::Mode;

struct Case {
  std::string shapes;
  Inputs inputs;
  DifferentiableFn fn;
  std::vector<bool> check;
};

using CaseMaker = std::function<Case(Rng&)>;

std::int64_t pick(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

T rand_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return uniform<double>(shape, lo, hi, rng);
}

std::string shapes_of(const Inputs& inputs) {
  std::string s;
  for (const auto& t : inputs) s += (s.empty() ? "" : " ") + to_string(t.shape());
  return s;
}

CaseMaker conv_case(nn::Padding padding, int stride) {
  return [=](Rng& rng) {
    const auto n = pick(rng, 1, 2), c = pick(rng, 1, 3), o = pick(rng, 1, 3), k = pick(rng, 1, 4);
    const auto h = pick(rng, k, 7), w = pick(rng, k, 7);
    Inputs in{rand_tensor({n, c, h, w}, rng), rand_tensor({o, c, k, k}, rng), rand_tensor({o}, rng)};
    auto fn = [=](const Inputs& v) { return nn::conv2d(v[0], v[1], v[2], {stride, padding}); };
    return Case{shapes_of(in), in, fn, {}};
  };
}

Case maxpool_case(Rng& rng) {
  // Odd extents exercise the partial border windows of ceil mode.
  const auto n = pick(rng, 1, 2), c = pick(rng, 1, 3), h = pick(rng, 1, 7), w = pick(rng, 1, 7);
  Inputs in{rand_tensor({n, c, h, w}, rng)};
  auto fn = [](const Inputs& v) { return nn::maxpool2d(v[0], 2, 2, true); };
  return {shapes_of(in), in, fn, {}};
}

Case batchnorm_case(Rng& rng) {
  const bool spatial = rng.below(2) == 0;
  const auto n = pick(rng, 2, 4), c = pick(rng, 1, 3);
  Shape shape = spatial ? Shape{n, c, pick(rng, 1, 3), pick(rng, 1, 3)} : Shape{n, c};
  Inputs in{rand_tensor(shape, rng, -2.0, 2.0), rand_tensor({c}, rng, 0.5, 1.5), rand_tensor({c}, rng)};
  auto fn = [](const Inputs& v) { return nn::batchnorm2d<double>(v[0], v[1], v[2], Mode::train, nullptr); };
  return {shapes_of(in), in, fn, {}};
}

Case dense_case(Rng& rng) {
  const auto n = pick(rng, 1, 4), d = pick(rng, 1, 6), u = pick(rng, 1, 5);
  Inputs in{rand_tensor({n, d}, rng), rand_tensor({d, u}, rng), rand_tensor({u}, rng)};
  auto fn = [](const Inputs& v) { return nn::dense(v[0], v[1], v[2]); };
  return {shapes_of(in), in, fn, {}};
}

Case upsample_case(Rng& rng) {
  Inputs in{rand_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)}, rng)};
  auto fn = [](const Inputs& v) { return nn::upsample2x(v[0]); };
  return {shapes_of(in), in, fn, {}};
}

CaseMaker activation_case(nn::Activation kind) {
  return [=](Rng& rng) {
    Inputs in{rand_tensor({pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)}, rng, -3.0, 3.0)};
    auto fn = [=](const Inputs& v) { return nn::activation(v[0], kind, nn::kDefaultLeakySlope); };
    return Case{shapes_of(in), in, fn, {}};
  };
}

Case dropout_case(Rng& rng) {
  Inputs in{rand_tensor({pick(rng, 1, 4), pick(rng, 1, 8)}, rng)};
  const auto mask_seed = rng.next();
  auto fn = [=](const Inputs& v) {
    Rng masks(mask_seed);  // the same mask on every evaluation
    return nn::dropout(v[0], 0.25, Mode::train, masks);
  };
  return {shapes_of(in), in, fn, {}};
}

T random_one_hot(std::int64_t n, std::int64_t k, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(n * k), 0.0);
  for (std::int64_t i = 0; i < n; ++i) v[static_cast<std::size_t>(i * k + pick(rng, 0, k - 1))] = 1.0;
  return T::from({n, k}, std::move(v));
}

Case softmax_cce_case(Rng& rng) {
  const auto n = pick(rng, 1, 5), k = pick(rng, 2, 11);
  Inputs in{rand_tensor({n, k}, rng, -2.0, 2.0), random_one_hot(n, k, rng)};
  auto fn = [](const Inputs& v) { return nn::categorical_cross_entropy(nn::softmax(v[0]), v[1]); };
  return {shapes_of(in), in, fn, {true, false}};
}

Case softmax_masked_cce_case(Rng& rng) {
  const auto n = pick(rng, 2, 5), k = pick(rng, 2, 11);
  Inputs in{rand_tensor({n, k}, rng, -2.0, 2.0), random_one_hot(n, k, rng)};
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n));
  for (auto& m : mask) m = static_cast<std::uint8_t>(rng.below(2));
  mask[0] = 1;
  auto fn = [=](const Inputs& v) { return nn::categorical_cross_entropy(nn::softmax(v[0]), v[1], mask); };
  return {shapes_of(in), in, fn, {true, false}};
}

Case sigmoid_bce_case(Rng& rng) {
  const auto n = pick(rng, 1, 6);
  std::vector<double> t(static_cast<std::size_t>(n));
  for (auto& x : t) x = static_cast<double>(rng.below(2));
  Inputs in{rand_tensor({n, 1}, rng, -3.0, 3.0), T::from({n, 1}, t)};
  auto fn = [](const Inputs& v) {
    return nn::binary_cross_entropy(nn::activation(v[0], nn::Activation::sigmoid), v[1]);
  };
  return {shapes_of(in), in, fn, {true, false}};
}

Case matmul_case(Rng& rng) {
  const auto m = pick(rng, 1, 4), k = pick(rng, 1, 5), n = pick(rng, 1, 4);
  Inputs in{rand_tensor({m, k}, rng), rand_tensor({k, n}, rng)};
  auto fn = [](const Inputs& v) { return matmul(v[0], v[1]); };
  return {shapes_of(in), in, fn, {}};
}

Case elementwise_case(Rng& rng) {
  const Shape shape{pick(rng, 1, 3), pick(rng, 1, 4)};
  Inputs in{rand_tensor(shape, rng), rand_tensor(shape, rng)};
  auto fn = [](const Inputs& v) {
    const auto b = reshape(flatten(reshape(v[1], {1, v[1].numel()})), v[1].shape());
    return mean(mul(add(v[0], scale(b, 2.0)), sub(v[0], b)));
  };
  return {shapes_of(in), in, fn, {}};
}

}  // namespace

GradSuiteResult run_grad_suite(std::uint64_t seed, double tolerance, int shapes_per_layer) {
  const std::vector<std::pair<std::string, CaseMaker>> makers = {
      {"conv2d same stride 1", conv_case(nn::Padding::same, 1)},
      {"conv2d same stride 2", conv_case(nn::Padding::same, 2)},
      {"conv2d valid stride 1", conv_case(nn::Padding::valid, 1)},
      {"conv2d valid stride 2", conv_case(nn::Padding::valid, 2)},
      {"maxpool2d ceil", maxpool_case},
      {"batchnorm train", batchnorm_case},
      {"dense", dense_case},
      {"upsample2x", upsample_case},
      {"relu", activation_case(nn::Activation::relu)},
      {"leaky_relu", activation_case(nn::Activation::leaky_relu)},
      {"tanh", activation_case(nn::Activation::tanh)},
      {"sigmoid", activation_case(nn::Activation::sigmoid)},
      {"dropout train", dropout_case},
      {"softmax + categorical CE", softmax_cce_case},
      {"softmax + masked categorical CE", softmax_masked_cce_case},
      {"sigmoid + binary CE", sigmoid_bce_case},
      {"matmul", matmul_case},
      {"add/sub/mul/scale/mean", elementwise_case},
  };
  const auto start = std::chrono::steady_clock::now();
  GradSuiteResult result;
  Rng rng(seed);
  for (const auto& [name, make] : makers) {
    for (int i = 0; i < shapes_per_layer; ++i) {
      Case c = make(rng);
      auto report = grad_check(c.fn, c.inputs, tolerance, c.check);
      result.max_rel_error = std::max(result.max_rel_error, report.max_rel_error);
      result.passed = result.passed && report.passed;
      result.cases.push_back({name, c.shapes, report});
    }
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace bhnd
