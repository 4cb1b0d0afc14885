#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bhnd/grad_check.h"
#include "bhnd/nn/layers.h"
#include "bhnd/ops.h"

using namespace bhnd;
using namespace bhnd::nn;

namespace {

std::vector<float> values(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

Tensor<float> one_hot_rows(std::int64_t rows, std::int64_t classes, std::int64_t hot) {
  auto t = Tensor<float>::zeros({rows, classes});
  for (std::int64_t i = 0; i < rows; ++i) t.mutable_data()[static_cast<std::size_t>(i * classes + hot)] = 1.0f;
  return t;
}

}  // namespace

TEST_CASE("conv2d scalar product") {
  const auto y = conv2d(Tensor<float>::from({1, 1, 1, 1}, {3}), Tensor<float>::from({1, 1, 1, 1}, {2}),
                        Tensor<float>::zeros({1}), {});
  CHECK(values(y) == std::vector<float>{6});
}

TEST_CASE("conv2d valid 2x2 all-ones kernel") {
  const auto x = Tensor<float>::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto w = Tensor<float>::full({1, 1, 2, 2}, 1.0f);
  const auto y = conv2d(x, w, Tensor<float>::zeros({1}), {1, Padding::valid});
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(values(y) == std::vector<float>{12, 16, 24, 28});
  CHECK(values(conv2d_naive_oracle(x, w, Tensor<float>::zeros({1}), {1, Padding::valid})) == values(y));
}

TEST_CASE("conv2d same padding keeps extent and puts the extra pad after") {
  Rng rng(1);
  const auto x = randn<float>({2, 1, 32, 32}, rng);
  const auto w = randn<float>({32, 1, 2, 2}, rng);
  CHECK(conv2d(x, w, Tensor<float>::zeros({32}), {}).shape() == Shape{2, 32, 32, 32});

  // 2x2 same on a 2x2 input: pad 0 before, 1 after.
  const auto small = conv2d(Tensor<float>::from({1, 1, 2, 2}, {1, 2, 3, 4}), Tensor<float>::full({1, 1, 2, 2}, 1.0f),
                            Tensor<float>::zeros({1}), {});
  CHECK(values(small) == std::vector<float>{10, 6, 7, 4});
  CHECK(conv_axis(9, 3, 2, Padding::same).output == 5);
  CHECK(conv_axis(9, 3, 2, Padding::valid).output == 4);
}

TEST_CASE("conv2d matches the oracle on a strided case") {
  Rng rng(2);
  const auto x = randn<double>({2, 3, 9, 9}, rng);
  const auto w = randn<double>({4, 3, 3, 3}, rng);
  const auto b = randn<double>({4}, rng);
  for (auto padding : {Padding::same, Padding::valid}) {
    const auto fast = conv2d(x, w, b, {2, padding});
    const auto slow = conv2d_naive_oracle(x, w, b, {2, padding});
    REQUIRE(fast.shape() == slow.shape());
    for (std::int64_t i = 0; i < fast.numel(); ++i) CHECK(std::abs(fast.at(i) - slow.at(i)) < 1e-6);
  }
}

TEST_CASE("conv2d of zero input is the bias broadcast") {
  Rng rng(3);
  const auto b = Tensor<float>::from({2}, {0.5f, -1.5f});
  const auto y = conv2d(Tensor<float>::zeros({1, 3, 4, 4}), randn<float>({2, 3, 3, 3}, rng), b, {});
  for (std::int64_t i = 0; i < 16; ++i) {
    CHECK(y.at(i) == 0.5f);
    CHECK(y.at(16 + i) == -1.5f);
  }
}

TEST_CASE("conv2d rejects channel mismatch and short valid input") {
  Rng rng(4);
  CHECK_THROWS_AS(conv2d(Tensor<float>::zeros({1, 2, 5, 5}), Tensor<float>::zeros({1, 3, 3, 3}),
                         Tensor<float>::zeros({1}), {}),
                  DimensionError);
  CHECK_THROWS_AS(conv2d(Tensor<float>::zeros({1, 1, 2, 2}), Tensor<float>::zeros({1, 1, 3, 3}),
                         Tensor<float>::zeros({1}), {1, Padding::valid}),
                  DimensionError);
}

TEST_CASE("maxpool picks the window maximum") {
  const auto y = maxpool2d(Tensor<float>::from({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(values(y) == std::vector<float>{4});
  const auto c = maxpool2d(Tensor<float>::full({1, 2, 6, 6}, 1.25f));
  CHECK(c.shape() == Shape{1, 2, 3, 3});
  for (float v : c.data()) CHECK(v == 1.25f);
  CHECK(maxpool2d(Tensor<float>::zeros({1, 1, 32, 32})).shape() == Shape{1, 1, 16, 16});
}

TEST_CASE("maxpool ceil mode keeps partial windows") {
  CHECK(pool_output_extent(1, 2, 2, true) == 1);
  CHECK(pool_output_extent(7, 2, 2, true) == 4);
  CHECK(pool_output_extent(7, 2, 2, false) == 3);
  const auto y = maxpool2d(Tensor<float>::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  CHECK(values(y) == std::vector<float>{5, 6, 8, 9});
}

TEST_CASE("maxpool routes gradient to the first maximum") {
  auto x = Tensor<double>::from({1, 1, 2, 2}, {3, 3, 1, 3});
  x.set_requires_grad(true);
  backward(sum(maxpool2d(x)));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("batchnorm train mode normalizes each channel") {
  Rng rng(5);
  const auto x = scale(randn<double>({8, 3, 4, 4}, rng), 3.0);
  const auto y = batchnorm2d(x, Tensor<double>::full({3}, 1.0), Tensor<double>::zeros({3}), Mode::train, static_cast<const RunningStats<double>*>(nullptr));
  for (int c = 0; c < 3; ++c) {
    double m = 0.0, sq = 0.0;
    for (int n = 0; n < 8; ++n)
      for (int i = 0; i < 16; ++i) m += y.at((n * 3 + c) * 16 + i);
    m /= 128.0;
    for (int n = 0; n < 8; ++n)
      for (int i = 0; i < 16; ++i) sq += std::pow(y.at((n * 3 + c) * 16 + i) - m, 2);
    CHECK(std::abs(m) < 1e-9);
    CHECK(sq / 128.0 == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("batchnorm affine on normalized input") {
  Rng rng(6);
  const auto x0 = randn<double>({16, 2, 3, 3}, rng);
  const auto x = batchnorm2d(x0, Tensor<double>::full({2}, 1.0), Tensor<double>::zeros({2}), Mode::train, static_cast<const RunningStats<double>*>(nullptr));
  const auto y = batchnorm2d(x, Tensor<double>::full({2}, 2.0), Tensor<double>::full({2}, 5.0), Mode::train, static_cast<const RunningStats<double>*>(nullptr));
  double m = 0.0, sq = 0.0;
  for (int n = 0; n < 16; ++n)
    for (int i = 0; i < 9; ++i) m += y.at((n * 2) * 9 + i);
  m /= 144.0;
  for (int n = 0; n < 16; ++n)
    for (int i = 0; i < 9; ++i) sq += std::pow(y.at((n * 2) * 9 + i) - m, 2);
  CHECK(m == doctest::Approx(5.0));
  CHECK(std::sqrt(sq / 144.0) == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("batchnorm eval mode with unit running stats is the identity") {
  Rng rng(7);
  const auto x = randn<float>({2, 3, 2, 2}, rng);
  std::vector<float> mean(3, 0.0f), var(3, 1.0f);
  RunningStats<float> running{mean, var};
  const auto y = batchnorm2d(x, Tensor<float>::full({3}, 1.0f), Tensor<float>::zeros({3}), Mode::eval, &running);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == doctest::Approx(x.at(i)).epsilon(1e-5));
  CHECK_THROWS_AS(batchnorm2d(x, Tensor<float>::full({3}, 1.0f), Tensor<float>::zeros({3}), Mode::eval, static_cast<const RunningStats<float>*>(nullptr)),
                  ContractError);
}

TEST_CASE("batchnorm running update uses momentum on the old value") {
  const auto x = Tensor<float>::from({2, 1}, {1, 3});
  std::vector<float> mean{0.0f}, var{1.0f};
  RunningStats<float> running{mean, var};
  batchnorm2d(x, Tensor<float>::full({1}, 1.0f), Tensor<float>::zeros({1}), Mode::train, &running, 0.9);
  CHECK(mean[0] == doctest::Approx(0.2));
  CHECK(var[0] == doctest::Approx(1.0));  // 0.9 * 1 + 0.1 * 1
}

TEST_CASE("dense hand expansion and identity") {
  const auto y = dense(Tensor<float>::from({1, 2}, {1, 2}), Tensor<float>::from({2, 1}, {1, 1}),
                       Tensor<float>::from({1}, {3}));
  CHECK(values(y) == std::vector<float>{6});
  const auto x = Tensor<float>::from({2, 2}, {1, -2, 3, 4});
  CHECK(values(dense(x, Tensor<float>::from({2, 2}, {1, 0, 0, 1}), Tensor<float>::zeros({2}))) == values(x));
  Rng rng(8);
  DenseLayer fc("fc", 1024, 5120, Init::he_uniform, rng);
  CHECK(fc.output_shape({4, 1024}) == Shape{4, 5120});
  CHECK_THROWS_AS(fc.output_shape({4, 1023}), DimensionError);
}

TEST_CASE("dropout rate 0 and eval mode are identities") {
  Rng rng(9);
  const auto x = randn<float>({10, 10}, rng);
  CHECK(values(dropout(x, 0.0, Mode::train, rng)) == values(x));
  CHECK(values(dropout(x, 0.5, Mode::eval, rng)) == values(x));
}

TEST_CASE("dropout train statistics") {
  Rng rng(10);
  const auto x = Tensor<float>::full({100000}, 1.0f);
  const auto y = dropout(x, 0.5, Mode::train, rng);
  std::int64_t zeros = 0;
  double total = 0.0;
  for (float v : y.data()) {
    zeros += v == 0.0f;
    total += v;
  }
  const double frac = static_cast<double>(zeros) / 1e5;
  CHECK(frac >= 0.49);
  CHECK(frac <= 0.51);
  CHECK(total / 1e5 == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("upsample2x expands every element into a 2x2 block") {
  const auto y = upsample2x(Tensor<float>::from({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(values(y) == std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  CHECK(upsample2x(Tensor<float>::zeros({2, 128, 8, 8})).shape() == Shape{2, 128, 16, 16});
}

TEST_CASE("maxpool after upsample is the identity") {
  Rng rng(11);
  const auto x = randn<float>({2, 3, 5, 4}, rng);
  CHECK(values(maxpool2d(upsample2x(x))) == values(x));
}

TEST_CASE("activation values") {
  const auto x = Tensor<float>::from({3}, {-1, 0, 2});
  CHECK(values(activation(x, Activation::relu)) == std::vector<float>{0, 0, 2});
  CHECK(activation(x, Activation::leaky_relu, 0.2).at(0) == doctest::Approx(-0.2));
  CHECK(activation(x, Activation::tanh).at(1) == 0.0f);
  CHECK(activation(x, Activation::sigmoid).at(1) == 0.5f);
}

TEST_CASE("softmax closed forms") {
  const auto u = softmax(Tensor<float>::zeros({2, 10}));
  for (float v : u.data()) CHECK(v == doctest::Approx(0.1));
  const auto p = softmax(Tensor<double>::from({1, 2}, {0.0, std::log(2.0)}));
  CHECK(p.at(0) == doctest::Approx(1.0 / 3.0));
  CHECK(p.at(1) == doctest::Approx(2.0 / 3.0));
  const auto a = softmax(Tensor<double>::from({1, 3}, {0.5, -1.0, 2.0}));
  const auto b = softmax(Tensor<double>::from({1, 3}, {100.5, 99.0, 102.0}));
  for (int i = 0; i < 3; ++i) CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-12));
}

TEST_CASE("categorical cross-entropy closed forms") {
  const auto perfect = categorical_cross_entropy(one_hot_rows(3, 10, 4), one_hot_rows(3, 10, 4));
  CHECK(perfect.item() < 1e-6);
  const auto t10 = Tensor<double>::from({1, 10}, {0, 0, 1, 0, 0, 0, 0, 0, 0, 0});
  CHECK(categorical_cross_entropy(Tensor<double>::full({1, 10}, 0.1), t10).item() ==
        doctest::Approx(2.302585).epsilon(1e-6));
  std::vector<double> hot(11, 0.0);
  hot[10] = 1.0;
  CHECK(categorical_cross_entropy(Tensor<double>::full({1, 11}, 1.0 / 11.0), Tensor<double>::from({1, 11}, hot))
            .item() == doctest::Approx(2.397895).epsilon(1e-6));
}

TEST_CASE("masked categorical cross-entropy averages over selected rows") {
  auto probs = Tensor<double>::from({2, 2}, {0.5, 0.5, 0.9, 0.1});
  const auto targets = Tensor<double>::from({2, 2}, {1, 0, 1, 0});
  const std::vector<std::uint8_t> second{0, 1}, none{0, 0};
  CHECK(categorical_cross_entropy(probs, targets, second).item() == doctest::Approx(-std::log(0.9)));
  CHECK(categorical_cross_entropy(probs, targets, none).item() == 0.0);
}

TEST_CASE("binary cross-entropy closed forms") {
  CHECK(binary_cross_entropy(Tensor<double>::full({5, 1}, 0.5), Tensor<double>::full({5, 1}, 1.0)).item() ==
        doctest::Approx(std::numbers::ln2).epsilon(1e-9));
  CHECK(binary_cross_entropy(Tensor<double>::from({1, 1}, {0.9}), Tensor<double>::from({1, 1}, {1.0})).item() ==
        doctest::Approx(0.10536).epsilon(1e-4));
  CHECK(binary_cross_entropy(Tensor<double>::from({2, 1}, {1.0, 0.0}), Tensor<double>::from({2, 1}, {1.0, 0.0}))
            .item() < 1e-6);
}

TEST_CASE("layer shape rules name the layer") {
  Rng rng(12);
  Conv2dLayer conv("conv1", Conv2dSpec::make(3, 8, 3, 1, Padding::same, Init::he_uniform, rng));
  CHECK(conv.output_shape({2, 3, 7, 7}) == Shape{2, 8, 7, 7});
  try {
    conv.output_shape({2, 4, 7, 7});
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("conv1") != std::string::npos);
  }
}
