#include <doctest.h>

#include <cmath>

#include "bhnd/grad_check.h"
#include "bhnd/nn/functional.h"
#include "bhnd/ops.h"

using namespace bhnd;

TEST_CASE("matmul identity and hand expansion") {
  const auto b = Tensor<float>::from({2, 1}, {5, 6});
  const auto eye = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
  auto y = matmul(eye, b);
  CHECK(y.shape() == Shape{2, 1});
  CHECK(y.at(0) == 5.0f);
  CHECK(y.at(1) == 6.0f);

  y = matmul(Tensor<float>::from({2, 2}, {1, 2, 3, 4}), b);
  CHECK(y.at(0) == 17.0f);
  CHECK(y.at(1) == 39.0f);
}

TEST_CASE("matmul shape rule") {
  Rng rng(3);
  const auto a = randn<float>({3, 512}, rng);
  const auto w = randn<float>({512, 1024}, rng);
  CHECK(matmul(a, w).shape() == Shape{3, 1024});
  CHECK_THROWS_AS(matmul(a, randn<float>({511, 4}, rng)), DimensionError);
}

TEST_CASE("backward of sum is all ones") {
  auto x = Tensor<double>::from({2, 3}, {1, -2, 3, 4, 5, -6});
  x.set_requires_grad(true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward of x squared at 3 is 6") {
  auto x = Tensor<double>::scalar(3.0);
  x.set_requires_grad(true);
  backward(mul(x, x));
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("gradients accumulate across sweeps until cleared") {
  auto x = Tensor<double>::scalar(2.0);
  x.set_requires_grad(true);
  backward(scale(x, 3.0));
  backward(scale(x, 3.0));
  CHECK(x.grad()[0] == 6.0);
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("a shared input receives the sum of both paths") {
  auto x = Tensor<double>::from({2}, {1.5, -0.5});
  x.set_requires_grad(true);
  backward(sum(add(mul(x, x), scale(x, 4.0))));
  CHECK(x.grad()[0] == doctest::Approx(2 * 1.5 + 4));
  CHECK(x.grad()[1] == doctest::Approx(2 * -0.5 + 4));
}

TEST_CASE("mean of relu of W x matches finite differences") {
  Rng rng(11);
  const auto w = randn<double>({4, 3}, rng);
  const auto x = randn<double>({3, 2}, rng);
  const auto report = grad_check(
      [](const std::vector<Tensor<double>>& in) { return mean(nn::relu(matmul(in[0], in[1]))); }, {w, x}, 1e-4);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("composition f of g matches finite differences") {
  Rng rng(5);
  const auto x = randn<double>({2, 3, 4, 4}, rng);
  const auto report = grad_check(
      [](const std::vector<Tensor<double>>& in) {
        return mean(nn::activation(flatten(nn::upsample2x(in[0])), nn::Activation::tanh));
      },
      {x}, 1e-4);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("ops leave their inputs untouched") {
  Rng rng(2);
  auto a = randn<double>({3, 3}, rng);
  auto b = randn<double>({3, 3}, rng);
  a.set_requires_grad(true);
  const std::vector<double> a0(a.data().begin(), a.data().end());
  const std::vector<double> b0(b.data().begin(), b.data().end());
  backward(sum(mul(matmul(a, b), add(a, b))));
  CHECK(std::vector<double>(a.data().begin(), a.data().end()) == a0);
  CHECK(std::vector<double>(b.data().begin(), b.data().end()) == b0);
}

TEST_CASE("no-grad mode records nothing") {
  auto x = Tensor<double>::scalar(1.0);
  x.set_requires_grad(true);
  NoGradGuard guard;
  const auto y = scale(x, 2.0);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->is_leaf());
}

TEST_CASE("detach cuts the tape") {
  auto x = Tensor<double>::scalar(1.0);
  x.set_requires_grad(true);
  const auto y = scale(x, 2.0).detach();
  CHECK_FALSE(y.requires_grad());
  CHECK(y.item() == 2.0);
}

TEST_CASE("elementwise operands must agree in shape") {
  CHECK_THROWS_AS(add(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({3, 2})), DimensionError);
  CHECK_THROWS_AS(reshape(Tensor<float>::zeros({2, 3}), {4}), DimensionError);
}

TEST_CASE("randn is reproducible per seed") {
  Rng a(7), b(7), c(8);
  const auto x = randn<float>({64}, a);
  const auto y = randn<float>({64}, b);
  const auto z = randn<float>({64}, c);
  CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  CHECK_FALSE(std::equal(x.data().begin(), x.data().end(), z.data().begin()));
}

TEST_CASE("randn moments over 1e5 draws") {
  Rng rng(0);
  const auto x = randn<double>({100000}, rng);
  double m = 0.0, sq = 0.0;
  for (double v : x.data()) m += v;
  m /= 1e5;
  for (double v : x.data()) sq += (v - m) * (v - m);
  const double sd = std::sqrt(sq / 1e5);
  CHECK(std::abs(m) < 0.02);
  CHECK(sd > 0.98);
  CHECK(sd < 1.02);
}

TEST_CASE("rng streams are independent and addressable") {
  Rng a(1, streams::dropout, 5), b(1, streams::dropout, 5), c(1, streams::latent, 5), d(1, streams::dropout, 6);
  const auto first = a.next();
  CHECK(first == b.next());
  CHECK(first != c.next());
  CHECK(first != d.next());
  Rng u(9);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK((v >= 0.0 && v < 1.0));
    CHECK(u.below(7) < 7u);
  }
}

TEST_CASE("grad_check is exact on a linear op") {
  Rng rng(4);
  const auto x = randn<double>({3, 4}, rng);
  const auto report = grad_check([](const std::vector<Tensor<double>>& in) { return scale(in[0], 2.0); }, {x}, 1e-4);
  CHECK(report.max_rel_error < 1e-10);
}

TEST_CASE("grad_check on conv2d and fused softmax cross-entropy") {
  Rng rng(12);
  const auto x = randn<double>({1, 2, 5, 5}, rng);
  const auto w = randn<double>({3, 2, 3, 3}, rng);
  const auto b = randn<double>({3}, rng);
  auto report = grad_check(
      [](const std::vector<Tensor<double>>& in) { return nn::conv2d(in[0], in[1], in[2], {1, nn::Padding::same}); },
      {x, w, b}, 1e-4);
  CHECK(report.max_rel_error < 1e-4);

  const auto logits = randn<double>({4, 5}, rng);
  auto targets = Tensor<double>::zeros({4, 5});
  for (int i = 0; i < 4; ++i) targets.mutable_data()[static_cast<std::size_t>(i * 5 + i)] = 1.0;
  report = grad_check(
      [&](const std::vector<Tensor<double>>& in) {
        return nn::categorical_cross_entropy(nn::softmax(in[0]), targets);
      },
      {logits}, 1e-4);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("grad_check flags a wrong backward rule") {
  const auto x = Tensor<double>::from({3}, {0.3, -1.2, 2.0});
  const auto report = grad_check(
      [](const std::vector<Tensor<double>>& in) {
        const auto& a = in[0];
        std::vector<double> y(a.data().begin(), a.data().end());
        for (auto& v : y) v = v * v;
        return Tensor<double>::make_result(a.shape(), std::move(y), "bad_square", {a}, [](detail::Node<double>& self) {
          auto dx = self.inputs[0]->grad_buffer();
          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * self.inputs[0]->data[i];
        });
      },
      {x}, 1e-4);
  CHECK_FALSE(report.passed);
  CHECK(report.max_rel_error == doctest::Approx(0.5).epsilon(1e-6));
}
