// Copyright 2026 The Somnoseq Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "somnoseq/errors.h"
#include "somnoseq/gradcheck.h"
#include "somnoseq/rng.h"
#include "somnoseq/tensor.h"

namespace somnoseq {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Weighted sum so every output element carries a distinct gradient.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(y.numel());
  for (double& x : w) x = rng.uniform(-1.0, 1.0);
  return sum(mul(y, Tensor::from(y.shape(), std::move(w))));
}

void expect_gradients(const std::string& name, std::vector<Tensor> params,
                      const std::function<Tensor()>& f) {
  const GradCheckResult r = gradient_check(f, params);
  EXPECT_LT(r.max_relative_error, 1e-4) << name << " worst param " << r.worst_param
                                        << " index " << r.worst_index;
  EXPECT_GT(r.checked, 0u) << name;
}

TEST(TensorOps, ForwardValues) {
  const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()),
            (std::vector<double>{58, 64, 139, 154}));

  const Tensor s = softmax(Tensor::from({1, 3}, {1, 2, 3}), 1);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(s.values()[2], std::exp(3.0) / z, 1e-15);

  const Tensor big = softmax(Tensor::from({1, 2}, {1000, 1000}), 1);
  EXPECT_DOUBLE_EQ(big.values()[0], 0.5);

  const Tensor m = maxpool1d(Tensor::from({1, 1, 5}, {1, 5, 2, 7, 3}), 2, 2);
  EXPECT_EQ(std::vector<double>(m.values().begin(), m.values().end()), (std::vector<double>{5, 7}));

  const Tensor cat = concat({a, a}, 1);
  EXPECT_EQ(cat.shape(), (Shape{2, 6}));
  EXPECT_EQ(cat.values()[3], 1.0);
  EXPECT_EQ(slice(cat, 1, 2, 4).values()[1], 1.0);

  EXPECT_DOUBLE_EQ(mean(a).item(), 3.5);
  const Tensor ma = mean_axis(a, 1);
  EXPECT_EQ(ma.shape(), (Shape{2}));
  EXPECT_DOUBLE_EQ(ma.values()[1], 5.0);
}

TEST(TensorOps, Conv1dMatchesDirectSum) {
  Rng rng(4);
  const Tensor x = random_tensor({2, 3, 11}, rng);
  const Tensor k = random_tensor({4, 3, 5}, rng);
  const std::size_t stride = 2, pad = 2;
  const Tensor y = conv1d(x, k, stride, pad);
  const std::size_t lout = (11 + 2 * pad - 5) / stride + 1;
  ASSERT_EQ(y.shape(), (Shape{2, 4, lout}));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t o = 0; o < 4; ++o) {
      for (std::size_t t = 0; t < lout; ++t) {
        double acc = 0;
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t w = 0; w < 5; ++w) {
            const long pos = static_cast<long>(t * stride + w) - static_cast<long>(pad);
            if (pos < 0 || pos >= 11) continue;
            acc += x.values()[(b * 3 + c) * 11 + static_cast<std::size_t>(pos)] *
                   k.values()[(o * 3 + c) * 5 + w];
          }
        }
        EXPECT_NEAR(y.values()[(b * 4 + o) * lout + t], acc, 1e-12);
      }
    }
  }
}

TEST(TensorOps, ShapeErrors) {
  const Tensor a = Tensor::zeros({2, 3});
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(add(a, Tensor::zeros({3, 2})), ShapeError);
  EXPECT_THROW(dropout(a, 1.0, true, 1), ShapeError);
}

TEST(TensorGradients, Elementwise) {
  Rng rng(1);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  expect_gradients("add", {a, b}, [&] { return probe(add(a, b), 1); });
  expect_gradients("sub", {a, b}, [&] { return probe(sub(a, b), 2); });
  expect_gradients("mul", {a, b}, [&] { return probe(mul(a, b), 3); });
  expect_gradients("scale", {a}, [&] { return probe(scale(a, -2.5), 4); });
  expect_gradients("square", {a}, [&] { return probe(square(a), 5); });
  expect_gradients("tanh", {a}, [&] { return probe(tanh(a), 6); });
  expect_gradients("sigmoid", {a}, [&] { return probe(sigmoid(a), 7); });
  expect_gradients("relu", {a}, [&] { return probe(relu(a), 8); });
  expect_gradients("add_n", {a, b}, [&] {
    const std::vector<Tensor> terms = {a, b, a};
    return probe(add_n(terms), 9);
  });
}

TEST(TensorGradients, LinearAlgebra) {
  Rng rng(2);
  Tensor a = random_tensor({3, 5}, rng), b = random_tensor({5, 2}, rng);
  Tensor bias = random_tensor({2}, rng), rows = random_tensor({3, 1}, rng);
  expect_gradients("matmul", {a, b}, [&] { return probe(matmul(a, b), 1); });
  expect_gradients("add_bias", {a, bias}, [&] { return probe(add_bias(matmul(a, b), bias), 2); });
  expect_gradients("mul_rows", {a, rows}, [&] { return probe(mul_rows(a, rows), 3); });
  expect_gradients("softmax0", {a}, [&] { return probe(softmax(a, 0), 4); });
  expect_gradients("softmax1", {a}, [&] { return probe(softmax(a, 1), 5); });
}

TEST(TensorGradients, Structural) {
  Rng rng(3);
  Tensor a = random_tensor({4, 3}, rng), b = random_tensor({4, 2}, rng);
  expect_gradients("concat", {a, b}, [&] { return probe(concat({a, b}, 1), 1); });
  expect_gradients("slice", {a}, [&] { return probe(slice(a, 1, 1, 3), 2); });
  expect_gradients("gather_rows", {a}, [&] {
    const std::vector<std::size_t> rows = {3, 0, 3};
    return probe(gather_rows(a, rows), 3);
  });
  expect_gradients("reshape", {a}, [&] { return probe(reshape(a, {2, 6}), 4); });
  expect_gradients("mean", {a}, [&] { return scale(mean(square(a)), 3.0); });
  expect_gradients("mean_axis", {a}, [&] { return probe(mean_axis(a, 0), 5); });
}

TEST(TensorGradients, ConvolutionAndPooling) {
  Rng rng(5);
  Tensor x = random_tensor({2, 2, 13}, rng), k = random_tensor({3, 2, 4}, rng);
  Tensor bias = random_tensor({3}, rng);
  expect_gradients("conv1d", {x, k}, [&] { return probe(conv1d(x, k, 2, 2), 1); });
  expect_gradients("add_channel_bias", {x, bias}, [&] {
    return probe(add_channel_bias(conv1d(x, k, 1, 0), bias), 2);
  });
  expect_gradients("maxpool1d", {x}, [&] { return probe(maxpool1d(x, 3, 2), 3); });
  expect_gradients("dropout", {x}, [&] { return probe(dropout(x, 0.4, true, 17), 4); });
}

TEST(TensorAutodiff, LeafGradientsAccumulate) {
  Tensor a = Tensor::from({2}, {1.0, -2.0}, true);
  backward(sum(square(a)));
  backward(sum(square(a)));
  EXPECT_DOUBLE_EQ(a.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(a.grad()[1], -8.0);
  a.zero_grad();
  EXPECT_DOUBLE_EQ(a.grad()[0], 0.0);
}

TEST(TensorAutodiff, SharedSubgraphCountsEveryPath) {
  Tensor a = Tensor::from({1}, {3.0}, true);
  const Tensor y = mul(a, a);
  backward(sum(add(y, y)));  // d/da 2a^2 = 4a
  EXPECT_DOUBLE_EQ(a.grad()[0], 12.0);
}

TEST(Dropout, InferenceIsIdentityAndMaskIsSeeded) {
  Rng rng(6);
  const Tensor x = random_tensor({50, 40}, rng);
  const Tensor y = dropout(x, 0.5, false, 1);
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()),
            std::vector<double>(x.values().begin(), x.values().end()));
  const Tensor m1 = dropout(x, 0.5, true, 99), m2 = dropout(x, 0.5, true, 99);
  EXPECT_EQ(std::vector<double>(m1.values().begin(), m1.values().end()),
            std::vector<double>(m2.values().begin(), m2.values().end()));
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    if (m1.values()[i] == 0.0) ++zeros;
    else EXPECT_NEAR(m1.values()[i], 2.0 * x.values()[i], 1e-12);
  }
  EXPECT_NEAR(static_cast<double>(zeros) / 2000.0, 0.5, 0.05);
}

TEST(GradCheck, DetectsWrongGradient) {
  Tensor a = Tensor::from({2}, {0.3, -0.7}, true);
  // detach() severs the graph, so the analytic gradient of the second term
  // is missing.
  const auto f = [&] { return add(sum(square(a)), sum(mul(a, a.detach()))); };
  std::vector<Tensor> params = {a};
  EXPECT_GT(gradient_check(f, params).max_relative_error, 0.1);
}

TEST(GradCheck, SkipsReluKink) {
  Tensor a = Tensor::from({3}, {0.0, 1.0, -1.0}, true);
  std::vector<Tensor> params = {a};
  const GradCheckResult r = gradient_check([&] { return sum(relu(a)); }, params);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.checked, 2u);
  EXPECT_LT(r.max_relative_error, 1e-8);
}

}  // namespace
}  // namespace somnoseq
