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

// Dense double-precision tensors with tape-free reverse-mode
// differentiation. Every op result keeps shared references to its inputs
// and a closure that pushes its gradient back to them; backward() walks the
// resulting DAG once in reverse topological order.

#ifndef SOMNOSEQ_TENSOR_H_
#define SOMNOSEQ_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "somnoseq/errors.h"

namespace somnoseq {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until needed
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<double> values() { return node_->value; }
  std::span<const double> values() const { return node_->value; }
  // Gradient buffer; allocated (zeroed) on first access.
  std::span<double> grad() { return node_->ensure_grad(); }
  std::span<const double> grad() const { return node_->ensure_grad(); }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad();

  // Same values, no graph history.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
// Intermediate gradients are reset on each call; leaf gradients accumulate
// across calls until zero_grad().
void backward(const Tensor& loss);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Sum of equally shaped tensors.
Tensor add_n(std::span<const Tensor> terms);

// x[..., C] + b[C].
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x[B, C, L] + b[C].
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
// x[N, M] * c[N, 1], scaling each row.
Tensor mul_rows(const Tensor& x, const Tensor& c);

// a[M, K] x b[K, N].
Tensor matmul(const Tensor& a, const Tensor& b);

// Numerically stabilized (max-subtracted) softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end);
// Rows of x along axis 0, in the given order (repeats allowed).
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over one axis; the axis is removed from the shape.
Tensor mean_axis(const Tensor& x, std::size_t axis);

// x[B, C_in, L], kernels[C_out, C_in, W] -> [B, C_out, L_out] with
// L_out = floor((L + 2 * padding - W) / stride) + 1. Cross-correlation,
// zero padding.
Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride,
              std::size_t padding);
// x[B, C, L] -> [B, C, floor((L - window) / stride) + 1].
Tensor maxpool1d(const Tensor& x, std::size_t window, std::size_t stride);

// Inverted dropout. In training mode each element is zeroed with
// probability `rate` and survivors are scaled by 1 / (1 - rate); the mask
// is a pure function of `seed`. Inference mode returns x unchanged.
Tensor dropout(const Tensor& x, double rate, bool training,
               std::uint64_t seed);

}  // namespace somnoseq

#endif  // SOMNOSEQ_TENSOR_H_
