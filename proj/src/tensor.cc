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

#include "somnoseq/tensor.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "somnoseq/rng.h"

namespace somnoseq {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

// Result node of an op. History is only recorded when some input needs it.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->is_leaf = false;
  const bool track = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_string(x.shape()));
  }
}

// Splits a shape around `axis` into (outer, axis length, inner) extents.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_string(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
  std::vector<double> out(a.numel());
  const auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(a.shape(), std::move(out), {a.node_ptr()},
                     [df](Node& self) {
                       Node& p = *self.parents[0];
                       auto& g = p.ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         g[i] += self.grad[i] * df(p.value[i], self.value[i]);
                       }
                     });
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({}, {value}, requires_grad));
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  }
  return node_->value[0];
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor(make_leaf(shape(), node_->value, false));
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " +
                     shape_string(loss.shape()));
  }
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the tracked graph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                     [](Node& self) {
                       for (auto& p : self.parents) {
                         if (!p->requires_grad) continue;
                         auto& g = p->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                     [](Node& self) {
                       for (int k = 0; k < 2; ++k) {
                         Node& p = *self.parents[k];
                         if (!p.requires_grad) continue;
                         const double sign = k == 0 ? 1.0 : -1.0;
                         auto& g = p.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result(a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                     [](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       if (pa.requires_grad) {
                         auto& g = pa.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
                       }
                     });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) throw ShapeError("add_n of no terms");
  std::vector<double> out(terms[0].numel(), 0.0);
  std::vector<NodePtr> parents;
  for (const auto& t : terms) {
    require_same_shape(terms[0], t, "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += t.values()[i];
    parents.push_back(t.node_ptr());
  }
  return make_result(terms[0].shape(), std::move(out), std::move(parents),
                     [](Node& self) {
                       for (auto& p : self.parents) {
                         if (!p->requires_grad) continue;
                         auto& g = p->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                     });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() == 0 || bias.rank() != 1 || bias.dim(0) != x.shape().back()) {
    throw ShapeError("add_bias: " + shape_string(x.shape()) + " + " +
                     shape_string(bias.shape()));
  }
  const std::size_t c = bias.dim(0);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.values()[i % c];
  return make_result(x.shape(), std::move(out), {x.node_ptr(), bias.node_ptr()},
                     [c](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pb = *self.parents[1];
                       if (px.requires_grad) {
                         auto& g = px.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.ensure_grad();
                         for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % c] += self.grad[i];
                       }
                     });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 3, "add_channel_bias");
  if (bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_channel_bias: " + shape_string(x.shape()) + " + " +
                     shape_string(bias.shape()));
  }
  const std::size_t channels = x.dim(1), length = x.dim(2);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += bias.values()[(i / length) % channels];
  }
  return make_result(x.shape(), std::move(out), {x.node_ptr(), bias.node_ptr()},
                     [channels, length](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pb = *self.parents[1];
                       if (px.requires_grad) {
                         auto& g = px.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.ensure_grad();
                         for (std::size_t i = 0; i < self.grad.size(); ++i) {
                           g[(i / length) % channels] += self.grad[i];
                         }
                       }
                     });
}

Tensor mul_rows(const Tensor& x, const Tensor& c) {
  require_rank(x, 2, "mul_rows");
  if (c.rank() != 2 || c.dim(0) != x.dim(0) || c.dim(1) != 1) {
    throw ShapeError("mul_rows: " + shape_string(x.shape()) + " * " +
                     shape_string(c.shape()));
  }
  const std::size_t n = x.dim(0), m = x.dim(1);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x.values()[i * m + j] * c.values()[i];
  }
  return make_result(x.shape(), std::move(out), {x.node_ptr(), c.node_ptr()},
                     [n, m](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pc = *self.parents[1];
                       if (px.requires_grad) {
                         auto& g = px.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < m; ++j)
                             g[i * m + j] += self.grad[i * m + j] * pc.value[i];
                       }
                       if (pc.requires_grad) {
                         auto& g = pc.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < m; ++j)
                             g[i] += self.grad[i * m + j] * px.value[i * m + j];
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      const double* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
                     [m, k, n](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       const double* gout = self.grad.data();
                       if (pa.requires_grad) {
                         auto& g = pa.ensure_grad();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double acc = 0.0;
                             const double* brow = pb.value.data() + p * n;
                             const double* grow = gout + i * n;
                             for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                             g[i * k + p] += acc;
                           }
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.ensure_grad();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double s = pa.value[i * k + p];
                             if (s == 0.0) continue;
                             double* gb = g.data() + p * n;
                             const double* grow = gout + i * n;
                             for (std::size_t j = 0; j < n; ++j) gb[j] += s * grow[j];
                           }
                       }
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view(x.shape(), axis);
  std::vector<double> out(x.numel());
  const auto in = x.values();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      double mx = -INFINITY;
      for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, in[base + e * v.inner]);
      double total = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        const double ex = std::exp(in[base + e * v.inner] - mx);
        out[base + e * v.inner] = ex;
        total += ex;
      }
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(out), {x.node_ptr()}, [v](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.extent * v.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t idx = base + e * v.inner;
          dot += self.grad[idx] * self.value[idx];
        }
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t idx = base + e * v.inner;
          g[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of no tensors");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ShapeError("concat: axis out of range");
  std::vector<std::size_t> extents;
  shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw ShapeError("concat: rank mismatch");
    extents.push_back(s[axis]);
    shape[axis] += s[axis];
    s[axis] = shape[axis];
    if (s != shape) {
      throw ShapeError("concat: incompatible shape " + shape_string(p.shape()));
    }
  }
  const AxisView v = axis_view(shape, axis);
  std::vector<double> out(shape_numel(shape));
  std::vector<NodePtr> parents;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto in = parts[k].values();
    const std::size_t chunk = extents[k] * v.inner;
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * v.extent * v.inner + offset * v.inner));
    }
    offset += extents[k];
    parents.push_back(parts[k].node_ptr());
  }
  return make_result(std::move(shape), std::move(out), std::move(parents),
                     [v, extents](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         Node& p = *self.parents[k];
                         const std::size_t chunk = extents[k] * v.inner;
                         if (p.requires_grad) {
                           auto& g = p.ensure_grad();
                           for (std::size_t o = 0; o < v.outer; ++o) {
                             const double* src = self.grad.data() + o * v.extent * v.inner + offset * v.inner;
                             double* dst = g.data() + o * chunk;
                             for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                           }
                         }
                         offset += extents[k];
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin,
             std::size_t end) {
  const AxisView v = axis_view(x.shape(), axis);
  if (begin > end || end > v.extent) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") out of range for " +
                     shape_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * v.inner;
  std::vector<double> out(v.outer * chunk);
  const auto in = x.values();
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * v.extent * v.inner + begin * v.inner),
                chunk, out.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  }
  return make_result(std::move(shape), std::move(out), {x.node_ptr()},
                     [v, begin, chunk](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t o = 0; o < v.outer; ++o) {
                         double* dst = g.data() + o * v.extent * v.inner + begin * v.inner;
                         const double* src = self.grad.data() + o * chunk;
                         for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() == 0) throw ShapeError("gather_rows on a scalar");
  const std::size_t n = x.dim(0);
  const std::size_t width = x.numel() / std::max<std::size_t>(n, 1);
  Shape shape = x.shape();
  shape[0] = rows.size();
  std::vector<double> out(rows.size() * width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw ShapeError("gather_rows: row index out of range");
    std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(rows[r] * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(std::move(shape), std::move(out), {x.node_ptr()},
                     [idx = std::move(idx), width](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r) {
                         for (std::size_t j = 0; j < width; ++j) {
                           g[idx[r] * width + j] += self.grad[r * width + j];
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_string(x.shape()) + " -> " +
                     shape_string(shape));
  }
  return make_result(std::move(shape),
                     std::vector<double>(x.values().begin(), x.values().end()),
                     {x.node_ptr()}, [](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  return make_result({}, {total}, {x.node_ptr()}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  const AxisView v = axis_view(x.shape(), axis);
  if (v.extent == 0) throw ShapeError("mean over an empty axis");
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(v.outer * v.inner, 0.0);
  const double inv = 1.0 / static_cast<double>(v.extent);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      for (std::size_t i = 0; i < v.inner; ++i)
        out[o * v.inner + i] += x.values()[(o * v.extent + e) * v.inner + i] * inv;
  return make_result(std::move(shape), std::move(out), {x.node_ptr()},
                     [v, inv](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t o = 0; o < v.outer; ++o)
                         for (std::size_t e = 0; e < v.extent; ++e)
                           for (std::size_t i = 0; i < v.inner; ++i)
                             g[(o * v.extent + e) * v.inner + i] += self.grad[o * v.inner + i] * inv;
                     });
}

namespace {

// Output positions t in [lo, hi) for which t * stride + w - padding lies in
// [0, length).
std::pair<std::size_t, std::size_t> valid_range(std::size_t w, std::size_t stride,
                                                std::size_t padding,
                                                std::size_t length,
                                                std::size_t out_len) {
  const auto s = static_cast<std::int64_t>(stride);
  const std::int64_t shift = static_cast<std::int64_t>(w) - static_cast<std::int64_t>(padding);
  // t * s + shift >= 0  and  t * s + shift <= length - 1
  std::int64_t lo = shift >= 0 ? 0 : (-shift + s - 1) / s;
  std::int64_t hi_num = static_cast<std::int64_t>(length) - 1 - shift;
  std::int64_t hi = hi_num < 0 ? 0 : hi_num / s + 1;
  hi = std::min<std::int64_t>(hi, static_cast<std::int64_t>(out_len));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& kernels, std::size_t stride,
              std::size_t padding) {
  require_rank(x, 3, "conv1d");
  require_rank(kernels, 3, "conv1d");
  if (stride == 0) throw ShapeError("conv1d: stride must be >= 1");
  const std::size_t batch = x.dim(0), cin = x.dim(1), length = x.dim(2);
  const std::size_t cout = kernels.dim(0), width = kernels.dim(2);
  if (kernels.dim(1) != cin) {
    throw ShapeError("conv1d: input has " + std::to_string(cin) +
                     " channels, kernels expect " + std::to_string(kernels.dim(1)));
  }
  if (width == 0 || width > length + 2 * padding) {
    throw ShapeError("conv1d: kernel width " + std::to_string(width) +
                     " exceeds padded length " + std::to_string(length + 2 * padding));
  }
  const std::size_t out_len = (length + 2 * padding - width) / stride + 1;
  std::vector<double> out(batch * cout * out_len, 0.0);
  const double* xv = x.values().data();
  const double* kv = kernels.values().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o) {
      double* dst = out.data() + (b * cout + o) * out_len;
      for (std::size_t c = 0; c < cin; ++c) {
        const double* src = xv + (b * cin + c) * length;
        for (std::size_t w = 0; w < width; ++w) {
          const double k = kv[(o * cin + c) * width + w];
          const auto [lo, hi] = valid_range(w, stride, padding, length, out_len);
          const std::size_t offset = w - padding;  // wraps; combined below
          for (std::size_t t = lo; t < hi; ++t) dst[t] += k * src[t * stride + offset];
        }
      }
    }
  return make_result(
      {batch, cout, out_len}, std::move(out), {x.node_ptr(), kernels.node_ptr()},
      [=](Node& self) {
        Node& px = *self.parents[0];
        Node& pk = *self.parents[1];
        double* gx = px.requires_grad ? px.ensure_grad().data() : nullptr;
        double* gk = pk.requires_grad ? pk.ensure_grad().data() : nullptr;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t o = 0; o < cout; ++o) {
            const double* gout = self.grad.data() + (b * cout + o) * out_len;
            for (std::size_t c = 0; c < cin; ++c) {
              const double* src = px.value.data() + (b * cin + c) * length;
              double* gsrc = gx ? gx + (b * cin + c) * length : nullptr;
              for (std::size_t w = 0; w < width; ++w) {
                const std::size_t ki = (o * cin + c) * width + w;
                const double k = pk.value[ki];
                const auto [lo, hi] = valid_range(w, stride, padding, length, out_len);
                const std::size_t offset = w - padding;
                double acc = 0.0;
                for (std::size_t t = lo; t < hi; ++t) {
                  const std::size_t idx = t * stride + offset;
                  acc += gout[t] * src[idx];
                  if (gsrc) gsrc[idx] += gout[t] * k;
                }
                if (gk) gk[ki] += acc;
              }
            }
          }
      });
}

Tensor maxpool1d(const Tensor& x, std::size_t window, std::size_t stride) {
  require_rank(x, 3, "maxpool1d");
  if (window == 0 || stride == 0) throw ShapeError("maxpool1d: window and stride must be >= 1");
  const std::size_t rows = x.dim(0) * x.dim(1), length = x.dim(2);
  if (window > length) {
    throw ShapeError("maxpool1d: window " + std::to_string(window) +
                     " longer than input " + std::to_string(length));
  }
  const std::size_t out_len = (length - window) / stride + 1;
  std::vector<double> out(rows * out_len);
  std::vector<std::size_t> argmax(rows * out_len);
  const auto in = x.values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < out_len; ++t) {
      std::size_t best = r * length + t * stride;
      for (std::size_t w = 1; w < window; ++w) {
        const std::size_t idx = r * length + t * stride + w;
        if (in[idx] > in[best]) best = idx;
      }
      out[r * out_len + t] = in[best];
      argmax[r * out_len + t] = best;
    }
  return make_result({x.dim(0), x.dim(1), out_len}, std::move(out), {x.node_ptr()},
                     [argmax = std::move(argmax)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
                     });
}

Tensor dropout(const Tensor& x, double rate, bool training, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ShapeError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  Rng rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * mask[i];
  return make_result(x.shape(), std::move(out), {x.node_ptr()},
                     [mask = std::move(mask)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
                     });
}

}  // namespace somnoseq
