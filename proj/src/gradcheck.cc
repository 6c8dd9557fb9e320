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

#include "somnoseq/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "somnoseq/rng.h"

namespace somnoseq {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("gradient_check: f is not finite");
  return v;
}

}  // namespace

GradCheckResult gradient_check(const std::function<Tensor()>& f,
                               std::span<Tensor> params,
                               const GradCheckOptions& options) {
  if (!(options.eps > 0.0)) throw ShapeError("gradient_check: eps must be positive");
  for (auto& p : params) p.zero_grad();
  const Tensor loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("gradient_check: f is not finite");
  backward(loss);
  const double f0 = loss.item();

  std::vector<std::vector<double>> analytic;
  for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  GradCheckResult result;
  const double eps = options.eps;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].values();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_per_param > 0 && coords.size() > options.max_per_param) {
      Rng rng(derive_seed(options.sample_seed, static_cast<std::uint64_t>(k)));
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(options.max_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double fp = evaluate(f);
      values[i] = saved - eps;
      const double fm = evaluate(f);
      values[i] = saved;

      const double forward = (fp - f0) / eps;
      const double backward_slope = (f0 - fm) / eps;
      const double jump = std::abs(forward - backward_slope);
      if (jump > options.kink_relative *
                     std::max(std::abs(forward), std::abs(backward_slope)) &&
          jump > options.kink_absolute) {
        // Smooth curvature shrinks the slope gap linearly with the step; a
        // kink inside the bracket does not.
        const double small = eps / 10.0;
        values[i] = saved + small;
        const double fp_small = evaluate(f);
        values[i] = saved - small;
        const double fm_small = evaluate(f);
        values[i] = saved;
        const double jump_small =
            std::abs((fp_small - f0) / small - (f0 - fm_small) / small);
        if (jump_small > 0.2 * jump) {
          ++result.skipped;
          continue;
        }
      }
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.checked;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_param = k;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace somnoseq
