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

#ifndef SOMNOSEQ_GRADCHECK_H_
#define SOMNOSEQ_GRADCHECK_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "somnoseq/tensor.h"

namespace somnoseq {

struct GradCheckOptions {
  double eps = 1e-6;
  // A coordinate whose forward and backward one-sided slopes differ by more
  // than kink_relative * max(|fwd|, |bwd|) and by more than kink_absolute
  // is re-probed with a step ten times smaller; if the gap does not shrink
  // accordingly the coordinate straddles a non-differentiable point (e.g.
  // ReLU at 0) and is skipped.
  double kink_relative = 1e-4;
  double kink_absolute = 1e-9;
  // When nonzero, each parameter is probed at most this many coordinates,
  // drawn without replacement from a generator seeded with `sample_seed`.
  std::size_t max_per_param = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates flagged as kinks
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

// Compares autodiff gradients of the scalar `f` with central differences
// (f(p + eps) - f(p - eps)) / (2 eps), elementwise over every parameter.
// Relative error is |a - n| / max(|a|, |n|, 1e-8). f must rebuild its graph
// from the current parameter values on every call. Throws NumericError if f
// is not finite.
GradCheckResult gradient_check(const std::function<Tensor()>& f,
                               std::span<Tensor> params,
                               const GradCheckOptions& options = {});

inline GradCheckResult gradient_check(const std::function<Tensor()>& f,
                                      std::span<Tensor> params, double eps) {
  GradCheckOptions options;
  options.eps = eps;
  return gradient_check(f, params, options);
}

}  // namespace somnoseq

#endif  // SOMNOSEQ_GRADCHECK_H_
