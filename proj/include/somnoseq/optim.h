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

#ifndef SOMNOSEQ_OPTIM_H_
#define SOMNOSEQ_OPTIM_H_

#include <cstdint>
#include <span>
#include <vector>

#include "somnoseq/tensor.h"

namespace somnoseq {

struct RmsPropOptions {
  double learning_rate = 1e-4;
  double decay = 0.9;
  double epsilon = 1e-10;
};

// One squared-gradient accumulator per parameter, same length as the
// parameter's value buffer.
struct OptimizerState {
  RmsPropOptions options;
  std::vector<std::vector<double>> accumulators;
  std::int64_t steps = 0;
};

//   acc <- decay * acc + (1 - decay) * g^2
//   p   <- p - lr * g / (sqrt(acc) + eps)
void rmsprop_update(std::span<double> param, std::span<const double> grad,
                    std::span<double> accumulator,
                    const RmsPropOptions& options);

// Applies one update to every parameter from its gradient buffer.
// Accumulators are created on first use.
void rmsprop_step(std::span<Tensor> params, OptimizerState& state);

}  // namespace somnoseq

#endif  // SOMNOSEQ_OPTIM_H_
