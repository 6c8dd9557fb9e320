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

#include "somnoseq/optim.h"

#include <cmath>
#include <string>

namespace somnoseq {

void rmsprop_update(std::span<double> param, std::span<const double> grad,
                    std::span<double> accumulator,
                    const RmsPropOptions& options) {
  if (param.size() != grad.size() || param.size() != accumulator.size()) {
    throw ShapeError("rmsprop_update: parameter, gradient and accumulator sizes differ");
  }
  const double keep = options.decay;
  const double mix = 1.0 - options.decay;
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    accumulator[i] = keep * accumulator[i] + mix * g * g;
    param[i] -= options.learning_rate * g / (std::sqrt(accumulator[i]) + options.epsilon);
  }
}

void rmsprop_step(std::span<Tensor> params, OptimizerState& state) {
  if (state.accumulators.empty()) {
    for (const auto& p : params) state.accumulators.emplace_back(p.numel(), 0.0);
  }
  if (state.accumulators.size() != params.size()) {
    throw ShapeError("optimizer state tracks " +
                     std::to_string(state.accumulators.size()) +
                     " parameters, given " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    rmsprop_update(params[i].values(), params[i].grad(), state.accumulators[i],
                   state.options);
  }
  ++state.steps;
}

}  // namespace somnoseq
