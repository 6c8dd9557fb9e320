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

// Class-balanced sequence losses. MFE sums the mean error of every class
// present in the batch, so small classes weigh as much as large ones; MSFE
// sums the squares of those means.

#ifndef SOMNOSEQ_LOSS_H_
#define SOMNOSEQ_LOSS_H_

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "somnoseq/tensor.h"

namespace somnoseq {

enum class LossKind { kMfe, kMsfe, kMse };

LossKind parse_loss_kind(std::string_view name);  // mfe | msfe | mse
std::string loss_kind_name(LossKind kind);

struct ClasswiseError {
  std::vector<Tensor> per_class;    // scalar l(c), zero when the class is absent
  std::vector<std::size_t> counts;  // samples per class
  std::size_t total() const;
};

// Per-sample error is the mean over the C output columns of (y - yhat)^2;
// l(c) averages it over the samples whose true class is c.
ClasswiseError per_class_error(const Tensor& probs, const Tensor& targets,
                               std::span<const int> class_of_sample,
                               std::size_t n_classes);

Tensor mfe(const ClasswiseError& errors);
Tensor msfe(const ClasswiseError& errors);
// Plain MSE written as the count-weighted average of the class errors.
Tensor mse(const ClasswiseError& errors);
Tensor classwise_loss(LossKind kind, const ClasswiseError& errors);

// beta * sum of squared entries over all given tensors.
Tensor l2_penalty(std::span<const Tensor> weights, double beta);

Tensor one_hot(std::span<const int> labels, std::size_t n_classes);

struct SequenceLossOptions {
  LossKind kind = LossKind::kMfe;
  // When false, EOD positions are dropped from the loss entirely.
  bool eod_as_class = true;
};

struct SequenceLoss {
  Tensor loss;
  std::size_t stage_positions = 0;  // non-EOD targets
  std::size_t stage_correct = 0;    // argmax over stage outputs matches
};

// logits[t] is [S, kNumOutputs] for decode step t; targets[s][t] holds
// output indices (stages 0..4, EOD = kEodOutput).
SequenceLoss sequence_loss(const std::vector<Tensor>& logits,
                           const std::vector<std::vector<int>>& targets,
                           const SequenceLossOptions& options);

}  // namespace somnoseq

#endif  // SOMNOSEQ_LOSS_H_
