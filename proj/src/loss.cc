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

#include "somnoseq/loss.h"

#include <string>

#include "somnoseq/errors.h"
#include "somnoseq/pipeline.h"

namespace somnoseq {

LossKind parse_loss_kind(std::string_view name) {
  if (name == "mfe") return LossKind::kMfe;
  if (name == "msfe") return LossKind::kMsfe;
  if (name == "mse") return LossKind::kMse;
  throw ConfigError("unknown loss '" + std::string(name) + "' (expected mfe, msfe or mse)");
}

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::kMfe: return "mfe";
    case LossKind::kMsfe: return "msfe";
    case LossKind::kMse: return "mse";
  }
  return "?";
}

std::size_t ClasswiseError::total() const {
  std::size_t n = 0;
  for (std::size_t c : counts) n += c;
  return n;
}

ClasswiseError per_class_error(const Tensor& probs, const Tensor& targets,
                               std::span<const int> class_of_sample,
                               std::size_t n_classes) {
  if (probs.rank() != 2 || probs.shape() != targets.shape()) {
    throw ShapeError("per_class_error: probs " + shape_string(probs.shape()) +
                     " vs targets " + shape_string(targets.shape()));
  }
  const std::size_t n = probs.dim(0);
  if (class_of_sample.size() != n) {
    throw ShapeError("per_class_error: " + std::to_string(class_of_sample.size()) +
                     " class ids for " + std::to_string(n) + " samples");
  }
  std::vector<std::vector<std::size_t>> members(n_classes);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = class_of_sample[i];
    if (c < 0 || static_cast<std::size_t>(c) >= n_classes) {
      throw ShapeError("per_class_error: class id " + std::to_string(c) + " out of range");
    }
    members[static_cast<std::size_t>(c)].push_back(i);
  }
  ClasswiseError out;
  if (n == 0) {
    out.per_class.assign(n_classes, Tensor::scalar(0.0));
    out.counts.assign(n_classes, 0);
    return out;
  }
  const Tensor sample_error =
      reshape(mean_axis(square(sub(probs, targets)), 1), {n, 1});
  for (std::size_t c = 0; c < n_classes; ++c) {
    out.counts.push_back(members[c].size());
    out.per_class.push_back(members[c].empty()
                                ? Tensor::scalar(0.0)
                                : mean(gather_rows(sample_error, members[c])));
  }
  return out;
}

Tensor mfe(const ClasswiseError& errors) {
  if (errors.per_class.empty()) return Tensor::scalar(0.0);
  return add_n(errors.per_class);
}

Tensor msfe(const ClasswiseError& errors) {
  if (errors.per_class.empty()) return Tensor::scalar(0.0);
  std::vector<Tensor> squares;
  for (const auto& l : errors.per_class) squares.push_back(square(l));
  return add_n(squares);
}

Tensor mse(const ClasswiseError& errors) {
  const std::size_t total = errors.total();
  if (total == 0) return Tensor::scalar(0.0);
  std::vector<Tensor> terms;
  for (std::size_t c = 0; c < errors.per_class.size(); ++c) {
    terms.push_back(scale(errors.per_class[c], static_cast<double>(errors.counts[c]) /
                                                   static_cast<double>(total)));
  }
  return add_n(terms);
}

Tensor classwise_loss(LossKind kind, const ClasswiseError& errors) {
  switch (kind) {
    case LossKind::kMfe: return mfe(errors);
    case LossKind::kMsfe: return msfe(errors);
    case LossKind::kMse: return mse(errors);
  }
  throw ConfigError("unknown loss kind");
}

Tensor l2_penalty(std::span<const Tensor> weights, double beta) {
  if (!(beta >= 0.0)) throw ConfigError("l2_beta must be non-negative");
  std::vector<Tensor> terms;
  for (const auto& w : weights) terms.push_back(sum(square(w)));
  if (terms.empty()) return Tensor::scalar(0.0);
  return scale(add_n(terms), beta);
}

Tensor one_hot(std::span<const int> labels, std::size_t n_classes) {
  std::vector<double> values(labels.size() * n_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
      throw ShapeError("one_hot: label " + std::to_string(labels[i]) + " out of range");
    }
    values[i * n_classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return Tensor::from({labels.size(), n_classes}, std::move(values));
}

SequenceLoss sequence_loss(const std::vector<Tensor>& logits,
                           const std::vector<std::vector<int>>& targets,
                           const SequenceLossOptions& options) {
  if (logits.empty()) throw ShapeError("sequence_loss: no decode steps");
  const std::size_t rows = logits[0].dim(0);
  if (targets.size() != rows) {
    throw ShapeError("sequence_loss: " + std::to_string(targets.size()) +
                     " target sequences for " + std::to_string(rows) + " rows");
  }
  for (const auto& t : targets) {
    if (t.size() != logits.size()) throw ShapeError("sequence_loss: target length mismatch");
  }

  SequenceLoss out;
  std::vector<Tensor> kept;
  std::vector<int> classes;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    if (logits[t].rank() != 2 || logits[t].dim(0) != rows ||
        logits[t].dim(1) != static_cast<std::size_t>(kNumOutputs)) {
      throw ShapeError("sequence_loss: logits " + shape_string(logits[t].shape()));
    }
    std::vector<std::size_t> keep;
    for (std::size_t s = 0; s < rows; ++s) {
      const int y = targets[s][t];
      if (y < 0 || y >= kNumOutputs) {
        throw ShapeError("sequence_loss: target " + std::to_string(y) + " out of range");
      }
      if (y == kEodOutput && !options.eod_as_class) continue;
      keep.push_back(s);
      classes.push_back(y);
      if (y == kEodOutput) continue;
      const auto z = logits[t].values().subspan(s * kNumOutputs, kNumStages);
      int best = 0;
      for (int k = 1; k < kNumStages; ++k) {
        if (z[k] > z[best]) best = k;
      }
      ++out.stage_positions;
      if (best == y) ++out.stage_correct;
    }
    if (keep.empty()) continue;
    kept.push_back(keep.size() == rows ? logits[t] : gather_rows(logits[t], keep));
  }
  if (kept.empty()) {
    out.loss = Tensor::scalar(0.0);
    return out;
  }
  const Tensor probs = softmax(concat(kept, 0), 1);
  const std::size_t n_classes = options.eod_as_class ? kNumOutputs : kNumStages;
  out.loss = classwise_loss(options.kind,
                            per_class_error(probs, one_hot(classes, kNumOutputs),
                                            classes, n_classes));
  return out;
}

}  // namespace somnoseq
