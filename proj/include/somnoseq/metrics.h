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

// Confusion matrices and the usual per-class and overall scoring metrics.
// Rows are the expert label, columns the prediction. Ratios with a zero
// denominator are reported as std::nullopt ("n/a"), never as 0.

#ifndef SOMNOSEQ_METRICS_H_
#define SOMNOSEQ_METRICS_H_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "somnoseq/pipeline.h"

namespace somnoseq {

struct ConfusionMatrix {
  std::array<std::array<std::int64_t, kNumStages>, kNumStages> counts{};

  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(int actual) const;
  std::int64_t col_sum(int predicted) const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const int> predicted,
                          std::span<const int> truth);

// All values in percent.
struct ClassMetrics {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> specificity;
  std::optional<double> f1;
};

struct OverallMetrics {
  std::optional<double> accuracy;  // percent
  std::optional<double> macro_f1;  // percent; n/a if any class F1 is n/a
  std::optional<double> kappa;     // in [-1, 1]
};

std::array<ClassMetrics, kNumStages> per_class_metrics(const ConfusionMatrix& cm);
OverallMetrics overall_metrics(const ConfusionMatrix& cm);

struct MetricsReport {
  ConfusionMatrix matrix;
  std::array<ClassMetrics, kNumStages> per_class;
  OverallMetrics overall;
};

MetricsReport make_report(const ConfusionMatrix& cm);

struct FoldPredictions {
  std::vector<std::string> subjects;  // subjects scored in this fold
  std::vector<int> predicted;
  std::vector<int> truth;
};

// Pools every fold into one matrix. Throws DataError if a subject appears
// in more than one fold.
MetricsReport aggregate_folds(std::span<const FoldPredictions> folds);

// Two-decimal rendering; n/a for undefined values.
std::string format_metric(const std::optional<double>& value);
// Confusion matrix with per-class metrics on the right, then overall scores.
std::string format_report(const MetricsReport& report);
nlohmann::json report_to_json(const MetricsReport& report);
// Tab-separated matrix with a header row and column.
std::string format_confusion_tsv(const ConfusionMatrix& cm);

}  // namespace somnoseq

#endif  // SOMNOSEQ_METRICS_H_
