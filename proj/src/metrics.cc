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

#include "somnoseq/metrics.h"

#include <cstdio>
#include <set>
#include <sstream>

#include "somnoseq/errors.h"

namespace somnoseq {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (const auto& row : counts) {
    for (auto v : row) n += v;
  }
  return n;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t n = 0;
  for (int i = 0; i < kNumStages; ++i) n += counts[i][i];
  return n;
}

std::int64_t ConfusionMatrix::row_sum(int actual) const {
  std::int64_t n = 0;
  for (auto v : counts.at(actual)) n += v;
  return n;
}

std::int64_t ConfusionMatrix::col_sum(int predicted) const {
  std::int64_t n = 0;
  for (const auto& row : counts) n += row.at(predicted);
  return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  for (int a = 0; a < kNumStages; ++a) {
    for (int p = 0; p < kNumStages; ++p) counts[a][p] += other.counts[a][p];
  }
  return *this;
}

ConfusionMatrix confusion(std::span<const int> predicted,
                          std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("confusion: " + std::to_string(predicted.size()) +
                     " predictions for " + std::to_string(truth.size()) + " labels");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int a = truth[i];
    const int p = predicted[i];
    if (a < 0 || a >= kNumStages || p < 0 || p >= kNumStages) {
      throw ShapeError("confusion: label out of range at index " + std::to_string(i));
    }
    ++cm.counts[a][p];
  }
  return cm;
}

namespace {

std::optional<double> percent(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::array<ClassMetrics, kNumStages> per_class_metrics(const ConfusionMatrix& cm) {
  std::array<ClassMetrics, kNumStages> out;
  const std::int64_t total = cm.total();
  for (int c = 0; c < kNumStages; ++c) {
    const std::int64_t tp = cm.counts[c][c];
    const std::int64_t fp = cm.col_sum(c) - tp;
    const std::int64_t fn = cm.row_sum(c) - tp;
    const std::int64_t tn = total - tp - fp - fn;
    ClassMetrics& m = out[c];
    m.precision = percent(tp, tp + fp);
    m.recall = percent(tp, tp + fn);
    m.specificity = percent(tn, tn + fp);
    if (m.precision && m.recall) {
      const double s = *m.precision + *m.recall;
      if (s > 0.0) m.f1 = 2.0 * *m.precision * *m.recall / s;
    }
  }
  return out;
}

OverallMetrics overall_metrics(const ConfusionMatrix& cm) {
  OverallMetrics out;
  const std::int64_t total = cm.total();
  out.accuracy = percent(cm.trace(), total);

  const auto per_class = per_class_metrics(cm);
  double f1_sum = 0.0;
  bool defined = true;
  for (const auto& m : per_class) {
    if (!m.f1) defined = false;
    else f1_sum += *m.f1;
  }
  if (defined) out.macro_f1 = f1_sum / kNumStages;

  if (total > 0) {
    const double n = static_cast<double>(total);
    double pe = 0.0;
    for (int c = 0; c < kNumStages; ++c) {
      pe += static_cast<double>(cm.row_sum(c)) * static_cast<double>(cm.col_sum(c));
    }
    pe /= n * n;
    const double po = static_cast<double>(cm.trace()) / n;
    if (pe < 1.0) out.kappa = (po - pe) / (1.0 - pe);
  }
  return out;
}

MetricsReport make_report(const ConfusionMatrix& cm) {
  return {cm, per_class_metrics(cm), overall_metrics(cm)};
}

MetricsReport aggregate_folds(std::span<const FoldPredictions> folds) {
  std::set<std::string> seen;
  ConfusionMatrix pooled;
  for (const auto& fold : folds) {
    for (const auto& subject : std::set<std::string>(fold.subjects.begin(),
                                                     fold.subjects.end())) {
      if (!seen.insert(subject).second) {
        throw DataError("subject '" + subject + "' appears in more than one fold");
      }
    }
    pooled += confusion(fold.predicted, fold.truth);
  }
  return make_report(pooled);
}

std::string format_metric(const std::optional<double>& value) {
  if (!value) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *value);
  return buf;
}

std::string format_report(const MetricsReport& report) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-6s%8s%8s%8s%8s%8s | %7s%7s%7s%7s\n", "",
                "W", "N1", "N2", "N3", "REM", "Pre", "Rec", "Spe", "F1");
  out << line;
  for (int a = 0; a < kNumStages; ++a) {
    std::snprintf(line, sizeof line, "%-6s", std::string(stage_class_name(a)).c_str());
    out << line;
    for (int p = 0; p < kNumStages; ++p) {
      std::snprintf(line, sizeof line, "%8lld",
                    static_cast<long long>(report.matrix.counts[a][p]));
      out << line;
    }
    const auto& m = report.per_class[a];
    std::snprintf(line, sizeof line, " | %7s%7s%7s%7s\n", format_metric(m.precision).c_str(),
                  format_metric(m.recall).c_str(), format_metric(m.specificity).c_str(),
                  format_metric(m.f1).c_str());
    out << line;
  }
  out << "\nepochs " << report.matrix.total() << "\n";
  out << "ACC    " << format_metric(report.overall.accuracy) << "\n";
  out << "MF1    " << format_metric(report.overall.macro_f1) << "\n";
  out << "kappa  " << format_metric(report.overall.kappa) << "\n";
  return out.str();
}

nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["format"] = "somnoseq-report";
  j["version"] = 1;
  j["labels"] = nlohmann::json::array();
  for (int c = 0; c < kNumStages; ++c) j["labels"].push_back(stage_class_name(c));
  j["confusion"] = nlohmann::json::array();
  for (const auto& row : report.matrix.counts) j["confusion"].push_back(row);
  j["total"] = report.matrix.total();
  j["per_class"] = nlohmann::json::object();
  for (int c = 0; c < kNumStages; ++c) {
    const auto& m = report.per_class[c];
    j["per_class"][std::string(stage_class_name(c))] = {{"precision", optional_json(m.precision)},
                                           {"recall", optional_json(m.recall)},
                                           {"specificity", optional_json(m.specificity)},
                                           {"f1", optional_json(m.f1)}};
  }
  j["overall"] = {{"accuracy", optional_json(report.overall.accuracy)},
                  {"macro_f1", optional_json(report.overall.macro_f1)},
                  {"kappa", optional_json(report.overall.kappa)}};
  return j;
}

std::string format_confusion_tsv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "actual\\predicted";
  for (int p = 0; p < kNumStages; ++p) out << '\t' << stage_class_name(p);
  out << '\n';
  for (int a = 0; a < kNumStages; ++a) {
    out << stage_class_name(a);
    for (int p = 0; p < kNumStages; ++p) out << '\t' << cm.counts[a][p];
    out << '\n';
  }
  return out.str();
}

}  // namespace somnoseq
