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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "somnoseq/errors.h"
#include "somnoseq/metrics.h"
#include "somnoseq/rng.h"
#include "support/oracles.h"

namespace somnoseq {
namespace {

ConfusionMatrix from_counts(const testing::Matrix5& m) {
  ConfusionMatrix cm;
  for (int a = 0; a < 5; ++a) {
    for (int p = 0; p < 5; ++p) cm.counts[a][p] = m[a][p];
  }
  return cm;
}

struct Published {
  double pre, rec, spe, f1;
};

void expect_published(const ConfusionMatrix& cm, const std::array<Published, 5>& rows,
                      double acc, double mf1, double kappa) {
  const auto pc = per_class_metrics(cm);
  for (int c = 0; c < 5; ++c) {
    EXPECT_NEAR(*pc[c].precision, rows[c].pre, 0.01) << "class " << c;
    EXPECT_NEAR(*pc[c].recall, rows[c].rec, 0.01) << "class " << c;
    EXPECT_NEAR(*pc[c].specificity, rows[c].spe, 0.01) << "class " << c;
    EXPECT_NEAR(*pc[c].f1, rows[c].f1, 0.01) << "class " << c;
  }
  const OverallMetrics o = overall_metrics(cm);
  EXPECT_NEAR(*o.accuracy, acc, 0.01);
  EXPECT_NEAR(*o.macro_f1, mf1, 0.01);
  EXPECT_NEAR(*o.kappa, kappa, 0.005);
}

TEST(PublishedFixtures, FpzCz) {
  const ConfusionMatrix cm = from_counts(testing::published_confusion_fpz_cz());
  EXPECT_EQ(cm.trace(), 34211);
  EXPECT_EQ(cm.total(), 40600);
  expect_published(cm,
                   {{{87.84, 90.58, 96.97, 89.19},
                     {50.05, 54.51, 96.08, 52.19},
                     {91.26, 82.71, 94.20, 86.77},
                     {81.69, 88.87, 96.90, 85.13},
                     {81.63, 88.71, 95.59, 85.02}}},
                   84.26, 79.66, 0.79);
}

TEST(PublishedFixtures, PzOz) {
  expect_published(from_counts(testing::published_confusion_pz_oz()),
                   {{{90.20, 90.33, 97.65, 90.27},
                     {45.84, 43.51, 96.36, 44.64},
                     {88.58, 83.07, 92.19, 85.74},
                     {78.48, 84.88, 96.36, 81.55},
                     {79.13, 87.00, 94.84, 82.88}}},
                   82.83, 77.02, 0.77);
}

TEST(PublishedFixtures, KappaHandEvaluated) {
  const ConfusionMatrix cm = from_counts(testing::published_confusion_fpz_cz());
  double pe = 0.0;
  for (int c = 0; c < 5; ++c) {
    pe += static_cast<double>(cm.row_sum(c)) * static_cast<double>(cm.col_sum(c));
  }
  pe /= 40600.0 * 40600.0;
  const double po = 34211.0 / 40600.0;
  EXPECT_NEAR(*overall_metrics(cm).kappa, (po - pe) / (1.0 - pe), 1e-12);
  EXPECT_NEAR(*overall_metrics(cm).kappa, 0.787, 5e-4);
}

TEST(Confusion, BasicCases) {
  const std::vector<int> y = {0, 1, 2, 3, 4, 4};
  const ConfusionMatrix d = confusion(y, y);
  for (int a = 0; a < 5; ++a) {
    for (int p = 0; p < 5; ++p) EXPECT_EQ(d.counts[a][p], a == p ? (a == 4 ? 2 : 1) : 0);
  }
  const std::vector<int> pred = {1};
  const std::vector<int> truth = {0};
  const ConfusionMatrix one = confusion(pred, truth);
  EXPECT_EQ(one.counts[0][1], 1);
  EXPECT_EQ(one.total(), 1);
  const std::vector<int> bad = {5};
  EXPECT_THROW(confusion(bad, truth), ShapeError);
  EXPECT_THROW(confusion(y, truth), ShapeError);
}

TEST(Confusion, AdditiveOverBatches) {
  Rng rng(1);
  std::vector<int> p(300), t(300);
  for (std::size_t i = 0; i < 300; ++i) {
    p[i] = static_cast<int>(rng.below(5));
    t[i] = static_cast<int>(rng.below(5));
  }
  ConfusionMatrix parts = confusion(std::span(p).first(120), std::span(t).first(120));
  parts += confusion(std::span(p).subspan(120), std::span(t).subspan(120));
  EXPECT_EQ(parts, confusion(p, t));
}

TEST(Metrics, PerfectDiagonal) {
  const std::vector<int> y = {0, 1, 2, 3, 4, 0, 2};
  const MetricsReport r = make_report(confusion(y, y));
  for (const auto& c : r.per_class) {
    EXPECT_DOUBLE_EQ(*c.precision, 100.0);
    EXPECT_DOUBLE_EQ(*c.recall, 100.0);
    EXPECT_DOUBLE_EQ(*c.specificity, 100.0);
    EXPECT_DOUBLE_EQ(*c.f1, 100.0);
  }
  EXPECT_DOUBLE_EQ(*r.overall.accuracy, 100.0);
  EXPECT_DOUBLE_EQ(*r.overall.kappa, 1.0);
}

TEST(Metrics, MatchOracleOnRandomMatrices) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    testing::Matrix5 m{};
    for (auto& row : m) {
      for (auto& v : row) v = 1 + static_cast<std::int64_t>(rng.below(500));
    }
    const ConfusionMatrix cm = from_counts(m);
    const auto pc = per_class_metrics(cm);
    const OverallMetrics o = overall_metrics(cm);
    const testing::OracleMetrics want = testing::oracle_metrics(m);
    for (int c = 0; c < 5; ++c) {
      EXPECT_NEAR(*pc[c].precision, want.precision[c], 1e-9);
      EXPECT_NEAR(*pc[c].recall, want.recall[c], 1e-9);
      EXPECT_NEAR(*pc[c].specificity, want.specificity[c], 1e-9);
      EXPECT_NEAR(*pc[c].f1, want.f1[c], 1e-9);
    }
    EXPECT_NEAR(*o.accuracy, want.accuracy, 1e-9);
    EXPECT_NEAR(*o.macro_f1, want.macro_f1, 1e-9);
    EXPECT_NEAR(*o.kappa, want.kappa, 1e-12);
    EXPECT_GE(*o.kappa, -1.0);
    EXPECT_LE(*o.kappa, 1.0);
  }
}

TEST(Metrics, KappaInvariantUnderClassRelabelling) {
  Rng rng(9);
  testing::Matrix5 m{};
  for (auto& row : m) {
    for (auto& v : row) v = static_cast<std::int64_t>(rng.below(100));
  }
  std::array<int, 5> perm = {3, 0, 4, 1, 2};
  testing::Matrix5 q{};
  for (int a = 0; a < 5; ++a) {
    for (int p = 0; p < 5; ++p) q[perm[a]][perm[p]] = m[a][p];
  }
  EXPECT_NEAR(*overall_metrics(from_counts(m)).kappa, *overall_metrics(from_counts(q)).kappa,
              1e-14);
}

TEST(Metrics, UndefinedValuesAreMarked) {
  // Class N3 never appears and is never predicted.
  const std::vector<int> truth = {0, 1, 2, 4, 0};
  const std::vector<int> pred = {0, 1, 2, 4, 1};
  const MetricsReport r = make_report(confusion(pred, truth));
  EXPECT_FALSE(r.per_class[3].precision.has_value());
  EXPECT_FALSE(r.per_class[3].recall.has_value());
  EXPECT_FALSE(r.per_class[3].f1.has_value());
  EXPECT_TRUE(r.per_class[3].specificity.has_value());
  EXPECT_FALSE(r.overall.macro_f1.has_value());
  EXPECT_DOUBLE_EQ(*r.overall.accuracy, 80.0);
  EXPECT_EQ(format_metric(std::nullopt), "n/a");
  EXPECT_EQ(format_metric(84.2635), "84.26");
  const auto j = report_to_json(r);
  EXPECT_TRUE(j["per_class"]["N3"]["precision"].is_null());
  EXPECT_TRUE(j["overall"]["macro_f1"].is_null());
  EXPECT_NE(format_report(r).find("n/a"), std::string::npos);

  // Everything in one class: p_e = 1, kappa undefined.
  const std::vector<int> same = {2, 2, 2};
  EXPECT_FALSE(overall_metrics(confusion(same, same)).kappa.has_value());
  EXPECT_FALSE(overall_metrics(ConfusionMatrix{}).accuracy.has_value());
}

TEST(Aggregation, PooledMatrixAndAccuracyIdentity) {
  Rng rng(21);
  std::vector<FoldPredictions> folds(4);
  std::vector<int> all_p, all_t;
  double correct = 0.0;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    folds[f].subjects = {"S" + std::to_string(f)};
    const std::size_t n = 10 + rng.below(50);
    for (std::size_t i = 0; i < n; ++i) {
      const int t = static_cast<int>(rng.below(5));
      const int p = rng.uniform() < 0.7 ? t : static_cast<int>(rng.below(5));
      folds[f].truth.push_back(t);
      folds[f].predicted.push_back(p);
      all_t.push_back(t);
      all_p.push_back(p);
      correct += p == t;
    }
  }
  const MetricsReport r = aggregate_folds(folds);
  EXPECT_EQ(r.matrix, confusion(all_p, all_t));
  EXPECT_NEAR(*r.overall.accuracy, 100.0 * correct / static_cast<double>(all_t.size()), 1e-12);

  folds[2].subjects.push_back("S0");
  EXPECT_THROW(aggregate_folds(folds), DataError);
}

TEST(Reporting, JsonAndTsvLayout) {
  const MetricsReport r = make_report(from_counts(testing::published_confusion_fpz_cz()));
  const auto j = report_to_json(r);
  EXPECT_EQ(j["format"], "somnoseq-report");
  EXPECT_EQ(j["total"], 40600);
  EXPECT_EQ(j["confusion"][0][1], 432);
  EXPECT_NEAR(j["overall"]["accuracy"].get<double>(), 84.2635, 1e-3);
  const std::string tsv = format_confusion_tsv(r.matrix);
  EXPECT_NE(tsv.find("7161\t432\t67\t27\t219"), std::string::npos);
  const std::string text = format_report(r);
  EXPECT_NE(text.find("87.84"), std::string::npos);
  EXPECT_NE(text.find("79.66"), std::string::npos);
}

}  // namespace
}  // namespace somnoseq
