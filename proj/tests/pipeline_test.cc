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
#include <set>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "somnoseq/errors.h"
#include "somnoseq/pipeline.h"
#include "somnoseq/rng.h"
#include "support/synthetic.h"

namespace somnoseq {
namespace {

std::vector<double> ramp(std::size_t n) {
  std::vector<double> x(n);
  std::iota(x.begin(), x.end(), 0.0);
  return x;
}

TEST(StageMapping, TotalOnScoredLabels) {
  EXPECT_EQ(to_stage_class(StageLabel::kWake), StageClass::kW);
  EXPECT_EQ(to_stage_class(StageLabel::kStage1), StageClass::kN1);
  EXPECT_EQ(to_stage_class(StageLabel::kStage2), StageClass::kN2);
  EXPECT_EQ(to_stage_class(StageLabel::kStage3), StageClass::kN3);
  EXPECT_EQ(to_stage_class(StageLabel::kStage4), StageClass::kN3);
  EXPECT_EQ(to_stage_class(StageLabel::kRem), StageClass::kRem);
  EXPECT_FALSE(to_stage_class(StageLabel::kMovement));
  EXPECT_FALSE(to_stage_class(StageLabel::kUnscored));
}

TEST(Segment, ExcludesMovementAndMergesStage4) {
  const auto signal = ramp(9000);
  const std::vector<StageAnnotation> ann = {
      {0, 30, StageLabel::kWake}, {30, 30, StageLabel::kStage4}, {60, 30, StageLabel::kMovement}};
  const SegmentResult r = segment_epochs(signal, 100.0, ann, "S1");
  ASSERT_EQ(r.epochs.size(), 2u);
  EXPECT_EQ(r.epochs[0].label, StageClass::kW);
  EXPECT_EQ(r.epochs[1].label, StageClass::kN3);
  EXPECT_EQ(r.epochs[1].position, 1);
  EXPECT_EQ(r.epochs[1].subject_id, "S1");
  EXPECT_EQ(r.excluded_unscored, 1u);
}

TEST(Segment, OneAnnotationOneEpoch) {
  const auto signal = ramp(3000);
  const std::vector<StageAnnotation> ann = {{0, 30, StageLabel::kStage2}};
  const SegmentResult r = segment_epochs(signal, 100.0, ann);
  ASSERT_EQ(r.epochs.size(), 1u);
  EXPECT_EQ(r.epochs[0].samples.size(), 3000u);
}

TEST(Segment, ConcatenationReproducesAnnotatedPrefix) {
  const auto signal = ramp(12 * 60);
  const std::vector<StageAnnotation> ann = {{0, 90, StageLabel::kStage2},
                                            {90, 60, StageLabel::kRem}};
  const SegmentResult r = segment_epochs(signal, 2.0, ann);
  std::vector<double> joined;
  for (const auto& e : r.epochs) joined.insert(joined.end(), e.samples.begin(), e.samples.end());
  EXPECT_EQ(joined, std::vector<double>(signal.begin(), signal.begin() + 300));
}

TEST(Segment, Errors) {
  const auto signal = ramp(3000);
  const std::vector<StageAnnotation> ann = {{0, 30, StageLabel::kWake}};
  EXPECT_THROW(segment_epochs(signal, 33.35, ann), DataError);
  const std::vector<StageAnnotation> too_long = {{0, 60, StageLabel::kWake}};
  EXPECT_THROW(segment_epochs(signal, 100.0, too_long), DataError);
  const SegmentResult r = segment_epochs(signal, 100.0, too_long, "", LengthPolicy::kTruncate);
  EXPECT_EQ(r.epochs.size(), 1u);
  EXPECT_EQ(r.dropped_past_signal, 1u);
  const std::vector<StageAnnotation> odd = {{0, 45, StageLabel::kWake}};
  EXPECT_THROW(segment_epochs(signal, 100.0, odd), DataError);
}

TEST(Normalize, PopulationStd) {
  const auto y = normalize_epoch(std::vector<double>{1, 2, 3});
  EXPECT_NEAR(y[0], -1.224744871391589, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], 1.224744871391589, 1e-12);
}

TEST(Normalize, ConstantEpochBecomesZero) {
  EXPECT_EQ(normalize_epoch(std::vector<double>{5, 5, 5}), (std::vector<double>{0, 0, 0}));
}

TEST(Normalize, MomentsAndIdempotence) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(300);
    for (double& v : x) v = 40.0 * rng.normal() + rng.uniform(-100, 100);
    const auto y = normalize_epoch(x);
    double mean = 0, var = 0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    for (double v : y) var += (v - mean) * (v - mean);
    var /= static_cast<double>(y.size());
    EXPECT_LE(std::abs(mean), 1e-6);
    EXPECT_LE(std::abs(std::sqrt(var) - 1.0), 1e-6);
    const auto z = normalize_epoch(y);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(z[i], y[i], 1e-6);
  }
}

TEST(TrimWake, KeepsMarginAroundSleep) {
  std::vector<int> labels(200, 0);
  for (int i = 100; i < 110; ++i) labels[static_cast<std::size_t>(i)] = 2;
  const auto epochs = testing::synthetic_epochs(labels, 6, 1);
  const auto kept = trim_wake(epochs, 30.0);
  ASSERT_EQ(kept.size(), 60u + 10u + 60u);
  EXPECT_EQ(kept.front().position, 40);
  EXPECT_EQ(kept.back().position, 169);
}

std::vector<LabeledEpoch> labeled(const std::vector<int>& labels) {
  return testing::synthetic_epochs(labels, 6, 7);
}

TEST(Sequences, WindowArithmetic) {
  EXPECT_EQ(make_sequences(labeled(std::vector<int>(25, 0)), 10).size(), 2u);
  EXPECT_THROW(make_sequences(labeled({0}), 0), ConfigError);
}

TEST(Sequences, ShiftByOneFraming) {
  const auto seqs = make_sequences(labeled({2, 2, 4}), 3);
  ASSERT_EQ(seqs.size(), 1u);
  EXPECT_EQ(seqs[0].decoder_inputs, (std::vector<int>{kSodSymbol, 2, 2}));
  EXPECT_EQ(seqs[0].targets, (std::vector<int>{2, 2, 4, kEodSymbol}));
  EXPECT_EQ(seqs[0].teacher_inputs(), (std::vector<int>{kSodSymbol, 2, 2, 4}));
}

TEST(Sequences, MaxtimeOne) {
  const auto seqs = make_sequences(labeled({3}), 1);
  ASSERT_EQ(seqs.size(), 1u);
  EXPECT_EQ(seqs[0].decoder_inputs, (std::vector<int>{kSodSymbol}));
  EXPECT_EQ(seqs[0].targets, (std::vector<int>{3, kEodSymbol}));
}

TEST(Sequences, FlattenedTargetsReproduceLabels) {
  Rng rng(11);
  std::vector<int> labels(47);
  for (int& l : labels) l = static_cast<int>(rng.below(5));
  const auto seqs = make_sequences(labeled(labels), 5);
  std::vector<int> flat;
  for (const auto& s : seqs) {
    EXPECT_EQ(s.targets.back(), kEodSymbol);
    flat.insert(flat.end(), s.targets.begin(), s.targets.end() - 1);
    // decoder_inputs == SOD + targets without the last label and EOD
    std::vector<int> shifted = {kSodSymbol};
    shifted.insert(shifted.end(), s.targets.begin(), s.targets.end() - 2);
    EXPECT_EQ(s.decoder_inputs, shifted);
  }
  EXPECT_EQ(flat, std::vector<int>(labels.begin(), labels.begin() + 45));
}

TEST(Sequences, ScoringWindowsCoverEveryEpochOnce) {
  for (std::size_t n : {10u, 23u, 30u, 31u}) {
    const auto windows = scoring_windows(n, 10);
    std::vector<int> hits(n, 0);
    for (const auto& w : windows) {
      for (std::size_t i = w.emit_from; i < w.start + 10; ++i) ++hits[i];
    }
    EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; })) << n;
  }
  EXPECT_TRUE(scoring_windows(9, 10).empty());
}

TEST(Folds, OneSubjectPerFold) {
  std::vector<std::string> ids;
  for (int i = 0; i < 20; ++i) ids.push_back("S" + std::to_string(i));
  const FoldPlan plan = split_folds(ids, 20, 1);
  for (int f = 0; f < 20; ++f) EXPECT_EQ(plan.test_units(f).size(), 1u);
}

TEST(Folds, DeterministicBalancedPartition) {
  const std::vector<std::string> ids = {"e", "a", "c", "b", "d", "a"};
  const FoldPlan p1 = split_folds(ids, 2, 9);
  const FoldPlan p2 = split_folds(std::vector<std::string>(ids.rbegin(), ids.rend()), 2, 9);
  EXPECT_EQ(p1.assignment, p2.assignment);
  EXPECT_EQ(p1.assignment.size(), 5u);
  const auto a = p1.test_units(0).size(), b = p1.test_units(1).size();
  EXPECT_LE(std::max(a, b) - std::min(a, b), 1u);
  for (int f = 0; f < 2; ++f) {
    const auto test = p1.test_units(f);
    const auto train = p1.train_units(f);
    for (const auto& t : test) EXPECT_EQ(std::count(train.begin(), train.end(), t), 0);
    EXPECT_EQ(test.size() + train.size(), 5u);
  }
  EXPECT_THROW(split_folds(ids, 6, 1), ConfigError);
}

TEST(Folds, FileRoundTrip) {
  testing::TempDir dir("folds");
  const std::vector<std::string> ids = {"SC400", "SC401", "SC402"};
  const FoldPlan plan = split_folds(ids, 2, 4);
  write_fold_plan(dir.path() / "folds.tsv", plan);
  const FoldPlan back = read_fold_plan(dir.path() / "folds.tsv");
  EXPECT_EQ(back.assignment, plan.assignment);
  EXPECT_EQ(back.k, plan.k);
}

TEST(Smote, InterpolationEndpoints) {
  const std::vector<double> x = {1, 2, 3}, y = {4, 0, -1};
  EXPECT_EQ(smote_interpolate(x, y, 0.0), x);
  EXPECT_EQ(smote_interpolate(x, y, 1.0), y);
}

TEST(Smote, CountContract) {
  std::vector<int> labels(100, 0);
  labels.insert(labels.end(), 10, 1);
  const auto epochs = testing::synthetic_epochs(labels, 12, 5);
  ClassCounts target{};
  target[0] = 100;
  target[1] = 100;
  const SmoteResult r = smote_oversample(epochs, target, 5, 1);
  const ClassCounts counts = count_classes(r.epochs);
  EXPECT_EQ(counts[0], 100u);
  EXPECT_EQ(counts[1], 100u);
  EXPECT_EQ(r.epochs.size() - epochs.size(), 90u);
  for (std::size_t i = 0; i < epochs.size(); ++i) EXPECT_EQ(r.epochs[i].samples, epochs[i].samples);
}

TEST(Smote, SyntheticPointsLieOnParentSegment) {
  std::vector<int> labels(60, 2);
  labels.insert(labels.end(), 7, 1);
  labels.insert(labels.end(), 12, 3);
  const auto epochs = testing::synthetic_epochs(labels, 20, 8);
  const SmoteResult r = smote_oversample(epochs, balanced_targets(epochs), 3, 2);
  ASSERT_EQ(r.parents.size(), r.epochs.size() - epochs.size());
  auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  for (std::size_t j = 0; j < r.parents.size(); ++j) {
    const auto& s = r.epochs[epochs.size() + j].samples;
    const auto& x = epochs[r.parents[j].first].samples;
    const auto& nn = epochs[r.parents[j].second].samples;
    EXPECT_NEAR(dist(s, x) + dist(s, nn), dist(x, nn), 1e-6);
    EXPECT_EQ(epochs[r.parents[j].first].label, epochs[r.parents[j].second].label);
    EXPECT_GE(r.weights[j], 0.0);
    EXPECT_LE(r.weights[j], 1.0);
  }
}

TEST(Smote, NeighborsAreNearest) {
  // One base with neighbors at distance 1, 2, 3, 10 in sample space; with
  // k = 2 every synthetic sample must sit between the base and one of the
  // two closest points.
  std::vector<LabeledEpoch> epochs(5);
  const double offsets[] = {0, 1, 2, 3, 10};
  for (int i = 0; i < 5; ++i) {
    epochs[i].samples = {offsets[i], 0.0};
    epochs[i].label = StageClass::kN1;
  }
  LabeledEpoch w;
  w.samples = {0, 0};
  w.label = StageClass::kW;
  std::vector<LabeledEpoch> all(6, w);
  std::copy(epochs.begin(), epochs.end(), all.begin());
  ClassCounts target{};
  target[1] = 6;
  const SmoteResult r = smote_oversample(all, target, 2, 3);
  ASSERT_EQ(r.parents.size(), 1u);
  EXPECT_EQ(r.parents[0].first, 0u);
  EXPECT_TRUE(r.parents[0].second == 1u || r.parents[0].second == 2u);
}

TEST(Smote, SingleMemberClassIsDuplicated) {
  std::vector<int> labels(10, 0);
  labels.push_back(4);
  const auto epochs = testing::synthetic_epochs(labels, 6, 2);
  ClassCounts target{};
  target[0] = 10;
  target[4] = 4;
  const SmoteResult r = smote_oversample(epochs, target, 5, 1);
  EXPECT_EQ(r.duplicated, 3u);
  EXPECT_GE(r.warnings, 1u);
  EXPECT_EQ(count_classes(r.epochs)[4], 4u);
}

TEST(Smote, DeterministicForSeed) {
  std::vector<int> labels(30, 0);
  labels.insert(labels.end(), 6, 3);
  const auto epochs = testing::synthetic_epochs(labels, 10, 4);
  const auto a = smote_oversample(epochs, balanced_targets(epochs), 5, 77);
  const auto b = smote_oversample(epochs, balanced_targets(epochs), 5, 77);
  ASSERT_EQ(a.epochs.size(), b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) EXPECT_EQ(a.epochs[i].samples, b.epochs[i].samples);
}

}  // namespace
}  // namespace somnoseq
