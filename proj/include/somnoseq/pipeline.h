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

// Epoch preparation: segmentation of a channel into labeled 30-s windows,
// per-epoch standardization, decoder framing, subject-wise fold plans and
// SMOTE oversampling.

#ifndef SOMNOSEQ_PIPELINE_H_
#define SOMNOSEQ_PIPELINE_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "somnoseq/edf.h"

namespace somnoseq {

// AASM classes. Values double as class indices everywhere.
enum class StageClass : std::uint8_t { kW = 0, kN1 = 1, kN2 = 2, kN3 = 3, kRem = 4 };

inline constexpr int kNumStages = 5;
// Decoder control symbols share the symbol space with the stage classes.
inline constexpr int kSodSymbol = 5;
inline constexpr int kEodSymbol = 6;
inline constexpr int kVocabularySize = 7;
// Output units: the five stages plus EOD (at index kNumStages).
inline constexpr int kNumOutputs = kNumStages + 1;
inline constexpr int kEodOutput = kNumStages;

inline constexpr double kEpochSeconds = 30.0;

// R&K to AASM: stages 3 and 4 merge into N3; M and ? have no class.
std::optional<StageClass> to_stage_class(StageLabel label);
std::string_view stage_class_name(int cls);
std::optional<StageClass> parse_stage_class(std::string_view name);

struct LabeledEpoch {
  std::vector<double> samples;
  StageClass label = StageClass::kW;
  std::string subject_id;
  std::int64_t position = 0;  // 30-s window index in the recording; -1 if synthetic
  bool synthetic = false;
};

enum class LengthPolicy {
  kStrict,    // annotation past the end of the signal is an error
  kTruncate,  // drop windows past the end of the signal
};

struct SegmentResult {
  std::vector<LabeledEpoch> epochs;
  std::size_t excluded_unscored = 0;  // windows labeled M or ?
  std::size_t dropped_past_signal = 0;
};

SegmentResult segment_epochs(std::span<const double> signal,
                             double sampling_rate,
                             std::span<const StageAnnotation> annotations,
                             std::string_view subject_id = {},
                             LengthPolicy policy = LengthPolicy::kStrict);

inline constexpr double kNormalizeEpsilon = 1e-8;

// (x - mean) / max(population std, 1e-8).
std::vector<double> normalize_epoch(std::span<const double> samples);
void normalize_epochs(std::span<LabeledEpoch> epochs);

// Keeps only epochs within `minutes` of the first and last sleep epoch.
// Epochs must come from a single recording.
std::vector<LabeledEpoch> trim_wake(std::vector<LabeledEpoch> epochs,
                                    double minutes);

struct EpochSequence {
  std::vector<std::size_t> inputs;  // indices into the source epoch list
  std::vector<int> decoder_inputs;  // SOD, label_1 .. label_{T-1}
  std::vector<int> targets;         // label_1 .. label_T, EOD

  // Decoder inputs for the full teacher-forced pass, which also consumes
  // label_T to produce the EOD step: SOD, label_1 .. label_T.
  std::vector<int> teacher_inputs() const;
};

// Frames consecutive non-overlapping windows of one recording's epochs; a
// short remainder is dropped. Throws ConfigError for maxtime == 0.
std::vector<EpochSequence> make_sequences(std::span<const LabeledEpoch> epochs,
                                          std::size_t maxtime);

// Sequences of synthetic epochs, grouped by class in list order.
std::vector<EpochSequence> make_class_sequences(
    std::span<const LabeledEpoch> epochs, std::size_t maxtime);

// Window placement covering every epoch of a recording at inference time:
// non-overlapping windows plus, when needed, one final window aligned to the
// end. Each window contributes positions [emit_from, start + maxtime).
struct ScoringWindow {
  std::size_t start = 0;
  std::size_t emit_from = 0;
};
std::vector<ScoringWindow> scoring_windows(std::size_t n_epochs,
                                           std::size_t maxtime);

struct FoldPlan {
  int k = 0;
  std::map<std::string, int> assignment;  // unit id -> fold

  std::vector<std::string> test_units(int fold) const;
  std::vector<std::string> train_units(int fold) const;
  bool is_test(const std::string& unit, int fold) const;
};

// Deterministic for a fixed seed and independent of input order; fold sizes
// differ by at most one unit. Duplicate ids are collapsed.
FoldPlan split_folds(std::span<const std::string> subject_ids, int k,
                     std::uint64_t seed);

void write_fold_plan(const std::filesystem::path& path, const FoldPlan& plan);
FoldPlan read_fold_plan(const std::filesystem::path& path);

// Per-class target counts; classes already at or above target are kept as is.
using ClassCounts = std::array<std::size_t, kNumStages>;

ClassCounts count_classes(std::span<const LabeledEpoch> epochs);
// Every class raised to the majority count.
ClassCounts balanced_targets(std::span<const LabeledEpoch> epochs);

std::vector<double> smote_interpolate(std::span<const double> x,
                                      std::span<const double> neighbor,
                                      double u);

struct SmoteResult {
  std::vector<LabeledEpoch> epochs;  // originals first, then synthetic
  // For each synthetic epoch (in order), indices of its two parents in the
  // input list, and the interpolation weight used.
  std::vector<std::pair<std::size_t, std::size_t>> parents;
  std::vector<double> weights;
  std::size_t duplicated = 0;  // samples copied from single-member classes
  std::size_t warnings = 0;
};

SmoteResult smote_oversample(std::span<const LabeledEpoch> epochs,
                             const ClassCounts& target_count_per_class,
                             std::size_t k_neighbors, std::uint64_t seed);

}  // namespace somnoseq

#endif  // SOMNOSEQ_PIPELINE_H_
