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

#include "somnoseq/pipeline.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "somnoseq/errors.h"
#include "somnoseq/rng.h"

namespace somnoseq {

std::optional<StageClass> to_stage_class(StageLabel label) {
  switch (label) {
    case StageLabel::kWake: return StageClass::kW;
    case StageLabel::kStage1: return StageClass::kN1;
    case StageLabel::kStage2: return StageClass::kN2;
    case StageLabel::kStage3:
    case StageLabel::kStage4: return StageClass::kN3;
    case StageLabel::kRem: return StageClass::kRem;
    case StageLabel::kMovement:
    case StageLabel::kUnscored: return std::nullopt;
  }
  return std::nullopt;
}

std::string_view stage_class_name(int cls) {
  static constexpr std::string_view kNames[] = {"W", "N1", "N2", "N3", "REM",
                                                "SOD", "EOD"};
  if (cls < 0 || cls >= kVocabularySize) return "?";
  return kNames[cls];
}

std::optional<StageClass> parse_stage_class(std::string_view name) {
  for (int c = 0; c < kNumStages; ++c) {
    if (stage_class_name(c) == name) return static_cast<StageClass>(c);
  }
  return std::nullopt;
}

SegmentResult segment_epochs(std::span<const double> signal,
                             double sampling_rate,
                             std::span<const StageAnnotation> annotations,
                             std::string_view subject_id,
                             LengthPolicy policy) {
  const double per_epoch = sampling_rate * kEpochSeconds;
  const auto samples_per_epoch = static_cast<std::size_t>(std::llround(per_epoch));
  if (samples_per_epoch == 0 || std::abs(per_epoch - samples_per_epoch) > 1e-6) {
    throw DataError("sampling rate " + std::to_string(sampling_rate) +
                    " Hz does not give a whole number of samples per 30-s epoch");
  }

  SegmentResult result;
  for (const auto& a : annotations) {
    const auto cls = to_stage_class(a.label);
    const double windows_exact = a.duration_s / kEpochSeconds;
    const auto windows = static_cast<std::size_t>(std::floor(windows_exact + 1e-9));
    if (!cls) {
      result.excluded_unscored += windows;
      continue;
    }
    if (std::abs(windows_exact - std::round(windows_exact)) > 1e-9) {
      throw DataError("stage annotation at " + std::to_string(a.onset_s) +
                      " s lasts " + std::to_string(a.duration_s) +
                      " s, not a multiple of 30 s");
    }
    const double start_exact = a.onset_s * sampling_rate;
    const auto start = static_cast<std::size_t>(std::llround(start_exact));
    if (std::abs(start_exact - static_cast<double>(start)) > 1e-6) {
      throw DataError("annotation onset " + std::to_string(a.onset_s) +
                      " s does not fall on a sample boundary");
    }
    for (std::size_t w = 0; w < windows; ++w) {
      const std::size_t begin = start + w * samples_per_epoch;
      if (begin + samples_per_epoch > signal.size()) {
        if (policy == LengthPolicy::kStrict) {
          throw DataError("annotation window at " +
                          std::to_string(begin / sampling_rate) +
                          " s runs past the end of the signal");
        }
        ++result.dropped_past_signal;
        continue;
      }
      LabeledEpoch e;
      e.samples.assign(signal.begin() + static_cast<std::ptrdiff_t>(begin),
                       signal.begin() + static_cast<std::ptrdiff_t>(begin + samples_per_epoch));
      e.label = *cls;
      e.subject_id = std::string(subject_id);
      e.position = static_cast<std::int64_t>(begin / samples_per_epoch);
      result.epochs.push_back(std::move(e));
    }
  }
  return result;
}

std::vector<double> normalize_epoch(std::span<const double> samples) {
  const double n = static_cast<double>(samples.size());
  if (samples.empty()) return {};
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double var = 0.0;
  for (double x : samples) var += (x - mean) * (x - mean);
  const double scale = std::max(std::sqrt(var / n), kNormalizeEpsilon);
  std::vector<double> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out[i] = (samples[i] - mean) / scale;
  }
  return out;
}

void normalize_epochs(std::span<LabeledEpoch> epochs) {
  for (auto& e : epochs) e.samples = normalize_epoch(e.samples);
}

std::vector<LabeledEpoch> trim_wake(std::vector<LabeledEpoch> epochs,
                                    double minutes) {
  const auto margin = static_cast<std::int64_t>(std::llround(minutes * 60.0 / kEpochSeconds));
  std::optional<std::int64_t> first, last;
  for (const auto& e : epochs) {
    if (e.label == StageClass::kW) continue;
    if (!first || e.position < *first) first = e.position;
    if (!last || e.position > *last) last = e.position;
  }
  if (!first) return epochs;
  std::erase_if(epochs, [&](const LabeledEpoch& e) {
    return e.position < *first - margin || e.position > *last + margin;
  });
  return epochs;
}

std::vector<int> EpochSequence::teacher_inputs() const {
  std::vector<int> out = decoder_inputs;
  if (targets.size() >= 2) out.push_back(targets[targets.size() - 2]);
  return out;
}

namespace {

EpochSequence frame(std::span<const LabeledEpoch> epochs,
                    std::vector<std::size_t> indices) {
  EpochSequence seq;
  seq.decoder_inputs.push_back(kSodSymbol);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int label = static_cast<int>(epochs[indices[i]].label);
    seq.targets.push_back(label);
    if (i + 1 < indices.size()) seq.decoder_inputs.push_back(label);
  }
  seq.targets.push_back(kEodSymbol);
  seq.inputs = std::move(indices);
  return seq;
}

}  // namespace

std::vector<EpochSequence> make_sequences(std::span<const LabeledEpoch> epochs,
                                          std::size_t maxtime) {
  if (maxtime == 0) throw ConfigError("maxtime must be at least 1");
  std::vector<EpochSequence> out;
  for (std::size_t s = 0; s + maxtime <= epochs.size(); s += maxtime) {
    std::vector<std::size_t> idx(maxtime);
    std::iota(idx.begin(), idx.end(), s);
    out.push_back(frame(epochs, std::move(idx)));
  }
  return out;
}

std::vector<EpochSequence> make_class_sequences(
    std::span<const LabeledEpoch> epochs, std::size_t maxtime) {
  if (maxtime == 0) throw ConfigError("maxtime must be at least 1");
  std::vector<EpochSequence> out;
  for (int c = 0; c < kNumStages; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      if (static_cast<int>(epochs[i].label) == c) members.push_back(i);
    }
    for (std::size_t s = 0; s + maxtime <= members.size(); s += maxtime) {
      out.push_back(frame(epochs, std::vector<std::size_t>(
                                      members.begin() + static_cast<std::ptrdiff_t>(s),
                                      members.begin() + static_cast<std::ptrdiff_t>(s + maxtime))));
    }
  }
  return out;
}

std::vector<ScoringWindow> scoring_windows(std::size_t n_epochs,
                                           std::size_t maxtime) {
  if (maxtime == 0) throw ConfigError("maxtime must be at least 1");
  std::vector<ScoringWindow> out;
  if (n_epochs < maxtime) return out;
  std::size_t s = 0;
  for (; s + maxtime <= n_epochs; s += maxtime) out.push_back({s, s});
  if (s < n_epochs) out.push_back({n_epochs - maxtime, s});
  return out;
}

std::vector<std::string> FoldPlan::test_units(int fold) const {
  std::vector<std::string> out;
  for (const auto& [unit, f] : assignment) {
    if (f == fold) out.push_back(unit);
  }
  return out;
}

std::vector<std::string> FoldPlan::train_units(int fold) const {
  std::vector<std::string> out;
  for (const auto& [unit, f] : assignment) {
    if (f != fold) out.push_back(unit);
  }
  return out;
}

bool FoldPlan::is_test(const std::string& unit, int fold) const {
  const auto it = assignment.find(unit);
  return it != assignment.end() && it->second == fold;
}

FoldPlan split_folds(std::span<const std::string> subject_ids, int k,
                     std::uint64_t seed) {
  std::vector<std::string> units(subject_ids.begin(), subject_ids.end());
  std::sort(units.begin(), units.end());
  units.erase(std::unique(units.begin(), units.end()), units.end());
  if (k < 1) throw ConfigError("fold count must be at least 1");
  if (static_cast<std::size_t>(k) > units.size()) {
    throw ConfigError("cannot split " + std::to_string(units.size()) +
                      " subjects into " + std::to_string(k) + " folds");
  }
  Rng rng(derive_seed(seed, "folds"));
  rng.shuffle(units.begin(), units.end());
  FoldPlan plan;
  plan.k = k;
  for (std::size_t i = 0; i < units.size(); ++i) {
    plan.assignment[units[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  }
  return plan;
}

void write_fold_plan(const std::filesystem::path& path, const FoldPlan& plan) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& [unit, fold] : plan.assignment) {
    out << unit << '\t' << fold << '\n';
  }
}

FoldPlan read_fold_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read fold plan " + path.string());
  FoldPlan plan;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    int fold = -1;
    if (tab != std::string::npos) {
      std::istringstream field(line.substr(tab + 1));
      field >> fold;
    }
    if (tab == std::string::npos || fold < 0) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected 'subject<TAB>fold'");
    }
    plan.assignment[line.substr(0, tab)] = fold;
    plan.k = std::max(plan.k, fold + 1);
  }
  return plan;
}

ClassCounts count_classes(std::span<const LabeledEpoch> epochs) {
  ClassCounts counts{};
  for (const auto& e : epochs) ++counts[static_cast<std::size_t>(e.label)];
  return counts;
}

ClassCounts balanced_targets(std::span<const LabeledEpoch> epochs) {
  const ClassCounts counts = count_classes(epochs);
  const std::size_t majority = *std::max_element(counts.begin(), counts.end());
  ClassCounts targets;
  targets.fill(majority);
  return targets;
}

std::vector<double> smote_interpolate(std::span<const double> x,
                                      std::span<const double> neighbor,
                                      double u) {
  if (x.size() != neighbor.size()) {
    throw ShapeError("SMOTE parents differ in length");
  }
  // Weighted form, so both endpoints come back bit-exact.
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = (1.0 - u) * x[i] + u * neighbor[i];
  }
  return out;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

}  // namespace

SmoteResult smote_oversample(std::span<const LabeledEpoch> epochs,
                             const ClassCounts& target_count_per_class,
                             std::size_t k_neighbors, std::uint64_t seed) {
  if (k_neighbors < 1) throw ConfigError("SMOTE needs k_neighbors >= 1");
  SmoteResult result;
  result.epochs.assign(epochs.begin(), epochs.end());

  for (int c = 0; c < kNumStages; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      if (static_cast<int>(epochs[i].label) == c) members.push_back(i);
    }
    const std::size_t target = target_count_per_class[static_cast<std::size_t>(c)];
    if (members.size() >= target) continue;
    const std::size_t needed = target - members.size();
    if (members.empty()) {
      ++result.warnings;  // nothing to interpolate from
      continue;
    }

    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    if (members.size() == 1) {
      ++result.warnings;
      for (std::size_t j = 0; j < needed; ++j) {
        LabeledEpoch copy = epochs[members[0]];
        copy.synthetic = true;
        copy.position = -1;
        result.epochs.push_back(std::move(copy));
        result.parents.emplace_back(members[0], members[0]);
        result.weights.push_back(0.0);
        ++result.duplicated;
      }
      continue;
    }

    const std::size_t k = std::min(k_neighbors, members.size() - 1);
    const std::size_t bases = std::min(needed, members.size());
    std::vector<std::vector<std::size_t>> neighbors(bases);
    for (std::size_t b = 0; b < bases; ++b) {
      std::vector<std::pair<double, std::size_t>> dist;
      dist.reserve(members.size() - 1);
      for (std::size_t m = 0; m < members.size(); ++m) {
        if (m == b) continue;
        dist.emplace_back(squared_distance(epochs[members[b]].samples,
                                           epochs[members[m]].samples),
                          members[m]);
      }
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k),
                        dist.end());
      for (std::size_t i = 0; i < k; ++i) neighbors[b].push_back(dist[i].second);
    }

    for (std::size_t j = 0; j < needed; ++j) {
      const std::size_t b = j % bases;
      const std::size_t base = members[b];
      const std::size_t nn = neighbors[b][rng.below(k)];
      const double u = rng.uniform();
      LabeledEpoch s;
      s.samples = smote_interpolate(epochs[base].samples, epochs[nn].samples, u);
      s.label = epochs[base].label;
      s.subject_id = epochs[base].subject_id;
      s.position = -1;
      s.synthetic = true;
      result.epochs.push_back(std::move(s));
      result.parents.emplace_back(base, nn);
      result.weights.push_back(u);
    }
  }
  return result;
}

}  // namespace somnoseq
