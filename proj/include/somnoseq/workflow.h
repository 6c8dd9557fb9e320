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

// End-to-end commands: prepare raw recordings, train one model per fold,
// pool the fold evaluations, and score single recordings. Every command is
// a deterministic function of its inputs, its config and the seed.
//
// Run directory layout (relative to output_dir):
//
//   prepared/   <recording>.sqd, recordings.tsv, folds.tsv, summary.tsv
//   train/      fold_NN/{model.ckpt, train_log.tsv, epoch_log.tsv, timing.tsv}
//   report/     report.txt, report.json, confusion.tsv, predictions.tsv
//
// Each directory also receives config.txt, the effective configuration.

#ifndef SOMNOSEQ_WORKFLOW_H_
#define SOMNOSEQ_WORKFLOW_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "somnoseq/config.h"
#include "somnoseq/dataset_io.h"
#include "somnoseq/loss.h"
#include "somnoseq/metrics.h"
#include "somnoseq/network.h"
#include "somnoseq/optim.h"
#include "somnoseq/pipeline.h"

namespace somnoseq {

// Recording discovery.

struct RecordingPair {
  std::string recording_id;
  std::string subject_id;
  std::filesystem::path psg;
  std::filesystem::path hypnogram;
};

// "SC4012E0" -> "SC401"; other names map to themselves minus the trailing
// recording letter, so that night 1 and night 2 share a subject.
std::string subject_from_name(std::string_view stem);

// Pairs *-PSG.edf with the *-Hypnogram.edf sharing its stem up to the last
// character, or reads config.manifest when set. Throws DataError for an
// empty directory or an unpairable file.
std::vector<RecordingPair> find_recordings(const RunConfig& config);

// Batches and optimization.

struct SequenceBatch {
  Tensor epochs;  // [S * T, epoch_samples], row s * T + t
  std::size_t n_sequences = 0;
  std::vector<std::vector<int>> decoder_inputs;  // SOD, l_1 .. l_T
  std::vector<std::vector<int>> targets;         // output indices, EOD last
};

SequenceBatch make_batch(std::span<const LabeledEpoch> pool,
                         std::span<const EpochSequence* const> sequences);

struct ObjectiveOptions {
  LossKind loss = LossKind::kMfe;
  bool eod_as_class = true;
  double l2_beta = 0.001;
  bool training = true;
  std::uint64_t dropout_seed = 0;
};

struct Objective {
  Tensor total;  // loss + L2
  Tensor loss;
  std::size_t stage_positions = 0;
  std::size_t stage_correct = 0;
};

Objective training_objective(const StagingNetwork& net,
                             const SequenceBatch& batch,
                             const ObjectiveOptions& options);

struct StepResult {
  double total = 0.0;
  double loss = 0.0;
  std::size_t stage_positions = 0;
  std::size_t stage_correct = 0;
};

// Zeroes gradients, back-propagates the objective and applies one RMSProp
// update. Throws NumericError when the loss or a gradient is not finite.
StepResult train_step(StagingNetwork& net, OptimizerState& optimizer,
                      const SequenceBatch& batch,
                      const ObjectiveOptions& options);

// Greedy decoding of every sequence; labels[s] has maxtime entries.
InferenceOutput infer(const StagingNetwork& net, const SequenceBatch& batch);

// Prepared datasets.

struct PrepareSummary {
  std::vector<std::pair<std::string, ClassCounts>> per_recording;
  ClassCounts totals{};
  std::size_t excluded_unscored = 0;
  std::size_t dropped_past_signal = 0;
  std::size_t units = 0;
  std::size_t total() const;
  std::string to_tsv() const;
};

struct Dataset {
  std::vector<PreparedRecording> recordings;  // sorted by recording id
  FoldPlan plan;
};

std::filesystem::path prepared_dir(const RunConfig& config);
std::filesystem::path train_dir(const RunConfig& config);
std::filesystem::path fold_dir(const RunConfig& config, int fold);
std::filesystem::path report_dir(const RunConfig& config);

// Fold unit of a sequence window: the subject for inter-patient splits,
// "<recording>/w<index>" for the intra-patient mode.
std::string window_unit(const RunConfig& config, const PreparedRecording& rec,
                        std::size_t window_index);

Dataset load_dataset(const RunConfig& config);

// Per-fold training and evaluation.

struct TrainingSet {
  std::vector<LabeledEpoch> pool;
  std::vector<EpochSequence> sequences;  // indices into pool
  std::size_t real_sequences = 0;
  std::size_t synthetic_epochs = 0;
};

// Real sequences of the training units, plus class sequences built from
// SMOTE epochs when enabled. Throws std::logic_error if a synthetic epoch
// carries a test-fold subject.
TrainingSet build_training_set(const RunConfig& config, const Dataset& data,
                               int fold, std::ostream& log);

struct FoldTrainResult {
  int fold = 0;
  std::int64_t steps = 0;
  int epochs_completed = 0;
  double last_loss = 0.0;
  bool resumed = false;
};

FoldTrainResult train_fold(const RunConfig& config, const Dataset& data,
                           int fold, bool resume, std::ostream& log);

struct RecordingPrediction {
  std::string recording_id;
  std::string subject_id;
  std::vector<std::int64_t> positions;
  std::vector<int> truth;
  std::vector<int> predicted;
};

struct FoldEvaluation {
  std::vector<RecordingPrediction> recordings;
  std::size_t eod_substitutions = 0;
  FoldPredictions pooled() const;
};

// Decodes the fold's test windows. Inter-patient folds cover every epoch of
// each test recording with an end-aligned final window; recordings shorter
// than maxtime epochs are skipped.
FoldEvaluation evaluate_fold(const RunConfig& config, const StagingNetwork& net,
                             const Dataset& data, int fold);

// Loads fold_dir(config, fold)/model.ckpt; throws DataError on a missing
// file or a fold/plan mismatch.
StagingNetwork load_fold_model(const RunConfig& config, int fold,
                               std::size_t epoch_samples);

// Commands.

PrepareSummary cmd_prepare(const RunConfig& config, std::ostream& log);
std::vector<FoldTrainResult> cmd_train(const RunConfig& config, bool resume,
                                       std::ostream& log);
MetricsReport cmd_evaluate(const RunConfig& config, std::ostream& log);

struct ScoreOptions {
  std::filesystem::path psg;
  std::optional<std::filesystem::path> hypnogram;  // expert overlay
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir;
};

struct ScoreResult {
  std::vector<std::int64_t> positions;
  std::vector<int> predicted;
  std::vector<int> expert;  // empty without an overlay
  std::optional<double> agreement;  // percent
  std::size_t attention_maps = 0;
};

ScoreResult cmd_score(const RunConfig& config, const ScoreOptions& options,
                      std::ostream& log);

struct ExportAttentionOptions {
  std::filesystem::path recording;  // prepared .sqd file
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir;
  bool teacher_forced = false;
};

std::size_t cmd_export_attention(const RunConfig& config,
                                 const ExportAttentionOptions& options,
                                 std::ostream& log);

// Rows = decode steps, columns = input epochs, for sequence `row` of a batch.
std::vector<std::vector<double>> attention_matrix(
    const std::vector<AttentionStep>& steps, std::size_t row);
// A header of input epoch positions, then one line per decode step.
std::string format_attention_tsv(const std::vector<std::vector<double>>& matrix,
                                 std::span<const std::int64_t> positions);

}  // namespace somnoseq

#endif  // SOMNOSEQ_WORKFLOW_H_
