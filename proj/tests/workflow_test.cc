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

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "somnoseq/checkpoint.h"
#include "somnoseq/config.h"
#include "somnoseq/errors.h"
#include "somnoseq/workflow.h"
#include "support/synthetic.h"

namespace somnoseq {
namespace {

namespace fs = std::filesystem;

constexpr double kRate = 2.0;  // 60 samples per epoch

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

void write_corpus(const fs::path& dir) {
  fs::create_directories(dir);
  std::uint64_t seed = 1;
  for (const auto& rec : testing::small_corpus()) testing::write_recording(dir, rec, kRate, seed++);
}

RunConfig corpus_config(const fs::path& root) {
  RunConfig c;
  c.input_dir = (root / "data").string();
  c.output_dir = (root / "run").string();
  c.dataset = DatasetVariant::kOther;
  c.folds = 2;
  c.model = testing::compact_model(60, 8, 3);
  c.batch_size = 4;
  c.max_steps = 12;
  c.log_every = 2;
  c.checkpoint_every = 5;
  c.learning_rate = 1e-3;
  c.seed = 3;
  return c;
}

TEST(Discovery, SubjectIds) {
  EXPECT_EQ(subject_from_name("SC4001E0"), "SC400");
  EXPECT_EQ(subject_from_name("SC4182E0"), "SC418");
  EXPECT_EQ(subject_from_name("ST7011J0"), "ST701");
  EXPECT_EQ(subject_from_name("night3A"), "night3");
}

TEST(Discovery, PairsFilesByPrefix) {
  testing::TempDir root("discover");
  write_corpus(root.path() / "data");
  RunConfig c = corpus_config(root.path());
  const auto pairs = find_recordings(c);
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_EQ(pairs[0].recording_id, "SC4001E0");
  EXPECT_EQ(pairs[0].hypnogram.filename(), "SC4001EC-Hypnogram.edf");
  EXPECT_EQ(pairs[1].subject_id, "SC400");
  EXPECT_EQ(pairs[2].subject_id, "SC401");
  // Every corpus subject is below 20, so the EDF-13 filter keeps them all.
  c.dataset = DatasetVariant::kSleepEdf13;
  EXPECT_EQ(find_recordings(c).size(), 3u);
}

TEST(Discovery, Errors) {
  testing::TempDir root("discover_err");
  RunConfig c = corpus_config(root.path());
  fs::create_directories(root.path() / "data");
  EXPECT_THROW(find_recordings(c), DataError);
  write_corpus(root.path() / "data");
  std::ofstream(root.path() / "data" / "SC4021E0-PSG.edf") << "x";
  EXPECT_THROW(find_recordings(c), DataError);
  fs::remove(root.path() / "data" / "SC4021E0-PSG.edf");
  std::ofstream(root.path() / "data" / "SC4031EJ-Hypnogram.edf") << "x";
  EXPECT_THROW(find_recordings(c), DataError);
  c.input_dir = (root.path() / "missing").string();
  EXPECT_THROW(find_recordings(c), DataError);
  c.input_dir.clear();
  EXPECT_THROW(find_recordings(c), ConfigError);
}

TEST(Discovery, Manifest) {
  testing::TempDir root("manifest");
  write_corpus(root.path() / "data");
  {
    std::ofstream m(root.path() / "data" / "list.tsv");
    m << "# psg\thypnogram\tsubject\n"
      << "SC4011E0-PSG.edf\tSC4011EH-Hypnogram.edf\tpatient-b\n"
      << "SC4001E0-PSG.edf\tSC4001EC-Hypnogram.edf\n";
  }
  RunConfig c = corpus_config(root.path());
  c.input_dir.clear();
  c.manifest = (root.path() / "data" / "list.tsv").string();
  const auto pairs = find_recordings(c);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].recording_id, "SC4001E0");
  EXPECT_EQ(pairs[0].subject_id, "SC400");
  EXPECT_EQ(pairs[1].subject_id, "patient-b");
  {
    std::ofstream m(root.path() / "data" / "list.tsv", std::ios::app);
    m << "SC4001E0-PSG.edf\tSC4001EC-Hypnogram.edf\n";
  }
  EXPECT_THROW(find_recordings(c), DataError);
}

TEST(Batches, FramingAndShapes) {
  const auto pool = testing::synthetic_epochs({0, 1, 2, 3, 4, 2}, 60, 1);
  const auto seqs = make_sequences(pool, 3);
  ASSERT_EQ(seqs.size(), 2u);
  std::vector<const EpochSequence*> ptrs = {&seqs[1], &seqs[0]};
  const SequenceBatch b = make_batch(pool, ptrs);
  EXPECT_EQ(b.n_sequences, 2u);
  EXPECT_EQ(b.epochs.shape(), (Shape{6, 60}));
  EXPECT_EQ(b.decoder_inputs[0], (std::vector<int>{kSodSymbol, 3, 4, 2}));
  EXPECT_EQ(b.targets[0], (std::vector<int>{3, 4, 2, kEodOutput}));
  EXPECT_EQ(b.targets[1], (std::vector<int>{0, 1, 2, kEodOutput}));
  // Row s * T + t holds epoch t of sequence s.
  for (std::size_t k = 0; k < 60; ++k) {
    EXPECT_EQ(b.epochs.values()[1 * 60 + k], pool[4].samples[k]);
    EXPECT_EQ(b.epochs.values()[3 * 60 + k], pool[0].samples[k]);
  }
}

TEST(Training, StepIsFiniteAndReducesLossOnRepeats) {
  StagingNetwork net(testing::compact_model(60, 8, 3), 4);
  OptimizerState opt;
  opt.options.learning_rate = 3e-3;
  const auto pool = testing::synthetic_epochs({0, 0, 2, 2, 4, 4}, 60, 2);
  const auto seqs = make_sequences(pool, 3);
  std::vector<const EpochSequence*> ptrs = {&seqs[0], &seqs[1]};
  const SequenceBatch b = make_batch(pool, ptrs);
  ObjectiveOptions o;
  o.training = false;
  const double before = training_objective(net, b, o).total.item();
  for (int i = 0; i < 30; ++i) {
    const StepResult r = train_step(net, opt, b, o);
    EXPECT_TRUE(std::isfinite(r.total));
  }
  EXPECT_LT(training_objective(net, b, o).total.item(), before);
  EXPECT_EQ(opt.steps, 30);
}

TEST(Training, TinyTwoClassSetOverfits) {
  std::vector<int> labels;
  for (int run = 0; labels.size() < 50; ++run) {
    for (int i = 0; i < 2 + run % 5 && labels.size() < 50; ++i) labels.push_back(run % 2 ? 2 : 0);
  }
  const auto pool = testing::synthetic_epochs(labels, 60, 7);
  const auto seqs = make_sequences(pool, 5);
  std::vector<const EpochSequence*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);
  const SequenceBatch b = make_batch(pool, ptrs);
  ModelConfig mc = testing::compact_model(60, 16, 5);
  mc.small.dropout = mc.large.dropout = mc.feature_dropout = 0.0;
  StagingNetwork net(mc, 1);
  OptimizerState opt;
  opt.options.learning_rate = 3e-3;
  ObjectiveOptions o;
  const double first = train_step(net, opt, b, o).loss;
  for (int step = 2; step <= 200; ++step) train_step(net, opt, b, o);
  o.training = false;
  EXPECT_LE(training_objective(net, b, o).loss.item(), 0.5 * first);
  const InferenceOutput inf = infer(net, b);
  std::size_t correct = 0, total = 0;
  for (std::size_t s = 0; s < b.n_sequences; ++s) {
    for (std::size_t t = 0; t < 5; ++t, ++total) correct += inf.labels[s][t] == b.targets[s][t];
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(total), 0.95);
}

class CorpusRun : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = std::make_unique<testing::TempDir>("corpus");
    write_corpus(root_->path() / "data");
    config_ = corpus_config(root_->path());
  }
  std::unique_ptr<testing::TempDir> root_;
  RunConfig config_;
  std::ostringstream log_;
};

TEST_F(CorpusRun, PrepareCountsEveryScoredWindow) {
  const PrepareSummary s = cmd_prepare(config_, log_);
  EXPECT_EQ(s.totals, testing::expected_counts(testing::small_corpus()));
  EXPECT_EQ(s.excluded_unscored, 3u);
  EXPECT_EQ(s.dropped_past_signal, 0u);
  EXPECT_EQ(s.units, 2u);
  const fs::path dir = prepared_dir(config_);
  for (const char* f : {"SC4001E0.sqd", "SC4002E0.sqd", "SC4011E0.sqd", "recordings.tsv",
                        "folds.tsv", "summary.tsv", "config.txt"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const std::string summary = slurp(dir / "summary.tsv");
  EXPECT_NE(summary.find("TOTAL"), std::string::npos);
  const Dataset data = load_dataset(config_);
  EXPECT_EQ(data.recordings.size(), 3u);
  EXPECT_EQ(data.recordings[0].epoch_samples, 60u);
  RunConfig other = config_;
  other.folds = 3;
  EXPECT_THROW(load_dataset(other), DataError);
}

TEST_F(CorpusRun, TrainingSetExcludesTestSubject) {
  cmd_prepare(config_, log_);
  const Dataset data = load_dataset(config_);
  for (int fold = 0; fold < 2; ++fold) {
    const TrainingSet ts = build_training_set(config_, data, fold, log_);
    EXPECT_GT(ts.synthetic_epochs, 0u);
    for (const auto& e : ts.pool) EXPECT_FALSE(data.plan.is_test(e.subject_id, fold));
    const ClassCounts counts = count_classes(ts.pool);
    const std::size_t top = *std::max_element(counts.begin(), counts.end());
    for (std::size_t c : counts) EXPECT_EQ(c, top);
  }
}

TEST_F(CorpusRun, TrainEvaluateScoreAndExport) {
  cmd_prepare(config_, log_);
  const auto results = cmd_train(config_, false, log_);
  ASSERT_EQ(results.size(), 2u);
  for (const auto& r : results) EXPECT_EQ(r.steps, 12);
  const fs::path f0 = fold_dir(config_, 0);
  const std::string train_log = slurp(f0 / "train_log.tsv");
  EXPECT_EQ(count_lines(train_log), 1u + 6u);
  EXPECT_TRUE(fs::exists(f0 / "epoch_log.tsv"));
  const Checkpoint ck = read_checkpoint(f0 / "model.ckpt");
  EXPECT_EQ(ck.at("meta/step").values[0], 12.0);

  const MetricsReport report = cmd_evaluate(config_, log_);
  const PrepareSummary summary = cmd_prepare(config_, log_);
  // Every recording is at least maxtime long, so every scored epoch is predicted once.
  EXPECT_EQ(static_cast<std::size_t>(report.matrix.total()), summary.total());
  const fs::path rep = report_dir(config_);
  for (const char* f : {"report.txt", "report.json", "confusion.tsv", "predictions.tsv"}) {
    EXPECT_TRUE(fs::exists(rep / f)) << f;
  }
  EXPECT_EQ(count_lines(slurp(rep / "predictions.tsv")), 1u + summary.total());
  const auto json = nlohmann::json::parse(slurp(rep / "report.json"));
  EXPECT_EQ(json["total"].get<std::size_t>(), summary.total());
  EXPECT_EQ(json["folds"].size(), 2u);

  ScoreOptions so;
  so.psg = root_->path() / "data" / "SC4011E0-PSG.edf";
  so.hypnogram = root_->path() / "data" / "SC4011EH-Hypnogram.edf";
  so.checkpoint = f0 / "model.ckpt";
  so.out_dir = root_->path() / "score";
  const ScoreResult sr = cmd_score(config_, so, log_);
  EXPECT_EQ(sr.predicted.size(), 37u);
  EXPECT_EQ(sr.expert.size(), 37u);
  ASSERT_TRUE(sr.agreement.has_value());
  EXPECT_GE(*sr.agreement, 0.0);
  EXPECT_EQ(sr.attention_maps, 13u);  // ceil(37 / 3)
  EXPECT_EQ(count_lines(slurp(so.out_dir / "hypnogram.tsv")), 38u);
  EXPECT_TRUE(fs::exists(so.out_dir / "attention" / "window_0012.tsv"));

  // Without an overlay the whole signal is scored, including the tail.
  so.hypnogram.reset();
  so.out_dir = root_->path() / "score_raw";
  const ScoreResult raw = cmd_score(config_, so, log_);
  EXPECT_EQ(raw.predicted.size(), 38u);
  EXPECT_FALSE(raw.agreement.has_value());

  ExportAttentionOptions eo;
  eo.recording = prepared_dir(config_) / "SC4002E0.sqd";
  eo.checkpoint = f0 / "model.ckpt";
  eo.out_dir = root_->path() / "attn";
  EXPECT_EQ(cmd_export_attention(config_, eo, log_), 12u);  // 36 scored epochs
  const std::string map = slurp(eo.out_dir / "window_0000.tsv");
  EXPECT_EQ(count_lines(map), 1u + 3u);
  std::istringstream rows(map);
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) {
    std::istringstream cells(line);
    std::string step;
    cells >> step;
    double total = 0.0, a = 0.0;
    while (cells >> a) total += a;
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
  eo.teacher_forced = true;
  eo.out_dir = root_->path() / "attn_tf";
  EXPECT_EQ(cmd_export_attention(config_, eo, log_), 12u);
  EXPECT_EQ(count_lines(slurp(eo.out_dir / "window_0000.tsv")), 1u + 4u);
}

TEST_F(CorpusRun, ResumeMatchesUninterruptedRun) {
  config_.fold = 1;
  cmd_prepare(config_, log_);
  cmd_train(config_, false, log_);
  const fs::path f1 = fold_dir(config_, 1);
  const std::string ckpt = slurp(f1 / "model.ckpt");
  const std::string train_log = slurp(f1 / "train_log.tsv");
  const std::string epoch_log = slurp(f1 / "epoch_log.tsv");

  RunConfig partial = config_;
  partial.max_steps = 7;
  cmd_train(partial, false, log_);
  EXPECT_NE(slurp(f1 / "model.ckpt"), ckpt);
  // Simulate a crash after the step-5 checkpoint by rolling the checkpoint back.
  RunConfig to_five = config_;
  to_five.max_steps = 5;
  cmd_train(to_five, false, log_);
  const auto results = cmd_train(config_, true, log_);
  ASSERT_EQ(results.size(), 1u);
  EXPECT_TRUE(results[0].resumed);
  EXPECT_EQ(results[0].steps, 12);
  EXPECT_EQ(slurp(f1 / "model.ckpt"), ckpt);
  EXPECT_EQ(slurp(f1 / "train_log.tsv"), train_log);
  EXPECT_EQ(slurp(f1 / "epoch_log.tsv"), epoch_log);
}

TEST_F(CorpusRun, IntraPatientSplitsWindows) {
  config_.intra_patient = true;
  config_.folds = 3;
  config_.max_steps = 4;
  const PrepareSummary s = cmd_prepare(config_, log_);
  EXPECT_EQ(s.units, 39u / 3 + 36u / 3 + 37u / 3);
  cmd_train(config_, false, log_);
  const MetricsReport r = cmd_evaluate(config_, log_);
  // Only whole windows are assigned to folds.
  EXPECT_EQ(static_cast<std::size_t>(r.matrix.total()), 3u * s.units);
  const auto json = nlohmann::json::parse(slurp(report_dir(config_) / "report.json"));
  EXPECT_EQ(json["paradigm"], "intra-patient");
}

TEST_F(CorpusRun, EvaluateWithoutTrainingFails) {
  cmd_prepare(config_, log_);
  EXPECT_THROW(cmd_evaluate(config_, log_), DataError);
  RunConfig fresh = corpus_config(root_->path() / "elsewhere");
  EXPECT_THROW(cmd_train(fresh, false, log_), DataError);
}

TEST(AttentionExport, MatrixLayout) {
  AttentionStep a;
  a.weights = Tensor::from({2, 3}, {0.2, 0.3, 0.5, 1.0, 0.0, 0.0});
  const auto m = attention_matrix({a, a}, 1);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0], (std::vector<double>{1.0, 0.0, 0.0}));
  const std::vector<std::int64_t> pos = {7, 8, 9};
  EXPECT_EQ(format_attention_tsv(attention_matrix({a}, 0), pos),
            "step\t7\t8\t9\n0\t0.20000000\t0.30000000\t0.50000000\n");
  const std::vector<std::int64_t> short_pos = {7};
  EXPECT_THROW(format_attention_tsv(m, short_pos), ShapeError);
}

}  // namespace
}  // namespace somnoseq
