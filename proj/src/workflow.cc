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

#include "somnoseq/workflow.h"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "somnoseq/checkpoint.h"
#include "somnoseq/edf.h"
#include "somnoseq/errors.h"
#include "somnoseq/rng.h"

namespace somnoseq {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kPsgSuffix = "-PSG.edf";
constexpr std::string_view kHypnogramSuffix = "-Hypnogram.edf";

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

std::ofstream open_append(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

// Keeps the header and the rows whose first column is <= limit.
// Keeps rows up to `limit`. A row at `limit` itself survives only when it
// falls on the `every` grid; otherwise it was the closing row of a run that
// stopped early and an uninterrupted run would not have written it.
void truncate_log(const fs::path& path, std::int64_t limit, std::int64_t every) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  std::string line, kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      kept += line + '\n';
      header = false;
      continue;
    }
    const auto cells = split_tabs(line);
    if (cells.empty() || cells[0].empty()) continue;
    const std::int64_t key = std::stoll(cells[0]);
    if (key < limit || (key == limit && key % every == 0)) {
      kept += line + '\n';
    }
  }
  in.close();
  write_text(path, kept);
}

bool is_sleep_edf_name(std::string_view stem) {
  return stem.size() >= 5 && stem[0] == 'S' && (stem[1] == 'C' || stem[1] == 'T') &&
         std::isdigit(static_cast<unsigned char>(stem[2])) &&
         std::isdigit(static_cast<unsigned char>(stem[3])) &&
         std::isdigit(static_cast<unsigned char>(stem[4]));
}

// The 2013 release holds subjects 0-19 of the cassette study.
bool in_sleep_edf_13(std::string_view stem) {
  if (!is_sleep_edf_name(stem)) return true;
  if (stem[1] != 'C') return false;
  const int subject = (stem[3] - '0') * 10 + (stem[4] - '0');
  return subject < 20;
}

std::string recording_stem(const fs::path& psg) {
  std::string name = psg.filename().string();
  if (name.ends_with(kPsgSuffix)) return name.substr(0, name.size() - kPsgSuffix.size());
  return psg.stem().string();
}

std::vector<RecordingPair> read_manifest(const RunConfig& config) {
  const fs::path manifest(config.manifest);
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw DataError("cannot read manifest " + manifest.string());
  const fs::path base = config.input_dir.empty() ? manifest.parent_path() : fs::path(config.input_dir);
  std::vector<RecordingPair> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#' || line == "\r") continue;
    const auto cells = split_tabs(line);
    if (cells.size() < 2 || cells.size() > 3) {
      throw DataError(manifest.string() + ":" + std::to_string(line_no) +
                      ": expected psg<TAB>hypnogram[<TAB>subject]");
    }
    RecordingPair pair;
    pair.psg = base / cells[0];
    pair.hypnogram = base / cells[1];
    pair.recording_id = recording_stem(pair.psg);
    pair.subject_id = cells.size() == 3 ? cells[2] : subject_from_name(pair.recording_id);
    if (!ids.insert(pair.recording_id).second) {
      throw DataError(manifest.string() + ":" + std::to_string(line_no) +
                      ": duplicate recording '" + pair.recording_id + "'");
    }
    out.push_back(std::move(pair));
  }
  if (out.empty()) throw DataError("manifest " + manifest.string() + " lists no recordings");
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.recording_id < b.recording_id; });
  return out;
}

StoredArray meta_value(double v) { return {{1}, {v}}; }

double read_meta(const Checkpoint& ck, const std::string& key) {
  const auto it = ck.find("meta/" + key);
  if (it == ck.end() || it->second.values.size() != 1) {
    throw DataError("checkpoint lacks meta/" + key);
  }
  return it->second.values[0];
}

std::string fold_name(int fold) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "fold_%02d", fold);
  return buf;
}

std::vector<int> fold_range(const RunConfig& config, int k) {
  if (config.fold >= k) {
    throw ConfigError("fold " + std::to_string(config.fold) + " out of range for " +
                      std::to_string(k) + " folds");
  }
  if (config.fold >= 0) return {config.fold};
  std::vector<int> out(static_cast<std::size_t>(k));
  std::iota(out.begin(), out.end(), 0);
  return out;
}

ModelConfig model_for(const RunConfig& config, std::size_t epoch_samples) {
  ModelConfig mc = config.model;
  mc.epoch_samples = epoch_samples;
  mc.validate();
  return mc;
}

// A window of consecutive epochs, labels framed as for training.
EpochSequence window_sequence(std::span<const LabeledEpoch> epochs, std::size_t start,
                              std::size_t length) {
  EpochSequence seq;
  seq.decoder_inputs.push_back(kSodSymbol);
  for (std::size_t i = 0; i < length; ++i) {
    const int label = static_cast<int>(epochs[start + i].label);
    seq.inputs.push_back(start + i);
    seq.targets.push_back(label);
    if (i + 1 < length) seq.decoder_inputs.push_back(label);
  }
  seq.targets.push_back(kEodSymbol);
  return seq;
}

struct WindowPlan {
  std::vector<ScoringWindow> windows;
  std::vector<std::string> units;
};

WindowPlan test_windows(const RunConfig& config, const Dataset& data,
                        const PreparedRecording& rec, int fold) {
  const std::size_t t = config.model.maxtime;
  WindowPlan plan;
  if (!config.intra_patient) {
    if (!data.plan.is_test(rec.subject_id, fold)) return plan;
    plan.windows = scoring_windows(rec.epochs.size(), t);
    if (!plan.windows.empty()) plan.units.push_back(rec.subject_id);
    return plan;
  }
  for (std::size_t w = 0; (w + 1) * t <= rec.epochs.size(); ++w) {
    const std::string unit = window_unit(config, rec, w);
    if (!data.plan.is_test(unit, fold)) continue;
    plan.windows.push_back({w * t, w * t});
    plan.units.push_back(unit);
  }
  return plan;
}

// Position in the training schedule plus the running sums of the epoch in
// progress, so a resumed run writes the same epoch log as an uninterrupted one.
struct TrainProgress {
  std::int64_t step = 0;
  int next_epoch = 0;
  std::size_t next_batch = 0;
  double last_loss = 0.0;
  double epoch_loss_sum = 0.0;
  std::size_t epoch_steps = 0;
  std::size_t epoch_positions = 0;
  std::size_t epoch_correct = 0;
};

void save_training_checkpoint(const fs::path& path, const StagingNetwork& net,
                              const OptimizerState& opt, int fold, int k,
                              const TrainProgress& p) {
  Checkpoint ck = net.params().to_checkpoint("model/");
  const auto& params = net.params().all();
  for (std::size_t i = 0; i < opt.accumulators.size() && i < params.size(); ++i) {
    ck["optim/" + params[i].name] = {params[i].value.shape(), opt.accumulators[i]};
  }
  ck["meta/fold"] = meta_value(fold);
  ck["meta/folds"] = meta_value(k);
  ck["meta/step"] = meta_value(static_cast<double>(p.step));
  ck["meta/optimizer_steps"] = meta_value(static_cast<double>(opt.steps));
  ck["meta/next_epoch"] = meta_value(p.next_epoch);
  ck["meta/next_batch"] = meta_value(static_cast<double>(p.next_batch));
  ck["meta/last_loss"] = meta_value(p.last_loss);
  ck["meta/epoch_loss_sum"] = meta_value(p.epoch_loss_sum);
  ck["meta/epoch_steps"] = meta_value(static_cast<double>(p.epoch_steps));
  ck["meta/epoch_positions"] = meta_value(static_cast<double>(p.epoch_positions));
  ck["meta/epoch_correct"] = meta_value(static_cast<double>(p.epoch_correct));
  ck["meta/epoch_samples"] = meta_value(static_cast<double>(net.config().epoch_samples));
  write_checkpoint(path, ck);
}

}  // namespace

std::string subject_from_name(std::string_view stem) {
  if (is_sleep_edf_name(stem)) return std::string(stem.substr(0, 5));
  if (stem.size() > 1) return std::string(stem.substr(0, stem.size() - 1));
  return std::string(stem);
}

std::vector<RecordingPair> find_recordings(const RunConfig& config) {
  if (!config.manifest.empty()) return read_manifest(config);
  if (config.input_dir.empty()) {
    throw ConfigError("input_dir is not set (pass --set input_dir=<dir> or a manifest)");
  }
  const fs::path dir(config.input_dir);
  if (!fs::is_directory(dir)) throw DataError("input directory " + dir.string() + " does not exist");

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::map<std::string, fs::path> psg, hyp;
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    const bool is_psg = name.ends_with(kPsgSuffix);
    const bool is_hyp = name.ends_with(kHypnogramSuffix);
    if (!is_psg && !is_hyp) continue;
    const std::string stem =
        name.substr(0, name.size() - (is_psg ? kPsgSuffix.size() : kHypnogramSuffix.size()));
    if (stem.size() < 2) throw DataError("cannot pair " + name + ": stem too short");
    const std::string key = stem.substr(0, stem.size() - 1);
    auto& target = is_psg ? psg : hyp;
    if (!target.emplace(key, f).second) {
      throw DataError("ambiguous pairing: " + target[key].filename().string() + " and " + name +
                      " share the prefix " + key);
    }
  }
  if (psg.empty()) {
    throw DataError("no *-PSG.edf recordings in " + dir.string() +
                    "; name files <id>-PSG.edf with a matching <id>-Hypnogram.edf, or set manifest=");
  }
  for (const auto& [key, path] : hyp) {
    if (!psg.contains(key)) {
      throw DataError("hypnogram " + path.filename().string() + " has no matching " + key +
                      "?-PSG.edf");
    }
  }
  std::vector<RecordingPair> out;
  for (const auto& [key, path] : psg) {
    const auto h = hyp.find(key);
    if (h == hyp.end()) {
      throw DataError("recording " + path.filename().string() + " has no matching " + key +
                      "?-Hypnogram.edf");
    }
    const std::string stem = recording_stem(path);
    if (config.dataset == DatasetVariant::kSleepEdf13 && !in_sleep_edf_13(stem)) continue;
    out.push_back({stem, subject_from_name(stem), path, h->second});
  }
  if (out.empty()) {
    throw DataError("no recordings of the " + dataset_variant_name(config.dataset) +
                    " subset in " + dir.string());
  }
  return out;
}

SequenceBatch make_batch(std::span<const LabeledEpoch> pool,
                         std::span<const EpochSequence* const> sequences) {
  if (sequences.empty()) throw ShapeError("make_batch: no sequences");
  const std::size_t t = sequences[0]->inputs.size();
  if (t == 0) throw ShapeError("make_batch: empty sequence");
  const std::size_t samples = pool[sequences[0]->inputs[0]].samples.size();
  SequenceBatch batch;
  batch.n_sequences = sequences.size();
  std::vector<double> values;
  values.reserve(sequences.size() * t * samples);
  for (const EpochSequence* seq : sequences) {
    if (seq->inputs.size() != t) throw ShapeError("make_batch: ragged sequences");
    for (std::size_t idx : seq->inputs) {
      const auto& x = pool[idx].samples;
      if (x.size() != samples) throw ShapeError("make_batch: epochs differ in length");
      values.insert(values.end(), x.begin(), x.end());
    }
    batch.decoder_inputs.push_back(seq->teacher_inputs());
    std::vector<int> targets = seq->targets;
    for (int& y : targets) {
      if (y == kEodSymbol) y = kEodOutput;
    }
    batch.targets.push_back(std::move(targets));
  }
  batch.epochs = Tensor::from({sequences.size() * t, samples}, std::move(values));
  return batch;
}

Objective training_objective(const StagingNetwork& net, const SequenceBatch& batch,
                             const ObjectiveOptions& options) {
  const ForwardOptions fwd{options.training, options.dropout_seed};
  const EncoderStates states = net.encode_batch(batch.epochs, batch.n_sequences, fwd);
  const TeacherForcedOutput out = net.decode_teacher_forced(states, batch.decoder_inputs);
  const SequenceLoss seq =
      sequence_loss(out.logits, batch.targets, {options.loss, options.eod_as_class});
  Objective obj;
  obj.loss = seq.loss;
  obj.total = add(seq.loss, l2_penalty(net.params().weights(), options.l2_beta));
  obj.stage_positions = seq.stage_positions;
  obj.stage_correct = seq.stage_correct;
  return obj;
}

StepResult train_step(StagingNetwork& net, OptimizerState& optimizer,
                      const SequenceBatch& batch, const ObjectiveOptions& options) {
  net.params().zero_grad();
  const Objective obj = training_objective(net, batch, options);
  StepResult r{obj.total.item(), obj.loss.item(), obj.stage_positions, obj.stage_correct};
  if (!std::isfinite(r.total)) {
    throw NumericError("loss is not finite (" + fmt(r.total) + ") at optimizer step " +
                       std::to_string(optimizer.steps + 1));
  }
  backward(obj.total);
  for (auto& p : net.params().all()) {
    for (double g : p.value.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in " + p.name + " at optimizer step " +
                           std::to_string(optimizer.steps + 1));
      }
    }
  }
  std::vector<Tensor> params = net.params().tensors();
  rmsprop_step(params, optimizer);
  return r;
}

InferenceOutput infer(const StagingNetwork& net, const SequenceBatch& batch) {
  const EncoderStates states = net.encode_batch(batch.epochs, batch.n_sequences, {false, 0});
  return net.decode_inference(states);
}

std::size_t PrepareSummary::total() const {
  std::size_t n = 0;
  for (auto c : totals) n += c;
  return n;
}

std::string PrepareSummary::to_tsv() const {
  std::ostringstream out;
  out << "recording";
  for (int c = 0; c < kNumStages; ++c) out << '\t' << stage_class_name(c);
  out << "\ttotal\n";
  auto row = [&](const std::string& name, const ClassCounts& counts) {
    out << name;
    std::size_t n = 0;
    for (auto v : counts) {
      out << '\t' << v;
      n += v;
    }
    out << '\t' << n << '\n';
  };
  for (const auto& [name, counts] : per_recording) row(name, counts);
  row("TOTAL", totals);
  return out.str();
}

fs::path prepared_dir(const RunConfig& config) { return fs::path(config.output_dir) / "prepared"; }
fs::path train_dir(const RunConfig& config) { return fs::path(config.output_dir) / "train"; }
fs::path fold_dir(const RunConfig& config, int fold) { return train_dir(config) / fold_name(fold); }
fs::path report_dir(const RunConfig& config) { return fs::path(config.output_dir) / "report"; }

std::string window_unit(const RunConfig& config, const PreparedRecording& rec,
                        std::size_t window_index) {
  if (!config.intra_patient) return rec.subject_id;
  char buf[32];
  std::snprintf(buf, sizeof buf, "/w%05zu", window_index);
  return rec.recording_id + buf;
}

Dataset load_dataset(const RunConfig& config) {
  const fs::path dir = prepared_dir(config);
  const fs::path index = dir / "recordings.tsv";
  std::ifstream in(index, std::ios::binary);
  if (!in) throw DataError("no prepared dataset at " + dir.string() + " (run prepare first)");
  Dataset data;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    data.recordings.push_back(read_prepared(dir / (cells.at(0) + ".sqd")));
  }
  if (data.recordings.empty()) throw DataError(index.string() + " lists no recordings");
  for (const auto& rec : data.recordings) {
    if (rec.epoch_samples != data.recordings[0].epoch_samples) {
      throw DataError("recordings differ in epoch length (" + rec.recording_id + ")");
    }
  }
  data.plan = read_fold_plan(dir / "folds.tsv");
  if (data.plan.k != config.effective_folds()) {
    throw DataError("fold plan has " + std::to_string(data.plan.k) + " folds but the config asks for " +
                    std::to_string(config.effective_folds()) + "; re-run prepare");
  }
  for (const auto& rec : data.recordings) {
    const std::size_t windows =
        config.intra_patient ? rec.epochs.size() / config.model.maxtime : 1;
    for (std::size_t w = 0; w < windows; ++w) {
      const std::string unit = window_unit(config, rec, w);
      if (!data.plan.assignment.contains(unit)) {
        throw DataError("fold plan does not cover '" + unit +
                        "'; re-run prepare with the same intra_patient and maxtime");
      }
    }
  }
  return data;
}

TrainingSet build_training_set(const RunConfig& config, const Dataset& data, int fold,
                               std::ostream& log) {
  const std::size_t t = config.model.maxtime;
  TrainingSet ts;
  for (const auto& rec : data.recordings) {
    if (!config.intra_patient && data.plan.is_test(rec.subject_id, fold)) continue;
    const auto windows = make_sequences(rec.epochs, t);
    for (std::size_t w = 0; w < windows.size(); ++w) {
      if (config.intra_patient && data.plan.is_test(window_unit(config, rec, w), fold)) continue;
      EpochSequence seq = windows[w];
      for (auto& idx : seq.inputs) {
        ts.pool.push_back(rec.epochs[idx]);
        idx = ts.pool.size() - 1;
      }
      ts.sequences.push_back(std::move(seq));
    }
  }
  ts.real_sequences = ts.sequences.size();

  if (config.smote && !ts.pool.empty()) {
    const std::size_t offset = ts.pool.size();
    SmoteResult res =
        smote_oversample(ts.pool, balanced_targets(ts.pool), static_cast<std::size_t>(config.smote_k),
                         derive_seed(config.seed, "smote/" + fold_name(fold)));
    for (std::size_t i = offset; i < res.epochs.size(); ++i) {
      if (!config.intra_patient && data.plan.is_test(res.epochs[i].subject_id, fold)) {
        throw std::logic_error("synthetic epoch derived from test subject " +
                               res.epochs[i].subject_id);
      }
      ts.pool.push_back(std::move(res.epochs[i]));
    }
    ts.synthetic_epochs = ts.pool.size() - offset;
    auto class_seqs = make_class_sequences(std::span(ts.pool).subspan(offset), t);
    for (auto& seq : class_seqs) {
      for (auto& idx : seq.inputs) idx += offset;
      ts.sequences.push_back(std::move(seq));
    }
    if (res.warnings) {
      log << fold_name(fold) << ": " << res.warnings
          << " class(es) too small to interpolate (" << res.duplicated << " duplicated epochs)\n";
    }
  }
  log << fold_name(fold) << ": " << ts.real_sequences << " recorded sequences, "
      << ts.synthetic_epochs << " synthetic epochs in "
      << ts.sequences.size() - ts.real_sequences << " class sequences\n";
  return ts;
}

FoldTrainResult train_fold(const RunConfig& config, const Dataset& data, int fold, bool resume,
                           std::ostream& log) {
  const int k = config.effective_folds();
  const fs::path dir = fold_dir(config, fold);
  fs::create_directories(dir);
  const fs::path ckpt_path = dir / "model.ckpt";
  const fs::path log_path = dir / "train_log.tsv";
  const fs::path epoch_log_path = dir / "epoch_log.tsv";
  const fs::path timing_path = dir / "timing.tsv";

  const TrainingSet ts = build_training_set(config, data, fold, log);
  if (ts.sequences.empty()) {
    throw DataError(fold_name(fold) + " has no training sequences (every training recording is "
                    "shorter than maxtime?)");
  }

  StagingNetwork net(model_for(config, data.recordings[0].epoch_samples),
                     derive_seed(config.seed, "init/" + fold_name(fold)));
  OptimizerState opt;
  opt.options = {config.learning_rate, config.rmsprop_decay, config.rmsprop_epsilon};

  FoldTrainResult result;
  result.fold = fold;
  TrainProgress p;

  if (resume && fs::exists(ckpt_path)) {
    const Checkpoint ck = read_checkpoint(ckpt_path);
    if (static_cast<int>(read_meta(ck, "fold")) != fold || static_cast<int>(read_meta(ck, "folds")) != k) {
      throw DataError(ckpt_path.string() + " belongs to a different fold plan");
    }
    net.params().load(ck, "model/");
    for (const auto& param : net.params().all()) {
      const auto it = ck.find("optim/" + param.name);
      if (it == ck.end() || it->second.values.size() != param.value.numel()) {
        throw DataError(ckpt_path.string() + " lacks optimizer state for " + param.name);
      }
      opt.accumulators.push_back(it->second.values);
    }
    opt.steps = static_cast<std::int64_t>(read_meta(ck, "optimizer_steps"));
    p.step = static_cast<std::int64_t>(read_meta(ck, "step"));
    p.next_epoch = static_cast<int>(read_meta(ck, "next_epoch"));
    p.next_batch = static_cast<std::size_t>(read_meta(ck, "next_batch"));
    p.last_loss = read_meta(ck, "last_loss");
    p.epoch_loss_sum = read_meta(ck, "epoch_loss_sum");
    p.epoch_steps = static_cast<std::size_t>(read_meta(ck, "epoch_steps"));
    p.epoch_positions = static_cast<std::size_t>(read_meta(ck, "epoch_positions"));
    p.epoch_correct = static_cast<std::size_t>(read_meta(ck, "epoch_correct"));
    result.resumed = true;
    truncate_log(log_path, p.step, config.log_every);
    truncate_log(timing_path, p.step, config.log_every);
    truncate_log(epoch_log_path, p.next_epoch, 1);
    log << fold_name(fold) << ": resuming at step " << p.step << " (epoch " << p.next_epoch + 1
        << ")\n";
  } else {
    write_text(log_path, "step\tepoch\tloss\tobjective\ttf_accuracy\n");
    write_text(epoch_log_path, "epoch\tsteps\ttrain_loss\ttrain_tf_accuracy\n");
    write_text(timing_path, "step\tseconds\n");
  }
  auto train_log = open_append(log_path);
  auto epoch_log = open_append(epoch_log_path);
  auto timing = open_append(timing_path);

  const std::uint64_t fold_seed = derive_seed(config.seed, "train/" + fold_name(fold));
  const std::uint64_t dropout_stream = derive_seed(fold_seed, "dropout");
  const std::size_t n = ts.sequences.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t batches = (n + bs - 1) / bs;
  ObjectiveOptions obj{config.loss, config.eod_in_loss, config.l2_beta, true, 0};

  const auto started = std::chrono::steady_clock::now();
  auto steps_exhausted = [&] { return config.max_steps > 0 && p.step >= config.max_steps; };
  auto ratio = [](std::size_t num, std::size_t den) {
    return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
  };

  while (p.next_epoch < config.max_epochs && !steps_exhausted()) {
    const int e = p.next_epoch;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(fold_seed, static_cast<std::uint64_t>(e)));
    rng.shuffle(order.begin(), order.end());

    for (std::size_t b = p.next_batch; b < batches; ++b) {
      if (steps_exhausted()) break;
      std::vector<const EpochSequence*> members;
      for (std::size_t i = b * bs; i < std::min(n, (b + 1) * bs); ++i) {
        members.push_back(&ts.sequences[order[i]]);
      }
      obj.dropout_seed = derive_seed(dropout_stream, static_cast<std::uint64_t>(p.step));
      const StepResult r = train_step(net, opt, make_batch(ts.pool, members), obj);
      ++p.step;
      ++p.epoch_steps;
      p.epoch_loss_sum += r.loss;
      p.epoch_positions += r.stage_positions;
      p.epoch_correct += r.stage_correct;
      p.last_loss = r.loss;
      p.next_batch = b + 1;

      if (p.next_batch == batches) {
        epoch_log << e + 1 << '\t' << p.step << '\t'
                  << fmt(p.epoch_loss_sum / static_cast<double>(p.epoch_steps)) << '\t'
                  << fmt(ratio(p.epoch_correct, p.epoch_positions)) << '\n';
        p = TrainProgress{p.step, e + 1, 0, p.last_loss};
      }

      const bool last = steps_exhausted() || p.next_epoch >= config.max_epochs;
      if (p.step % config.log_every == 0 || last) {
        train_log << p.step << '\t' << e + 1 << '\t' << fmt(r.loss) << '\t' << fmt(r.total)
                  << '\t' << fmt(ratio(r.stage_correct, r.stage_positions)) << '\n';
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        timing << p.step << '\t' << fmt(seconds) << '\n';
      }
      if (p.step % config.checkpoint_every == 0) {
        train_log.flush();
        epoch_log.flush();
        save_training_checkpoint(ckpt_path, net, opt, fold, k, p);
      }
    }
  }
  train_log.flush();
  epoch_log.flush();
  save_training_checkpoint(ckpt_path, net, opt, fold, k, p);
  result.steps = p.step;
  result.epochs_completed = p.next_epoch;
  result.last_loss = p.last_loss;
  log << fold_name(fold) << ": " << p.step << " steps, last loss " << fmt(p.last_loss) << '\n';
  return result;
}

FoldPredictions FoldEvaluation::pooled() const {
  FoldPredictions out;
  std::set<std::string> units;
  for (const auto& rec : recordings) {
    units.insert(rec.subject_id);
    out.predicted.insert(out.predicted.end(), rec.predicted.begin(), rec.predicted.end());
    out.truth.insert(out.truth.end(), rec.truth.begin(), rec.truth.end());
  }
  out.subjects.assign(units.begin(), units.end());
  return out;
}

FoldEvaluation evaluate_fold(const RunConfig& config, const StagingNetwork& net,
                             const Dataset& data, int fold) {
  const std::size_t t = config.model.maxtime;
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  FoldEvaluation eval;
  for (const auto& rec : data.recordings) {
    const WindowPlan plan = test_windows(config, data, rec, fold);
    if (plan.windows.empty()) continue;
    RecordingPrediction pred;
    pred.recording_id = rec.recording_id;
    // Intra-patient units are windows; pooling checks them for overlap.
    pred.subject_id = config.intra_patient ? rec.recording_id : rec.subject_id;
    for (std::size_t first = 0; first < plan.windows.size(); first += bs) {
      const std::size_t last = std::min(plan.windows.size(), first + bs);
      std::vector<EpochSequence> seqs;
      for (std::size_t w = first; w < last; ++w) {
        seqs.push_back(window_sequence(rec.epochs, plan.windows[w].start, t));
      }
      std::vector<const EpochSequence*> ptrs;
      for (const auto& s : seqs) ptrs.push_back(&s);
      const InferenceOutput out = infer(net, make_batch(rec.epochs, ptrs));
      eval.eod_substitutions += out.eod_substitutions;
      for (std::size_t w = first; w < last; ++w) {
        const ScoringWindow& win = plan.windows[w];
        for (std::size_t i = win.emit_from - win.start; i < t; ++i) {
          const auto& epoch = rec.epochs[win.start + i];
          pred.positions.push_back(epoch.position);
          pred.truth.push_back(static_cast<int>(epoch.label));
          pred.predicted.push_back(out.labels[w - first][i]);
        }
      }
    }
    eval.recordings.push_back(std::move(pred));
  }
  return eval;
}

StagingNetwork load_fold_model(const RunConfig& config, int fold, std::size_t epoch_samples) {
  const fs::path path = fold_dir(config, fold) / "model.ckpt";
  if (!fs::exists(path)) {
    throw DataError("no checkpoint for " + fold_name(fold) + " at " + path.string() +
                    " (train that fold first)");
  }
  const Checkpoint ck = read_checkpoint(path);
  if (static_cast<int>(read_meta(ck, "fold")) != fold ||
      static_cast<int>(read_meta(ck, "folds")) != config.effective_folds()) {
    throw DataError(path.string() + " does not match " + fold_name(fold) + " of a " +
                    std::to_string(config.effective_folds()) + "-fold plan");
  }
  StagingNetwork net(model_for(config, epoch_samples), 0);
  net.params().load(ck, "model/");
  return net;
}

PrepareSummary cmd_prepare(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto pairs = find_recordings(config);
  const fs::path dir = prepared_dir(config);
  fs::create_directories(dir);

  PrepareSummary summary;
  std::vector<PreparedRecording> prepared;
  std::ostringstream index;
  index << "recording\tsubject\tpsg\thypnogram\tepochs\texcluded_unscored\tdropped_past_signal\n";
  for (const auto& pair : pairs) {
    PreparedRecording rec;
    SegmentResult seg;
    try {
      const ChannelData ch = select_channel(read_edf(pair.psg), config.channel);
      const Hypnogram hyp = parse_hypnogram(read_file_bytes(pair.hypnogram));
      seg = segment_epochs(ch.samples, ch.sampling_rate, hyp.stages, pair.subject_id,
                           LengthPolicy::kTruncate);
      rec.sampling_rate = ch.sampling_rate;
      rec.epoch_samples = static_cast<std::uint32_t>(std::llround(ch.sampling_rate * kEpochSeconds));
    } catch (const DataError& e) {
      throw DataError(pair.recording_id + ": " + e.what());
    }
    rec.recording_id = pair.recording_id;
    rec.subject_id = pair.subject_id;
    rec.epochs = std::move(seg.epochs);
    if (config.trim_wake_minutes > 0.0) rec.epochs = trim_wake(std::move(rec.epochs), config.trim_wake_minutes);
    normalize_epochs(rec.epochs);
    write_prepared(dir / (rec.recording_id + ".sqd"), rec);

    const ClassCounts counts = count_classes(rec.epochs);
    for (int c = 0; c < kNumStages; ++c) summary.totals[c] += counts[c];
    summary.per_recording.emplace_back(rec.recording_id, counts);
    summary.excluded_unscored += seg.excluded_unscored;
    summary.dropped_past_signal += seg.dropped_past_signal;
    index << rec.recording_id << '\t' << rec.subject_id << '\t' << pair.psg.filename().string()
          << '\t' << pair.hypnogram.filename().string() << '\t' << rec.epochs.size() << '\t'
          << seg.excluded_unscored << '\t' << seg.dropped_past_signal << '\n';
    log << rec.recording_id << " (" << rec.subject_id << "): " << rec.epochs.size() << " epochs";
    if (seg.dropped_past_signal) log << ", " << seg.dropped_past_signal << " past the signal end";
    log << '\n';
    prepared.push_back(std::move(rec));
  }
  for (const auto& rec : prepared) {
    if (rec.epoch_samples != prepared[0].epoch_samples) {
      throw DataError(rec.recording_id + " has " + std::to_string(rec.epoch_samples) +
                      " samples per epoch, " + prepared[0].recording_id + " has " +
                      std::to_string(prepared[0].epoch_samples));
    }
  }

  std::vector<std::string> units;
  for (const auto& rec : prepared) {
    const std::size_t windows =
        config.intra_patient ? rec.epochs.size() / config.model.maxtime : 1;
    for (std::size_t w = 0; w < windows; ++w) units.push_back(window_unit(config, rec, w));
  }
  const FoldPlan plan = split_folds(units, config.effective_folds(), config.seed);
  summary.units = plan.assignment.size();

  write_fold_plan(dir / "folds.tsv", plan);
  write_text(dir / "recordings.tsv", index.str());
  write_text(dir / "summary.tsv", summary.to_tsv());
  config.save(dir / "config.txt");
  log << summary.to_tsv();
  log << summary.excluded_unscored << " unscored or movement windows excluded; "
      << summary.units << " fold units in " << plan.k << " folds\n";
  return summary;
}

std::vector<FoldTrainResult> cmd_train(const RunConfig& config, bool resume, std::ostream& log) {
  config.validate();
  const Dataset data = load_dataset(config);
  fs::create_directories(train_dir(config));
  RunConfig effective = config;
  effective.model.epoch_samples = data.recordings[0].epoch_samples;
  effective.save(train_dir(config) / "config.txt");
  std::vector<FoldTrainResult> out;
  for (int fold : fold_range(config, data.plan.k)) {
    out.push_back(train_fold(effective, data, fold, resume, log));
  }
  return out;
}

MetricsReport cmd_evaluate(const RunConfig& config, std::ostream& log) {
  config.validate();
  const Dataset data = load_dataset(config);
  const std::size_t epoch_samples = data.recordings[0].epoch_samples;
  const fs::path dir = report_dir(config);
  fs::create_directories(dir);

  std::vector<FoldPredictions> folds;
  nlohmann::json fold_json = nlohmann::json::array();
  std::size_t eod_substitutions = 0;
  std::ostringstream predictions;
  predictions << "fold\trecording\tsubject\tposition\ttruth\tpredicted\n";
  for (int fold : fold_range(config, data.plan.k)) {
    const StagingNetwork net = load_fold_model(config, fold, epoch_samples);
    const FoldEvaluation eval = evaluate_fold(config, net, data, fold);
    FoldPredictions pooled = eval.pooled();
    if (config.intra_patient) {
      // Windows of one recording are spread over folds by design.
      pooled.subjects.clear();
    }
    eod_substitutions += eval.eod_substitutions;
    for (const auto& rec : eval.recordings) {
      for (std::size_t i = 0; i < rec.truth.size(); ++i) {
        predictions << fold << '\t' << rec.recording_id << '\t' << rec.subject_id << '\t'
                    << rec.positions[i] << '\t' << stage_class_name(rec.truth[i]) << '\t'
                    << stage_class_name(rec.predicted[i]) << '\n';
      }
    }
    const MetricsReport fold_report = make_report(confusion(pooled.predicted, pooled.truth));
    fold_json.push_back({{"fold", fold},
                         {"epochs", fold_report.matrix.total()},
                         {"accuracy", fold_report.overall.accuracy
                                          ? nlohmann::json(*fold_report.overall.accuracy)
                                          : nlohmann::json(nullptr)}});
    log << fold_name(fold) << ": " << fold_report.matrix.total() << " epochs, accuracy "
        << format_metric(fold_report.overall.accuracy) << '\n';
    folds.push_back(std::move(pooled));
  }
  const MetricsReport report = aggregate_folds(folds);

  std::string text = format_report(report);
  text += "EOD substitutions " + std::to_string(eod_substitutions) + "\n";
  nlohmann::json j = report_to_json(report);
  j["folds"] = fold_json;
  j["eod_substitutions"] = eod_substitutions;
  j["paradigm"] = config.intra_patient ? "intra-patient" : "inter-patient";

  write_text(dir / "report.txt", text);
  write_text(dir / "report.json", j.dump(2) + "\n");
  write_text(dir / "confusion.tsv", format_confusion_tsv(report.matrix));
  write_text(dir / "predictions.tsv", predictions.str());
  config.save(dir / "config.txt");
  log << text;
  return report;
}

std::vector<std::vector<double>> attention_matrix(const std::vector<AttentionStep>& steps,
                                                  std::size_t row) {
  std::vector<std::vector<double>> out;
  for (const auto& step : steps) {
    const std::size_t n = step.weights.dim(1);
    const auto v = step.weights.values().subspan(row * n, n);
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

std::string format_attention_tsv(const std::vector<std::vector<double>>& matrix,
                                 std::span<const std::int64_t> positions) {
  std::ostringstream out;
  out << "step";
  for (auto p : positions) out << '\t' << p;
  out << '\n';
  char buf[32];
  for (std::size_t t = 0; t < matrix.size(); ++t) {
    if (matrix[t].size() != positions.size()) {
      throw ShapeError("attention row has " + std::to_string(matrix[t].size()) + " columns for " +
                       std::to_string(positions.size()) + " epochs");
    }
    out << t;
    for (double a : matrix[t]) {
      std::snprintf(buf, sizeof buf, "%.8f", a);
      out << '\t' << buf;
    }
    out << '\n';
  }
  return out.str();
}

namespace {

// Decodes every window of `epochs`, writing one attention file per window.
struct WindowDecode {
  std::vector<int> labels;  // per epoch
  std::size_t eod_substitutions = 0;
  std::size_t maps = 0;
};

WindowDecode decode_windows(const RunConfig& config, const StagingNetwork& net,
                            std::span<const LabeledEpoch> epochs, const fs::path& attention_dir,
                            bool teacher_forced) {
  const std::size_t t = config.model.maxtime;
  const auto windows = scoring_windows(epochs.size(), t);
  if (windows.empty()) {
    throw DataError("recording has " + std::to_string(epochs.size()) +
                    " scoreable epochs, fewer than maxtime = " + std::to_string(t));
  }
  fs::create_directories(attention_dir);
  WindowDecode out;
  out.labels.assign(epochs.size(), 0);
  std::ostringstream index;
  index << "window\tfile\tfirst_epoch\temit_from\n";
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (std::size_t first = 0; first < windows.size(); first += bs) {
    const std::size_t last = std::min(windows.size(), first + bs);
    std::vector<EpochSequence> seqs;
    for (std::size_t w = first; w < last; ++w) seqs.push_back(window_sequence(epochs, windows[w].start, t));
    std::vector<const EpochSequence*> ptrs;
    for (const auto& s : seqs) ptrs.push_back(&s);
    const SequenceBatch batch = make_batch(epochs, ptrs);

    std::vector<AttentionStep> attention;
    std::vector<std::vector<int>> labels;
    if (teacher_forced) {
      const EncoderStates states = net.encode_batch(batch.epochs, batch.n_sequences, {false, 0});
      TeacherForcedOutput tf = net.decode_teacher_forced(states, batch.decoder_inputs);
      attention = std::move(tf.attention);
      for (std::size_t s = 0; s < batch.n_sequences; ++s) {
        std::vector<int> row;
        for (std::size_t step = 0; step < t; ++step) {
          const auto z = tf.logits[step].values().subspan(s * kNumOutputs, kNumStages);
          row.push_back(static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()));
        }
        labels.push_back(std::move(row));
      }
    } else {
      InferenceOutput inf = infer(net, batch);
      out.eod_substitutions += inf.eod_substitutions;
      attention = std::move(inf.attention);
      labels = std::move(inf.labels);
    }

    for (std::size_t w = first; w < last; ++w) {
      const ScoringWindow& win = windows[w];
      for (std::size_t i = win.emit_from - win.start; i < t; ++i) {
        out.labels[win.start + i] = labels[w - first][i];
      }
      std::vector<std::int64_t> positions;
      for (std::size_t i = 0; i < t; ++i) positions.push_back(epochs[win.start + i].position);
      char name[32];
      std::snprintf(name, sizeof name, "window_%04zu.tsv", w);
      write_text(attention_dir / name,
                 format_attention_tsv(attention_matrix(attention, w - first), positions));
      index << w << '\t' << name << '\t' << epochs[win.start].position << '\t'
            << epochs[win.emit_from].position << '\n';
      ++out.maps;
    }
  }
  write_text(attention_dir / "index.tsv", index.str());
  return out;
}

}  // namespace

ScoreResult cmd_score(const RunConfig& config, const ScoreOptions& options, std::ostream& log) {
  config.validate();
  const ChannelData ch = select_channel(read_edf(options.psg), config.channel);
  const double per_epoch = ch.sampling_rate * kEpochSeconds;
  const auto epoch_samples = static_cast<std::size_t>(std::llround(per_epoch));
  if (std::abs(per_epoch - static_cast<double>(epoch_samples)) > 1e-9 || epoch_samples == 0) {
    throw DataError("sampling rate " + fmt(ch.sampling_rate) + " Hz gives a non-integer epoch length");
  }

  std::vector<LabeledEpoch> epochs;
  const bool overlay = options.hypnogram.has_value();
  if (overlay) {
    const Hypnogram hyp = parse_hypnogram(read_file_bytes(*options.hypnogram));
    epochs = segment_epochs(ch.samples, ch.sampling_rate, hyp.stages, "", LengthPolicy::kTruncate).epochs;
  } else {
    for (std::size_t i = 0; (i + 1) * epoch_samples <= ch.samples.size(); ++i) {
      LabeledEpoch e;
      e.samples.assign(ch.samples.begin() + static_cast<std::ptrdiff_t>(i * epoch_samples),
                       ch.samples.begin() + static_cast<std::ptrdiff_t>((i + 1) * epoch_samples));
      e.position = static_cast<std::int64_t>(i);
      epochs.push_back(std::move(e));
    }
  }
  normalize_epochs(epochs);

  StagingNetwork net(model_for(config, epoch_samples), 0);
  net.params().load(read_checkpoint(options.checkpoint), "model/");

  fs::create_directories(options.out_dir);
  const WindowDecode dec = decode_windows(config, net, epochs, options.out_dir / "attention", false);

  ScoreResult result;
  result.predicted = dec.labels;
  result.attention_maps = dec.maps;
  std::size_t agree = 0;
  std::ostringstream hyp_out;
  hyp_out << "epoch\tonset_s\tstage" << (overlay ? "\texpert" : "") << '\n';
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    result.positions.push_back(epochs[i].position);
    hyp_out << epochs[i].position << '\t' << fmt(static_cast<double>(epochs[i].position) * kEpochSeconds)
            << '\t' << stage_class_name(dec.labels[i]);
    if (overlay) {
      const int expert = static_cast<int>(epochs[i].label);
      result.expert.push_back(expert);
      if (expert == dec.labels[i]) ++agree;
      hyp_out << '\t' << stage_class_name(expert);
    }
    hyp_out << '\n';
  }
  std::ostringstream summary;
  summary << "epochs\t" << epochs.size() << "\nattention_maps\t" << dec.maps
          << "\neod_substitutions\t" << dec.eod_substitutions << '\n';
  if (overlay) {
    result.agreement = 100.0 * static_cast<double>(agree) / static_cast<double>(epochs.size());
    summary << "agreement_percent\t" << format_metric(result.agreement) << '\n';
  }
  write_text(options.out_dir / "hypnogram.tsv", hyp_out.str());
  write_text(options.out_dir / "summary.tsv", summary.str());
  config.save(options.out_dir / "config.txt");
  log << summary.str();
  return result;
}

std::size_t cmd_export_attention(const RunConfig& config, const ExportAttentionOptions& options,
                                 std::ostream& log) {
  config.validate();
  const PreparedRecording rec = read_prepared(options.recording);
  StagingNetwork net(model_for(config, rec.epoch_samples), 0);
  net.params().load(read_checkpoint(options.checkpoint), "model/");
  fs::create_directories(options.out_dir);
  const WindowDecode dec =
      decode_windows(config, net, rec.epochs, options.out_dir, options.teacher_forced);
  config.save(options.out_dir / "config.txt");
  log << rec.recording_id << ": " << dec.maps << " attention maps ("
      << (options.teacher_forced ? "teacher-forced" : "inference") << ")\n";
  return dec.maps;
}

}  // namespace somnoseq
