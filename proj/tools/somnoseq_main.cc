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

// somnoseq: prepare, train, evaluate and score single-channel EEG sleep
// staging runs. Exit codes: 0 ok, 1 usage/config, 2 data, 3 numeric.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "somnoseq/config.h"
#include "somnoseq/errors.h"
#include "somnoseq/workflow.h"

namespace {

using somnoseq::RunConfig;

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("-c,--config", flags.config_path, "key = value config file");
  cmd->add_option("-s,--set", flags.overrides, "override a config key (key=value), repeatable");
  cmd->add_option("-o,--output-dir", flags.output_dir, "run directory (config key output_dir)");
}

RunConfig build_config(const CommonFlags& flags) {
  RunConfig config = flags.config_path.empty() ? RunConfig{} : RunConfig::load(flags.config_path);
  for (const auto& kv : flags.overrides) config.set(kv);
  if (!flags.output_dir.empty()) config.output_dir = flags.output_dir;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence-to-sequence sleep stage scoring from single-channel EEG"};
  app.require_subcommand(1);

  CommonFlags prepare_flags, train_flags, eval_flags, score_flags, export_flags;

  auto* prepare = app.add_subcommand("prepare", "segment, label and normalize recordings; plan folds");
  add_common(prepare, prepare_flags);
  std::string input_dir, manifest;
  prepare->add_option("-i,--input-dir", input_dir, "directory of *-PSG.edf / *-Hypnogram.edf");
  prepare->add_option("-m,--manifest", manifest, "TSV of psg, hypnogram[, subject] paths");

  auto* train = app.add_subcommand("train", "train one model per fold");
  add_common(train, train_flags);
  bool resume = false;
  train->add_flag("--resume", resume, "continue from each fold's last checkpoint");

  auto* evaluate = app.add_subcommand("evaluate", "decode test folds and write the pooled report");
  add_common(evaluate, eval_flags);

  auto* score = app.add_subcommand("score", "stage one recording; write hypnogram and attention maps");
  add_common(score, score_flags);
  somnoseq::ScoreOptions score_opts;
  std::string score_psg, score_hyp, score_ckpt, score_out;
  score->add_option("--psg", score_psg, "recording (EDF/EDF+)")->required();
  score->add_option("--hypnogram", score_hyp, "expert hypnogram for an agreement overlay");
  score->add_option("--checkpoint", score_ckpt, "trained model checkpoint")->required();
  score->add_option("--out", score_out, "output directory (default <output_dir>/score/<recording>)");

  auto* exporter = app.add_subcommand("export-attention", "attention maps for a prepared recording");
  add_common(exporter, export_flags);
  somnoseq::ExportAttentionOptions export_opts;
  std::string export_rec, export_ckpt, export_out;
  exporter->add_option("--recording", export_rec, "prepared .sqd file")->required();
  exporter->add_option("--checkpoint", export_ckpt, "trained model checkpoint")->required();
  exporter->add_option("--out", export_out, "output directory (default <output_dir>/attention/<recording>)");
  exporter->add_flag("--teacher-forced", export_opts.teacher_forced, "feed expert labels to the decoder");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*prepare) {
      RunConfig config = build_config(prepare_flags);
      if (!input_dir.empty()) config.input_dir = input_dir;
      if (!manifest.empty()) config.manifest = manifest;
      somnoseq::cmd_prepare(config, std::cout);
    } else if (*train) {
      somnoseq::cmd_train(build_config(train_flags), resume, std::cout);
    } else if (*evaluate) {
      somnoseq::cmd_evaluate(build_config(eval_flags), std::cout);
    } else if (*score) {
      const RunConfig config = build_config(score_flags);
      score_opts.psg = score_psg;
      if (!score_hyp.empty()) score_opts.hypnogram = score_hyp;
      score_opts.checkpoint = score_ckpt;
      std::string stem = score_opts.psg.filename().string();
      if (stem.ends_with("-PSG.edf")) stem.resize(stem.size() - 8);
      score_opts.out_dir = score_out.empty()
                               ? std::filesystem::path(config.output_dir) / "score" / stem
                               : std::filesystem::path(score_out);
      somnoseq::cmd_score(config, score_opts, std::cout);
    } else if (*exporter) {
      const RunConfig config = build_config(export_flags);
      export_opts.recording = export_rec;
      export_opts.checkpoint = export_ckpt;
      export_opts.out_dir = export_out.empty()
                                ? std::filesystem::path(config.output_dir) / "attention" /
                                      export_opts.recording.stem()
                                : std::filesystem::path(export_out);
      somnoseq::cmd_export_attention(config, export_opts, std::cout);
    }
  } catch (const somnoseq::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const somnoseq::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const somnoseq::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const somnoseq::ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
