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

// Run configuration. Files hold one "key = value" per line; '#' starts a
// comment. Every key has a default, so an empty file is a valid config, and
// to_text() output parses back to an identical config.

#ifndef SOMNOSEQ_CONFIG_H_
#define SOMNOSEQ_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "somnoseq/loss.h"
#include "somnoseq/network.h"

namespace somnoseq {

enum class DatasetVariant { kSleepEdf13, kSleepEdf18, kOther };

struct RunConfig {
  // Data.
  std::string input_dir;
  std::string manifest;     // optional TSV: psg <tab> hypnogram [<tab> subject]
  std::string output_dir = "run";
  std::string channel = "EEG Fpz-Cz";
  DatasetVariant dataset = DatasetVariant::kSleepEdf13;
  int folds = 0;            // 0: 20 for sleep-edf-13, 10 otherwise
  bool intra_patient = false;
  double trim_wake_minutes = 0.0;  // 0 keeps every epoch

  // Model.
  ModelConfig model = ModelConfig::standard();

  // Training.
  LossKind loss = LossKind::kMfe;
  bool eod_in_loss = true;
  double l2_beta = 0.001;
  double learning_rate = 1e-4;
  double rmsprop_decay = 0.9;
  double rmsprop_epsilon = 1e-10;
  int batch_size = 20;
  int max_epochs = 400;
  std::int64_t max_steps = 0;  // 0: no step cap
  bool smote = true;
  int smote_k = 5;
  std::uint64_t seed = 1;
  int log_every = 50;
  int checkpoint_every = 1000;
  int fold = -1;  // -1: every fold

  int effective_folds() const;
  void validate() const;

  // Applies "key=value" (or "key = value"); throws ConfigError on an
  // unknown key or a malformed value.
  void set(std::string_view assignment);
  void set(std::string_view key, std::string_view value);

  std::string to_text() const;
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

std::string dataset_variant_name(DatasetVariant variant);

// "width:filters:stride:padding,..." for a branch's conv layers.
std::string format_layers(const std::vector<ConvLayerConfig>& layers);
std::vector<ConvLayerConfig> parse_layers(std::string_view text);

}  // namespace somnoseq

#endif  // SOMNOSEQ_CONFIG_H_
