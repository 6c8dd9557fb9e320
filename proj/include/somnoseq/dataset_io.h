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

#ifndef SOMNOSEQ_DATASET_IO_H_
#define SOMNOSEQ_DATASET_IO_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "somnoseq/pipeline.h"

namespace somnoseq {

// One recording's normalized, labeled epochs. On disk (".sqd"):
//
//   magic "SOMNOSQD" | u32 version (1) | str recording_id | str subject_id
//   | f64 sampling_rate | u32 epoch_samples | u64 n_epochs
//   | n_epochs x (i64 position | u8 label | f32[epoch_samples])
//
// All integers and floats little-endian; str = u32 byte length + bytes.
struct PreparedRecording {
  std::string recording_id;
  std::string subject_id;
  double sampling_rate = 100.0;
  std::uint32_t epoch_samples = 3000;
  std::vector<LabeledEpoch> epochs;
};

inline constexpr std::uint32_t kPreparedFormatVersion = 1;

void write_prepared(const std::filesystem::path& path,
                    const PreparedRecording& recording);
PreparedRecording read_prepared(const std::filesystem::path& path);

}  // namespace somnoseq

#endif  // SOMNOSEQ_DATASET_IO_H_
