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

#include "somnoseq/dataset_io.h"

#include <fstream>

#include "binary_io.h"

namespace somnoseq {

namespace {
constexpr char kMagic[9] = "SOMNOSQD";
}

void write_prepared(const std::filesystem::path& path,
                    const PreparedRecording& rec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, 8);
  binary::put<std::uint32_t>(out, kPreparedFormatVersion);
  binary::put_string(out, rec.recording_id);
  binary::put_string(out, rec.subject_id);
  binary::put<double>(out, rec.sampling_rate);
  binary::put<std::uint32_t>(out, rec.epoch_samples);
  binary::put<std::uint64_t>(out, rec.epochs.size());
  for (const auto& e : rec.epochs) {
    if (e.samples.size() != rec.epoch_samples) {
      throw DataError("epoch length mismatch while writing " + path.string());
    }
    binary::put<std::int64_t>(out, e.position);
    binary::put<std::uint8_t>(out, static_cast<std::uint8_t>(e.label));
    for (double v : e.samples) binary::put<float>(out, static_cast<float>(v));
  }
  if (!out) throw DataError("write failed for " + path.string());
}

PreparedRecording read_prepared(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  binary::expect_magic(in, kMagic);
  const auto version = binary::get<std::uint32_t>(in);
  if (version != kPreparedFormatVersion) {
    throw DataError(path.string() + ": unsupported format version " +
                    std::to_string(version));
  }
  PreparedRecording rec;
  rec.recording_id = binary::get_string(in);
  rec.subject_id = binary::get_string(in);
  rec.sampling_rate = binary::get<double>(in);
  rec.epoch_samples = binary::get<std::uint32_t>(in);
  const auto n = binary::get<std::uint64_t>(in);
  rec.epochs.reserve(n);
  std::vector<float> buf(rec.epoch_samples);
  for (std::uint64_t i = 0; i < n; ++i) {
    LabeledEpoch e;
    e.position = binary::get<std::int64_t>(in);
    const auto label = binary::get<std::uint8_t>(in);
    if (label >= kNumStages) {
      throw DataError(path.string() + ": label out of range");
    }
    e.label = static_cast<StageClass>(label);
    e.subject_id = rec.subject_id;
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw DataError(path.string() + ": truncated epoch data");
    e.samples.assign(buf.begin(), buf.end());
    rec.epochs.push_back(std::move(e));
  }
  return rec;
}

}  // namespace somnoseq
