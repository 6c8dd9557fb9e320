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

// Reader for EDF and EDF+ files: fixed-width ASCII headers, 16-bit
// little-endian data records and EDF+ time-stamped annotation lists.

#ifndef SOMNOSEQ_EDF_H_
#define SOMNOSEQ_EDF_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "somnoseq/errors.h"

namespace somnoseq {

class EdfError : public DataError {
 public:
  enum class Kind {
    kTruncated,
    kBadField,
    kNonAscii,
    kHeaderSize,
    kBadScaling,
    kDiscontinuous,
    kAnnotation,
    kOverlap,
    kChannelNotFound,
    kChannelAmbiguous,
  };

  EdfError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct EdfDateTime {
  int day = 1;
  int month = 1;
  int year = 1985;  // four digits; stored on disk as yy (1985..2084)
  int hour = 0;
  int minute = 0;
  int second = 0;

  bool operator==(const EdfDateTime&) const = default;
};

struct EdfSignalHeader {
  std::string label;
  std::string transducer;
  std::string physical_dim;
  double physical_min = -1.0;
  double physical_max = 1.0;
  int digital_min = -32768;
  int digital_max = 32767;
  std::string prefiltering;
  int samples_per_record = 1;
  std::string reserved;

  bool is_annotation() const { return label == "EDF Annotations"; }
  // Physical units per digital step.
  double gain() const {
    return (physical_max - physical_min) /
           static_cast<double>(digital_max - digital_min);
  }
  double to_physical(int digital) const {
    return physical_min + (digital - digital_min) * gain();
  }

  bool operator==(const EdfSignalHeader&) const = default;
};

struct EdfHeader {
  std::string version = "0";
  std::string patient_id;
  std::string recording_id;
  EdfDateTime start;
  std::string reserved;  // "EDF+C" / "EDF+D" for EDF+ files
  std::int64_t n_data_records = 0;
  double record_duration_s = 1.0;
  std::vector<EdfSignalHeader> signals;

  std::size_t n_signals() const { return signals.size(); }
  std::size_t header_bytes() const { return 256 + 256 * signals.size(); }
  // Bytes in one data record across all signals.
  std::size_t record_bytes() const;
  bool is_discontinuous() const { return reserved.starts_with("EDF+D"); }

  bool operator==(const EdfHeader&) const = default;
};

// A parsed file. Sample data stays in its on-disk encoding until a signal
// is requested, so selecting one channel of a long multi-channel night does
// not materialize the others.
class EdfRecording {
 public:
  EdfRecording(EdfHeader header, std::vector<std::uint8_t> data_records);

  const EdfHeader& header() const { return header_; }
  std::span<const std::uint8_t> data_records() const { return *data_; }

  std::size_t signal_length(std::size_t signal) const;
  double sampling_rate(std::size_t signal) const;
  std::vector<std::int16_t> digital(std::size_t signal) const;
  std::vector<double> physical(std::size_t signal) const;

  // Raw bytes of one signal's slice inside data record `record`.
  std::span<const std::uint8_t> signal_bytes(std::size_t record,
                                             std::size_t signal) const;

 private:
  EdfHeader header_;
  std::shared_ptr<const std::vector<std::uint8_t>> data_;
  std::vector<std::size_t> signal_offsets_;  // byte offset within a record
};

EdfRecording parse_edf(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_edf(const EdfRecording& recording);

// Builds a recording from per-signal digital samples. Each series length
// must equal n_data_records * samples_per_record.
EdfRecording make_edf(EdfHeader header,
                      const std::vector<std::vector<std::int16_t>>& digital);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
EdfRecording read_edf(const std::filesystem::path& path);

struct ChannelData {
  std::string label;
  std::vector<double> samples;
  double sampling_rate = 0.0;
};

// Exact label match after trimming surrounding whitespace.
ChannelData select_channel(const EdfRecording& recording,
                           std::string_view label);

// Raw R&K hypnogram labels as written by Sleep-EDF scorers.
enum class StageLabel { kWake, kStage1, kStage2, kStage3, kStage4, kRem,
                        kMovement, kUnscored };

std::string_view stage_label_name(StageLabel label);

struct StageAnnotation {
  double onset_s = 0.0;
  double duration_s = 0.0;
  StageLabel label = StageLabel::kUnscored;
};

struct Hypnogram {
  std::vector<StageAnnotation> stages;  // ordered by onset
  std::size_t ignored = 0;              // non-stage annotations skipped
};

struct TimedAnnotation {
  double onset_s = 0.0;
  double duration_s = -1.0;  // negative when absent
  std::string text;
};

// Every text annotation of the file's "EDF Annotations" signals, in file
// order. Time-keeping entries (empty text) are dropped.
std::vector<TimedAnnotation> parse_annotations(const EdfRecording& recording);

Hypnogram parse_hypnogram(std::span<const std::uint8_t> bytes);
Hypnogram parse_hypnogram(const EdfRecording& recording);

}  // namespace somnoseq

#endif  // SOMNOSEQ_EDF_H_
