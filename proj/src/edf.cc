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

#include "somnoseq/edf.h"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>

namespace somnoseq {

namespace {

constexpr char kTalSeparator = 0x14;
constexpr char kDurationMark = 0x15;

using Kind = EdfError::Kind;

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::string text(std::size_t width, std::string_view field) {
    if (pos_ + width > bytes_.size()) {
      throw EdfError(Kind::kTruncated,
                     "EDF header truncated while reading " + std::string(field));
    }
    std::string out(reinterpret_cast<const char*>(bytes_.data() + pos_), width);
    pos_ += width;
    for (char c : out) {
      const auto u = static_cast<unsigned char>(c);
      if (u < 0x20 || u > 0x7e) {
        throw EdfError(Kind::kNonAscii,
                       "non-printable byte in EDF header field " +
                           std::string(field));
      }
    }
    const auto end = out.find_last_not_of(' ');
    out.erase(end == std::string::npos ? 0 : end + 1);
    return out;
  }

  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view raw, std::string_view field) {
  const std::string_view s = trim(raw);
  T value{};
  const char* first = s.data();
  if (!s.empty() && s.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw EdfError(Kind::kBadField, "EDF header field " + std::string(field) +
                                        " is not numeric: '" +
                                        std::string(raw) + "'");
  }
  return value;
}

// Parses "dd.mm.yy" into the three parts.
std::array<int, 3> parse_dotted(std::string_view s, std::string_view field) {
  if (s.size() != 8 || s[2] != '.' || s[5] != '.') {
    throw EdfError(Kind::kBadField,
                   "malformed EDF " + std::string(field) + ": '" +
                       std::string(s) + "'");
  }
  return {parse_number<int>(s.substr(0, 2), field),
          parse_number<int>(s.substr(3, 2), field),
          parse_number<int>(s.substr(6, 2), field)};
}

std::string pad(std::string_view s, std::size_t width,
                std::string_view field) {
  if (s.size() > width) {
    throw EdfError(Kind::kBadField, "value for EDF field " +
                                        std::string(field) + " exceeds " +
                                        std::to_string(width) + " bytes");
  }
  std::string out(s);
  out.resize(width, ' ');
  return out;
}

// Shortest decimal text that round-trips and fits the field.
std::string format_real(double v, std::size_t width, std::string_view field) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, ptr);
  if (s.size() <= width) return s;
  for (int precision = static_cast<int>(width); precision >= 0; --precision) {
    auto r = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed,
                           precision);
    s.assign(buf, r.ptr);
    if (s.size() <= width) return s;
  }
  throw EdfError(Kind::kBadField,
                 "value for EDF field " + std::string(field) + " too wide");
}

std::string two_digits(int v) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%02d", v % 100);
  return buf;
}

}  // namespace

std::size_t EdfHeader::record_bytes() const {
  std::size_t total = 0;
  for (const auto& s : signals) total += 2 * static_cast<std::size_t>(s.samples_per_record);
  return total;
}

EdfRecording::EdfRecording(EdfHeader header, std::vector<std::uint8_t> data)
    : header_(std::move(header)),
      data_(std::make_shared<const std::vector<std::uint8_t>>(std::move(data))) {
  std::size_t offset = 0;
  for (const auto& s : header_.signals) {
    signal_offsets_.push_back(offset);
    offset += 2 * static_cast<std::size_t>(s.samples_per_record);
  }
  const std::size_t expected =
      static_cast<std::size_t>(header_.n_data_records) * header_.record_bytes();
  if (data_->size() != expected) {
    throw EdfError(Kind::kTruncated,
                   "data record bytes (" + std::to_string(data_->size()) +
                       ") do not match header (" + std::to_string(expected) +
                       ")");
  }
}

std::size_t EdfRecording::signal_length(std::size_t signal) const {
  return static_cast<std::size_t>(header_.n_data_records) *
         static_cast<std::size_t>(header_.signals.at(signal).samples_per_record);
}

double EdfRecording::sampling_rate(std::size_t signal) const {
  return header_.signals.at(signal).samples_per_record /
         header_.record_duration_s;
}

std::span<const std::uint8_t> EdfRecording::signal_bytes(
    std::size_t record, std::size_t signal) const {
  const std::size_t begin =
      record * header_.record_bytes() + signal_offsets_.at(signal);
  return std::span<const std::uint8_t>(*data_).subspan(
      begin, 2 * static_cast<std::size_t>(
                     header_.signals[signal].samples_per_record));
}

std::vector<std::int16_t> EdfRecording::digital(std::size_t signal) const {
  std::vector<std::int16_t> out;
  out.reserve(signal_length(signal));
  for (std::int64_t r = 0; r < header_.n_data_records; ++r) {
    const auto bytes = signal_bytes(static_cast<std::size_t>(r), signal);
    for (std::size_t i = 0; i + 1 < bytes.size(); i += 2) {
      const auto u = static_cast<std::uint16_t>(bytes[i] | (bytes[i + 1] << 8));
      out.push_back(static_cast<std::int16_t>(u));
    }
  }
  return out;
}

std::vector<double> EdfRecording::physical(std::size_t signal) const {
  const auto& info = header_.signals.at(signal);
  const auto digits = digital(signal);
  std::vector<double> out(digits.size());
  std::transform(digits.begin(), digits.end(), out.begin(),
                 [&](std::int16_t d) { return info.to_physical(d); });
  return out;
}

EdfRecording parse_edf(std::span<const std::uint8_t> bytes) {
  HeaderReader in(bytes);
  EdfHeader h;
  h.version = in.text(8, "version");
  h.patient_id = in.text(80, "patient id");
  h.recording_id = in.text(80, "recording id");
  const auto date = parse_dotted(in.text(8, "start date"), "start date");
  const auto time = parse_dotted(in.text(8, "start time"), "start time");
  h.start.day = date[0];
  h.start.month = date[1];
  h.start.year = date[2] >= 85 ? 1900 + date[2] : 2000 + date[2];
  h.start.hour = time[0];
  h.start.minute = time[1];
  h.start.second = time[2];
  const auto header_bytes = parse_number<std::int64_t>(
      in.text(8, "header bytes"), "header bytes");
  h.reserved = in.text(44, "reserved");
  h.n_data_records = parse_number<std::int64_t>(in.text(8, "data records"),
                                                "data records");
  h.record_duration_s = parse_number<double>(in.text(8, "record duration"),
                                             "record duration");
  const auto ns = parse_number<std::int64_t>(in.text(4, "signal count"),
                                             "signal count");
  if (ns < 1) {
    throw EdfError(Kind::kBadField, "EDF file declares no signals");
  }
  if (header_bytes != 256 + 256 * ns) {
    throw EdfError(Kind::kHeaderSize,
                   "header byte count " + std::to_string(header_bytes) +
                       " != 256 + 256 * " + std::to_string(ns));
  }
  h.signals.resize(static_cast<std::size_t>(ns));
  auto each = [&](auto&& fn) {
    for (auto& s : h.signals) fn(s);
  };
  each([&](EdfSignalHeader& s) { s.label = in.text(16, "label"); });
  each([&](EdfSignalHeader& s) { s.transducer = in.text(80, "transducer"); });
  each([&](EdfSignalHeader& s) { s.physical_dim = in.text(8, "physical dimension"); });
  each([&](EdfSignalHeader& s) {
    s.physical_min = parse_number<double>(in.text(8, "physical min"), "physical min");
  });
  each([&](EdfSignalHeader& s) {
    s.physical_max = parse_number<double>(in.text(8, "physical max"), "physical max");
  });
  each([&](EdfSignalHeader& s) {
    s.digital_min = parse_number<int>(in.text(8, "digital min"), "digital min");
  });
  each([&](EdfSignalHeader& s) {
    s.digital_max = parse_number<int>(in.text(8, "digital max"), "digital max");
  });
  each([&](EdfSignalHeader& s) { s.prefiltering = in.text(80, "prefiltering"); });
  each([&](EdfSignalHeader& s) {
    s.samples_per_record =
        parse_number<int>(in.text(8, "samples per record"), "samples per record");
  });
  each([&](EdfSignalHeader& s) { s.reserved = in.text(32, "signal reserved"); });

  bool annotations_only = true;
  for (const auto& s : h.signals) {
    if (s.samples_per_record < 1) {
      throw EdfError(Kind::kBadField,
                     "signal '" + s.label + "' has no samples per record");
    }
    if (s.digital_min >= s.digital_max) {
      throw EdfError(Kind::kBadScaling,
                     "signal '" + s.label + "' has digital min >= digital max");
    }
    if (s.physical_min == s.physical_max) {
      throw EdfError(Kind::kBadScaling,
                     "signal '" + s.label + "' has physical min == physical max");
    }
    annotations_only = annotations_only && s.is_annotation();
  }
  // Annotation-only EDF+ files may use a zero record duration.
  if (h.record_duration_s < 0.0 ||
      (h.record_duration_s == 0.0 && !annotations_only)) {
    throw EdfError(Kind::kBadField, "record duration must be positive");
  }

  const std::size_t record_bytes = h.record_bytes();
  const std::size_t available = bytes.size() - in.position();
  if (h.n_data_records < 0) {
    // -1 marks an unknown count (recording still in progress).
    h.n_data_records = static_cast<std::int64_t>(available / record_bytes);
  }
  const std::size_t needed =
      static_cast<std::size_t>(h.n_data_records) * record_bytes;
  if (available < needed) {
    throw EdfError(Kind::kTruncated,
                   "EDF data truncated: need " + std::to_string(needed) +
                       " bytes of data records, have " +
                       std::to_string(available));
  }
  const auto* data_begin = bytes.data() + in.position();
  return EdfRecording(std::move(h),
                      std::vector<std::uint8_t>(data_begin, data_begin + needed));
}

std::vector<std::uint8_t> serialize_edf(const EdfRecording& recording) {
  const EdfHeader& h = recording.header();
  std::string out;
  out.reserve(h.header_bytes());
  out += pad(h.version, 8, "version");
  out += pad(h.patient_id, 80, "patient id");
  out += pad(h.recording_id, 80, "recording id");
  out += two_digits(h.start.day) + "." + two_digits(h.start.month) + "." +
         two_digits(h.start.year);
  out += two_digits(h.start.hour) + "." + two_digits(h.start.minute) + "." +
         two_digits(h.start.second);
  out += pad(std::to_string(h.header_bytes()), 8, "header bytes");
  out += pad(h.reserved, 44, "reserved");
  out += pad(std::to_string(h.n_data_records), 8, "data records");
  out += pad(format_real(h.record_duration_s, 8, "record duration"), 8,
             "record duration");
  out += pad(std::to_string(h.n_signals()), 4, "signal count");
  for (const auto& s : h.signals) out += pad(s.label, 16, "label");
  for (const auto& s : h.signals) out += pad(s.transducer, 80, "transducer");
  for (const auto& s : h.signals) out += pad(s.physical_dim, 8, "physical dimension");
  for (const auto& s : h.signals) out += pad(format_real(s.physical_min, 8, "physical min"), 8, "physical min");
  for (const auto& s : h.signals) out += pad(format_real(s.physical_max, 8, "physical max"), 8, "physical max");
  for (const auto& s : h.signals) out += pad(std::to_string(s.digital_min), 8, "digital min");
  for (const auto& s : h.signals) out += pad(std::to_string(s.digital_max), 8, "digital max");
  for (const auto& s : h.signals) out += pad(s.prefiltering, 80, "prefiltering");
  for (const auto& s : h.signals) out += pad(std::to_string(s.samples_per_record), 8, "samples per record");
  for (const auto& s : h.signals) out += pad(s.reserved, 32, "signal reserved");

  std::vector<std::uint8_t> bytes(out.begin(), out.end());
  const auto data = recording.data_records();
  bytes.insert(bytes.end(), data.begin(), data.end());
  return bytes;
}

EdfRecording make_edf(EdfHeader header,
                      const std::vector<std::vector<std::int16_t>>& digital) {
  if (digital.size() != header.n_signals()) {
    throw EdfError(Kind::kBadField, "signal count does not match header");
  }
  const std::size_t n_records = static_cast<std::size_t>(header.n_data_records);
  std::vector<std::uint8_t> data;
  data.reserve(n_records * header.record_bytes());
  for (std::size_t r = 0; r < n_records; ++r) {
    for (std::size_t s = 0; s < digital.size(); ++s) {
      const auto spr = static_cast<std::size_t>(header.signals[s].samples_per_record);
      if (digital[s].size() != n_records * spr) {
        throw EdfError(Kind::kBadField, "signal " + std::to_string(s) +
                                            " length does not match header");
      }
      for (std::size_t i = r * spr; i < (r + 1) * spr; ++i) {
        const auto u = static_cast<std::uint16_t>(digital[s][i]);
        data.push_back(static_cast<std::uint8_t>(u & 0xff));
        data.push_back(static_cast<std::uint8_t>(u >> 8));
      }
    }
  }
  return EdfRecording(std::move(header), std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open " + path.string());
  }
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

EdfRecording read_edf(const std::filesystem::path& path) {
  return parse_edf(read_file_bytes(path));
}

ChannelData select_channel(const EdfRecording& recording,
                           std::string_view label) {
  const std::string_view wanted = trim(label);
  const auto& signals = recording.header().signals;
  std::size_t found = signals.size();
  std::size_t matches = 0;
  for (std::size_t i = 0; i < signals.size(); ++i) {
    if (trim(signals[i].label) == wanted) {
      found = i;
      ++matches;
    }
  }
  if (matches == 0) {
    throw EdfError(Kind::kChannelNotFound,
                   "channel '" + std::string(wanted) + "' not in recording");
  }
  if (matches > 1) {
    throw EdfError(Kind::kChannelAmbiguous,
                   "channel '" + std::string(wanted) + "' matches " +
                       std::to_string(matches) + " signals");
  }
  if (recording.header().is_discontinuous()) {
    throw EdfError(Kind::kDiscontinuous,
                   "discontinuous EDF+D recordings are not supported");
  }
  return ChannelData{signals[found].label, recording.physical(found),
                     recording.sampling_rate(found)};
}

std::string_view stage_label_name(StageLabel label) {
  switch (label) {
    case StageLabel::kWake: return "W";
    case StageLabel::kStage1: return "1";
    case StageLabel::kStage2: return "2";
    case StageLabel::kStage3: return "3";
    case StageLabel::kStage4: return "4";
    case StageLabel::kRem: return "R";
    case StageLabel::kMovement: return "M";
    case StageLabel::kUnscored: return "?";
  }
  return "?";
}

namespace {

double parse_tal_time(std::string_view s, bool require_sign) {
  if (s.empty() || (require_sign && s.front() != '+' && s.front() != '-')) {
    throw EdfError(Kind::kAnnotation,
                   "malformed annotation timestamp '" + std::string(s) + "'");
  }
  double value = 0.0;
  const char* first = s.data() + ((s.front() == '+') ? 1 : 0);
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw EdfError(Kind::kAnnotation,
                   "malformed annotation timestamp '" + std::string(s) + "'");
  }
  return value;
}

// Parses one annotation signal slice (one data record) into `out`.
void parse_tal_block(std::span<const std::uint8_t> block,
                     std::vector<TimedAnnotation>& out) {
  const std::string_view all(reinterpret_cast<const char*>(block.data()),
                             block.size());
  std::size_t pos = 0;
  while (pos < all.size()) {
    if (all[pos] == '\0') {
      ++pos;
      continue;
    }
    const std::size_t end = all.find('\0', pos);
    if (end == std::string_view::npos) {
      throw EdfError(Kind::kAnnotation, "unterminated annotation list");
    }
    const std::string_view tal = all.substr(pos, end - pos);
    pos = end + 1;

    const std::size_t time_end = tal.find(kTalSeparator);
    if (time_end == std::string_view::npos || tal.back() != kTalSeparator) {
      throw EdfError(Kind::kAnnotation, "annotation missing separator");
    }
    std::string_view stamp = tal.substr(0, time_end);
    TimedAnnotation base;
    const std::size_t dur_mark = stamp.find(kDurationMark);
    if (dur_mark != std::string_view::npos) {
      base.duration_s = parse_tal_time(stamp.substr(dur_mark + 1), false);
      stamp = stamp.substr(0, dur_mark);
    }
    base.onset_s = parse_tal_time(stamp, true);

    std::string_view rest = tal.substr(time_end + 1);
    while (!rest.empty()) {
      const std::size_t sep = rest.find(kTalSeparator);
      const std::string_view text = rest.substr(0, sep);
      if (!text.empty()) {
        TimedAnnotation a = base;
        a.text = std::string(text);
        out.push_back(std::move(a));
      }
      if (sep == std::string_view::npos) break;
      rest = rest.substr(sep + 1);
    }
  }
}

bool stage_from_text(std::string_view text, StageLabel& label) {
  static constexpr std::pair<std::string_view, StageLabel> kStages[] = {
      {"Sleep stage W", StageLabel::kWake},
      {"Sleep stage 1", StageLabel::kStage1},
      {"Sleep stage 2", StageLabel::kStage2},
      {"Sleep stage 3", StageLabel::kStage3},
      {"Sleep stage 4", StageLabel::kStage4},
      {"Sleep stage R", StageLabel::kRem},
      {"Movement time", StageLabel::kMovement},
      {"Sleep stage ?", StageLabel::kUnscored},
  };
  for (const auto& [name, value] : kStages) {
    if (text == name) {
      label = value;
      return true;
    }
  }
  return false;
}

}  // namespace

std::vector<TimedAnnotation> parse_annotations(const EdfRecording& recording) {
  std::vector<TimedAnnotation> out;
  const auto& signals = recording.header().signals;
  for (std::int64_t r = 0; r < recording.header().n_data_records; ++r) {
    for (std::size_t s = 0; s < signals.size(); ++s) {
      if (!signals[s].is_annotation()) continue;
      parse_tal_block(recording.signal_bytes(static_cast<std::size_t>(r), s), out);
    }
  }
  return out;
}

Hypnogram parse_hypnogram(const EdfRecording& recording) {
  Hypnogram hyp;
  for (const auto& a : parse_annotations(recording)) {
    StageLabel label;
    if (!stage_from_text(a.text, label)) {
      ++hyp.ignored;
      continue;
    }
    if (!(a.duration_s > 0.0) || a.onset_s < 0.0) {
      throw EdfError(Kind::kAnnotation,
                     "stage annotation '" + a.text + "' at " +
                         std::to_string(a.onset_s) +
                         " s needs a positive duration and onset >= 0");
    }
    hyp.stages.push_back({a.onset_s, a.duration_s, label});
  }
  std::stable_sort(hyp.stages.begin(), hyp.stages.end(),
                   [](const StageAnnotation& a, const StageAnnotation& b) {
                     return a.onset_s < b.onset_s;
                   });
  for (std::size_t i = 1; i < hyp.stages.size(); ++i) {
    const auto& prev = hyp.stages[i - 1];
    if (hyp.stages[i].onset_s < prev.onset_s + prev.duration_s - 1e-9) {
      throw EdfError(Kind::kOverlap,
                     "stage annotations overlap at " +
                         std::to_string(hyp.stages[i].onset_s) + " s");
    }
  }
  return hyp;
}

Hypnogram parse_hypnogram(std::span<const std::uint8_t> bytes) {
  return parse_hypnogram(parse_edf(bytes));
}

}  // namespace somnoseq
