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

#ifndef SOMNOSEQ_CHECKPOINT_H_
#define SOMNOSEQ_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "somnoseq/tensor.h"

namespace somnoseq {

struct StoredArray {
  Shape shape;
  std::vector<double> values;

  bool operator==(const StoredArray&) const = default;
};

// Named arrays, written in key order so identical contents give identical
// bytes. Layout (little-endian):
//
//   magic "SOMNOCKP" | u32 version (1) | u64 n_entries
//   | n_entries x (str name | u32 rank | u64[rank] dims | f64[numel] values)
//
// str = u32 byte length + bytes.
using Checkpoint = std::map<std::string, StoredArray>;

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);
void write_checkpoint(const std::filesystem::path& path,
                      const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace somnoseq

#endif  // SOMNOSEQ_CHECKPOINT_H_
