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

#include "somnoseq/checkpoint.h"

#include <fstream>

#include "binary_io.h"

namespace somnoseq {

namespace {
constexpr char kMagic[9] = "SOMNOCKP";
}

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
  out.write(kMagic, 8);
  binary::put<std::uint32_t>(out, kCheckpointFormatVersion);
  binary::put<std::uint64_t>(out, checkpoint.size());
  for (const auto& [name, array] : checkpoint) {
    if (shape_numel(array.shape) != array.values.size()) {
      throw ShapeError("checkpoint entry '" + name + "' has inconsistent shape");
    }
    binary::put_string(out, name);
    binary::put<std::uint32_t>(out, static_cast<std::uint32_t>(array.shape.size()));
    for (auto d : array.shape) binary::put<std::uint64_t>(out, d);
    for (double v : array.values) binary::put<double>(out, v);
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  binary::expect_magic(in, kMagic);
  const auto version = binary::get<std::uint32_t>(in);
  if (version != kCheckpointFormatVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint checkpoint;
  const auto n = binary::get<std::uint64_t>(in);
  for (std::uint64_t e = 0; e < n; ++e) {
    std::string name = binary::get_string(in);
    StoredArray array;
    const auto rank = binary::get<std::uint32_t>(in);
    if (rank > 8) throw DataError("corrupt checkpoint: rank " + std::to_string(rank));
    for (std::uint32_t r = 0; r < rank; ++r) {
      array.shape.push_back(static_cast<std::size_t>(binary::get<std::uint64_t>(in)));
    }
    const std::size_t count = shape_numel(array.shape);
    if (count > (std::size_t{1} << 32)) throw DataError("corrupt checkpoint: entry too large");
    array.values.resize(count);
    in.read(reinterpret_cast<char*>(array.values.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint entry '" + name + "'");
    checkpoint.emplace(std::move(name), std::move(array));
  }
  return checkpoint;
}

void write_checkpoint(const std::filesystem::path& path,
                      const Checkpoint& checkpoint) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    write_checkpoint(out, checkpoint);
    if (!out) throw DataError("write failed for checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace somnoseq
