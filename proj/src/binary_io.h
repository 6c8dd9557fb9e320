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

// Little-endian primitives shared by the binary container formats.

#ifndef SOMNOSEQ_SRC_BINARY_IO_H_
#define SOMNOSEQ_SRC_BINARY_IO_H_

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "somnoseq/errors.h"

namespace somnoseq::binary {

static_assert(std::endian::native == std::endian::little,
              "container formats assume a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("unexpected end of binary file");
  return value;
}

inline std::string get_string(std::istream& in, std::uint32_t max_len = 1 << 20) {
  const auto len = get<std::uint32_t>(in);
  if (len > max_len) throw DataError("corrupt string length in binary file");
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw DataError("unexpected end of binary file");
  return s;
}

inline void expect_magic(std::istream& in, const char (&magic)[9]) {
  char buf[8];
  in.read(buf, 8);
  if (!in || std::memcmp(buf, magic, 8) != 0) {
    throw DataError("not a " + std::string(magic, 8) + " file");
  }
}

}  // namespace somnoseq::binary

#endif  // SOMNOSEQ_SRC_BINARY_IO_H_
