//
// Copyright 2026 The dstprobe Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include "dstprobe/hashing.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstring>
#include <stdexcept>

namespace dstprobe {
namespace {

std::array<unsigned char, 32> sha256_raw(const void* data, size_t len) {
  std::array<unsigned char, 32> out{};
  unsigned int out_len = 0;
  if (EVP_Digest(data, len, out.data(), &out_len, EVP_sha256(), nullptr) != 1 || out_len != 32)
    throw std::runtime_error("sha256 failed");
  return out;
}

std::string to_hex(const std::array<unsigned char, 32>& digest) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (unsigned char c : digest) {
    s.push_back(kHex[c >> 4]);
    s.push_back(kHex[c & 0xF]);
  }
  return s;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  return to_hex(sha256_raw(bytes.data(), bytes.size()));
}

std::string sha256_hex(std::span<const double> values) {
  return to_hex(sha256_raw(values.data(), values.size_bytes()));
}

uint64_t derive_seed(uint64_t base, std::string_view key, uint64_t index) {
  std::string buf(sizeof(base) + key.size() + sizeof(index), '\0');
  std::memcpy(buf.data(), &base, sizeof(base));
  std::memcpy(buf.data() + sizeof(base), key.data(), key.size());
  std::memcpy(buf.data() + sizeof(base) + key.size(), &index, sizeof(index));
  const auto digest = sha256_raw(buf.data(), buf.size());
  uint64_t seed = 0;
  std::memcpy(&seed, digest.data(), sizeof(seed));
  return seed;
}

}  // namespace dstprobe
