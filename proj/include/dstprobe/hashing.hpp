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

#ifndef DSTPROBE_HASHING_HPP_
#define DSTPROBE_HASHING_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace dstprobe {

// Lower-case hex SHA-256 digests.
std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(std::span<const double> values);

// Derives an independent 64-bit seed for one unit of work, so per-turn random
// streams do not depend on processing order or thread count.
uint64_t derive_seed(uint64_t base, std::string_view key, uint64_t index = 0);

}  // namespace dstprobe

#endif  // DSTPROBE_HASHING_HPP_
