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

#ifndef DSTPROBE_CHECKPOINT_HPP_
#define DSTPROBE_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace dstprobe {

inline constexpr uint32_t kCheckpointFormatVersion = 1;

// Binary layout (little endian):
//   8 bytes   magic "DSTPROBE"
//   u32       format version
//   u64       header length, then that many bytes of UTF-8 JSON
//   u64       parameter count, then that many IEEE-754 doubles
// The JSON header always carries "format_version" and "kind".
struct Checkpoint {
  nlohmann::json header;
  std::vector<double> params;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary file and rename so readers never observe a partial
// file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace dstprobe

#endif  // DSTPROBE_CHECKPOINT_HPP_
