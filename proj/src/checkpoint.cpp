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

#include "dstprobe/checkpoint.hpp"

#include <unistd.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "dstprobe/errors.hpp"

namespace dstprobe {
namespace {

constexpr char kMagic[8] = {'D', 'S', 'T', 'P', 'R', 'O', 'B', 'E'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw SchemaError("checkpoint", "truncated checkpoint");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header = ckpt.header;
  header["format_version"] = kCheckpointFormatVersion;
  const std::string h = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<uint32_t>(out, kCheckpointFormatVersion);
  put<uint64_t>(out, h.size());
  out += h;
  put<uint64_t>(out, ckpt.params.size());
  out.append(reinterpret_cast<const char*>(ckpt.params.data()), ckpt.params.size() * sizeof(double));
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw SchemaError("checkpoint.magic", "not a dstprobe checkpoint");
  size_t pos = sizeof(kMagic);
  const auto version = take<uint32_t>(bytes, pos);
  if (version != kCheckpointFormatVersion)
    throw SchemaError("checkpoint.format_version",
                      "unsupported checkpoint format version " + std::to_string(version));
  const auto hlen = take<uint64_t>(bytes, pos);
  if (pos + hlen > bytes.size()) throw SchemaError("checkpoint", "truncated checkpoint header");
  Checkpoint ckpt;
  ckpt.header = nlohmann::json::parse(bytes.substr(pos, hlen));
  pos += hlen;
  const auto n = take<uint64_t>(bytes, pos);
  if (pos + n * sizeof(double) != bytes.size())
    throw SchemaError("checkpoint.params", "parameter block size mismatch");
  ckpt.params.resize(n);
  std::memcpy(ckpt.params.data(), bytes.data() + pos, n * sizeof(double));
  return ckpt;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path.string(), "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace dstprobe
