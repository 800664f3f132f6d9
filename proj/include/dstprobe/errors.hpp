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

#ifndef DSTPROBE_ERRORS_HPP_
#define DSTPROBE_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace dstprobe {

class EmptyInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A dataset, ontology or artifact file does not match its schema. `field`
// names the offending key path.
class SchemaError : public std::runtime_error {
 public:
  SchemaError(std::string field, const std::string& what)
      : std::runtime_error(what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An upstream artifact a command depends on has not been produced yet.
class MissingArtifactError : public std::runtime_error {
 public:
  MissingArtifactError(std::string artifact, const std::string& what)
      : std::runtime_error(what), artifact_(std::move(artifact)) {}
  const std::string& artifact() const { return artifact_; }

 private:
  std::string artifact_;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Held-out turns leaking into a training set.
class ContaminationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Another writer holds the artifact store.
class StoreLockedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dstprobe

#endif  // DSTPROBE_ERRORS_HPP_
