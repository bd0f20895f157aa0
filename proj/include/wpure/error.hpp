//
// Copyright 2026 The wpure Authors
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

#ifndef WPURE_ERROR_HPP
#define WPURE_ERROR_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace wpure {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (bad shape, out-of-range value).
class PreconditionError : public Error {
public:
  using Error::Error;
};

class DimensionError : public PreconditionError {
public:
  using PreconditionError::PreconditionError;
};

/// NaN or infinity appeared where a finite value is required.
class NumericError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

/// Malformed binary file. Carries the byte offset at which parsing failed.
class ParseError : public Error {
public:
  enum class Kind { BadMagic, BadVersion, Truncated, BadShape, LabelOutOfRange, CoordinateOutOfDomain, BadValue };

  ParseError(Kind kind, std::uint64_t offset, const std::string &what)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"), kind_(kind), offset_(offset) {}

  Kind kind() const noexcept { return kind_; }
  std::uint64_t offset() const noexcept { return offset_; }

private:
  Kind kind_;
  std::uint64_t offset_;
};

/// Requested sample sizes cannot be drawn from the available pools.
class InfeasibleError : public Error {
public:
  InfeasibleError(const std::string &what, std::uint64_t required, std::uint64_t available)
      : Error(what + ": need " + std::to_string(required) + ", have " + std::to_string(available)),
        required_(required), available_(available) {}

  std::uint64_t required() const noexcept { return required_; }
  std::uint64_t available() const noexcept { return available_; }

private:
  std::uint64_t required_;
  std::uint64_t available_;
};

/// Configuration validation failure listing every violation found.
class ValidationError : public Error {
public:
  explicit ValidationError(std::vector<std::string> violations)
      : Error(join(violations)), violations_(std::move(violations)) {}

  const std::vector<std::string> &violations() const noexcept { return violations_; }

private:
  static std::string join(const std::vector<std::string> &v) {
    std::string out = "invalid configuration:";
    for (const auto &s : v) out += "\n  " + s;
    return out;
  }

  std::vector<std::string> violations_;
};

namespace detail {

inline void require(bool cond, const std::string &what) {
  if (!cond) throw PreconditionError(what);
}

inline void require_dims(bool cond, const std::string &what) {
  if (!cond) throw DimensionError(what);
}

} // namespace detail

} // namespace wpure

#endif // WPURE_ERROR_HPP
