// Copyright 2026 The mpsim Authors.
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

#pragma once

#include <stdexcept>
#include <string>

namespace mpsim {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent model / config / cluster description.
class SpecError : public Error {
 public:
  enum class Kind { Parse, DuplicateId, DanglingParent, UnknownTraceId, UnknownParam, BadRoot, Cycle, TraceOrder, BadValue };

  SpecError(Kind kind, std::string offending, const std::string& what)
      : Error(what), kind_(kind), offending_(std::move(offending)) {}

  Kind kind() const noexcept { return kind_; }
  const std::string& offending_id() const noexcept { return offending_; }

 private:
  Kind kind_;
  std::string offending_;
};

/// A configuration that is well-formed but cannot be realized
/// (non-divisible degrees, bad placement string, ...).
class InfeasibleConfig : public Error {
 public:
  using Error::Error;
};

/// Tensor shape or divisibility violation in the tensor-parallel kernels.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// API misuse that the caller could have avoided.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// The pipeline simulator ran out of runnable events with work outstanding.
class DeadlockError : public Error {
 public:
  DeadlockError(const std::string& what, std::string snapshot)
      : Error(what), snapshot_(std::move(snapshot)) {}
  const std::string& queue_snapshot() const noexcept { return snapshot_; }

 private:
  std::string snapshot_;
};

/// Static mode was enabled but recorded steps disagree.
class StaticModeViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace mpsim
