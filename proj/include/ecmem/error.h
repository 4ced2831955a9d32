// Copyright 2026 The ecmem Authors
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

#ifndef ECMEM_ERROR_H_
#define ECMEM_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace ecmem {

enum class ErrorCode {
  kInvalidParams,
  kLengthMismatch,
  kInsufficientSplits,
  kUncorrectable,
  kClusterTooSmall,
  kInvalidShape,
  kUnknownEntity,
  kCapacityExhausted,
  kWriteFailed,
  kUnrecoverableRead,
  kUnrecoverableRange,
  kInsufficientSlabs,
  kConfigInvalid,
  kTraceParseError,
  kIoError,
};

std::string_view error_code_name(ErrorCode code);

// All library failures surface as this exception; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidParams: return "invalid-params";
    case ErrorCode::kLengthMismatch: return "length-mismatch";
    case ErrorCode::kInsufficientSplits: return "insufficient-splits";
    case ErrorCode::kUncorrectable: return "uncorrectable";
    case ErrorCode::kClusterTooSmall: return "cluster-too-small";
    case ErrorCode::kInvalidShape: return "invalid-shape";
    case ErrorCode::kUnknownEntity: return "unknown-entity";
    case ErrorCode::kCapacityExhausted: return "capacity-exhausted";
    case ErrorCode::kWriteFailed: return "write-failed";
    case ErrorCode::kUnrecoverableRead: return "unrecoverable-read";
    case ErrorCode::kUnrecoverableRange: return "unrecoverable-range";
    case ErrorCode::kInsufficientSlabs: return "insufficient-slabs";
    case ErrorCode::kConfigInvalid: return "config-invalid";
    case ErrorCode::kTraceParseError: return "trace-parse-error";
    case ErrorCode::kIoError: return "io-error";
  }
  return "unknown";
}

}  // namespace ecmem

#endif  // ECMEM_ERROR_H_
