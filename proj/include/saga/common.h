/*
 * Copyright 2026 The Saga Coordinator Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef SAGA_COMMON_H_
#define SAGA_COMMON_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "json.hpp"

namespace saga {

// Structured payloads (operation inputs/outputs, entity records, log bodies).
// nlohmann::json keeps object keys sorted, so dump() is canonical.
using Value = nlohmann::json;

// Logical time. Planning scenarios use minutes since midnight; generic
// sagas use a monotone counter.
using Tick = std::int64_t;

// Monetary amounts in integer cents.
using Cents = std::int64_t;

enum class ErrorCode {
  kUnresolvableAtom,
  kUnknownOperation,
  kCycleDetected,
  kInvalidTransition,
  kStorageFailure,
  kUnknownCheckpoint,
  kBudgetTooSmall,
  kCorruptLog,
  kSchemaUnknown,
  kUnknownLocation,
  kUnknownPerson,
  kRetryExhausted,
  kBindingMissing,
  kValidatorUnavailable,
  kCompensationFailed,
  kRewriteOfPast,
  kInfeasible,
  kRoleExtractionEmpty,
  kSchemaGapDetected,
  kRefinementDiverged,
  kProviderUnavailable,
  kNoInventory,
  kNothingToCompensate,
  kInvalidInput,
  kNegativeInput,
  kFixtureMismatch,
  kScenarioParseError,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Thrown by fault-injection hooks to emulate a process crash. Never caught by
// library code.
class SimulatedCrash : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// "HH:MM" <-> minutes since midnight.
Tick parse_clock(std::string_view text);
std::string format_clock(Tick minutes);

// 64-bit FNV-1a; used for state digests and log-prefix hashes.
std::uint64_t fnv1a(std::string_view bytes,
                    std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string digest_hex(std::uint64_t digest);

}  // namespace saga

#endif  // SAGA_COMMON_H_
