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

#include "saga/common.h"

#include <charconv>
#include <cstdio>

namespace saga {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnresolvableAtom: return "UnresolvableAtom";
    case ErrorCode::kUnknownOperation: return "UnknownOperation";
    case ErrorCode::kCycleDetected: return "CycleDetected";
    case ErrorCode::kInvalidTransition: return "InvalidTransition";
    case ErrorCode::kStorageFailure: return "StorageFailure";
    case ErrorCode::kUnknownCheckpoint: return "UnknownCheckpoint";
    case ErrorCode::kBudgetTooSmall: return "BudgetTooSmall";
    case ErrorCode::kCorruptLog: return "CorruptLog";
    case ErrorCode::kSchemaUnknown: return "SchemaUnknown";
    case ErrorCode::kUnknownLocation: return "UnknownLocation";
    case ErrorCode::kUnknownPerson: return "UnknownPerson";
    case ErrorCode::kRetryExhausted: return "RetryExhausted";
    case ErrorCode::kBindingMissing: return "BindingMissing";
    case ErrorCode::kValidatorUnavailable: return "ValidatorUnavailable";
    case ErrorCode::kCompensationFailed: return "CompensationFailed";
    case ErrorCode::kRewriteOfPast: return "RewriteOfPast";
    case ErrorCode::kInfeasible: return "Infeasible";
    case ErrorCode::kRoleExtractionEmpty: return "RoleExtractionEmpty";
    case ErrorCode::kSchemaGapDetected: return "SchemaGapDetected";
    case ErrorCode::kRefinementDiverged: return "RefinementDiverged";
    case ErrorCode::kProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::kNoInventory: return "NoInventory";
    case ErrorCode::kNothingToCompensate: return "NothingToCompensate";
    case ErrorCode::kInvalidInput: return "InvalidInput";
    case ErrorCode::kNegativeInput: return "NegativeInput";
    case ErrorCode::kFixtureMismatch: return "FixtureMismatch";
    case ErrorCode::kScenarioParseError: return "ScenarioParseError";
  }
  return "Unknown";
}

Tick parse_clock(std::string_view text) {
  auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw Error(ErrorCode::kInvalidInput, "bad clock value '" + std::string(text) + "'");
  }
  int hours = 0;
  int minutes = 0;
  auto h = std::from_chars(text.data(), text.data() + colon, hours);
  auto m = std::from_chars(text.data() + colon + 1, text.data() + text.size(), minutes);
  if (h.ec != std::errc() || m.ec != std::errc() || h.ptr != text.data() + colon ||
      m.ptr != text.data() + text.size() || hours < 0 || minutes < 0 || minutes >= 60) {
    throw Error(ErrorCode::kInvalidInput, "bad clock value '" + std::string(text) + "'");
  }
  return static_cast<Tick>(hours) * 60 + minutes;
}

std::string format_clock(Tick minutes) {
  char buf[32];
  const char* sign = minutes < 0 ? "-" : "";
  Tick abs = minutes < 0 ? -minutes : minutes;
  std::snprintf(buf, sizeof(buf), "%s%02lld:%02lld", sign,
                static_cast<long long>(abs / 60), static_cast<long long>(abs % 60));
  return buf;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string digest_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

}  // namespace saga
