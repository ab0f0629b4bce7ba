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

#ifndef SAGA_CONTEXT_STORE_H_
#define SAGA_CONTEXT_STORE_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "saga/common.h"
#include "saga/state_model.h"

namespace saga {

enum class LogKind {
  kOpRecord,
  kCheckpoint,
  kDisruption,
  kValidationVerdict,
  kCompensation,
  kCommit,
  kCompensationRegistration,
  kRestore,
  kConstraint,
  kDependency,
  kGoal,
  kReasoning,
  kFeedback,
  kPlan,
  kSagaStart,
  kSagaOutcome,
  kFailure,
  kVerification,
  kDiscard,
};

std::string_view to_string(LogKind k);
LogKind log_kind_from_string(std::string_view s);

struct LogEntry {
  std::uint64_t seq = 0;  // assigned by the store
  LogKind kind = LogKind::kOpRecord;
  Tick tick = 0;          // logical time the entry refers to
  Value payload = Value::object();
  bool committed = true;

  friend bool operator==(const LogEntry&, const LogEntry&) = default;
};

// Canonical serialized form (the record payload written to disk).
std::string serialize_entry(const LogEntry& e);
LogEntry deserialize_entry(std::string_view bytes);

struct HistoryFilter {
  std::optional<std::set<LogKind>> kinds;
  std::optional<std::string> op;  // matches payload["op"]
  std::optional<Tick> from_tick;  // inclusive
  std::optional<Tick> to_tick;    // inclusive
};

struct RetentionPolicy {
  std::size_t max_records = 64;
  std::size_t max_bytes = 1024;
  // Highest priority first; kinds not listed rank below every listed kind.
  std::vector<LogKind> priority = {LogKind::kConstraint, LogKind::kDependency, LogKind::kGoal,
                                   LogKind::kOpRecord, LogKind::kReasoning};
};

struct CheckpointInfo {
  std::string id;
  std::uint64_t seq = 0;
};

// What open() did to the on-disk log.
struct RecoveryReport {
  std::size_t records = 0;
  std::uint64_t truncated_bytes = 0;
  std::optional<std::uint64_t> truncated_at_offset;
  std::vector<std::string> warnings;
};

// Fault injection for crash tests. Called before the record for `seq` is
// written.
enum class FaultAction { kNone, kCrashBeforeWrite, kTornWrite, kCrashAfterWrite, kIoError };
using FaultHook = std::function<FaultAction(std::uint64_t seq)>;

struct StoreOptions {
  bool sync = true;               // fdatasync before acknowledging
  std::size_t group_commit = 1;   // sync every N appends when > 1
  FaultHook fault;
};

// Durable, append-only operation log with checkpoints. One writer at a time;
// readers may query concurrently.
//
// On-disk record: u32 length (LE), u32 CRC32 of payload (LE), payload bytes.
// A torn record at the tail is truncated on open with a warning; a bad record
// followed by more data raises Error(kCorruptLog).
class ContextStore {
 public:
  static ContextStore open(const std::filesystem::path& path, StoreOptions options = {});

  ContextStore(ContextStore&&) noexcept;
  ContextStore& operator=(ContextStore&&) noexcept;
  ContextStore(const ContextStore&) = delete;
  ContextStore& operator=(const ContextStore&) = delete;
  ~ContextStore();

  // The entry's seq must be 0; returns the assigned sequence number, which
  // is durable on return.
  std::uint64_t append(LogEntry entry);
  std::uint64_t append(LogKind kind, Value payload, Tick tick, bool committed = true);

  std::string checkpoint(const StateSnapshot& snap, Tick tick = 0);
  // Appends a restore marker and returns the stored snapshot.
  StateSnapshot restore(const std::string& checkpoint_id, Tick tick = 0);
  // Stored snapshot without appending anything.
  StateSnapshot checkpoint_snapshot(const std::string& checkpoint_id) const;
  std::vector<CheckpointInfo> checkpoints() const;

  std::vector<LogEntry> query_history(const HistoryFilter& filter = {}) const;
  std::vector<LogEntry> retained_context(const RetentionPolicy& policy) const;

  // All entries, committed or not, in sequence order.
  std::vector<LogEntry> entries() const;
  std::uint64_t last_seq() const;
  std::size_t size() const;

  // True when a later restore marker rolled the entry back.
  bool rolled_back(std::uint64_t seq) const;

  // Hash over the serialized bytes of entries 1..upto_seq.
  std::uint64_t prefix_hash(std::uint64_t upto_seq) const;
  std::string entry_bytes(std::uint64_t seq) const;

  // State as of `upto_seq`: checkpoint entries set it, restore markers reset
  // it, entries with a payload "delta" apply.
  StateSnapshot materialize(std::uint64_t upto_seq) const;
  // Checkpoint snapshot followed by the deltas in (checkpoint, upto_seq].
  StateSnapshot replay(const std::string& checkpoint_id, std::uint64_t upto_seq) const;

  const RecoveryReport& recovery() const { return recovery_; }
  const std::filesystem::path& path() const { return path_; }

  // Loads the log read-only (no truncation) for inspection tools.
  static std::vector<LogEntry> read_all(const std::filesystem::path& path);

 private:
  ContextStore() = default;

  void write_record(const std::string& bytes, std::uint64_t seq);
  const LogEntry& at(std::uint64_t seq) const;

  std::filesystem::path path_;
  StoreOptions options_;
  int fd_ = -1;
  std::size_t unsynced_ = 0;
  std::vector<LogEntry> entries_;
  std::vector<std::string> bytes_;
  RecoveryReport recovery_;
  mutable std::shared_mutex mu_;
};

// Applies the "delta" carried by an entry payload, if any.
void apply_entry(StateSnapshot& snap, const LogEntry& e);

}  // namespace saga

#endif  // SAGA_CONTEXT_STORE_H_
