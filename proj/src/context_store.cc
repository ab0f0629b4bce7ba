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

#include "saga/context_store.h"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <mutex>

namespace saga {

namespace {

constexpr std::size_t kHeaderSize = 8;
constexpr std::uint32_t kMaxRecord = 64u << 20;

const std::pair<LogKind, std::string_view> kKindNames[] = {
    {LogKind::kOpRecord, "op-record"},
    {LogKind::kCheckpoint, "checkpoint"},
    {LogKind::kDisruption, "disruption"},
    {LogKind::kValidationVerdict, "validation-verdict"},
    {LogKind::kCompensation, "compensation"},
    {LogKind::kCommit, "commit"},
    {LogKind::kCompensationRegistration, "compensation-registration"},
    {LogKind::kRestore, "restore"},
    {LogKind::kConstraint, "constraint"},
    {LogKind::kDependency, "dependency"},
    {LogKind::kGoal, "goal"},
    {LogKind::kReasoning, "reasoning"},
    {LogKind::kFeedback, "feedback"},
    {LogKind::kPlan, "plan"},
    {LogKind::kSagaStart, "saga-start"},
    {LogKind::kSagaOutcome, "saga-outcome"},
    {LogKind::kFailure, "failure"},
    {LogKind::kVerification, "verification"},
    {LogKind::kDiscard, "discard"},
};

std::uint32_t crc_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct ScanResult {
  std::vector<LogEntry> entries;
  std::vector<std::string> bytes;
  std::size_t valid_end = 0;
  bool torn_tail = false;
};

// Walks framed records; stops at the first bad one.
ScanResult scan(const std::string& data) {
  ScanResult r;
  std::size_t pos = 0;
  std::uint64_t last_seq = 0;
  while (pos < data.size()) {
    if (data.size() - pos < kHeaderSize) {
      r.torn_tail = true;
      break;
    }
    std::uint32_t len = get_u32(data.data() + pos);
    std::uint32_t crc = get_u32(data.data() + pos + 4);
    if (len > kMaxRecord || data.size() - pos - kHeaderSize < len) {
      r.torn_tail = true;
      break;
    }
    std::string_view payload(data.data() + pos + kHeaderSize, len);
    bool ok = crc_of(payload) == crc;
    LogEntry e;
    if (ok) {
      try {
        e = deserialize_entry(payload);
        ok = e.seq == last_seq + 1;
      } catch (const std::exception&) {
        ok = false;
      }
    }
    if (!ok) {
      // A bad final record is a torn write; anything after it means the
      // middle of the log is damaged.
      r.torn_tail = pos + kHeaderSize + len == data.size();
      break;
    }
    last_seq = e.seq;
    r.entries.push_back(std::move(e));
    r.bytes.emplace_back(payload);
    pos += kHeaderSize + len;
    r.valid_end = pos;
  }
  return r;
}

}  // namespace

std::string_view to_string(LogKind k) {
  for (const auto& [kind, name] : kKindNames) {
    if (kind == k) return name;
  }
  return "op-record";
}

LogKind log_kind_from_string(std::string_view s) {
  for (const auto& [kind, name] : kKindNames) {
    if (name == s) return kind;
  }
  throw Error(ErrorCode::kInvalidInput, "unknown log kind '" + std::string(s) + "'");
}

std::string serialize_entry(const LogEntry& e) {
  Value j = {{"seq", e.seq},
             {"kind", to_string(e.kind)},
             {"tick", e.tick},
             {"committed", e.committed},
             {"payload", e.payload}};
  return j.dump();
}

LogEntry deserialize_entry(std::string_view bytes) {
  Value j = Value::parse(bytes);
  LogEntry e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.kind = log_kind_from_string(j.at("kind").get<std::string>());
  e.tick = j.at("tick").get<Tick>();
  e.committed = j.at("committed").get<bool>();
  e.payload = j.at("payload");
  return e;
}

void apply_entry(StateSnapshot& snap, const LogEntry& e) {
  if (e.payload.is_object() && e.payload.contains("delta")) {
    apply_delta(snap, e.payload.at("delta").get<StateDelta>());
  }
  snap.log_cursor = e.seq;
}

// ---------------------------------------------------------------------------

ContextStore ContextStore::open(const std::filesystem::path& path, StoreOptions options) {
  ContextStore store;
  store.path_ = path;
  store.options_ = std::move(options);

  std::string data = std::filesystem::exists(path) ? read_file(path) : std::string();
  ScanResult scanned = scan(data);
  if (scanned.valid_end < data.size()) {
    if (!scanned.torn_tail) {
      throw Error(ErrorCode::kCorruptLog,
                  path.string() + ": bad record at offset " + std::to_string(scanned.valid_end) +
                      " after seq " + std::to_string(scanned.entries.size()));
    }
    store.recovery_.truncated_at_offset = scanned.valid_end;
    store.recovery_.truncated_bytes = data.size() - scanned.valid_end;
    store.recovery_.warnings.push_back("truncated " + std::to_string(data.size() - scanned.valid_end) +
                                       " byte torn tail at offset " +
                                       std::to_string(scanned.valid_end));
    std::cerr << "saga: " << path.string() << ": " << store.recovery_.warnings.back() << "\n";
  }
  store.recovery_.records = scanned.entries.size();
  store.entries_ = std::move(scanned.entries);
  store.bytes_ = std::move(scanned.bytes);

  store.fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (store.fd_ < 0) {
    throw Error(ErrorCode::kStorageFailure, path.string() + ": " + std::strerror(errno));
  }
  if (::ftruncate(store.fd_, static_cast<off_t>(scanned.valid_end)) != 0 ||
      ::lseek(store.fd_, 0, SEEK_END) < 0) {
    throw Error(ErrorCode::kStorageFailure, path.string() + ": " + std::strerror(errno));
  }
  return store;
}

ContextStore::ContextStore(ContextStore&& other) noexcept { *this = std::move(other); }

ContextStore& ContextStore::operator=(ContextStore&& other) noexcept {
  if (this == &other) return *this;
  if (fd_ >= 0) ::close(fd_);
  path_ = std::move(other.path_);
  options_ = std::move(other.options_);
  fd_ = std::exchange(other.fd_, -1);
  unsynced_ = other.unsynced_;
  entries_ = std::move(other.entries_);
  bytes_ = std::move(other.bytes_);
  recovery_ = std::move(other.recovery_);
  return *this;
}

ContextStore::~ContextStore() {
  if (fd_ >= 0) {
    if (unsynced_ > 0 && options_.sync) ::fdatasync(fd_);
    ::close(fd_);
  }
}

void ContextStore::write_record(const std::string& bytes, std::uint64_t seq) {
  std::string frame;
  frame.reserve(kHeaderSize + bytes.size());
  put_u32(frame, static_cast<std::uint32_t>(bytes.size()));
  put_u32(frame, crc_of(bytes));
  frame += bytes;

  FaultAction fault = options_.fault ? options_.fault(seq) : FaultAction::kNone;
  if (fault == FaultAction::kCrashBeforeWrite) {
    throw SimulatedCrash("crash before writing seq " + std::to_string(seq));
  }
  if (fault == FaultAction::kIoError) {
    throw Error(ErrorCode::kStorageFailure, "injected I/O error at seq " + std::to_string(seq));
  }
  std::size_t to_write = fault == FaultAction::kTornWrite ? frame.size() / 2 : frame.size();
  std::size_t written = 0;
  while (written < to_write) {
    ssize_t n = ::write(fd_, frame.data() + written, to_write - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kStorageFailure, path_.string() + ": " + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  if (fault == FaultAction::kTornWrite) {
    throw SimulatedCrash("torn write at seq " + std::to_string(seq));
  }
  if (options_.sync && ++unsynced_ >= std::max<std::size_t>(1, options_.group_commit)) {
    if (::fdatasync(fd_) != 0) {
      throw Error(ErrorCode::kStorageFailure, path_.string() + ": " + std::strerror(errno));
    }
    unsynced_ = 0;
  }
  if (fault == FaultAction::kCrashAfterWrite) {
    throw SimulatedCrash("crash after writing seq " + std::to_string(seq));
  }
}

std::uint64_t ContextStore::append(LogEntry entry) {
  if (entry.seq != 0) {
    throw Error(ErrorCode::kInvalidInput, "sequence numbers are assigned by the store");
  }
  std::unique_lock lock(mu_);
  entry.seq = entries_.empty() ? 1 : entries_.back().seq + 1;
  std::string bytes = serialize_entry(entry);
  try {
    write_record(bytes, entry.seq);
  } catch (const SimulatedCrash&) {
    // The in-memory view dies with the "process".
    throw;
  }
  entries_.push_back(std::move(entry));
  bytes_.push_back(std::move(bytes));
  return entries_.back().seq;
}

std::uint64_t ContextStore::append(LogKind kind, Value payload, Tick tick, bool committed) {
  LogEntry e;
  e.kind = kind;
  e.payload = std::move(payload);
  e.tick = tick;
  e.committed = committed;
  return append(std::move(e));
}

std::string ContextStore::checkpoint(const StateSnapshot& snap, Tick tick) {
  std::uint64_t next;
  {
    std::shared_lock lock(mu_);
    if (snap.log_cursor > (entries_.empty() ? 0 : entries_.back().seq)) {
      throw Error(ErrorCode::kInvalidInput, "snapshot cursor is ahead of the log");
    }
    next = entries_.empty() ? 1 : entries_.back().seq + 1;
  }
  std::string id = "cp-" + std::to_string(next);
  append(LogKind::kCheckpoint, Value{{"checkpoint_id", id}, {"snapshot", snap}}, tick);
  return id;
}

const LogEntry& ContextStore::at(std::uint64_t seq) const {
  if (seq == 0 || seq > entries_.size()) {
    throw Error(ErrorCode::kInvalidInput, "no entry with seq " + std::to_string(seq));
  }
  return entries_[seq - 1];
}

StateSnapshot ContextStore::checkpoint_snapshot(const std::string& checkpoint_id) const {
  std::shared_lock lock(mu_);
  for (const auto& e : entries_) {
    if (e.kind == LogKind::kCheckpoint && e.payload.value("checkpoint_id", "") == checkpoint_id) {
      return e.payload.at("snapshot").get<StateSnapshot>();
    }
  }
  throw Error(ErrorCode::kUnknownCheckpoint, checkpoint_id);
}

StateSnapshot ContextStore::restore(const std::string& checkpoint_id, Tick tick) {
  StateSnapshot snap = checkpoint_snapshot(checkpoint_id);
  append(LogKind::kRestore, Value{{"checkpoint_id", checkpoint_id}}, tick);
  return snap;
}

std::vector<CheckpointInfo> ContextStore::checkpoints() const {
  std::shared_lock lock(mu_);
  std::vector<CheckpointInfo> out;
  for (const auto& e : entries_) {
    if (e.kind == LogKind::kCheckpoint) {
      out.push_back(CheckpointInfo{e.payload.at("checkpoint_id").get<std::string>(), e.seq});
    }
  }
  return out;
}

std::vector<LogEntry> ContextStore::query_history(const HistoryFilter& filter) const {
  std::shared_lock lock(mu_);
  std::vector<LogEntry> out;
  for (const auto& e : entries_) {
    if (!e.committed) continue;
    if (filter.kinds && filter.kinds->count(e.kind) == 0) continue;
    if (filter.op) {
      if (!e.payload.is_object() || e.payload.value("op", "") != *filter.op) continue;
    }
    if (filter.from_tick && e.tick < *filter.from_tick) continue;
    if (filter.to_tick && e.tick > *filter.to_tick) continue;
    out.push_back(e);
  }
  return out;
}

std::vector<LogEntry> ContextStore::retained_context(const RetentionPolicy& policy) const {
  std::shared_lock lock(mu_);

  auto rank_of = [&](LogKind k) {
    auto it = std::find(policy.priority.begin(), policy.priority.end(), k);
    return static_cast<std::size_t>(it - policy.priority.begin());
  };

  // Latest entry per constraint id / per operation decides what is mandatory.
  std::map<std::string, std::uint64_t> latest_constraint;
  std::map<std::string, std::uint64_t> latest_op_record;
  std::map<std::string, std::uint64_t> latest_compensation;
  for (const auto& e : entries_) {
    if (!e.committed || !e.payload.is_object()) continue;
    if (e.kind == LogKind::kConstraint && e.payload.contains("id")) {
      latest_constraint[e.payload.at("id").get<std::string>()] = e.seq;
    } else if ((e.kind == LogKind::kOpRecord || e.kind == LogKind::kCommit) && e.payload.contains("op")) {
      latest_op_record[e.payload.at("op").get<std::string>()] = e.seq;
    } else if (e.kind == LogKind::kCompensation && e.payload.contains("op")) {
      latest_compensation[e.payload.at("op").get<std::string>()] = e.seq;
    }
  }

  std::set<std::uint64_t> mandatory;
  for (const auto& [id, seq] : latest_constraint) {
    if (!at(seq).payload.value("resolved", false)) mandatory.insert(seq);
  }
  for (const auto& [op, seq] : latest_op_record) {
    const auto& payload = at(seq).payload;
    if (payload.value("status", "completed") != "completed") continue;
    auto comp = latest_compensation.find(op);
    if (comp == latest_compensation.end() || comp->second < seq) mandatory.insert(seq);
  }

  std::size_t records = 0;
  std::size_t bytes = 0;
  for (auto seq : mandatory) {
    ++records;
    bytes += bytes_[seq - 1].size();
  }
  if (records > policy.max_records || bytes > policy.max_bytes) {
    throw Error(ErrorCode::kBudgetTooSmall,
                std::to_string(records) + " mandatory records / " + std::to_string(bytes) +
                    " bytes exceed budget " + std::to_string(policy.max_records) + " / " +
                    std::to_string(policy.max_bytes));
  }

  // Candidates by priority, newest first.
  std::vector<const LogEntry*> candidates;
  for (const auto& e : entries_) {
    if (e.committed && mandatory.count(e.seq) == 0) candidates.push_back(&e);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](const LogEntry* a, const LogEntry* b) {
    auto ra = rank_of(a->kind);
    auto rb = rank_of(b->kind);
    if (ra != rb) return ra < rb;
    return a->seq > b->seq;
  });
  std::set<std::uint64_t> chosen = mandatory;
  for (const LogEntry* e : candidates) {
    if (records >= policy.max_records) break;
    std::size_t sz = bytes_[e->seq - 1].size();
    if (bytes + sz > policy.max_bytes) continue;
    chosen.insert(e->seq);
    ++records;
    bytes += sz;
  }

  std::vector<LogEntry> out;
  for (auto seq : chosen) out.push_back(at(seq));
  std::stable_sort(out.begin(), out.end(), [&](const LogEntry& a, const LogEntry& b) {
    auto ra = rank_of(a.kind);
    auto rb = rank_of(b.kind);
    if (ra != rb) return ra < rb;
    return a.seq > b.seq;
  });
  return out;
}

std::vector<LogEntry> ContextStore::entries() const {
  std::shared_lock lock(mu_);
  return entries_;
}

std::uint64_t ContextStore::last_seq() const {
  std::shared_lock lock(mu_);
  return entries_.empty() ? 0 : entries_.back().seq;
}

std::size_t ContextStore::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

bool ContextStore::rolled_back(std::uint64_t seq) const {
  std::shared_lock lock(mu_);
  std::map<std::string, std::uint64_t> cp_seq;
  for (const auto& e : entries_) {
    if (e.kind == LogKind::kCheckpoint) {
      cp_seq[e.payload.at("checkpoint_id").get<std::string>()] = e.seq;
    } else if (e.kind == LogKind::kRestore) {
      auto it = cp_seq.find(e.payload.at("checkpoint_id").get<std::string>());
      if (it != cp_seq.end() && seq > it->second && seq < e.seq) return true;
    }
  }
  return false;
}

std::uint64_t ContextStore::prefix_hash(std::uint64_t upto_seq) const {
  std::shared_lock lock(mu_);
  std::uint64_t h = fnv1a("");
  for (std::size_t i = 0; i < bytes_.size() && entries_[i].seq <= upto_seq; ++i) {
    h = fnv1a(bytes_[i], h);
  }
  return h;
}

std::string ContextStore::entry_bytes(std::uint64_t seq) const {
  std::shared_lock lock(mu_);
  at(seq);
  return bytes_[seq - 1];
}

StateSnapshot ContextStore::materialize(std::uint64_t upto_seq) const {
  std::shared_lock lock(mu_);
  StateSnapshot snap;
  std::map<std::string, const LogEntry*> cps;
  for (const auto& e : entries_) {
    if (e.seq > upto_seq) break;
    if (e.kind == LogKind::kCheckpoint) {
      cps[e.payload.at("checkpoint_id").get<std::string>()] = &e;
      snap = e.payload.at("snapshot").get<StateSnapshot>();
    } else if (e.kind == LogKind::kRestore) {
      auto it = cps.find(e.payload.at("checkpoint_id").get<std::string>());
      if (it == cps.end()) {
        throw Error(ErrorCode::kCorruptLog, "restore marker names unknown checkpoint");
      }
      snap = it->second->payload.at("snapshot").get<StateSnapshot>();
    } else {
      apply_entry(snap, e);
    }
    snap.log_cursor = e.seq;
  }
  return snap;
}

StateSnapshot ContextStore::replay(const std::string& checkpoint_id, std::uint64_t upto_seq) const {
  std::shared_lock lock(mu_);
  const LogEntry* cp = nullptr;
  for (const auto& e : entries_) {
    if (e.kind == LogKind::kCheckpoint && e.payload.value("checkpoint_id", "") == checkpoint_id) {
      cp = &e;
      break;
    }
  }
  if (!cp) throw Error(ErrorCode::kUnknownCheckpoint, checkpoint_id);
  StateSnapshot snap = cp->payload.at("snapshot").get<StateSnapshot>();
  for (const auto& e : entries_) {
    if (e.seq <= cp->seq) continue;
    if (e.seq > upto_seq) break;
    if (e.kind != LogKind::kCheckpoint && e.kind != LogKind::kRestore) apply_entry(snap, e);
    snap.log_cursor = e.seq;
  }
  return snap;
}

std::vector<LogEntry> ContextStore::read_all(const std::filesystem::path& path) {
  std::string data = read_file(path);
  ScanResult scanned = scan(data);
  if (scanned.valid_end < data.size() && !scanned.torn_tail) {
    throw Error(ErrorCode::kCorruptLog,
                path.string() + ": bad record at offset " + std::to_string(scanned.valid_end));
  }
  return std::move(scanned.entries);
}

}  // namespace saga
