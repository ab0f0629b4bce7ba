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

#ifndef SAGA_STATE_MODEL_H_
#define SAGA_STATE_MODEL_H_

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "saga/common.h"

namespace saga {

// Opaque operation token plus a human-readable label. Identity is `id`.
struct OperationId {
  std::string id;
  std::string label;

  OperationId() = default;
  OperationId(std::string id_in, std::string label_in = {})
      : id(std::move(id_in)), label(label_in.empty() ? id : std::move(label_in)) {}

  friend bool operator==(const OperationId& a, const OperationId& b) { return a.id == b.id; }
  friend auto operator<=>(const OperationId& a, const OperationId& b) { return a.id <=> b.id; }
};

// ---------------------------------------------------------------------------
// Application state (S_A)

enum class EntityStatus { kPending, kActive, kCommitted, kCompensated };

std::string_view to_string(EntityStatus s);
EntityStatus entity_status_from_string(std::string_view s);

// pending->active->committed, active->compensated.
bool entity_transition_allowed(EntityStatus from, EntityStatus to);

struct Entity {
  EntityStatus status = EntityStatus::kPending;
  Value data = Value::object();

  friend bool operator==(const Entity&, const Entity&) = default;
};

class AppState {
 public:
  const std::map<std::string, Entity>& entities() const { return entities_; }
  std::uint64_t snapshot_id() const { return snapshot_id_; }

  const Entity* find(const std::string& key) const;
  bool contains(const std::string& key) const { return entities_.count(key) != 0; }

  // Inserts a new entity or replaces an existing one. Status changes on an
  // existing key must follow the entity automaton.
  void put(const std::string& key, Entity entity);
  void erase(const std::string& key);
  void bump_snapshot() { ++snapshot_id_; }

  // Entity-wise equality (ignores the snapshot counter).
  bool same_entities(const AppState& other) const { return entities_ == other.entities_; }

  friend bool operator==(const AppState&, const AppState&) = default;

 private:
  std::map<std::string, Entity> entities_;
  std::uint64_t snapshot_id_ = 0;

  friend void from_json(const Value& j, AppState& s);
};

// ---------------------------------------------------------------------------
// Operation state (S_O)

enum class OpStatus { kStarted, kCompleted, kFailed, kCompensated };

std::string_view to_string(OpStatus s);
OpStatus op_status_from_string(std::string_view s);

// started->completed, started->failed, completed->compensated. A first
// record for an operation must be `started`.
bool op_transition_allowed(std::optional<OpStatus> from, OpStatus to);

struct OperationRecord {
  OperationId op;
  Value inputs = Value::object();
  std::optional<Value> outputs;
  Tick timestamp = 0;
  OpStatus status = OpStatus::kStarted;
  std::vector<std::string> reasoning;
  std::vector<std::string> alternatives;

  friend bool operator==(const OperationRecord&, const OperationRecord&) = default;
};

// Outputs present iff status is completed or compensated.
bool record_well_formed(const OperationRecord& r);

// ---------------------------------------------------------------------------
// Dependency state (S_D)

enum class Satisfaction { kUnknown, kSatisfied, kViolated };

std::string_view to_string(Satisfaction s);
Satisfaction satisfaction_from_string(std::string_view s);

struct EdgeKey {
  std::string from;
  std::string to;
  friend auto operator<=>(const EdgeKey&, const EdgeKey&) = default;
  friend bool operator==(const EdgeKey&, const EdgeKey&) = default;
};

struct EdgeState {
  Satisfaction state = Satisfaction::kUnknown;
  Tick evidence = 0;
  friend bool operator==(const EdgeState&, const EdgeState&) = default;
};

class DependencySatisfaction {
 public:
  const std::map<EdgeKey, EdgeState>& edges() const { return edges_; }
  Satisfaction state(const EdgeKey& key) const;

  // unknown->satisfied|violated; a decided edge may only be re-decided after
  // reset() (compensation of the upstream operation).
  void mark(const EdgeKey& key, Satisfaction state, Tick evidence);
  void reset(const EdgeKey& key, Tick evidence);
  // Resets every edge leaving `from`.
  void reset_outgoing(const std::string& from, Tick evidence);

  friend bool operator==(const DependencySatisfaction&, const DependencySatisfaction&) = default;

 private:
  std::map<EdgeKey, EdgeState> edges_;
  friend void from_json(const Value& j, DependencySatisfaction& d);
};

// The checkpointable triple (S_A, S_O, S_D).
struct StateSnapshot {
  AppState app;
  std::map<std::string, OperationRecord> ops;  // latest record per operation
  std::set<std::string> declared_ops;          // operations known to exist
  std::uint64_t log_cursor = 0;
  DependencySatisfaction deps;

  friend bool operator==(const StateSnapshot&, const StateSnapshot&) = default;
};

// Digest over S_A, operation statuses/outputs and S_D states. Excludes
// cursors and timestamps so that a resumed run can match an uninterrupted one.
std::uint64_t state_digest(const StateSnapshot& snap);

// ---------------------------------------------------------------------------
// Conditions (the Boolean function B over prerequisite atoms)

enum class Comparison { kLess, kLessEqual, kEqual, kNotEqual, kGreaterEqual, kGreater };

std::string_view to_string(Comparison c);
Comparison comparison_from_string(std::string_view s);
bool compare(double lhs, Comparison c, double rhs);

// Left operand of a numeric comparison: one entity field, or the sum of a
// field over all non-compensated entities whose key starts with `prefix`.
struct NumericOperand {
  enum class Kind { kEntityField, kSum };
  Kind kind = Kind::kEntityField;
  std::string entity;  // kEntityField
  std::string prefix;  // kSum
  std::string field;   // dotted path

  friend bool operator==(const NumericOperand&, const NumericOperand&) = default;
};

struct OpStatusAtom {
  std::string op;
  OpStatus status = OpStatus::kCompleted;
  friend bool operator==(const OpStatusAtom&, const OpStatusAtom&) = default;
};

struct NumericAtom {
  NumericOperand lhs;
  Comparison cmp = Comparison::kLessEqual;
  double bound = 0;
  friend bool operator==(const NumericAtom&, const NumericAtom&) = default;
};

struct DeadlineAtom {
  std::string entity;
  std::string field;
  Tick deadline = 0;
  friend bool operator==(const DeadlineAtom&, const DeadlineAtom&) = default;
};

struct LocationAtom {
  std::string entity;
  std::string field;
  std::string location;
  friend bool operator==(const LocationAtom&, const LocationAtom&) = default;
};

struct EdgeAtom {
  EdgeKey edge;
  Satisfaction state = Satisfaction::kSatisfied;
  friend bool operator==(const EdgeAtom&, const EdgeAtom&) = default;
};

struct ConstantAtom {
  bool value = true;
  friend bool operator==(const ConstantAtom&, const ConstantAtom&) = default;
};

class Condition {
 public:
  using Atom =
      std::variant<OpStatusAtom, NumericAtom, DeadlineAtom, LocationAtom, EdgeAtom, ConstantAtom>;
  enum class Kind { kAtom, kAnd, kOr, kNot };

  Condition();  // constant true

  static Condition atom(Atom a);
  static Condition completed(std::string op);
  static Condition all(std::vector<Condition> children);
  static Condition any(std::vector<Condition> children);
  static Condition negate(Condition child);

  Kind kind() const;
  const Atom& as_atom() const;
  const std::vector<Condition>& children() const;
  std::size_t depth() const;
  std::size_t atom_count() const;

  // Throws Error(kUnresolvableAtom) when an atom names a missing entity,
  // field or operation.
  bool evaluate(const StateSnapshot& snap) const;

  // Entity keys the condition reads (sum operands expand against `app`).
  std::set<std::string> referenced_entities(const AppState& app) const;

  friend bool operator==(const Condition& a, const Condition& b);

 private:
  struct Node;
  explicit Condition(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

void to_json(Value& j, const Condition& c);
void from_json(const Value& j, Condition& c);

inline bool evaluate_condition(const Condition& cond, const StateSnapshot& snap) {
  return cond.evaluate(snap);
}

// ---------------------------------------------------------------------------
// Invariants

enum class Severity { kHard, kSoft };
std::string_view to_string(Severity s);
Severity severity_from_string(std::string_view s);

struct Invariant {
  std::string name;
  Severity severity = Severity::kHard;
  std::string description;
  Condition predicate;
};

using InvariantSet = std::vector<Invariant>;

struct InvariantViolation {
  std::string name;
  Severity severity = Severity::kHard;
  std::vector<std::string> entity_keys;
  std::string detail;
};

std::vector<InvariantViolation> check_invariants(const InvariantSet& inv, const AppState& state);

// ---------------------------------------------------------------------------
// Dependency graph (edges o_i -> o_j under c_ij)

struct DependencyEdge {
  std::string from;
  std::string to;
  Condition condition;
};

class DependencyGraph {
 public:
  DependencyGraph() = default;

  // Skips the acyclicity check; topological_order() reports cycles.
  static DependencyGraph unchecked(std::vector<OperationId> nodes,
                                   std::vector<DependencyEdge> edges);

  void add_node(OperationId op);
  // Default condition: completed(from). Rejects edges that close a cycle.
  void add_edge(const std::string& from, const std::string& to);
  void add_edge(const std::string& from, const std::string& to, Condition condition);

  // Overrides the composite prerequisite condition of `to`. Without an
  // override it is the conjunction of incoming edge conditions.
  void set_composite(const std::string& to, Condition condition);
  Condition prerequisite(const std::string& to) const;

  bool contains(const std::string& id) const { return nodes_.count(id) != 0; }
  const OperationId& node(const std::string& id) const;
  const std::map<std::string, OperationId>& nodes() const { return nodes_; }
  const std::vector<DependencyEdge>& edges() const { return edges_; }
  std::vector<std::string> successors(const std::string& id) const;
  std::vector<std::string> predecessors(const std::string& id) const;

  bool reaches(const std::string& from, const std::string& to) const;

 private:
  std::map<std::string, OperationId> nodes_;
  std::vector<DependencyEdge> edges_;
  std::map<std::string, Condition> composite_;
};

// Lexical tie-break on label, then id. Throws Error(kCycleDetected) naming
// one cycle.
std::vector<OperationId> topological_order(const DependencyGraph& graph);

// Completed operations among {failed} and its transitive dependents, ordered
// for compensation (reverse completion order).
std::vector<OperationId> affected_set(const DependencyGraph& graph, const std::string& failed,
                                      std::span<const OperationRecord> log);

// Latest status per operation from a record log, enforcing the automaton.
// Throws Error(kInvalidTransition) on an illegal transition.
std::map<std::string, OpStatus> replay_statuses(std::span<const OperationRecord> log);

// ---------------------------------------------------------------------------
// Saga structure

struct CompensationSpec {
  std::string for_op;
  std::vector<std::string> inverse_actions;
  Condition preconditions;
  Value recovery_state = Value::object();  // entity key -> entity json | null
};

struct Saga {
  std::vector<OperationId> forward;
  std::map<std::string, CompensationSpec> compensations;
};

// True when `saga.forward` is a topological order of `graph` restricted to
// the saga's operations.
bool saga_order_consistent(const Saga& saga, const DependencyGraph& graph);

// ---------------------------------------------------------------------------
// State deltas: the unit of change carried by log entries and replayed on
// recovery.

struct EntityChange {
  std::string key;
  std::optional<Entity> after;  // nullopt erases
};

struct EdgeMark {
  EdgeKey edge;
  Satisfaction state = Satisfaction::kUnknown;  // kUnknown resets
  Tick evidence = 0;
};

struct StateDelta {
  std::vector<EntityChange> entities;
  std::vector<OperationRecord> records;
  std::vector<EdgeMark> marks;

  bool empty() const { return entities.empty() && records.empty() && marks.empty(); }
};

void apply_delta(StateSnapshot& snap, const StateDelta& delta);

// JSON forms.
void to_json(Value& j, const OperationId& v);
void from_json(const Value& j, OperationId& v);
void to_json(Value& j, const Entity& v);
void from_json(const Value& j, Entity& v);
void to_json(Value& j, const AppState& v);
void from_json(const Value& j, AppState& v);
void to_json(Value& j, const OperationRecord& v);
void from_json(const Value& j, OperationRecord& v);
void to_json(Value& j, const DependencySatisfaction& v);
void from_json(const Value& j, DependencySatisfaction& v);
void to_json(Value& j, const StateSnapshot& v);
void from_json(const Value& j, StateSnapshot& v);
void to_json(Value& j, const CompensationSpec& v);
void from_json(const Value& j, CompensationSpec& v);
void to_json(Value& j, const StateDelta& v);
void from_json(const Value& j, StateDelta& v);
void to_json(Value& j, const Invariant& v);
void from_json(const Value& j, Invariant& v);

// Reads a dotted field path; nullptr when absent.
const Value* find_path(const Value& root, std::string_view dotted);

}  // namespace saga

#endif  // SAGA_STATE_MODEL_H_
