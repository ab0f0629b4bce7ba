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

#ifndef SAGA_COORDINATOR_H_
#define SAGA_COORDINATOR_H_

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "saga/common.h"
#include "saga/context_store.h"
#include "saga/planning.h"
#include "saga/state_model.h"
#include "saga/validation.h"

namespace saga {

// The five sub-phases every forward operation passes through, in order.
enum class Phase {
  kPreValidation,
  kExecution,
  kOutputValidation,
  kStateCommitment,
  kCompensationRegistration,
};

inline constexpr std::size_t kPhaseCount = 5;
std::string_view to_string(Phase p);
Phase phase_from_string(std::string_view s);

// What an executor hands back: the output to validate and commit, the
// agent's internal state (needed to compensate), and extra entity changes
// applied at commit (a budget allocation, for instance).
struct AgentCall {
  Value output = Value::object();
  Value internal_state = Value::object();
  std::vector<EntityChange> effects;
};

// Executors read the snapshot but never write it; the coordinator commits.
using Executor = std::function<AgentCall(const OperationId& op, const Value& inputs, const StateSnapshot& snap)>;
// Returns a compensation patch ({refund_cents, flags, internal_state}); a
// throw means the compensation failed.
using Compensator = std::function<Value(const OperationId& op, const Value& output, const Value& internal_state)>;

struct AgentBinding {
  OperationId op;
  Executor executor;
  Compensator compensator;
};

struct SagaDefinition {
  std::string id = "saga";
  Saga saga;
  DependencyGraph graph;
  std::map<std::string, Value> inputs;          // per operation
  std::map<std::string, std::string> schemas;   // per operation: declared input schema
  std::string entity_prefix = "op/";

  std::string entity_key(const std::string& op) const { return entity_prefix + op; }
};

Value definition_to_json(const SagaDefinition& d);
SagaDefinition definition_from_json(const Value& j);

enum class RunMode { kForward, kCompensating, kRecovered, kAborted, kCommitted };
std::string_view to_string(RunMode m);
RunMode run_mode_from_string(std::string_view s);

enum class SagaOutcome { kCommitted, kCompensated, kAborted };
std::string_view to_string(SagaOutcome o);

struct OpProgress {
  std::size_t phases_done = 0;
  bool started = false;
  std::optional<AgentCall> call;
  std::optional<CompensationSpec> spec;
  Tick completed_at = 0;
};

struct SagaRun {
  SagaDefinition def;
  std::size_t cursor = 0;  // forward operations fully processed, in saga order
  RunMode mode = RunMode::kForward;
  std::string active_checkpoint;
  std::vector<std::string> compensation_queue;  // still to compensate, in order
  std::map<std::string, OpProgress> progress;
  std::vector<std::string> completed;    // completion order
  std::vector<std::string> compensated;  // compensation order
  std::optional<std::string> failed_op;
  std::optional<std::string> pending_failure;  // failed phase logged, failure handling not yet
  std::string failure_reason;
  bool manual_intervention = false;
  bool verified = false;
  StateSnapshot state;
  Tick clock = 0;
  std::uint64_t start_seq = 0;
  std::uint64_t execution_attempts = 0;  // execution phases logged, including failures
};

// Forced failure for fault-injection tests: `op` fails at `phase`.
struct FailureInjection {
  std::string op;
  Phase phase = Phase::kPreValidation;
};

struct CoordinatorOptions {
  // Output rules per operation id; "*" applies to every operation.
  std::map<std::string, std::vector<ValidationRule>> output_rules;
  std::vector<ValidationRule> message_rules;
  InvariantSet invariants;
  std::size_t max_augmentations = 3;
  bool validator_available = true;
  // Interleaving: each entry advances that operation by one phase. Listing
  // every operation exactly once advances whole operations instead.
  std::optional<std::vector<std::string>> schedule;
  std::vector<FailureInjection> inject;
  const SchemaRegistry* schemas = nullptr;  // default: builtin registry
};

// Takes the initial checkpoint and logs the saga definition.
SagaRun begin_saga(ContextStore& store, SagaDefinition def, const StateSnapshot& initial);

struct SagaResult {
  SagaOutcome outcome = SagaOutcome::kCommitted;
  StateSnapshot state;
  std::vector<std::string> compensation_trace;  // compensated operations, in order
};

// Runs (or continues) the saga to an outcome. Throws Error(kBindingMissing)
// or Error(kValidatorUnavailable) before any forward step.
SagaResult execute_saga(SagaRun& run, const std::vector<AgentBinding>& bindings, ContextStore& store,
                        const CoordinatorOptions& options = {});

// Compensation plan for a failure: every completed operation reachable from
// the graph's sources or from `failed`, in reverse completion order. Sets the
// run to compensating, or aborted when nothing needs compensating. Throws
// Error(kUnknownOperation).
std::vector<OperationId> on_failure(SagaRun& run, const std::string& failed);

// Executes the compensation queue, logging each step, then verifies the
// result against the checkpoint. Throws Error(kCompensationFailed) after
// marking the run aborted for manual intervention.
StateSnapshot run_compensation(SagaRun& run, const std::vector<AgentBinding>& bindings, ContextStore& store,
                               const CoordinatorOptions& options = {});

// Rebuilds the latest run of `def.id` from the log, positioned at the last
// logged sub-phase. Starts a fresh run when the log holds none.
SagaRun resume_after_crash(ContextStore& store, const SagaDefinition& def, const StateSnapshot& initial);

Value run_report(const SagaRun& run, const SagaResult& result, const ContextStore& store);

// ---------------------------------------------------------------------------
// Plans under execution. Each timed action is an operation; executing it
// logs a completed op-record stamped with the action's end tick.

struct PlanRun {
  std::string id = "plan";
  planning::WorldModel world;
  std::vector<planning::PlanRule> rules;
  planning::Goals goals;
  planning::Plan plan;
  planning::Plan executed;  // logged history, in execution order
  std::vector<planning::DisruptionEvent> disruptions;
  Tick now = 0;
  std::uint64_t history_seq = 0;  // last log entry belonging to executed history
  bool needs_human = false;
  std::string blocking;
  std::string strategy;
};

// Logs constraint, goal and plan entries.
PlanRun start_plan_run(ContextStore& store, std::string id, planning::WorldModel world,
                       std::vector<planning::PlanRule> rules, planning::Goals goals, planning::Plan plan,
                       const std::set<std::string>& constraint_rules = {});

// Logs every action ending by `tick` that is not yet in the history.
void advance_plan(PlanRun& run, ContextStore& store, Tick tick);

using Replanner = std::function<planning::RescheduleResult(const PlanRun& run,
                                                           const planning::DisruptionEvent& disruption)>;

// Default planner: the rule-based rescheduler.
planning::RescheduleResult default_replanner(const PlanRun& run, const planning::DisruptionEvent& d);

// Advances to the disruption, asks the planner for a new plan and checks it
// against the logged history. Throws Error(kRewriteOfPast). An infeasible
// planner result is logged as a request for human re-evaluation.
PlanRun replan(const PlanRun& run, ContextStore& store, const planning::DisruptionEvent& disruption,
               const Replanner& planner = default_replanner);

}  // namespace saga

#endif  // SAGA_COORDINATOR_H_
