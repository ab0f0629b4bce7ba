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

#include "saga/coordinator.h"

#include <algorithm>
#include <array>
#include <set>

namespace saga {

namespace {

constexpr std::array<std::string_view, kPhaseCount> kPhaseNames = {
    "pre-validation", "execution", "output-validation", "state-commitment",
    "compensation-registration"};

constexpr std::array<std::string_view, 5> kModeNames = {"forward", "compensating", "recovered",
                                                        "aborted", "committed"};

Value changes_json(const std::vector<EntityChange>& changes) {
  StateDelta d;
  d.entities = changes;
  Value j = d;
  return j.at("entities");
}

std::vector<EntityChange> changes_from_json(const Value& j) {
  if (!j.is_array()) return {};
  return Value{{"entities", j}}.get<StateDelta>().entities;
}

Value call_json(const AgentCall& c) {
  return {{"output", c.output}, {"internal_state", c.internal_state},
          {"effects", changes_json(c.effects)}};
}

// Everything one execute/compensate pass needs.
struct Driver {
  SagaRun& run;
  ContextStore& store;
  const CoordinatorOptions& opt;
  std::map<std::string, const AgentBinding*> bind;

  Tick next_tick() const { return run.clock + 1; }

  std::uint64_t log(LogKind kind, Value payload, const StateDelta* delta = nullptr) {
    Tick t = next_tick();
    payload["saga"] = run.def.id;
    StateSnapshot next = run.state;
    if (delta != nullptr && !delta->empty()) {
      apply_delta(next, *delta);
      payload["delta"] = *delta;
    }
    auto seq = store.append(kind, std::move(payload), t);
    run.clock = t;
    next.log_cursor = seq;
    run.state = std::move(next);
    return seq;
  }

  const AgentBinding& binding(const std::string& op) const {
    auto it = bind.find(op);
    if (it == bind.end()) throw Error(ErrorCode::kBindingMissing, op);
    return *it->second;
  }

  bool injected(const std::string& op, Phase p) const {
    return std::any_of(opt.inject.begin(), opt.inject.end(),
                       [&](const FailureInjection& f) { return f.op == op && f.phase == p; });
  }

  OperationId opid(const std::string& op) const {
    return run.def.graph.contains(op) ? run.def.graph.node(op) : OperationId(op);
  }

  Value inputs(const std::string& op) const {
    auto it = run.def.inputs.find(op);
    return it == run.def.inputs.end() ? Value::object() : it->second;
  }

  const SchemaRegistry& schemas() const {
    return opt.schemas != nullptr ? *opt.schemas : SchemaRegistry::builtin();
  }

  Value phase_payload(const std::string& op, Phase p) const {
    return {{"phase", to_string(p)}, {"op", op}, {"step", static_cast<int>(p) + 1}};
  }

  // Returns the failure reason, empty on success.
  std::string run_phase(const std::string& op, Phase p);
  std::string pre_validation(const std::string& op);
  std::string execution(const std::string& op);
  std::string output_validation(const std::string& op);
  std::string commitment(const std::string& op);
  std::string registration(const std::string& op);

  void fail(const std::string& op, Phase p, const std::string& reason);
  void compensate();
  [[noreturn]] void abort_compensation(const std::string& op, const std::string& reason);
  void finish_forward();
};

std::string Driver::run_phase(const std::string& op, Phase p) {
  switch (p) {
    case Phase::kPreValidation: return pre_validation(op);
    case Phase::kExecution: return execution(op);
    case Phase::kOutputValidation: return output_validation(op);
    case Phase::kStateCommitment: return commitment(op);
    case Phase::kCompensationRegistration: return registration(op);
  }
  return "unknown phase";
}

std::string Driver::pre_validation(const std::string& op) {
  Value payload = phase_payload(op, Phase::kPreValidation);
  std::string reason;
  if (injected(op, Phase::kPreValidation)) {
    reason = "injected failure";
  } else {
    try {
      bool ok = run.def.graph.prerequisite(op).evaluate(run.state);
      payload["prerequisite"] = ok;
      if (!ok) reason = "prerequisite of " + op + " not satisfied";
    } catch (const Error& e) {
      reason = e.what();
    }
    if (reason.empty() && !opt.message_rules.empty()) {
      MessageEnvelope msg;
      msg.from_agent = "coordinator";
      msg.to_agent = op;
      msg.payload = inputs(op);
      if (auto it = run.def.schemas.find(op); it != run.def.schemas.end()) {
        msg.declared_schema = it->second;
      }
      msg.depends_on = run.def.graph.predecessors(op);
      msg.send_time = next_tick();
      try {
        auto v = validate_message(msg, run.state, opt.message_rules, schemas());
        payload["verdict"] = verdict_to_json(v);
        if (v.outcome == VerdictOutcome::kReject) {
          reason = "message rejected by " + v.failed.front().rule;
        }
      } catch (const Error& e) {
        reason = e.what();
      }
    }
  }
  payload["ok"] = reason.empty();
  if (!reason.empty()) payload["reason"] = reason;
  log(LogKind::kValidationVerdict, std::move(payload));
  return reason;
}

std::string Driver::execution(const std::string& op) {
  Value payload = phase_payload(op, Phase::kExecution);
  StateDelta d;
  d.records.push_back(OperationRecord{opid(op), inputs(op), std::nullopt, next_tick(),
                                      OpStatus::kStarted, {}, {}});
  std::string reason;
  AgentCall call;
  ++run.execution_attempts;
  if (injected(op, Phase::kExecution)) {
    reason = "injected failure";
  } else {
    try {
      call = binding(op).executor(opid(op), inputs(op), run.state);
    } catch (const SimulatedCrash&) {
      throw;
    } catch (const Error& e) {
      reason = e.what();
      payload["error_code"] = error_code_name(e.code());
    } catch (const std::exception& e) {
      reason = e.what();
    }
  }
  payload["status"] = "started";
  payload["inputs"] = inputs(op);
  payload["ok"] = reason.empty();
  if (reason.empty()) {
    payload.update(call_json(call));
  } else {
    payload["reason"] = reason;
  }
  log(LogKind::kOpRecord, std::move(payload), &d);
  auto& p = run.progress[op];
  p.started = true;
  if (reason.empty()) p.call = std::move(call);
  return reason;
}

std::string Driver::output_validation(const std::string& op) {
  Value payload = phase_payload(op, Phase::kOutputValidation);
  auto& p = run.progress[op];
  std::string reason;
  if (injected(op, Phase::kOutputValidation)) {
    reason = "injected failure";
    auto v = classify({FailedRule{"injected", ValidationCategory::kSemantic, Severity::kHard,
                                  "injected failure"}},
                      std::nullopt);
    payload["verdict"] = verdict_to_json(v);
  } else {
    std::vector<ValidationRule> rules;
    for (const auto* key : {"*", op.c_str()}) {
      auto it = opt.output_rules.find(key);
      if (it != opt.output_rules.end()) rules.insert(rules.end(), it->second.begin(), it->second.end());
    }
    try {
      auto r = validate_with_augmentation(opid(op), p.call->output, run.state, rules,
                                          run.def.entity_key(op), opt.max_augmentations);
      payload["verdict"] = verdict_to_json(r.verdict);
      payload["response"] = to_string(r.response);
      payload["rounds"] = r.rounds;
      payload["output"] = r.output;
      if (r.response == Response::kCompensate) {
        reason = "output rejected by " + r.verdict.failed.front().rule;
      } else {
        if (r.response == Response::kRecordFeedback) {
          Value fb = Value::array();
          for (const auto& f : r.verdict.failed) fb.push_back({{"rule", f.rule}, {"evidence", f.evidence}});
          payload["feedback"] = fb;
        }
        p.call->output = r.output;
      }
    } catch (const Error& e) {
      reason = e.what();
    }
  }
  payload["ok"] = reason.empty();
  if (!reason.empty()) payload["reason"] = reason;
  log(LogKind::kValidationVerdict, std::move(payload));
  return reason;
}

std::string Driver::commitment(const std::string& op) {
  Value payload = phase_payload(op, Phase::kStateCommitment);
  if (injected(op, Phase::kStateCommitment)) {
    payload["ok"] = false;
    payload["status"] = "failed";
    payload["reason"] = "injected failure";
    log(LogKind::kCommit, std::move(payload));
    return "injected failure";
  }
  auto& p = run.progress[op];
  const AgentCall& call = *p.call;
  Tick t = next_tick();
  const std::string key = run.def.entity_key(op);

  Value recovery = Value::object();
  auto remember = [&](const std::string& k) {
    if (recovery.contains(k)) return;
    const Entity* prior = run.state.app.find(k);
    recovery[k] = prior != nullptr ? Value(*prior) : Value(nullptr);
  };
  remember(key);
  for (const auto& c : call.effects) remember(c.key);

  Entity e;
  e.status = EntityStatus::kCommitted;
  e.data = call.output.is_object() ? call.output : Value{{"value", call.output}};
  e.data["agent_state"] = call.internal_state;

  StateDelta d;
  d.entities.push_back({key, e});
  d.entities.insert(d.entities.end(), call.effects.begin(), call.effects.end());
  d.records.push_back(OperationRecord{opid(op), inputs(op), call.output, t, OpStatus::kCompleted, {}, {}});

  StateSnapshot next = run.state;
  apply_delta(next, d);
  for (const auto& edge : run.def.graph.edges()) {
    if (edge.from != op) continue;
    bool sat = false;
    try {
      sat = edge.condition.evaluate(next);
    } catch (const Error&) {
      sat = false;
    }
    auto state = sat ? Satisfaction::kSatisfied : Satisfaction::kViolated;
    if (run.state.deps.state({edge.from, edge.to}) != state) {
      d.marks.push_back(EdgeMark{{edge.from, edge.to}, state, t});
    }
  }

  payload["ok"] = true;
  payload["status"] = "completed";
  payload["recovery_state"] = recovery;
  log(LogKind::kCommit, std::move(payload), &d);

  CompensationSpec spec;
  if (auto it = run.def.saga.compensations.find(op); it != run.def.saga.compensations.end()) {
    spec.inverse_actions = it->second.inverse_actions;
  }
  if (spec.inverse_actions.empty()) spec.inverse_actions = {"compensate-" + op};
  spec.for_op = op;
  spec.preconditions = Condition::completed(op);
  spec.recovery_state = recovery;
  p.spec = spec;
  p.completed_at = t;
  run.completed.push_back(op);
  return {};
}

std::string Driver::registration(const std::string& op) {
  Value payload = phase_payload(op, Phase::kCompensationRegistration);
  std::string reason;
  if (injected(op, Phase::kCompensationRegistration)) {
    reason = "injected failure";
  } else {
    payload["spec"] = *run.progress[op].spec;
  }
  payload["ok"] = reason.empty();
  if (!reason.empty()) payload["reason"] = reason;
  log(LogKind::kCompensationRegistration, std::move(payload));
  return reason;
}

void Driver::fail(const std::string& op, Phase p, const std::string& reason) {
  run.pending_failure.reset();
  run.failed_op = op;
  run.failure_reason = reason;
  auto queue = on_failure(run, op);

  StateDelta d;
  auto rec = run.state.ops.find(op);
  if (rec != run.state.ops.end() && rec->second.status == OpStatus::kStarted) {
    d.records.push_back(OperationRecord{opid(op), inputs(op), std::nullopt, next_tick(),
                                        OpStatus::kFailed, {}, {}});
  }
  Value q = Value::array();
  for (const auto& o : queue) q.push_back(o.id);
  log(LogKind::kFailure,
      {{"op", op}, {"phase", to_string(p)}, {"reason", reason}, {"queue", q},
       {"mode", to_string(run.mode)}},
      &d);
  if (run.mode == RunMode::kAborted) {
    log(LogKind::kSagaOutcome, {{"outcome", "aborted"}, {"mode", "aborted"}, {"reason", reason}});
    return;
  }
  compensate();
}

void Driver::abort_compensation(const std::string& op, const std::string& reason) {
  run.mode = RunMode::kAborted;
  run.manual_intervention = true;
  log(LogKind::kSagaOutcome, {{"outcome", "aborted"},
                              {"mode", "aborted"},
                              {"manual_intervention", true},
                              {"op", op},
                              {"reason", reason}});
  throw Error(ErrorCode::kCompensationFailed, op + ": " + reason);
}

void Driver::compensate() {
  while (!run.compensation_queue.empty()) {
    const std::string op = run.compensation_queue.front();
    auto& p = run.progress[op];
    if (!p.spec || !p.call) abort_compensation(op, "no compensation registered");
    bool pre = false;
    try {
      pre = p.spec->preconditions.evaluate(run.state);
    } catch (const Error&) {
      pre = false;
    }
    if (!pre) abort_compensation(op, "compensation precondition not satisfied");

    Value patch;
    try {
      patch = binding(op).compensator(opid(op), p.call->output, p.call->internal_state);
    } catch (const SimulatedCrash&) {
      throw;
    } catch (const std::exception& e) {
      abort_compensation(op, e.what());
    }

    Tick t = next_tick();
    StateDelta d;
    for (const auto& [key, prior] : p.spec->recovery_state.items()) {
      EntityChange c{key, std::nullopt};
      if (!prior.is_null()) c.after = prior.get<Entity>();
      d.entities.push_back(std::move(c));
    }
    d.records.push_back(
        OperationRecord{opid(op), inputs(op), p.call->output, t, OpStatus::kCompensated, {}, {}});
    // Outgoing edges, plus edges into any operation the compensator asks to
    // re-evaluate, go back to unknown.
    std::set<std::string> targets;
    if (patch.is_object() && patch.contains("reevaluate")) {
      for (const auto& r : patch.at("reevaluate")) targets.insert(r.get<std::string>());
    }
    for (const auto& edge : run.def.graph.edges()) {
      bool hit = edge.from == op || targets.count(edge.to) != 0;
      if (hit && run.state.deps.state({edge.from, edge.to}) != Satisfaction::kUnknown) {
        d.marks.push_back(EdgeMark{{edge.from, edge.to}, Satisfaction::kUnknown, t});
      }
    }
    Value payload = {{"op", op}, {"patch", patch}, {"inverse_actions", p.spec->inverse_actions}};
    if (!targets.empty()) payload["reevaluate"] = targets;
    if (patch.is_object()) {
      if (patch.contains("flags")) payload["flags"] = patch["flags"];
      if (patch.contains("refund_cents")) payload["refund_cents"] = patch["refund_cents"];
    }
    log(LogKind::kCompensation, std::move(payload), &d);
    run.compensation_queue.erase(run.compensation_queue.begin());
    run.compensated.push_back(op);
  }

  auto checkpoint = store.checkpoint_snapshot(run.active_checkpoint);
  bool equal = checkpoint.app.same_entities(run.state.app);
  Value violations = Value::array();
  for (const auto& v : check_invariants(opt.invariants, run.state.app)) {
    violations.push_back({{"name", v.name}, {"severity", to_string(v.severity)}, {"detail", v.detail}});
  }
  log(LogKind::kVerification,
      {{"equals_checkpoint", equal}, {"invariants_ok", violations.empty()}, {"violations", violations}});
  run.verified = true;
  run.mode = RunMode::kRecovered;
  log(LogKind::kSagaOutcome, {{"outcome", "compensated"}, {"mode", "recovered"}, {"trace", run.compensated}});
}

void Driver::finish_forward() {
  for (const auto& v : check_invariants(opt.invariants, run.state.app)) {
    if (v.severity != Severity::kHard) continue;
    const std::string last = run.completed.empty() ? run.def.saga.forward.back().id : run.completed.back();
    fail(last, Phase::kCompensationRegistration, "invariant " + v.name + " violated: " + v.detail);
    return;
  }
  run.mode = RunMode::kCommitted;
  log(LogKind::kSagaOutcome,
      {{"outcome", "committed"}, {"mode", "committed"}, {"digest", digest_hex(state_digest(run.state))}});
}

// Phase-level schedule: each operation listed once per phase.
std::vector<std::string> expand_schedule(const SagaDefinition& def,
                                         const std::optional<std::vector<std::string>>& schedule) {
  std::vector<std::string> ops;
  for (const auto& o : def.saga.forward) ops.push_back(o.id);
  if (!schedule) {
    std::vector<std::string> out;
    for (const auto& o : ops) out.insert(out.end(), kPhaseCount, o);
    return out;
  }
  std::map<std::string, std::size_t> count;
  for (const auto& s : *schedule) {
    if (std::find(ops.begin(), ops.end(), s) == ops.end()) {
      throw Error(ErrorCode::kInvalidInput, "schedule names unknown operation " + s);
    }
    ++count[s];
  }
  bool op_level = true;
  bool phase_level = true;
  for (const auto& o : ops) {
    op_level = op_level && count[o] == 1;
    phase_level = phase_level && count[o] == kPhaseCount;
  }
  if (op_level) {
    std::vector<std::string> out;
    for (const auto& o : *schedule) out.insert(out.end(), kPhaseCount, o);
    return out;
  }
  if (!phase_level) {
    throw Error(ErrorCode::kInvalidInput, "schedule must list each operation once or once per phase");
  }
  return *schedule;
}

std::size_t forward_cursor(const SagaRun& run) {
  std::size_t n = 0;
  for (const auto& o : run.def.saga.forward) {
    auto it = run.progress.find(o.id);
    if (it == run.progress.end() || it->second.phases_done < kPhaseCount) break;
    ++n;
  }
  return n;
}

SagaResult result_of(const SagaRun& run) {
  SagaResult r;
  switch (run.mode) {
    case RunMode::kCommitted: r.outcome = SagaOutcome::kCommitted; break;
    case RunMode::kRecovered: r.outcome = SagaOutcome::kCompensated; break;
    default: r.outcome = SagaOutcome::kAborted; break;
  }
  r.state = run.state;
  r.compensation_trace = run.compensated;
  return r;
}

Driver make_driver(SagaRun& run, const std::vector<AgentBinding>& bindings, ContextStore& store,
                   const CoordinatorOptions& options) {
  Driver d{run, store, options, {}};
  for (const auto& b : bindings) d.bind[b.op.id] = &b;
  for (const auto& o : run.def.saga.forward) {
    auto it = d.bind.find(o.id);
    if (it == d.bind.end() || !it->second->executor || !it->second->compensator) {
      throw Error(ErrorCode::kBindingMissing, "no executor/compensator bound for " + o.id);
    }
  }
  return d;
}

}  // namespace

std::string_view to_string(Phase p) { return kPhaseNames.at(static_cast<std::size_t>(p)); }

Phase phase_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kPhaseNames.size(); ++i) {
    if (kPhaseNames[i] == s) return static_cast<Phase>(i);
  }
  throw Error(ErrorCode::kInvalidInput, "unknown phase " + std::string(s));
}

std::string_view to_string(RunMode m) { return kModeNames.at(static_cast<std::size_t>(m)); }

RunMode run_mode_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kModeNames.size(); ++i) {
    if (kModeNames[i] == s) return static_cast<RunMode>(i);
  }
  throw Error(ErrorCode::kInvalidInput, "unknown run mode " + std::string(s));
}

std::string_view to_string(SagaOutcome o) {
  switch (o) {
    case SagaOutcome::kCommitted: return "committed";
    case SagaOutcome::kCompensated: return "compensated";
    case SagaOutcome::kAborted: return "aborted";
  }
  return "aborted";
}

Value definition_to_json(const SagaDefinition& d) {
  Value forward = Value::array();
  for (const auto& o : d.saga.forward) forward.push_back(o);
  Value nodes = Value::array();
  for (const auto& [id, node] : d.graph.nodes()) nodes.push_back(node);
  Value edges = Value::array();
  for (const auto& e : d.graph.edges()) {
    edges.push_back({{"from", e.from}, {"to", e.to}, {"condition", e.condition}});
  }
  Value comps = Value::object();
  for (const auto& [op, spec] : d.saga.compensations) comps[op] = spec;
  Value inputs = Value::object();
  for (const auto& [op, v] : d.inputs) inputs[op] = v;
  Value schemas = Value::object();
  for (const auto& [op, s] : d.schemas) schemas[op] = s;
  return {{"id", d.id},
          {"entity_prefix", d.entity_prefix},
          {"forward", forward},
          {"graph", {{"nodes", nodes}, {"edges", edges}}},
          {"compensations", comps},
          {"inputs", inputs},
          {"schemas", schemas}};
}

SagaDefinition definition_from_json(const Value& j) {
  SagaDefinition d;
  d.id = j.value("id", std::string("saga"));
  d.entity_prefix = j.value("entity_prefix", std::string("op/"));
  for (const auto& o : j.at("forward")) {
    d.saga.forward.push_back(o.is_string() ? OperationId(o.get<std::string>()) : o.get<OperationId>());
  }
  if (j.contains("graph")) {
    const Value& g = j.at("graph");
    for (const auto& n : g.value("nodes", Value::array())) {
      d.graph.add_node(n.is_string() ? OperationId(n.get<std::string>()) : n.get<OperationId>());
    }
    for (const auto& o : d.saga.forward) {
      if (!d.graph.contains(o.id)) d.graph.add_node(o);
    }
    for (const auto& e : g.value("edges", Value::array())) {
      auto from = e.at("from").get<std::string>();
      auto to = e.at("to").get<std::string>();
      if (e.contains("condition")) {
        d.graph.add_edge(from, to, e.at("condition").get<Condition>());
      } else {
        d.graph.add_edge(from, to);
      }
    }
  } else {
    for (const auto& o : d.saga.forward) d.graph.add_node(o);
    for (std::size_t i = 1; i < d.saga.forward.size(); ++i) {
      d.graph.add_edge(d.saga.forward[i - 1].id, d.saga.forward[i].id);
    }
  }
  if (j.contains("compensations")) {
    for (const auto& [op, spec] : j.at("compensations").items()) {
      d.saga.compensations[op] = spec.get<CompensationSpec>();
    }
  }
  if (j.contains("inputs")) {
    for (const auto& [op, v] : j.at("inputs").items()) d.inputs[op] = v;
  }
  if (j.contains("schemas")) {
    for (const auto& [op, v] : j.at("schemas").items()) d.schemas[op] = v.get<std::string>();
  }
  return d;
}

SagaRun begin_saga(ContextStore& store, SagaDefinition def, const StateSnapshot& initial) {
  for (const auto& o : def.saga.forward) {
    if (!def.graph.contains(o.id)) def.graph.add_node(o);
  }
  topological_order(def.graph);
  if (!saga_order_consistent(def.saga, def.graph)) {
    throw Error(ErrorCode::kInvalidInput, "saga order is not a topological order of its graph");
  }

  SagaRun run;
  run.def = std::move(def);
  run.state = initial;
  for (const auto& o : run.def.saga.forward) run.state.declared_ops.insert(o.id);
  run.state.log_cursor = store.last_seq();
  auto last = store.entries();
  run.clock = last.empty() ? 0 : last.back().tick;
  run.active_checkpoint = store.checkpoint(run.state, run.clock);
  run.start_seq = store.append(LogKind::kSagaStart,
                               {{"saga", run.def.id},
                                {"definition", definition_to_json(run.def)},
                                {"checkpoint_id", run.active_checkpoint}},
                               ++run.clock);
  run.state.log_cursor = run.start_seq;
  return run;
}

std::vector<OperationId> on_failure(SagaRun& run, const std::string& failed) {
  if (!run.def.graph.contains(failed)) throw Error(ErrorCode::kUnknownOperation, failed);
  if (run.mode != RunMode::kForward) {
    throw Error(ErrorCode::kInvalidTransition, "failure handling needs a forward run, got " +
                                                   std::string(to_string(run.mode)));
  }
  std::vector<OperationRecord> records;
  for (const auto& op : run.completed) {
    OperationRecord r;
    r.op = run.def.graph.node(op);
    r.status = OpStatus::kCompleted;
    r.outputs = Value::object();
    r.timestamp = run.progress[op].completed_at;
    records.push_back(std::move(r));
  }
  std::set<std::string> affected;
  auto add = [&](const std::string& root) {
    for (const auto& o : affected_set(run.def.graph, root, records)) affected.insert(o.id);
  };
  for (const auto& [id, node] : run.def.graph.nodes()) {
    if (run.def.graph.predecessors(id).empty()) add(id);
  }
  add(failed);

  std::vector<OperationId> queue;
  for (auto it = run.completed.rbegin(); it != run.completed.rend(); ++it) {
    if (affected.count(*it) != 0) queue.push_back(run.def.graph.node(*it));
  }
  run.compensation_queue.clear();
  for (const auto& o : queue) run.compensation_queue.push_back(o.id);
  run.failed_op = failed;
  run.mode = queue.empty() ? RunMode::kAborted : RunMode::kCompensating;
  return queue;
}

StateSnapshot run_compensation(SagaRun& run, const std::vector<AgentBinding>& bindings,
                               ContextStore& store, const CoordinatorOptions& options) {
  if (run.mode != RunMode::kCompensating) {
    throw Error(ErrorCode::kInvalidTransition, "no compensation pending");
  }
  Driver d{run, store, options, {}};
  for (const auto& b : bindings) d.bind[b.op.id] = &b;
  d.compensate();
  return run.state;
}

SagaResult execute_saga(SagaRun& run, const std::vector<AgentBinding>& bindings, ContextStore& store,
                        const CoordinatorOptions& options) {
  if (!options.validator_available) {
    throw Error(ErrorCode::kValidatorUnavailable, "saga " + run.def.id + " needs a validator");
  }
  Driver d = make_driver(run, bindings, store, options);
  auto steps = expand_schedule(run.def, options.schedule);

  try {
    if (run.mode == RunMode::kCompensating) {
      d.compensate();
      return result_of(run);
    }
    if (run.mode != RunMode::kForward) return result_of(run);
    if (run.pending_failure) {
      const std::string op = *run.pending_failure;
      auto done = run.progress[op].phases_done;
      d.fail(op, static_cast<Phase>(std::min(done, kPhaseCount - 1)),
             run.failure_reason.empty() ? "failed before crash" : run.failure_reason);
      return result_of(run);
    }

    std::map<std::string, std::size_t> seen;
    for (const auto& op : steps) {
      std::size_t k = seen[op]++;
      auto& p = run.progress[op];
      if (k < p.phases_done) continue;
      auto phase = static_cast<Phase>(k);
      auto reason = d.run_phase(op, phase);
      if (!reason.empty()) {
        d.fail(op, phase, reason);
        return result_of(run);
      }
      run.progress[op].phases_done = k + 1;
      run.cursor = forward_cursor(run);
    }
    d.finish_forward();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kCompensationFailed) throw;
  }
  return result_of(run);
}

SagaRun resume_after_crash(ContextStore& store, const SagaDefinition& def, const StateSnapshot& initial) {
  auto entries = store.entries();
  const LogEntry* start = nullptr;
  for (const auto& e : entries) {
    if (e.kind == LogKind::kSagaStart && e.payload.value("saga", std::string()) == def.id) start = &e;
  }
  if (start == nullptr) return begin_saga(store, def, initial);

  SagaRun run;
  run.def = definition_from_json(start->payload.at("definition"));
  run.active_checkpoint = start->payload.at("checkpoint_id").get<std::string>();
  run.start_seq = start->seq;
  run.clock = start->tick;

  for (const auto& e : entries) {
    if (e.seq <= run.start_seq) continue;
    const Value& pl = e.payload;
    if (!pl.is_object() || pl.value("saga", std::string()) != def.id) continue;
    run.clock = e.tick;
    const std::string op = pl.value("op", std::string());
    if (pl.contains("phase") && pl.contains("step")) {
      auto phase = phase_from_string(pl.at("phase").get<std::string>());
      auto& p = run.progress[op];
      bool ok = pl.value("ok", false);
      if (phase == Phase::kExecution) {
        ++run.execution_attempts;
        p.started = true;
        if (ok) {
          AgentCall c;
          c.output = pl.at("output");
          c.internal_state = pl.at("internal_state");
          c.effects = changes_from_json(pl.value("effects", Value::array()));
          p.call = std::move(c);
        }
      } else if (phase == Phase::kOutputValidation && ok && p.call) {
        p.call->output = pl.at("output");
      } else if (phase == Phase::kStateCommitment && ok) {
        CompensationSpec spec;
        if (auto it = run.def.saga.compensations.find(op); it != run.def.saga.compensations.end()) {
          spec.inverse_actions = it->second.inverse_actions;
        }
        if (spec.inverse_actions.empty()) spec.inverse_actions = {"compensate-" + op};
        spec.for_op = op;
        spec.preconditions = Condition::completed(op);
        spec.recovery_state = pl.at("recovery_state");
        p.spec = spec;
        p.completed_at = e.tick;
        run.completed.push_back(op);
      } else if (phase == Phase::kCompensationRegistration && ok) {
        p.spec = pl.at("spec").get<CompensationSpec>();
      }
      if (ok) {
        p.phases_done = static_cast<std::size_t>(phase) + 1;
      } else {
        run.pending_failure = op;
        run.failure_reason = pl.value("reason", std::string());
      }
    } else if (e.kind == LogKind::kFailure) {
      run.pending_failure.reset();
      run.failed_op = op;
      run.failure_reason = pl.value("reason", std::string());
      run.compensation_queue = pl.at("queue").get<std::vector<std::string>>();
      run.mode = run_mode_from_string(pl.at("mode").get<std::string>());
    } else if (e.kind == LogKind::kCompensation) {
      auto it = std::find(run.compensation_queue.begin(), run.compensation_queue.end(), op);
      if (it != run.compensation_queue.end()) run.compensation_queue.erase(it);
      run.compensated.push_back(op);
    } else if (e.kind == LogKind::kVerification) {
      run.verified = true;
    } else if (e.kind == LogKind::kSagaOutcome) {
      run.mode = run_mode_from_string(pl.at("mode").get<std::string>());
      run.manual_intervention = pl.value("manual_intervention", false);
    }
  }
  run.state = store.materialize(store.last_seq());
  run.cursor = forward_cursor(run);
  return run;
}

Value run_report(const SagaRun& run, const SagaResult& result, const ContextStore& store) {
  Value phases = Value::object();
  for (const auto& o : run.def.saga.forward) {
    auto it = run.progress.find(o.id);
    phases[o.id] = it == run.progress.end() ? 0 : it->second.phases_done;
  }
  Value r = {{"saga", run.def.id},
             {"mode", to_string(run.mode)},
             {"outcome", to_string(result.outcome)},
             {"completed", run.completed},
             {"compensated", result.compensation_trace},
             {"phases", phases},
             {"manual_intervention", run.manual_intervention},
             {"verified", run.verified},
             {"execution_attempts", run.execution_attempts},
             {"log_entries", store.size()},
             {"digest", digest_hex(state_digest(result.state))}};
  if (run.failed_op) {
    r["failed_op"] = *run.failed_op;
    r["failure_reason"] = run.failure_reason;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Plans under execution

namespace {

Value goals_to_json(const planning::Goals& g) {
  Value rides = Value::array();
  for (const auto& r : g.rides) rides.push_back(r.person);
  Value errands = Value::array();
  for (const auto& e : g.errands) {
    errands.push_back({{"task", e.task}, {"location", e.location}, {"minutes", e.minutes}});
  }
  Value home = Value::array();
  for (const auto& h : g.home_tasks) {
    home.push_back({{"task", h.task},
                    {"location", h.location},
                    {"minutes", h.minutes},
                    {"eligible", h.eligible},
                    {"not_before", format_clock(h.not_before)}});
  }
  Value j = {{"drivers", g.drivers}, {"rides", rides}, {"errands", errands}, {"home_tasks", home}};
  if (g.gathering) {
    j["gathering"] = {{"task", g.gathering->task},
                      {"location", g.gathering->location},
                      {"not_before", format_clock(g.gathering->not_before)},
                      {"host", g.gathering->host}};
  }
  return j;
}

Value plan_json(const planning::Plan& plan) {
  Value a = Value::array();
  for (const auto& x : plan) a.push_back(x);
  return a;
}

bool executed_by(const planning::TimedAction& a, Tick tick) {
  return a.end < tick || (a.end == tick && a.start < tick);
}

}  // namespace

PlanRun start_plan_run(ContextStore& store, std::string id, planning::WorldModel world,
                       std::vector<planning::PlanRule> rules, planning::Goals goals, planning::Plan plan,
                       const std::set<std::string>& constraint_rules) {
  PlanRun run;
  run.id = std::move(id);
  run.world = std::move(world);
  run.rules = std::move(rules);
  run.goals = std::move(goals);
  run.plan = planning::canonical(std::move(plan));
  run.now = 0;
  if (!run.plan.empty()) {
    run.now = std::min_element(run.plan.begin(), run.plan.end(), [](const auto& a, const auto& b) {
                return a.start < b.start;
              })->start;
  }

  Value physical = Value::array();
  for (const auto& r : run.rules) {
    if (constraint_rules.empty() || constraint_rules.count(r.id) != 0) {
      store.append(LogKind::kConstraint,
                   {{"plan", run.id}, {"id", r.id}, {"rule", planning::plan_rule_to_json(r)}, {"resolved", false}},
                   run.now);
    } else {
      physical.push_back(planning::plan_rule_to_json(r));
    }
  }
  store.append(LogKind::kDependency,
               {{"plan", run.id}, {"world", planning::world_to_json(run.world)}, {"rules", physical}}, run.now);
  store.append(LogKind::kGoal, {{"plan", run.id}, {"goals", goals_to_json(run.goals)}}, run.now);
  run.history_seq = store.append(
      LogKind::kPlan, {{"plan", run.id}, {"status", "initial"}, {"actions", plan_json(run.plan)}}, run.now);
  return run;
}

void advance_plan(PlanRun& run, ContextStore& store, Tick tick) {
  std::set<std::string> done;
  for (const auto& a : run.executed) done.insert(a.id);
  planning::Plan due;
  for (const auto& a : run.plan) {
    if (done.count(a.id) == 0 && executed_by(a, tick)) due.push_back(a);
  }
  std::stable_sort(due.begin(), due.end(), [](const auto& a, const auto& b) {
    return std::tie(a.end, a.start) < std::tie(b.end, b.start);
  });
  for (const auto& a : due) {
    run.history_seq = store.append(
        LogKind::kOpRecord, {{"plan", run.id}, {"op", a.id}, {"status", "completed"}, {"action", a}}, a.end);
    run.executed.push_back(a);
  }
  run.now = std::max(run.now, tick);
}

planning::RescheduleResult default_replanner(const PlanRun& run, const planning::DisruptionEvent& d) {
  return planning::reactive_reschedule(run.world, run.plan, d, run.goals, run.rules, run.disruptions);
}

PlanRun replan(const PlanRun& run, ContextStore& store, const planning::DisruptionEvent& disruption,
               const Replanner& planner) {
  PlanRun next = run;
  advance_plan(next, store, disruption.at);
  store.append(LogKind::kDisruption,
               {{"plan", next.id}, {"disruption", planning::disruption_to_json(disruption)}}, disruption.at);

  auto all = next.disruptions;
  all.push_back(disruption);
  auto split = planning::split_at(next.plan, next.world, disruption.at, all);

  planning::RescheduleResult res;
  try {
    res = planner(next, disruption);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kInfeasible) throw;
    store.append(LogKind::kPlan, {{"plan", next.id}, {"status", "needs-human"}, {"blocking", e.what()}},
                 disruption.at);
    next.needs_human = true;
    next.blocking = e.what();
    next.disruptions = all;
    return next;
  }

  try {
    planning::check_history_preserved(split.history, res.plan, next.world);
    for (const auto& a : next.executed) {
      auto it = std::find_if(res.plan.begin(), res.plan.end(), [&](const auto& b) { return b.id == a.id; });
      if (it == res.plan.end() || !(*it == a)) {
        throw Error(ErrorCode::kRewriteOfPast, "executed action " + a.id + " altered or dropped");
      }
    }
  } catch (const Error& e) {
    store.append(LogKind::kValidationVerdict,
                 {{"plan", next.id}, {"status", "rejected"}, {"reason", e.what()}}, disruption.at);
    throw;
  }

  std::set<std::string> done;
  for (const auto& a : next.executed) done.insert(a.id);
  for (const auto& a : split.history) {
    if (done.count(a.id) != 0) continue;
    next.history_seq = store.append(
        LogKind::kOpRecord,
        {{"plan", next.id}, {"op", a.id}, {"status", "completed"}, {"partial", a.partial}, {"action", a}},
        disruption.at);
    next.executed.push_back(a);
  }

  store.append(LogKind::kPlan,
               {{"plan", next.id},
                {"status", "replanned"},
                {"strategy", res.strategy},
                {"cancelled", res.cancelled},
                {"makespan", format_clock(res.makespan)},
                {"route_minutes", res.route_minutes},
                {"actions", plan_json(res.plan)}},
               disruption.at);
  next.plan = planning::canonical(res.plan);
  next.disruptions = all;
  next.strategy = res.strategy;
  next.now = disruption.at;
  return next;
}

}  // namespace saga
