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

#include <gtest/gtest.h>

#include <random>

#include "saga/state_model.h"

namespace saga {
namespace {

StateSnapshot with_statuses(const std::map<std::string, OpStatus>& st) {
  StateSnapshot s;
  Tick t = 1;
  for (const auto& [op, status] : st) {
    OperationRecord r;
    r.op = OperationId(op);
    r.status = status;
    if (status == OpStatus::kCompleted || status == OpStatus::kCompensated) r.outputs = Value::object();
    r.timestamp = t++;
    s.ops[op] = r;
    s.declared_ops.insert(op);
  }
  return s;
}

Entity committed(Value data) { return Entity{EntityStatus::kCommitted, std::move(data)}; }

TEST(EntityAutomaton, AllowsForwardPathAndCompensation) {
  EXPECT_TRUE(entity_transition_allowed(EntityStatus::kPending, EntityStatus::kActive));
  EXPECT_TRUE(entity_transition_allowed(EntityStatus::kActive, EntityStatus::kCommitted));
  EXPECT_TRUE(entity_transition_allowed(EntityStatus::kActive, EntityStatus::kCompensated));
  EXPECT_FALSE(entity_transition_allowed(EntityStatus::kCommitted, EntityStatus::kPending));
  EXPECT_FALSE(entity_transition_allowed(EntityStatus::kPending, EntityStatus::kCommitted));
}

TEST(EntityAutomaton, PutRejectsIllegalStatusChange) {
  AppState app;
  app.put("a", Entity{EntityStatus::kPending, {}});
  app.put("a", Entity{EntityStatus::kActive, {}});
  app.put("a", committed({{"x", 1}}));
  EXPECT_THROW(app.put("a", Entity{EntityStatus::kPending, {}}), Error);
  app.put("a", committed({{"x", 2}}));  // same-status replacement
  EXPECT_EQ(app.find("a")->data.at("x"), 2);
}

TEST(OpAutomaton, FirstRecordMustBeStarted) {
  EXPECT_TRUE(op_transition_allowed(std::nullopt, OpStatus::kStarted));
  EXPECT_FALSE(op_transition_allowed(std::nullopt, OpStatus::kCompleted));
  EXPECT_TRUE(op_transition_allowed(OpStatus::kStarted, OpStatus::kFailed));
  EXPECT_TRUE(op_transition_allowed(OpStatus::kCompleted, OpStatus::kCompensated));
  EXPECT_FALSE(op_transition_allowed(OpStatus::kFailed, OpStatus::kCompensated));
}

TEST(OpAutomaton, ReplayRejectsIllegalSequence) {
  OperationRecord a{OperationId("T1"), {}, std::nullopt, 1, OpStatus::kStarted, {}, {}};
  OperationRecord b{OperationId("T1"), {}, Value::object(), 2, OpStatus::kCompleted, {}, {}};
  OperationRecord c{OperationId("T1"), {}, Value::object(), 3, OpStatus::kCompensated, {}, {}};
  std::vector<OperationRecord> ok = {a, b, c};
  EXPECT_EQ(replay_statuses(ok).at("T1"), OpStatus::kCompensated);
  std::vector<OperationRecord> bad = {b};
  EXPECT_THROW(replay_statuses(bad), Error);
}

TEST(OpRecord, OutputsPresentExactlyWhenFinished) {
  OperationRecord r;
  r.status = OpStatus::kStarted;
  EXPECT_TRUE(record_well_formed(r));
  r.status = OpStatus::kCompleted;
  EXPECT_FALSE(record_well_formed(r));
  r.outputs = Value::object();
  EXPECT_TRUE(record_well_formed(r));
}

TEST(DependencyMarks, DecidedEdgeNeedsReset) {
  DependencySatisfaction d;
  EdgeKey k{"T1", "T2"};
  EXPECT_EQ(d.state(k), Satisfaction::kUnknown);
  d.mark(k, Satisfaction::kSatisfied, 1);
  EXPECT_THROW(d.mark(k, Satisfaction::kViolated, 2), Error);
  d.reset(k, 3);
  d.mark(k, Satisfaction::kViolated, 4);
  EXPECT_EQ(d.state(k), Satisfaction::kViolated);
}

TEST(Condition, ConjunctionAndNegation) {
  auto snap = with_statuses({{"T1", OpStatus::kCompleted}, {"T2", OpStatus::kCompleted}});
  EXPECT_TRUE(Condition::all({Condition::completed("T1"), Condition::completed("T2")}).evaluate(snap));
  EXPECT_FALSE(Condition::negate(Condition::completed("T1")).evaluate(snap));
}

TEST(Condition, UnknownOperationIsUnresolvable) {
  StateSnapshot snap;
  try {
    Condition::completed("T9").evaluate(snap);
    FAIL() << "expected an unresolvable atom";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnresolvableAtom);
  }
  snap.declared_ops.insert("T9");
  EXPECT_FALSE(Condition::completed("T9").evaluate(snap));
}

// Composite prerequisite of T3 (flight and hotel before train) against every
// status assignment of four operations.
TEST(Condition, CompositeMatchesTruthTable) {
  DependencyGraph g;
  for (const char* id : {"T1", "T2", "T3", "T4"}) g.add_node(OperationId(id));
  g.add_edge("T1", "T3");
  g.add_edge("T2", "T3");
  Condition c = g.prerequisite("T3");
  const std::vector<OpStatus> statuses = {OpStatus::kStarted, OpStatus::kCompleted, OpStatus::kFailed,
                                          OpStatus::kCompensated};
  int checked = 0;
  for (int mask = 0; mask < 256; ++mask) {
    std::map<std::string, OpStatus> st;
    const char* ids[] = {"T1", "T2", "T3", "T4"};
    for (int i = 0; i < 4; ++i) st[ids[i]] = statuses[(mask >> (2 * i)) & 3];
    bool expected = st["T1"] == OpStatus::kCompleted && st["T2"] == OpStatus::kCompleted;
    EXPECT_EQ(c.evaluate(with_statuses(st)), expected) << mask;
    ++checked;
  }
  EXPECT_EQ(checked, 256);
}

TEST(Condition, JsonRoundTrip) {
  Value j = Value::parse(R"({"and": [
    {"op_status": {"op": "T1", "status": "completed"}},
    {"not": {"compare": {"sum_prefix": "booking/", "field": "total_cost", "cmp": "<=", "value": 500000}}},
    {"or": [
      {"deadline": {"entity": "task/x", "field": "end", "by": "14:00"}},
      {"location_equals": {"entity": "p", "field": "at", "location": "W"}},
      {"edge": {"from": "T1", "to": "T2", "state": "satisfied"}},
      {"constant": false}]}]})");
  Condition c = j.get<Condition>();
  Value back = c;
  EXPECT_EQ(back.get<Condition>(), c);
  EXPECT_EQ(c.atom_count(), 6u);
  EXPECT_THROW(Value({{"bogus", 1}}).get<Condition>(), Error);
}

TEST(Condition, NumericSumSkipsCompensatedEntities) {
  StateSnapshot s;
  s.app.put("booking/T1", committed({{"total_cost", 300000}}));
  s.app.put("booking/T2", committed({{"total_cost", 180000}}));
  NumericAtom a{{NumericOperand::Kind::kSum, "", "booking/", "total_cost"}, Comparison::kLessEqual, 500000};
  EXPECT_TRUE(Condition::atom(a).evaluate(s));
  s.app.put("booking/T3", committed({{"total_cost", 40000}}));
  EXPECT_FALSE(Condition::atom(a).evaluate(s));
}

InvariantSet budget_invariant() {
  NumericAtom a{{NumericOperand::Kind::kSum, "", "booking/", "total_cost"}, Comparison::kLessEqual, 500000};
  return {Invariant{"budget-exceeded", Severity::kHard, "total cost within $5000", Condition::atom(a)}};
}

TEST(Invariants, BudgetBoundary) {
  AppState app;
  app.put("booking/T1", committed({{"total_cost", 300000}}));
  app.put("booking/T2", committed({{"total_cost", 180000}}));
  EXPECT_TRUE(check_invariants(budget_invariant(), app).empty());
  app.put("booking/T3", committed({{"total_cost", 40000}}));
  auto v = check_invariants(budget_invariant(), app);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].name, "budget-exceeded");
  EXPECT_TRUE(check_invariants({}, app).empty());
}

TEST(TopologicalOrder, LexicalTieBreak) {
  EXPECT_TRUE(topological_order(DependencyGraph{}).empty());
  DependencyGraph g;
  for (const char* id : {"T4", "T3", "T2", "T1"}) g.add_node(OperationId(id));
  g.add_edge("T1", "T2");
  g.add_edge("T1", "T3");
  g.add_edge("T2", "T4");
  g.add_edge("T3", "T4");
  auto order = topological_order(g);
  std::vector<std::string> ids;
  for (const auto& o : order) ids.push_back(o.id);
  EXPECT_EQ(ids, (std::vector<std::string>{"T1", "T2", "T3", "T4"}));
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < ids.size(); ++i) pos[ids[i]] = i;
  for (const auto& e : g.edges()) EXPECT_LT(pos[e.from], pos[e.to]);
}

TEST(TopologicalOrder, SmallestCycle) {
  DependencyGraph g;
  g.add_node(OperationId("T1"));
  g.add_node(OperationId("T2"));
  g.add_edge("T1", "T2");
  try {
    g.add_edge("T2", "T1");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCycleDetected);
  }
  auto u = DependencyGraph::unchecked({OperationId("T1"), OperationId("T2")},
                                      {{"T1", "T2", Condition::completed("T1")}, {"T2", "T1", Condition::completed("T2")}});
  EXPECT_THROW(topological_order(u), Error);
}

std::vector<OperationRecord> completions(const std::vector<std::string>& ids) {
  std::vector<OperationRecord> log;
  Tick t = 1;
  for (const auto& id : ids) {
    log.push_back({OperationId(id), {}, std::nullopt, t++, OpStatus::kStarted, {}, {}});
    log.push_back({OperationId(id), {}, Value::object(), t++, OpStatus::kCompleted, {}, {}});
  }
  return log;
}

std::vector<std::string> ids_of(const std::vector<OperationId>& ops) {
  std::vector<std::string> out;
  for (const auto& o : ops) out.push_back(o.id);
  return out;
}

TEST(AffectedSet, IsolatedNode) {
  DependencyGraph g;
  g.add_node(OperationId("T1"));
  g.add_node(OperationId("T2"));
  auto log = completions({"T1", "T2"});
  EXPECT_EQ(ids_of(affected_set(g, "T1", log)), (std::vector<std::string>{"T1"}));
}

TEST(AffectedSet, ChainFailureDownstreamOnly) {
  DependencyGraph g;
  for (const char* id : {"T1", "T2", "T3"}) g.add_node(OperationId(id));
  g.add_edge("T1", "T2");
  g.add_edge("T2", "T3");
  auto log = completions({"T1", "T2"});
  EXPECT_EQ(ids_of(affected_set(g, "T2", log)), (std::vector<std::string>{"T2"}));
  // rollback to start: everything downstream of the source
  EXPECT_EQ(ids_of(affected_set(g, "T1", log)), (std::vector<std::string>{"T2", "T1"}));
}

TEST(AffectedSet, TravelChainReverseCompletion) {
  DependencyGraph g;
  for (const char* id : {"T1", "T2", "T3", "T4", "T5"}) g.add_node(OperationId(id));
  for (auto [a, b] : {std::pair{"T1", "T2"}, {"T2", "T3"}, {"T3", "T4"}, {"T4", "T5"}}) g.add_edge(a, b);
  auto log = completions({"T1", "T2", "T3"});
  EXPECT_EQ(ids_of(affected_set(g, "T1", log)), (std::vector<std::string>{"T3", "T2", "T1"}));
}

TEST(SagaOrder, ForwardMustRespectGraph) {
  DependencyGraph g;
  for (const char* id : {"T1", "T2"}) g.add_node(OperationId(id));
  g.add_edge("T1", "T2");
  Saga ok{{OperationId("T1"), OperationId("T2")}, {}};
  Saga bad{{OperationId("T2"), OperationId("T1")}, {}};
  EXPECT_TRUE(saga_order_consistent(ok, g));
  EXPECT_FALSE(saga_order_consistent(bad, g));
}

TEST(Snapshot, JsonRoundTripAndDigest) {
  StateSnapshot s = with_statuses({{"T1", OpStatus::kCompleted}});
  s.app.put("booking/T1", committed({{"total_cost", 10}}));
  s.deps.mark({"T1", "T2"}, Satisfaction::kSatisfied, 4);
  s.log_cursor = 9;
  Value j = s;
  auto back = j.get<StateSnapshot>();
  EXPECT_EQ(back, s);
  auto other = s;
  other.log_cursor = 20;
  other.ops["T1"].timestamp = 99;
  EXPECT_EQ(state_digest(other), state_digest(s));  // cursors and timestamps excluded
  other.app.put("booking/T1", committed({{"total_cost", 11}}));
  EXPECT_NE(state_digest(other), state_digest(s));
}

TEST(Delta, ApplyAndRoundTrip) {
  StateSnapshot s;
  StateDelta d;
  d.entities.push_back({"e", committed({{"v", 1}})});
  d.records.push_back({OperationId("T1"), {}, std::nullopt, 1, OpStatus::kStarted, {}, {}});
  d.marks.push_back({{"T1", "T2"}, Satisfaction::kSatisfied, 1});
  Value j = d;
  apply_delta(s, j.get<StateDelta>());
  EXPECT_EQ(s.app.find("e")->data.at("v"), 1);
  EXPECT_EQ(s.ops.at("T1").status, OpStatus::kStarted);
  EXPECT_EQ(s.deps.state({"T1", "T2"}), Satisfaction::kSatisfied);
  StateDelta erase;
  erase.entities.push_back({"e", std::nullopt});
  apply_delta(s, erase);
  EXPECT_FALSE(s.app.contains("e"));
}

TEST(FindPath, DottedPaths) {
  Value v = {{"a", {{"b", {{"c", 3}}}}}};
  ASSERT_NE(find_path(v, "a.b.c"), nullptr);
  EXPECT_EQ(*find_path(v, "a.b.c"), 3);
  EXPECT_EQ(find_path(v, "a.x"), nullptr);
}

}  // namespace
}  // namespace saga
