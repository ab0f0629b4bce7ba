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

#include <algorithm>

#include "saga/coordinator.h"
#include "test_util.h"

namespace saga {
namespace {

using testing::fast;
using testing::TempLog;

// Generic saga over named operations; each writes "op/<id>" and bumps a
// shared counter entity.
struct Toy {
  SagaDefinition def;
  std::vector<AgentBinding> bindings;
  StateSnapshot initial;
  std::set<std::string> failing_compensators;
};

Toy toy(const std::vector<std::string>& ops, const std::vector<std::pair<std::string, std::string>>& edges) {
  Toy t;
  t.def.id = "toy";
  for (const auto& o : ops) t.def.graph.add_node(OperationId(o));
  for (const auto& [a, b] : edges) t.def.graph.add_edge(a, b);
  t.def.saga.forward = topological_order(t.def.graph);
  t.initial.app.put("counter", Entity{EntityStatus::kCommitted, {{"n", 0}}});
  for (const auto& o : ops) {
    t.bindings.push_back(
        {OperationId(o),
         [](const OperationId& op, const Value&, const StateSnapshot& snap) {
           AgentCall c;
           c.output = {{"made_by", op.id}};
           int n = snap.app.find("counter")->data.at("n").get<int>();
           c.effects.push_back({"counter", Entity{EntityStatus::kCommitted, {{"n", n + 1}}}});
           return c;
         },
         [](const OperationId&, const Value&, const Value&) { return Value::object(); }});
  }
  return t;
}

std::vector<std::string> ids(const std::vector<OperationId>& ops) {
  std::vector<std::string> out;
  for (const auto& o : ops) out.push_back(o.id);
  return out;
}

TEST(Saga, TravelCommitsWithFivePhasesPerOperation) {
  TempLog log("travel");
  auto store = ContextStore::open(log.path(), fast());
  auto b = testing::scenario("travel");
  auto setup = harness::make_travel(b);
  auto run = begin_saga(store, setup.def, setup.initial);
  auto res = execute_saga(run, setup.bindings, store, setup.options);
  ASSERT_EQ(res.outcome, SagaOutcome::kCommitted);
  EXPECT_TRUE(res.compensation_trace.empty());

  std::vector<std::pair<std::string, int>> phases;
  for (const auto& e : store.entries()) {
    if (e.payload.is_object() && e.payload.contains("phase") && e.payload.contains("step")) {
      phases.emplace_back(e.payload.at("op").get<std::string>(), e.payload.at("step").get<int>());
    }
  }
  ASSERT_EQ(phases.size(), 25u);
  for (std::size_t i = 0; i < 25; ++i) {
    EXPECT_EQ(phases[i].first, "T" + std::to_string(i / 5 + 1));
    EXPECT_EQ(phases[i].second, static_cast<int>(i % 5) + 1);
  }
  for (const char* op : {"T1", "T2", "T3", "T4", "T5"}) {
    ASSERT_TRUE(res.state.app.contains(setup.def.entity_key(op))) << op;
  }
  // budget entity tracks the five bookings
  Cents sum = 0;
  for (const char* op : {"T1", "T2", "T3", "T4", "T5"}) {
    sum += res.state.app.find(setup.def.entity_key(op))->data.at("total_cost").get<Cents>();
  }
  EXPECT_EQ(res.state.app.find(setup.budget_key)->data.at("allocated_cents").get<Cents>(), sum);
  EXPECT_LE(sum, 500000);
}

TEST(Saga, TrainFailureUnwindsHotelAndFlight) {
  TempLog log("t3");
  auto store = ContextStore::open(log.path(), fast());
  auto b = testing::scenario("travel");
  auto setup = harness::make_travel(b, "t3-failure");
  auto run = begin_saga(store, setup.def, setup.initial);
  auto res = execute_saga(run, setup.bindings, store, setup.options);
  EXPECT_EQ(res.outcome, SagaOutcome::kCompensated);
  EXPECT_EQ(res.compensation_trace, (std::vector<std::string>{"T2", "T1"}));
  EXPECT_TRUE(res.state.app.same_entities(setup.initial.app));
}

TEST(Saga, FlightCompensationResetsDependentEdges) {
  TempLog log("t3e");
  auto store = ContextStore::open(log.path(), fast());
  auto b = testing::scenario("travel");
  auto setup = harness::make_travel(b, "t3-failure");
  auto run = begin_saga(store, setup.def, setup.initial);
  auto res = execute_saga(run, setup.bindings, store, setup.options);
  ASSERT_EQ(res.outcome, SagaOutcome::kCompensated);
  bool flight_flags = false;
  for (const auto& e : store.entries()) {
    if (e.kind != LogKind::kCompensation || e.payload.at("op") != "T1") continue;
    flight_flags = e.payload.contains("flags") &&
                   e.payload.at("flags") == Value({"reevaluate-hotel", "reevaluate-train"});
  }
  EXPECT_TRUE(flight_flags);
  for (const auto& [k, st] : res.state.deps.edges()) {
    EXPECT_EQ(st.state, Satisfaction::kUnknown) << k.from << "->" << k.to;
  }
}

TEST(Saga, HotelCompensationRestoresBudget) {
  TempLog log("t5");
  auto store = ContextStore::open(log.path(), fast());
  auto b = testing::scenario("travel");
  auto setup = harness::make_travel(b, "t5-failure");
  auto run = begin_saga(store, setup.def, setup.initial);
  auto res = execute_saga(run, setup.bindings, store, setup.options);
  EXPECT_EQ(res.compensation_trace, (std::vector<std::string>{"T4", "T3", "T2", "T1"}));
  EXPECT_EQ(*res.state.app.find(setup.budget_key), *setup.initial.app.find(setup.budget_key));
  EXPECT_FALSE(res.state.app.contains(setup.def.entity_key("T4")));
}

TEST(Saga, EmptySagaCommitsImmediately) {
  TempLog log("empty");
  auto store = ContextStore::open(log.path(), fast());
  Toy t = toy({}, {});
  auto run = begin_saga(store, t.def, t.initial);
  auto res = execute_saga(run, {}, store);
  EXPECT_EQ(res.outcome, SagaOutcome::kCommitted);
  EXPECT_TRUE(res.state.app.same_entities(t.initial.app));
}

TEST(Saga, InjectedFailureAtEveryPhaseIsAtomic) {
  Toy t = toy({"A", "B", "C"}, {{"A", "B"}, {"B", "C"}});
  for (const char* op : {"A", "B", "C"}) {
    for (std::size_t p = 0; p < kPhaseCount; ++p) {
      TempLog log("inj");
      auto store = ContextStore::open(log.path(), fast());
      CoordinatorOptions opt;
      opt.inject.push_back({op, static_cast<Phase>(p)});
      auto run = begin_saga(store, t.def, t.initial);
      auto res = execute_saga(run, t.bindings, store, opt);
      EXPECT_NE(res.outcome, SagaOutcome::kCommitted);
      EXPECT_TRUE(res.state.app.same_entities(t.initial.app)) << op << " phase " << p;
    }
  }
}

TEST(OnFailure, ChainAfterTwoCommits) {
  Toy t = toy({"T1", "T2", "T3"}, {{"T1", "T2"}, {"T2", "T3"}});
  TempLog log("chain");
  auto store = ContextStore::open(log.path(), fast());
  CoordinatorOptions opt;
  opt.inject.push_back({"T3", Phase::kExecution});
  auto run = begin_saga(store, t.def, t.initial);
  auto res = execute_saga(run, t.bindings, store, opt);
  EXPECT_EQ(res.compensation_trace, (std::vector<std::string>{"T2", "T1"}));
}

TEST(OnFailure, FirstOperationHasNothingToCompensate) {
  Toy t = toy({"T1", "T2"}, {{"T1", "T2"}});
  TempLog log("first");
  auto store = ContextStore::open(log.path(), fast());
  auto run = begin_saga(store, t.def, t.initial);
  EXPECT_TRUE(on_failure(run, "T1").empty());
  EXPECT_EQ(run.mode, RunMode::kAborted);
  EXPECT_THROW(on_failure(run, "nope"), Error);
}

// All linear extensions of the graph restricted to `ops`.
std::vector<std::vector<std::string>> legal_orders(const DependencyGraph& g, std::vector<std::string> ops) {
  std::vector<std::vector<std::string>> out;
  std::sort(ops.begin(), ops.end());
  do {
    bool ok = true;
    for (std::size_t i = 0; i < ops.size() && ok; ++i) {
      for (std::size_t j = i + 1; j < ops.size() && ok; ++j) {
        if (g.reaches(ops[j], ops[i])) ok = false;
      }
    }
    if (ok) out.push_back(ops);
  } while (std::next_permutation(ops.begin(), ops.end()));
  return out;
}

TEST(OnFailure, DiamondCompensatesInReverseCompletion) {
  Toy t = toy({"A", "B", "C", "D"}, {{"A", "B"}, {"A", "C"}, {"B", "D"}, {"C", "D"}});
  for (const auto& order : std::vector<std::vector<std::string>>{{"A", "B", "C", "D"}, {"A", "C", "B", "D"}}) {
    TempLog log("diamond");
    auto store = ContextStore::open(log.path(), fast());
    CoordinatorOptions opt;
    opt.schedule = order;
    opt.inject.push_back({"D", Phase::kOutputValidation});
    auto run = begin_saga(store, t.def, t.initial);
    auto res = execute_saga(run, t.bindings, store, opt);
    std::vector<std::string> reversed(res.compensation_trace.rbegin(), res.compensation_trace.rend());
    EXPECT_EQ(reversed, (std::vector<std::string>{order[0], order[1], order[2]}));
    auto legal = legal_orders(t.def.graph, {"A", "B", "C"});
    EXPECT_NE(std::find(legal.begin(), legal.end(), reversed), legal.end());
    EXPECT_TRUE(res.state.app.same_entities(t.initial.app));
  }
}

TEST(Compensation, FailingCompensatorEscalates) {
  Toy t = toy({"T1", "T2", "T3"}, {{"T1", "T2"}, {"T2", "T3"}});
  t.bindings[0].compensator = [](const OperationId&, const Value&, const Value&) -> Value {
    throw std::runtime_error("refund desk closed");
  };
  TempLog log("compfail");
  auto store = ContextStore::open(log.path(), fast());
  CoordinatorOptions opt;
  opt.inject.push_back({"T3", Phase::kExecution});
  auto run = begin_saga(store, t.def, t.initial);
  auto res = execute_saga(run, t.bindings, store, opt);
  EXPECT_EQ(res.outcome, SagaOutcome::kAborted);
  EXPECT_TRUE(run.manual_intervention);
  EXPECT_EQ(res.compensation_trace, (std::vector<std::string>{"T2"}));
}

TEST(Saga, PreconditionsCheckedBeforeAnyStep) {
  Toy t = toy({"T1", "T2"}, {{"T1", "T2"}});
  {
    TempLog log("nov");
    auto store = ContextStore::open(log.path(), fast());
    auto run = begin_saga(store, t.def, t.initial);
    auto before = store.size();
    CoordinatorOptions opt;
    opt.validator_available = false;
    try {
      execute_saga(run, t.bindings, store, opt);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kValidatorUnavailable);
    }
    EXPECT_EQ(store.size(), before);
  }
  {
    TempLog log("nob");
    auto store = ContextStore::open(log.path(), fast());
    auto run = begin_saga(store, t.def, t.initial);
    auto before = store.size();
    std::vector<AgentBinding> partial = {t.bindings[0]};
    try {
      execute_saga(run, partial, store);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kBindingMissing);
    }
    EXPECT_EQ(store.size(), before);
  }
}

TEST(Saga, DefinitionRoundTrip) {
  auto b = testing::scenario("travel");
  auto setup = harness::make_travel(b);
  auto back = definition_from_json(definition_to_json(setup.def));
  EXPECT_EQ(back.id, setup.def.id);
  EXPECT_EQ(ids(back.saga.forward), ids(setup.def.saga.forward));
  EXPECT_EQ(back.graph.edges().size(), setup.def.graph.edges().size());
  EXPECT_EQ(back.inputs, setup.def.inputs);
}

std::uint64_t find_seq(const ContextStore& store, LogKind kind, const std::string& op) {
  for (const auto& e : store.entries()) {
    if (e.kind == kind && e.payload.value("op", std::string()) == op) return e.seq;
  }
  return 0;
}

SagaResult travel_run(const std::filesystem::path& path, const std::string& variant, std::uint64_t crash_at,
                      std::uint64_t* crash_hit = nullptr) {
  auto b = testing::scenario("travel");
  // the booking provider outlives the crashed process
  auto setup = harness::make_travel(b, variant);
  {
    StoreOptions o = fast();
    o.fault = [crash_at](std::uint64_t seq) {
      return seq == crash_at ? FaultAction::kCrashAfterWrite : FaultAction::kNone;
    };
    auto store = ContextStore::open(path, o);
    auto run = begin_saga(store, setup.def, setup.initial);
    try {
      return execute_saga(run, setup.bindings, store, setup.options);
    } catch (const SimulatedCrash&) {
      if (crash_hit) *crash_hit = crash_at;
    }
  }
  auto store = ContextStore::open(path, fast());
  auto run = resume_after_crash(store, setup.def, setup.initial);
  return execute_saga(run, harness::travel_bindings(b, setup.catalog), store, setup.options);
}

TEST(Resume, CrashAfterHotelCommitContinuesForward) {
  TempLog ref("ref");
  auto oracle = travel_run(ref.path(), "", 0);
  auto ref_store = ContextStore::open(ref.path(), fast());
  std::uint64_t commit_t2 = find_seq(ref_store, LogKind::kCommit, "T2");
  ASSERT_GT(commit_t2, 0u);

  TempLog log("crash");
  std::uint64_t hit = 0;
  auto res = travel_run(log.path(), "", commit_t2, &hit);
  EXPECT_EQ(hit, commit_t2);
  EXPECT_EQ(res.outcome, SagaOutcome::kCommitted);
  EXPECT_EQ(state_digest(res.state), state_digest(oracle.state));
  auto store = ContextStore::open(log.path(), fast());
  int t2_commits = 0;
  for (const auto& e : store.entries()) {
    if (e.kind == LogKind::kCommit && e.payload.value("op", std::string()) == "T2") ++t2_commits;
  }
  EXPECT_EQ(t2_commits, 1);
}

TEST(Resume, CrashMidCompensationRunsOnlyTheRest) {
  TempLog ref("refc");
  auto oracle = travel_run(ref.path(), "t3-failure", 0);
  auto ref_store = ContextStore::open(ref.path(), fast());
  std::uint64_t comp_t2 = find_seq(ref_store, LogKind::kCompensation, "T2");
  ASSERT_GT(comp_t2, 0u);

  TempLog log("crashc");
  std::uint64_t hit = 0;
  auto res = travel_run(log.path(), "t3-failure", comp_t2, &hit);
  EXPECT_EQ(hit, comp_t2);
  EXPECT_EQ(res.outcome, SagaOutcome::kCompensated);
  EXPECT_TRUE(res.state.app.same_entities(oracle.state.app));
  auto store = ContextStore::open(log.path(), fast());
  std::map<std::string, int> comps;
  for (const auto& e : store.entries()) {
    if (e.kind == LogKind::kCompensation) ++comps[e.payload.at("op").get<std::string>()];
  }
  EXPECT_EQ(comps, (std::map<std::string, int>{{"T1", 1}, {"T2", 1}}));
}

TEST(Resume, EmptyLogStartsFresh) {
  TempLog log("fresh");
  auto store = ContextStore::open(log.path(), fast());
  Toy t = toy({"A"}, {});
  auto run = resume_after_crash(store, t.def, t.initial);
  EXPECT_EQ(run.mode, RunMode::kForward);
  EXPECT_EQ(run.cursor, 0u);
  auto res = execute_saga(run, t.bindings, store);
  EXPECT_EQ(res.outcome, SagaOutcome::kCommitted);
}

class PlanReplan : public ::testing::Test {
 protected:
  harness::ScenarioBundle b = testing::scenario("p8");
  TempLog log{"plan"};
  ContextStore store = ContextStore::open(log.path(), fast());
  PlanRun run = start_plan_run(store, "P8", b.world, b.rules, *b.goals, b.plan, b.constraint_rules);
};

TEST_F(PlanReplan, TrafficAlertKeepsExecutedPrefix) {
  advance_plan(run, store, parse_clock("13:00"));
  std::uint64_t prefix_seq = store.last_seq();
  auto before = store.prefix_hash(prefix_seq);
  auto next = replan(run, store, b.disruptions[0]);
  EXPECT_FALSE(next.needs_human);
  EXPECT_EQ(store.prefix_hash(prefix_seq), before);
  bool partial = false;
  for (const auto& a : next.executed) {
    if (a.actor == "Pat" && a.partial) {
      partial = true;
      EXPECT_EQ(a.start, parse_clock("12:50"));
      EXPECT_EQ(a.end, parse_clock("13:00"));
    }
  }
  EXPECT_TRUE(partial);
}

TEST_F(PlanReplan, RestartFromOriginIsRejected) {
  advance_plan(run, store, parse_clock("13:00"));
  Replanner restart = [](const PlanRun& r, const planning::DisruptionEvent& d) {
    auto res = default_replanner(r, d);
    for (auto& a : res.plan) {
      if (a.actor == "Pat" && a.kind == planning::ActionKind::kTravel && a.start >= d.at) {
        a.from = "W";
        a.segment.clear();
      }
    }
    return res;
  };
  auto before = store.size();
  try {
    replan(run, store, b.disruptions[0], restart);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRewriteOfPast);
  }
  // the disruption is logged, then the rejection; nothing executes
  ASSERT_EQ(store.size(), before + 2);
  const auto& tail = store.entries();
  EXPECT_EQ(tail[tail.size() - 2].kind, LogKind::kDisruption);
  EXPECT_EQ(tail.back().kind, LogKind::kValidationVerdict);
  EXPECT_EQ(tail.back().payload.at("status"), "rejected");
}

TEST_F(PlanReplan, NeutralDisruptionKeepsPlan) {
  auto d = b.disruptions[0];
  d.multiplier = planning::Multiplier(1);
  auto next = replan(run, store, d);
  EXPECT_EQ(planning::canonical(next.plan), planning::canonical(b.plan));
}

}  // namespace
}  // namespace saga
