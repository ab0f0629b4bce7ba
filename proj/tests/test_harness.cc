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

#include "test_util.h"

namespace saga::harness {
namespace {

using testing::TempLog;

RunReport run(const std::string& name, Mode mode, const std::string& variant = {},
              std::optional<planning::DisruptionEvent> d = std::nullopt) {
  TempLog log("h");
  RunOptions o;
  o.mode = mode;
  o.variant = variant;
  o.disrupt = d;
  o.log_path = log.path();
  o.sync = false;
  return run_scenario(testing::scenario(name), o);
}

TEST(Fixtures, ShippedFixturesReplayExactly) {
  for (const char* name : {"p5", "p6", "p8", "p9"}) {
    auto r = run(name, Mode::kReplayFixture);
    EXPECT_EQ(r.outcome, "fixtures-match") << name;
    for (const auto& f : r.fixtures) {
      EXPECT_TRUE(f.matches) << name << " " << f.name;
      EXPECT_TRUE(f.missing.empty() && f.extra.empty()) << f.name;
    }
  }
}

TEST(Fixtures, ThanksgivingReplayNamesAllFour) {
  auto r = run("p9", Mode::kReplayFixture);
  ASSERT_EQ(r.fixtures.size(), 1u);
  auto found = r.fixtures[0].found;
  std::sort(found.begin(), found.end());
  EXPECT_EQ(found, (std::vector<std::string>{"dinner-deadline", "fire-safety", "side-dish-duration", "travel-time"}));
  EXPECT_EQ(r.exit_code, kExitViolations);
}

TEST(Fixtures, ExpectedListDriftIsAMismatch) {
  auto j = testing::scenario("p9").raw;
  auto& ex = j["fixtures"][0]["expected_violations"];
  ex.erase(ex.begin());
  TempLog log("drift");
  RunOptions o;
  o.mode = Mode::kReplayFixture;
  o.log_path = log.path();
  o.sync = false;
  auto r = run_scenario(parse_scenario(j), o);
  EXPECT_EQ(r.outcome, "fixture-mismatch");
  EXPECT_EQ(r.exit_code, kExitMismatch);
  EXPECT_EQ(r.fixtures[0].extra.size(), 1u);
}

TEST(ExitCodes, Contract) {
  EXPECT_EQ(run("p6", Mode::kReplayFixture).exit_code, kExitOk);
  EXPECT_EQ(run("travel", Mode::kPlan).exit_code, kExitOk);
  EXPECT_EQ(run("p9", Mode::kReplayFixture).exit_code, kExitViolations);
  auto late = parse_disrupt_flag("tick=12:30,action=james-land,start=17:30");
  auto r = run("p9", Mode::kReact, {}, late);
  EXPECT_EQ(r.outcome, "needs-human");
  EXPECT_EQ(r.exit_code, kExitInfeasible);
  try {
    load_scenario("no-such-scenario");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kScenarioParseError);
  }
}

TEST(Run, TravelTrainFailureRestoresBudget) {
  auto r = run("travel", Mode::kPlan, "t3-failure");
  EXPECT_EQ(r.outcome, "compensated");
  EXPECT_EQ(r.compensation_trace, (std::vector<std::string>{"T2", "T1"}));
}

TEST(Run, WeddingReactMeetsDeadlines) {
  auto r = run("p8", Mode::kReact);
  EXPECT_EQ(r.outcome, "replanned");
  auto plan = r.plan.get<planning::Plan>();
  Tick photos = -1, clothes = -1;
  for (const auto& a : plan) {
    if (a.task == "photos") photos = a.start;
    if (a.task == "clothes") clothes = a.end;
  }
  EXPECT_EQ(photos, parse_clock("15:00"));
  ASSERT_GE(clothes, 0);
  EXPECT_LE(clothes, parse_clock("14:00"));
}

TEST(Report, CommittedTravelHasEvidenceForEveryRow) {
  auto r = run("travel", Mode::kPlan);
  ASSERT_FALSE(r.capabilities.empty());
  for (const auto& row : r.capabilities) {
    EXPECT_TRUE(row.evidenced) << row.capability;
    EXPECT_FALSE(row.evidence.empty()) << row.capability;
    for (auto seq : row.evidence) EXPECT_LE(seq, r.log_entries);
  }
  auto text = emit_report(r, ReportFormat::kText);
  for (const auto& row : r.capabilities) EXPECT_NE(text.find(row.capability), std::string::npos);
}

TEST(Report, MachineFormatRoundTrips) {
  for (auto r : {run("travel", Mode::kPlan, "t3-failure"), run("p9", Mode::kReplayFixture), RunReport{}}) {
    auto text = emit_report(r, ReportFormat::kMachine);
    auto once = Value::parse(text);
    auto again = emit_report(report_from_json(once), ReportFormat::kMachine);
    EXPECT_EQ(text, again);
    EXPECT_EQ(once.at("schema_version"), 1);
  }
}

TEST(Report, EmptyReportIsAValidDocument) {
  auto j = Value::parse(emit_report(RunReport{}, ReportFormat::kMachine));
  EXPECT_TRUE(j.is_object());
  EXPECT_TRUE(j.at("violations_found").empty());
  EXPECT_FALSE(emit_report(RunReport{}, ReportFormat::kText).empty());
}

TEST(Disrupt, FlagForms) {
  auto m = parse_disrupt_flag("tick=13:00,scope=B,mult=3");
  EXPECT_EQ(m.kind, planning::DisruptionEvent::Kind::kTravelMultiplier);
  EXPECT_EQ(m.at, parse_clock("13:00"));
  EXPECT_EQ(m.scope, (std::set<std::string>{"B"}));
  EXPECT_EQ(m.multiplier, planning::Multiplier(3));
  auto f = parse_disrupt_flag("tick=13:00,scope=B,mult=5/2");
  EXPECT_EQ(f.multiplier, planning::Multiplier(5, 2));
  auto d = parse_disrupt_flag("tick=12:30,action=james-land,start=16:00");
  EXPECT_EQ(d.kind, planning::DisruptionEvent::Kind::kDelay);
  EXPECT_EQ(d.action, "james-land");
  EXPECT_EQ(d.new_start, parse_clock("16:00"));
  for (const char* bad : {"", "tick=zz,scope=B,mult=3", "tick=13:00,scope=B,mult=0", "tick=13:00,bogus=1"}) {
    EXPECT_THROW(parse_disrupt_flag(bad), Error) << bad;
  }
}

TEST(Scenario, MalformedFileIsAParseError) {
  auto j = testing::scenario("p8").raw;
  j.erase("world");
  try {
    parse_scenario(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kScenarioParseError);
  }
}

TEST(Log, DumpIsOneJsonObjectPerLine) {
  TempLog log("dump");
  {
    auto store = ContextStore::open(log.path(), testing::fast());
    store.append(LogKind::kReasoning, {{"note", "a"}}, 0);
    store.append(LogKind::kReasoning, {{"note", "b"}}, 0);
  }
  auto store = ContextStore::open(log.path(), testing::fast());
  auto text = dump_log(store.entries());
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  auto first = Value::parse(text.substr(0, text.find('\n')));
  EXPECT_EQ(first.at("seq"), 1);
}

}  // namespace
}  // namespace saga::harness
