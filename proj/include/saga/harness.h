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

#ifndef SAGA_HARNESS_H_
#define SAGA_HARNESS_H_

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "saga/agents.h"
#include "saga/common.h"
#include "saga/context_store.h"
#include "saga/coordinator.h"
#include "saga/planning.h"

namespace saga::harness {

// A plan recorded from some planner, with the rule ids it is expected to
// break (or the error it must raise).
struct Fixture {
  std::string name;
  std::string source;
  planning::Plan plan;
  std::vector<std::string> expected_violations;
  std::string expected_error;  // error code name, empty when none
  bool use_disruptions = false;
  bool reactive = false;  // plan holds only the actions after the disruption
  bool augment = false;   // apply the common-sense rules before checking
};

struct ScenarioBundle {
  std::string problem;  // P5, P6, P8, P9 or travel
  std::string title;
  std::filesystem::path path;
  Value raw;

  // Planning scenarios.
  planning::WorldModel world;
  std::vector<planning::PlanRule> rules;
  std::set<std::string> constraint_rules;  // rule ids of class "constraint"
  planning::Plan plan;
  std::optional<planning::Goals> goals;
  std::vector<planning::DisruptionEvent> disruptions;
  std::vector<planning::AugmentationRule> augmentation;
  std::vector<Fixture> fixtures;

  bool is_travel() const { return problem == "travel"; }
};

// Scenario search: an existing path as given, then "<dir>/<name>.json" for
// each directory in SAGA_DATA_DIR (colon separated), ./data/scenarios and
// the source tree's data/scenarios. Throws Error(kScenarioParseError).
std::filesystem::path find_scenario(const std::string& name);
ScenarioBundle load_scenario(const std::string& name_or_path);
ScenarioBundle parse_scenario(const Value& j, std::filesystem::path path = {});

// Replaces every {"$ref": entity, "field": path[, "plus_days": n]} inside
// `inputs` with the referenced value from committed state. Throws
// Error(kInvalidInput) for a dangling reference.
Value resolve_refs(const Value& inputs, const StateSnapshot& snap);
std::string add_days(const std::string& iso_date, int days);

// Everything needed to run (or resume) the travel saga.
struct TravelSetup {
  SagaDefinition def;
  std::vector<AgentBinding> bindings;
  CoordinatorOptions options;
  StateSnapshot initial;
  std::shared_ptr<agents::BookingCatalog> catalog;
  std::vector<std::string> expected_trace;  // from the variant, if any
  std::string budget_key = "budget";
};

// `variant` names an entry under "variants" (scripted failures); `seed`
// overrides the catalog seed.
TravelSetup make_travel(const ScenarioBundle& bundle, const std::string& variant = {},
                        std::optional<std::uint64_t> seed = std::nullopt);

// Bindings over a catalog, for callers that rebuild them after a crash.
std::vector<AgentBinding> travel_bindings(const ScenarioBundle& bundle,
                                          std::shared_ptr<agents::BookingCatalog> catalog);

// "tick=13:00,scope=B,mult=3" or "tick=13:00,action=james-land,start=16:00".
planning::DisruptionEvent parse_disrupt_flag(const std::string& text);

enum class Mode { kPlan, kReact, kReplayFixture };
std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view s);

struct RunOptions {
  Mode mode = Mode::kPlan;
  std::optional<planning::DisruptionEvent> disrupt;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::string fixture;              // replay only this fixture
  std::filesystem::path log_path;   // empty: a fresh temporary file
  bool sync = true;
};

struct FixtureResult {
  std::string name;
  std::vector<std::string> expected;
  std::vector<std::string> found;
  std::vector<std::string> missing;
  std::vector<std::string> extra;
  std::string expected_error;
  std::string error;
  bool matches = false;
};

struct CapabilityRow {
  std::string capability;
  std::string baseline;  // what an unaided planner offers
  std::string engine;    // what this run evidences
  bool evidenced = false;
  std::vector<std::uint64_t> evidence;  // log sequence numbers
};

struct RunReport {
  int schema_version = 1;
  std::string problem;
  std::string mode;
  std::string outcome;
  std::vector<std::string> violations_found;
  std::vector<std::string> violations_expected;
  std::vector<FixtureResult> fixtures;
  std::vector<std::string> compensation_trace;
  std::vector<CapabilityRow> capabilities;
  Value details = Value::object();
  Value plan = Value::array();
  double elapsed_ms = 0;
  std::uint64_t log_entries = 0;
  std::string log_path;
  int exit_code = 0;
};

// Exit codes: 0 success, 1 fixture mismatch, 2 violations found,
// 3 infeasible, 4 parse error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitMismatch = 1;
inline constexpr int kExitViolations = 2;
inline constexpr int kExitInfeasible = 3;
inline constexpr int kExitParse = 4;

RunReport run_scenario(const ScenarioBundle& bundle, const RunOptions& options);

// Rows mirroring the planner-versus-engine capability comparison, each
// backed by entries found in the log.
std::vector<CapabilityRow> capability_matrix(const ContextStore& store,
                                             const std::vector<std::pair<std::uint64_t, std::uint64_t>>&
                                                 history_checks = {});

enum class ReportFormat { kText, kMachine };
Value report_to_json(const RunReport& r);
RunReport report_from_json(const Value& j);
std::string emit_report(const RunReport& r, ReportFormat format);

// Log rendered as line-delimited JSON.
std::string dump_log(const std::vector<LogEntry>& entries);

}  // namespace saga::harness

#endif  // SAGA_HARNESS_H_
