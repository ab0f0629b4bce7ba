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

#ifndef SAGA_WORKFLOW_H_
#define SAGA_WORKFLOW_H_

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "saga/common.h"
#include "saga/state_model.h"

namespace saga::workflow {

// One unit of work named by the problem description.
struct TaskDecl {
  std::string id;
  std::string label;
  std::string role;
  std::string agent;     // booking agent kind, or empty for a generic task agent
  std::string actor;
  std::string location;
  std::optional<Tick> release;  // earliest start
  Tick duration = 0;
  std::vector<std::string> reads;
  std::vector<std::string> writes;
};

struct ActorDecl {
  std::string location;
  Tick available_from = 0;
};

struct SpecConstraint {
  std::string id;
  std::string applies_to;  // task id
  Condition condition;
  std::string description;
};

struct Metric {
  std::string name;
  Condition predicate;
};

// The problem O with its constraints D and metrics M.
struct ProblemSpec {
  std::string name;
  std::vector<TaskDecl> tasks;
  std::map<std::string, ActorDecl> actors;
  std::map<std::pair<std::string, std::string>, int> travel;  // both orders
  std::set<std::string> entities;  // extra entity keys constraints may read
  std::string terminal;            // default: last task
  std::vector<SpecConstraint> constraints;
  std::vector<Metric> metrics;

  std::string terminal_task() const;
};

// Entity key under which a task's simulated schedule lives.
std::string task_entity(const std::string& task);

// Throws Error(kInvalidInput) for malformed specs, free-form metrics and
// constraints naming undeclared entities or tasks.
ProblemSpec spec_from_json(const Value& j);
Value spec_to_json(const ProblemSpec& s);
void check_spec(const ProblemSpec& s);

struct Node {
  std::string id;
  std::string role;
  Value profile = Value::object();
};

struct Edge {
  std::string from;
  std::string to;
  Condition condition;
  std::vector<std::string> constraints;  // ids of the constraints behind it
};

struct AgentSpec {
  std::string name;
  std::string kind;  // flight, hotel, ..., task, edge-check
  std::vector<std::string> reads;
  std::vector<std::string> writes;
};

struct CompAgentSpec {
  std::string name;
  std::string for_agent;
  std::vector<std::string> restores;  // fields put back to their prior values
  bool resets_edge = false;
  std::vector<std::string> inverse_actions;
};

struct LogSchema {
  std::string owner;
  std::vector<std::string> fields;
};

struct WorkflowTemplate {
  std::string name;
  std::uint64_t seed = 0;
  std::string terminal;
  std::vector<std::string> roles;
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::map<std::string, AgentSpec> agents;          // keyed by node id or edge key
  std::map<std::string, CompAgentSpec> comp_agents;
  std::map<std::string, LogSchema> schemas;
  std::map<std::string, std::string> rules;  // constraint id -> node it is checked at
  std::vector<SpecConstraint> constraints;

  const Node* node(const std::string& id) const;
  const Edge* edge(const std::string& from, const std::string& to) const;
  DependencyGraph graph() const;  // unchecked
};

std::string edge_key(const std::string& from, const std::string& to);

Value template_to_json(const WorkflowTemplate& t);
WorkflowTemplate template_from_json(const Value& j);
std::uint64_t template_digest(const WorkflowTemplate& t);
std::string template_to_dot(const WorkflowTemplate& t);

// Pluggable pure generators. The default suite is a rule table.
struct GeneratorSuite {
  std::uint64_t seed = 0;
  std::function<std::vector<std::string>(const ProblemSpec&)> extract_roles;
  std::function<Node(const ProblemSpec&, const TaskDecl&)> map_role;
  std::function<std::vector<Edge>(const std::vector<Node>&, const std::vector<SpecConstraint>&)> map_dep;
  std::function<LogSchema(const std::string& owner, const Value& profile)> define_log_schema;
  std::function<AgentSpec(const Node&, const LogSchema&)> define_node_agent;
  std::function<AgentSpec(const Edge&, const LogSchema&)> define_edge_agent;
  std::function<CompAgentSpec(const AgentSpec&, const LogSchema&)> define_comp_agent;
};

GeneratorSuite default_generators(std::uint64_t seed = 0);

// Stage 1. Throws Error(kRoleExtractionEmpty) or Error(kCycleDetected).
WorkflowTemplate build_network(const ProblemSpec& spec, const GeneratorSuite& gen = default_generators());

// Stage 2. Throws Error(kSchemaGapDetected) naming the owner and the
// fields its agent touches outside its log schema.
WorkflowTemplate attach_agents(WorkflowTemplate tmpl, const GeneratorSuite& gen = default_generators());

struct CheckFailure {
  std::string validator;  // structural, constraint, compensation, metric
  std::string subject;    // node, edge key or constraint id
  std::string detail;
};

struct WorkflowValidation {
  std::vector<CheckFailure> failures;
  bool ok() const { return failures.empty(); }
};

// Structural: acyclic and every node reaches the terminal. Constraint: each
// constraint is carried by an edge or a rule and holds on the earliest
// schedule. Compensation: each attachment's compensator undoes a simulated
// effect on a scratch state. Metrics must hold on the earliest schedule.
WorkflowValidation validate_workflow(const WorkflowTemplate& tmpl, const std::vector<Metric>& metrics = {});

struct RefineRound {
  std::vector<CheckFailure> failures;
  std::vector<std::string> repairs;
};

struct RefineResult {
  WorkflowTemplate tmpl;
  std::size_t iterations = 0;  // validation passes, including the final one
  std::vector<RefineRound> rounds;
};

inline constexpr std::size_t kDefaultRefineCap = 10;

// Stage 3. Repairs: add a missing compensator, add a missing edge, attach
// an unmapped constraint as a rule. Throws Error(kRefinementDiverged) when
// the cap is hit, no repair applies or failures grow.
RefineResult validate_and_refine(WorkflowTemplate tmpl, const std::vector<Metric>& metrics = {},
                                 const GeneratorSuite& gen = default_generators(),
                                 std::size_t cap = kDefaultRefineCap);

// Earliest start/end per timed node: its release (actor availability plus
// travel to the task's location), pushed back behind every predecessor.
std::map<std::string, std::pair<Tick, Tick>> earliest_schedule(const WorkflowTemplate& tmpl);

// All three stages.
RefineResult build_workflow(const ProblemSpec& spec, const GeneratorSuite& gen = default_generators());

}  // namespace saga::workflow

#endif  // SAGA_WORKFLOW_H_
