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

#include "saga/workflow.h"

#include <algorithm>
#include <sstream>

#include "saga/agents.h"

namespace saga::workflow {

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::kInvalidInput, what); }

void add_unique(std::vector<std::string>& v, const std::string& s) {
  if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
}

bool is_booking_kind(const std::string& kind) {
  for (auto k : agents::all_agent_kinds()) {
    if (agents::to_string(k) == kind) return true;
  }
  return false;
}

// Operation ids a condition depends on.
void collect_ops(const Condition& c, std::set<std::string>& out) {
  if (c.kind() == Condition::Kind::kAtom) {
    std::visit(
        [&](const auto& a) {
          using T = std::decay_t<decltype(a)>;
          if constexpr (std::is_same_v<T, OpStatusAtom>) {
            out.insert(a.op);
          } else if constexpr (std::is_same_v<T, EdgeAtom>) {
            out.insert(a.edge.from);
          }
        },
        c.as_atom());
    return;
  }
  for (const auto& ch : c.children()) collect_ops(ch, out);
}

// The atoms of `c` that name `op`, or completed(op) if none do directly.
Condition edge_condition(const Condition& c, const std::string& op) {
  if (c.kind() == Condition::Kind::kAtom) {
    if (const auto* a = std::get_if<OpStatusAtom>(&c.as_atom()); a && a->op == op) return c;
  }
  return Condition::completed(op);
}

int route(const ProblemSpec& s, const std::string& a, const std::string& b) {
  if (a.empty() || b.empty() || a == b) return 0;
  auto it = s.travel.find({a, b});
  if (it == s.travel.end()) bad("no route " + a + " - " + b);
  return it->second;
}

std::vector<std::string> string_list(const Value& j, const char* key) {
  return j.value(key, std::vector<std::string>{});
}

Tick clock_value(const Value& v) { return v.is_string() ? parse_clock(v.get<std::string>()) : v.get<Tick>(); }

const std::vector<std::string> kTaskReads = {"actor", "location", "release", "duration"};
const std::vector<std::string> kTaskWrites = {"start", "end", "status"};
const std::vector<std::string> kEdgeFields = {"from", "to", "condition", "state", "evidence"};
const std::vector<std::string> kRecordFields = {"op", "status", "timestamp"};

std::vector<std::string> inverse_actions_for(const std::string& kind) {
  if (kind == "flight") return {"reset booking status", "clear confirmation number", "restore budget allocation"};
  if (kind == "hotel") return {"cancel room", "restore budget allocation"};
  if (kind == "train") return {"cancel ticket", "recalculate travel times"};
  if (kind == "budget") return {"refund expense"};
  if (kind == "itinerary") return {"restore previous itinerary"};
  if (kind == "edge-check") return {"reset dependency mark"};
  return {"release schedule slot"};
}

// Timed nodes as committed entities, every node completed.
StateSnapshot simulated_run(const WorkflowTemplate& t) {
  StateSnapshot snap;
  auto sched = earliest_schedule(t);
  Tick ts = 1;
  for (const auto& n : t.nodes) {
    Entity e;
    e.status = EntityStatus::kCommitted;
    e.data = {{"status", "committed"}};
    if (auto it = sched.find(n.id); it != sched.end()) {
      e.data["start"] = it->second.first;
      e.data["end"] = it->second.second;
      e.data["actor"] = n.profile.value("actor", "");
      e.data["location"] = n.profile.value("location", "");
      e.data["duration"] = n.profile.value("duration", Tick{0});
    }
    snap.app.put(task_entity(n.id), e);
    snap.declared_ops.insert(n.id);
    OperationRecord r;
    r.op = OperationId(n.id);
    r.status = OpStatus::kCompleted;
    r.outputs = Value::object();
    r.timestamp = ts++;
    snap.ops[n.id] = r;
  }
  for (const auto& e : t.edges) snap.deps.mark({e.from, e.to}, Satisfaction::kSatisfied, ts);
  return snap;
}

std::string schedule_text(const WorkflowTemplate& t, const std::string& task) {
  auto sched = earliest_schedule(t);
  auto it = sched.find(task);
  if (it == sched.end()) return "";
  return "; earliest " + task + " " + format_clock(it->second.first) + "-" + format_clock(it->second.second);
}

}  // namespace

std::string task_entity(const std::string& task) { return "task/" + task; }

std::string edge_key(const std::string& from, const std::string& to) { return from + "->" + to; }

std::string ProblemSpec::terminal_task() const {
  if (!terminal.empty()) return terminal;
  return tasks.empty() ? std::string() : tasks.back().id;
}

// ---------------------------------------------------------------------------
// Spec files

ProblemSpec spec_from_json(const Value& j) {
  ProblemSpec s;
  try {
    s.name = j.value("name", "workflow");
    const Value desc = j.value("description", Value::object());
    for (const auto& t : desc.value("tasks", Value::array())) {
      TaskDecl d;
      d.id = t.at("id").get<std::string>();
      d.label = t.value("label", d.id);
      d.role = t.value("role", "");
      d.agent = t.value("agent", "");
      d.actor = t.value("actor", "");
      d.location = t.value("location", "");
      if (t.contains("release")) d.release = clock_value(t.at("release"));
      d.duration = t.value("duration", Tick{0});
      d.reads = string_list(t, "reads");
      d.writes = string_list(t, "writes");
      s.tasks.push_back(std::move(d));
    }
    const Value actors_json = desc.value("actors", Value::object());
    for (const auto& [name, a] : actors_json.items()) {
      s.actors[name] = {a.value("location", ""), a.contains("available_from") ? clock_value(a.at("available_from")) : 0};
    }
    for (const auto& r : desc.value("travel", Value::array())) {
      auto a = r.at(0).get<std::string>();
      auto b = r.at(1).get<std::string>();
      int m = r.at(2).get<int>();
      s.travel[{a, b}] = m;
      s.travel[{b, a}] = m;
    }
    for (const auto& e : desc.value("entities", Value::array())) s.entities.insert(e.get<std::string>());
    s.terminal = desc.value("terminal", "");
    for (const auto& c : j.value("constraints", Value::array())) {
      s.constraints.push_back({c.at("id").get<std::string>(), c.at("applies_to").get<std::string>(),
                               c.at("condition").get<Condition>(), c.value("description", "")});
    }
    for (const auto& m : j.value("metrics", Value::array())) {
      if (!m.is_object() || !m.contains("predicate") || !m.at("predicate").is_object()) {
        bad("metric must be a named predicate: " + m.dump());
      }
      s.metrics.push_back({m.at("name").get<std::string>(), m.at("predicate").get<Condition>()});
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    bad(std::string("problem spec: ") + e.what());
  }
  check_spec(s);
  return s;
}

Value spec_to_json(const ProblemSpec& s) {
  Value tasks = Value::array();
  for (const auto& t : s.tasks) {
    Value v = {{"id", t.id}, {"label", t.label}, {"role", t.role}};
    if (!t.agent.empty()) v["agent"] = t.agent;
    if (!t.actor.empty()) v["actor"] = t.actor;
    if (!t.location.empty()) v["location"] = t.location;
    if (t.release) v["release"] = format_clock(*t.release);
    if (t.duration) v["duration"] = t.duration;
    if (!t.reads.empty()) v["reads"] = t.reads;
    if (!t.writes.empty()) v["writes"] = t.writes;
    tasks.push_back(v);
  }
  Value actors = Value::object();
  for (const auto& [n, a] : s.actors) actors[n] = {{"location", a.location}, {"available_from", format_clock(a.available_from)}};
  Value travel = Value::array();
  for (const auto& [k, m] : s.travel) {
    if (k.first < k.second) travel.push_back({k.first, k.second, m});
  }
  Value cs = Value::array();
  for (const auto& c : s.constraints) {
    cs.push_back({{"id", c.id}, {"applies_to", c.applies_to}, {"condition", c.condition}, {"description", c.description}});
  }
  Value ms = Value::array();
  for (const auto& m : s.metrics) ms.push_back({{"name", m.name}, {"predicate", m.predicate}});
  Value desc = {{"tasks", tasks}, {"actors", actors}, {"travel", travel}, {"entities", s.entities}};
  if (!s.terminal.empty()) desc["terminal"] = s.terminal;
  return {{"name", s.name}, {"description", desc}, {"constraints", cs}, {"metrics", ms}};
}

void check_spec(const ProblemSpec& s) {
  std::set<std::string> tasks;
  std::set<std::string> entities = s.entities;
  for (const auto& t : s.tasks) {
    if (t.id.empty()) bad("task without id");
    if (!tasks.insert(t.id).second) bad("duplicate task " + t.id);
    entities.insert(task_entity(t.id));
    if (!t.actor.empty() && s.actors.count(t.actor) == 0) bad(t.id + " names undeclared actor " + t.actor);
    if (t.duration < 0) bad(t.id + " has a negative duration");
    if (!t.agent.empty() && !is_booking_kind(t.agent)) bad(t.id + " names unknown agent kind " + t.agent);
  }
  if (!s.terminal.empty() && tasks.count(s.terminal) == 0) bad("terminal " + s.terminal + " is not a task");
  std::set<std::string> ids;
  for (const auto& c : s.constraints) {
    if (!ids.insert(c.id).second) bad("duplicate constraint " + c.id);
    if (tasks.count(c.applies_to) == 0) bad("constraint " + c.id + " applies to undeclared task " + c.applies_to);
    for (const auto& e : c.condition.referenced_entities(AppState{})) {
      if (entities.count(e) == 0) bad("constraint " + c.id + " reads undeclared entity " + e);
    }
    std::set<std::string> ops;
    collect_ops(c.condition, ops);
    for (const auto& op : ops) {
      if (tasks.count(op) == 0) bad("constraint " + c.id + " names undeclared task " + op);
    }
  }
  for (const auto& m : s.metrics) {
    for (const auto& e : m.predicate.referenced_entities(AppState{})) {
      if (entities.count(e) == 0) bad("metric " + m.name + " reads undeclared entity " + e);
    }
  }
}

// ---------------------------------------------------------------------------
// Template

const Node* WorkflowTemplate::node(const std::string& id) const {
  for (const auto& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

const Edge* WorkflowTemplate::edge(const std::string& from, const std::string& to) const {
  for (const auto& e : edges) {
    if (e.from == from && e.to == to) return &e;
  }
  return nullptr;
}

DependencyGraph WorkflowTemplate::graph() const {
  std::vector<OperationId> ns;
  for (const auto& n : nodes) ns.emplace_back(n.id, n.profile.value("label", n.id));
  std::vector<DependencyEdge> es;
  for (const auto& e : edges) es.push_back({e.from, e.to, e.condition});
  return DependencyGraph::unchecked(std::move(ns), std::move(es));
}

Value template_to_json(const WorkflowTemplate& t) {
  Value nodes = Value::array();
  for (const auto& n : t.nodes) nodes.push_back({{"id", n.id}, {"role", n.role}, {"profile", n.profile}});
  Value edges = Value::array();
  for (const auto& e : t.edges) {
    edges.push_back({{"from", e.from}, {"to", e.to}, {"condition", e.condition}, {"constraints", e.constraints}});
  }
  Value agents = Value::object();
  for (const auto& [k, a] : t.agents) {
    agents[k] = {{"name", a.name}, {"kind", a.kind}, {"reads", a.reads}, {"writes", a.writes}};
  }
  Value comps = Value::object();
  for (const auto& [k, c] : t.comp_agents) {
    comps[k] = {{"name", c.name},
                {"for_agent", c.for_agent},
                {"restores", c.restores},
                {"resets_edge", c.resets_edge},
                {"inverse_actions", c.inverse_actions}};
  }
  Value schemas = Value::object();
  for (const auto& [k, s] : t.schemas) schemas[k] = {{"owner", s.owner}, {"fields", s.fields}};
  Value cs = Value::array();
  for (const auto& c : t.constraints) {
    cs.push_back({{"id", c.id}, {"applies_to", c.applies_to}, {"condition", c.condition}, {"description", c.description}});
  }
  return {{"name", t.name},       {"seed", t.seed},     {"terminal", t.terminal}, {"roles", t.roles},
          {"nodes", nodes},       {"edges", edges},     {"agents", agents},       {"comp_agents", comps},
          {"schemas", schemas},   {"rules", t.rules},   {"constraints", cs}};
}

WorkflowTemplate template_from_json(const Value& j) {
  WorkflowTemplate t;
  try {
    t.name = j.value("name", "");
    t.seed = j.value("seed", std::uint64_t{0});
    t.terminal = j.value("terminal", "");
    t.roles = string_list(j, "roles");
    for (const auto& n : j.value("nodes", Value::array())) {
      t.nodes.push_back({n.at("id").get<std::string>(), n.value("role", ""), n.value("profile", Value::object())});
    }
    for (const auto& e : j.value("edges", Value::array())) {
      Edge x;
      x.from = e.at("from").get<std::string>();
      x.to = e.at("to").get<std::string>();
      x.condition = e.contains("condition") ? e.at("condition").get<Condition>() : Condition::completed(x.from);
      x.constraints = string_list(e, "constraints");
      t.edges.push_back(std::move(x));
    }
    const Value agents_json = j.value("agents", Value::object());
    for (const auto& [k, a] : agents_json.items()) {
      t.agents[k] = {a.value("name", ""), a.value("kind", ""), string_list(a, "reads"), string_list(a, "writes")};
    }
    const Value comp_agents_json = j.value("comp_agents", Value::object());
    for (const auto& [k, c] : comp_agents_json.items()) {
      t.comp_agents[k] = {c.value("name", ""), c.value("for_agent", ""), string_list(c, "restores"),
                          c.value("resets_edge", false), string_list(c, "inverse_actions")};
    }
    const Value schemas_json = j.value("schemas", Value::object());
    for (const auto& [k, s] : schemas_json.items()) {
      t.schemas[k] = {s.value("owner", k), string_list(s, "fields")};
    }
    t.rules = j.value("rules", std::map<std::string, std::string>{});
    for (const auto& c : j.value("constraints", Value::array())) {
      t.constraints.push_back({c.at("id").get<std::string>(), c.at("applies_to").get<std::string>(),
                               c.at("condition").get<Condition>(), c.value("description", "")});
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    bad(std::string("workflow template: ") + e.what());
  }
  return t;
}

std::uint64_t template_digest(const WorkflowTemplate& t) { return fnv1a(template_to_json(t).dump()); }

std::string template_to_dot(const WorkflowTemplate& t) {
  std::ostringstream out;
  out << "digraph \"" << t.name << "\" {\n  rankdir=LR;\n";
  for (const auto& n : t.nodes) {
    out << "  \"" << n.id << "\" [label=\"" << n.id << "\\n" << n.profile.value("label", n.id) << "\\n(" << n.role
        << ")\"";
    if (n.id == t.terminal) out << " shape=doublecircle";
    if (t.comp_agents.count(n.id) == 0) out << " color=red";
    out << "];\n";
  }
  for (const auto& e : t.edges) {
    std::string label;
    for (const auto& c : e.constraints) label += (label.empty() ? "" : ",") + c;
    out << "  \"" << e.from << "\" -> \"" << e.to << "\" [label=\"" << label << "\"";
    if (t.comp_agents.count(edge_key(e.from, e.to)) == 0) out << " color=red";
    out << "];\n";
  }
  out << "}\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Generators

GeneratorSuite default_generators(std::uint64_t seed) {
  GeneratorSuite g;
  g.seed = seed;
  g.extract_roles = [](const ProblemSpec& s) {
    std::vector<std::string> roles;
    for (const auto& t : s.tasks) {
      std::string r = !t.role.empty() ? t.role : !t.agent.empty() ? t.agent : "";
      if (!r.empty()) add_unique(roles, r);
    }
    return roles;
  };
  g.map_role = [](const ProblemSpec& s, const TaskDecl& t) {
    Node n;
    n.id = t.id;
    n.role = !t.role.empty() ? t.role : t.agent;
    Value p = {{"label", t.label}, {"agent", t.agent.empty() ? "task" : t.agent}};
    std::vector<std::string> reads;
    std::vector<std::string> writes;
    if (!t.agent.empty()) {
      const auto& schema = agents::agent_schema(agents::agent_kind_from_string(t.agent));
      reads = schema.input_fields;
      writes = schema.output_fields;
      for (const auto& f : schema.internal_state_fields) add_unique(writes, f);
    } else {
      reads = kTaskReads;
      writes = kTaskWrites;
    }
    for (const auto& f : t.reads) add_unique(reads, f);
    for (const auto& f : t.writes) add_unique(writes, f);
    p["reads"] = reads;
    p["writes"] = writes;
    if (!t.actor.empty()) p["actor"] = t.actor;
    if (!t.location.empty()) p["location"] = t.location;
    if (t.agent.empty() && (t.release || t.duration > 0 || !t.actor.empty())) {
      Tick release = t.release.value_or(0);
      if (!t.actor.empty()) {
        const auto& a = s.actors.at(t.actor);
        release = std::max(release, a.available_from + route(s, a.location, t.location));
      }
      p["release"] = release;
      p["duration"] = t.duration;
    }
    n.profile = std::move(p);
    return n;
  };
  g.map_dep = [](const std::vector<Node>& nodes, const std::vector<SpecConstraint>& constraints) {
    std::set<std::string> ids;
    for (const auto& n : nodes) ids.insert(n.id);
    std::vector<Edge> edges;
    for (const auto& c : constraints) {
      std::set<std::string> ops;
      collect_ops(c.condition, ops);
      for (const auto& op : ops) {
        if (op == c.applies_to || ids.count(op) == 0) continue;
        auto it = std::find_if(edges.begin(), edges.end(),
                               [&](const Edge& e) { return e.from == op && e.to == c.applies_to; });
        if (it == edges.end()) {
          edges.push_back({op, c.applies_to, edge_condition(c.condition, op), {c.id}});
        } else {
          add_unique(it->constraints, c.id);
        }
      }
    }
    return edges;
  };
  g.define_log_schema = [](const std::string& owner, const Value& profile) {
    LogSchema s{owner, {}};
    if (profile.contains("from")) {
      s.fields = kEdgeFields;
      return s;
    }
    s.fields = kRecordFields;
    for (const auto& f : profile.value("reads", std::vector<std::string>{})) add_unique(s.fields, f);
    for (const auto& f : profile.value("writes", std::vector<std::string>{})) add_unique(s.fields, f);
    return s;
  };
  g.define_node_agent = [](const Node& n, const LogSchema&) {
    std::string kind = n.profile.value("agent", "task");
    return AgentSpec{kind + "-agent/" + n.id, kind, n.profile.value("reads", std::vector<std::string>{}),
                     n.profile.value("writes", std::vector<std::string>{})};
  };
  g.define_edge_agent = [](const Edge& e, const LogSchema&) {
    return AgentSpec{"edge-check/" + edge_key(e.from, e.to), "edge-check", {"from", "to", "condition"},
                     {"state", "evidence"}};
  };
  g.define_comp_agent = [](const AgentSpec& a, const LogSchema&) {
    CompAgentSpec c;
    c.name = "comp/" + a.name;
    c.for_agent = a.name;
    c.restores = a.writes;
    c.resets_edge = a.kind == "edge-check";
    c.inverse_actions = inverse_actions_for(a.kind);
    return c;
  };
  return g;
}

// ---------------------------------------------------------------------------
// Stage 1

WorkflowTemplate build_network(const ProblemSpec& spec, const GeneratorSuite& gen) {
  check_spec(spec);
  WorkflowTemplate t;
  t.name = spec.name;
  t.seed = gen.seed;
  t.roles = gen.extract_roles(spec);
  if (t.roles.empty() || spec.tasks.empty()) {
    throw Error(ErrorCode::kRoleExtractionEmpty, "no roles found in " + spec.name);
  }
  for (const auto& task : spec.tasks) t.nodes.push_back(gen.map_role(spec, task));
  t.edges = gen.map_dep(t.nodes, spec.constraints);
  t.constraints = spec.constraints;
  t.terminal = spec.terminal_task();
  for (const auto& c : spec.constraints) {
    bool carried = std::any_of(t.edges.begin(), t.edges.end(), [&](const Edge& e) {
      return std::find(e.constraints.begin(), e.constraints.end(), c.id) != e.constraints.end();
    });
    if (!carried) t.rules[c.id] = c.applies_to;
  }
  topological_order(t.graph());  // throws kCycleDetected
  return t;
}

// ---------------------------------------------------------------------------
// Stage 2

namespace {

void attach_node(WorkflowTemplate& t, const Node& n, const GeneratorSuite& gen) {
  t.schemas[n.id] = gen.define_log_schema(n.id, n.profile);
  t.agents[n.id] = gen.define_node_agent(n, t.schemas[n.id]);
  t.comp_agents[n.id] = gen.define_comp_agent(t.agents[n.id], t.schemas[n.id]);
}

void attach_edge(WorkflowTemplate& t, const Edge& e, const GeneratorSuite& gen) {
  auto key = edge_key(e.from, e.to);
  Value profile = {{"from", e.from}, {"to", e.to}, {"condition", e.condition}};
  t.schemas[key] = gen.define_log_schema(key, profile);
  t.agents[key] = gen.define_edge_agent(e, t.schemas[key]);
  t.comp_agents[key] = gen.define_comp_agent(t.agents[key], t.schemas[key]);
}

std::vector<std::string> schema_gap(const WorkflowTemplate& t, const std::string& key) {
  std::vector<std::string> missing;
  auto s = t.schemas.find(key);
  auto touched = [&](const std::vector<std::string>& fields) {
    for (const auto& f : fields) {
      if (s == t.schemas.end() || std::find(s->second.fields.begin(), s->second.fields.end(), f) == s->second.fields.end()) {
        add_unique(missing, f);
      }
    }
  };
  if (auto a = t.agents.find(key); a != t.agents.end()) {
    touched(a->second.reads);
    touched(a->second.writes);
  }
  if (auto c = t.comp_agents.find(key); c != t.comp_agents.end()) touched(c->second.restores);
  return missing;
}

}  // namespace

WorkflowTemplate attach_agents(WorkflowTemplate tmpl, const GeneratorSuite& gen) {
  for (const auto& n : tmpl.nodes) attach_node(tmpl, n, gen);
  for (const auto& e : tmpl.edges) attach_edge(tmpl, e, gen);
  for (const auto& [key, agent] : tmpl.agents) {
    auto missing = schema_gap(tmpl, key);
    if (!missing.empty()) {
      std::string list;
      for (const auto& f : missing) list += (list.empty() ? "" : ", ") + f;
      throw Error(ErrorCode::kSchemaGapDetected, key + " log schema lacks " + list);
    }
  }
  return tmpl;
}

// ---------------------------------------------------------------------------
// Stage 3

std::map<std::string, std::pair<Tick, Tick>> earliest_schedule(const WorkflowTemplate& tmpl) {
  std::map<std::string, std::pair<Tick, Tick>> out;
  std::vector<OperationId> order;
  try {
    order = topological_order(tmpl.graph());
  } catch (const Error&) {
    return out;
  }
  auto g = tmpl.graph();
  for (const auto& op : order) {
    const Node* n = tmpl.node(op.id);
    if (n == nullptr || !n->profile.contains("release")) continue;
    Tick start = n->profile.at("release").get<Tick>();
    for (const auto& p : g.predecessors(op.id)) {
      if (auto it = out.find(p); it != out.end()) start = std::max(start, it->second.second);
    }
    out[op.id] = {start, start + n->profile.value("duration", Tick{0})};
  }
  return out;
}

WorkflowValidation validate_workflow(const WorkflowTemplate& t, const std::vector<Metric>& metrics) {
  WorkflowValidation v;
  auto fail = [&](std::string validator, std::string subject, std::string detail) {
    v.failures.push_back({std::move(validator), std::move(subject), std::move(detail)});
  };

  // Structural.
  auto g = t.graph();
  bool acyclic = true;
  try {
    topological_order(g);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kCycleDetected) throw;
    acyclic = false;
    fail("structural", t.name, e.what());
  }
  if (t.node(t.terminal) == nullptr) {
    fail("structural", t.terminal, "terminal node missing");
  } else if (acyclic) {
    for (const auto& n : t.nodes) {
      if (n.id != t.terminal && !g.reaches(n.id, t.terminal)) fail("structural", n.id, "does not reach " + t.terminal);
    }
  }

  // Constraints: carried, then satisfiable on the earliest schedule.
  StateSnapshot sim = simulated_run(t);
  for (const auto& c : t.constraints) {
    std::set<std::string> ops;
    collect_ops(c.condition, ops);
    ops.erase(c.applies_to);
    bool carried = true;
    if (ops.empty()) {
      carried = t.rules.count(c.id) != 0;
      if (!carried) fail("constraint", c.id, "not mapped to any edge or rule");
    } else {
      for (const auto& op : ops) {
        if (t.edge(op, c.applies_to) == nullptr) {
          carried = false;
          fail("constraint", c.id, "missing edge " + edge_key(op, c.applies_to));
        }
      }
    }
    if (!carried) continue;
    try {
      if (!c.condition.evaluate(sim)) {
        fail("constraint", c.id,
             "unsatisfiable: " + (c.description.empty() ? c.id : c.description) + schedule_text(t, c.applies_to));
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kUnresolvableAtom) throw;
      // reads run-time data (bookings, budget); checked when the saga runs
    }
  }

  // Compensation dry run on scratch copies.
  for (const auto& n : t.nodes) {
    auto a = t.agents.find(n.id);
    auto c = t.comp_agents.find(n.id);
    if (a == t.agents.end()) {
      fail("compensation", n.id, "no agent");
      continue;
    }
    if (c == t.comp_agents.end()) {
      fail("compensation", n.id, "no compensation agent");
      continue;
    }
    StateSnapshot scratch = sim;
    const Entity before = *scratch.app.find(task_entity(n.id));
    Entity after = before;
    for (const auto& f : a->second.writes) after.data[f] = "simulated " + f;
    for (const auto& f : c->second.restores) {
      if (before.data.contains(f)) {
        after.data[f] = before.data.at(f);
      } else {
        after.data.erase(f);
      }
    }
    if (after.data != before.data) fail("compensation", n.id, "compensator leaves changes behind");
  }
  for (const auto& e : t.edges) {
    auto key = edge_key(e.from, e.to);
    if (t.agents.count(key) == 0) {
      fail("compensation", key, "no agent");
      continue;
    }
    auto c = t.comp_agents.find(key);
    if (c == t.comp_agents.end()) {
      fail("compensation", key, "no compensation agent");
      continue;
    }
    DependencySatisfaction deps;
    deps.mark({e.from, e.to}, Satisfaction::kSatisfied, 1);
    if (c->second.resets_edge) deps.reset({e.from, e.to}, 2);
    if (deps.state({e.from, e.to}) != Satisfaction::kUnknown) fail("compensation", key, "mark survives compensation");
  }

  for (const auto& m : metrics) {
    try {
      if (!m.predicate.evaluate(sim)) fail("metric", m.name, "does not hold on the earliest schedule");
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kUnresolvableAtom) throw;
      fail("metric", m.name, std::string("cannot be evaluated: ") + e.what());
    }
  }
  return v;
}

namespace {

// Applies every rule-based repair that fits; returns what it did.
std::vector<std::string> refine(WorkflowTemplate& t, const WorkflowValidation& v, const GeneratorSuite& gen) {
  std::vector<std::string> repairs;
  auto add_edge = [&](const std::string& from, const std::string& to, const std::string& constraint,
                      Condition cond) {
    if (t.edge(from, to) != nullptr) return;
    if (from == to || t.graph().reaches(to, from)) return;
    Edge e{from, to, std::move(cond), {}};
    if (!constraint.empty()) e.constraints.push_back(constraint);
    t.edges.push_back(e);
    attach_edge(t, e, gen);
    repairs.push_back("added edge " + edge_key(from, to));
  };
  for (const auto& f : v.failures) {
    if (f.validator == "compensation") {
      if (t.agents.count(f.subject) == 0) {
        if (const Node* n = t.node(f.subject)) {
          attach_node(t, *n, gen);
        } else {
          for (const auto& e : t.edges) {
            if (edge_key(e.from, e.to) == f.subject) attach_edge(t, e, gen);
          }
        }
        repairs.push_back("attached agents to " + f.subject);
      } else {
        t.comp_agents[f.subject] = gen.define_comp_agent(t.agents.at(f.subject), t.schemas[f.subject]);
        repairs.push_back("added compensator for " + f.subject);
      }
    } else if (f.validator == "constraint" && f.detail.rfind("unsatisfiable", 0) != 0) {
      auto it = std::find_if(t.constraints.begin(), t.constraints.end(),
                             [&](const SpecConstraint& c) { return c.id == f.subject; });
      if (it == t.constraints.end()) continue;
      std::set<std::string> ops;
      collect_ops(it->condition, ops);
      ops.erase(it->applies_to);
      if (ops.empty()) {
        t.rules[it->id] = it->applies_to;
        repairs.push_back("checked " + it->id + " at " + it->applies_to);
      }
      for (const auto& op : ops) add_edge(op, it->applies_to, it->id, edge_condition(it->condition, op));
    } else if (f.validator == "structural" && t.node(f.subject) != nullptr && t.node(t.terminal) != nullptr) {
      add_edge(f.subject, t.terminal, "", Condition::completed(f.subject));
    }
  }
  return repairs;
}

std::string describe(const std::vector<CheckFailure>& fs) {
  std::string out;
  for (const auto& f : fs) out += (out.empty() ? "" : "; ") + f.validator + " " + f.subject + ": " + f.detail;
  return out;
}

}  // namespace

RefineResult validate_and_refine(WorkflowTemplate tmpl, const std::vector<Metric>& metrics,
                                 const GeneratorSuite& gen, std::size_t cap) {
  RefineResult r;
  std::size_t previous = SIZE_MAX;
  for (std::size_t i = 1; i <= cap; ++i) {
    auto v = validate_workflow(tmpl, metrics);
    r.iterations = i;
    if (v.ok()) {
      r.tmpl = std::move(tmpl);
      return r;
    }
    if (v.failures.size() > previous) {
      throw Error(ErrorCode::kRefinementDiverged, "failures grew to " + std::to_string(v.failures.size()) + ": " +
                                                      describe(v.failures));
    }
    previous = v.failures.size();
    RefineRound round{v.failures, refine(tmpl, v, gen)};
    r.rounds.push_back(round);
    if (round.repairs.empty()) {
      throw Error(ErrorCode::kRefinementDiverged, "no repair applies after " + std::to_string(i) +
                                                      " passes: " + describe(v.failures));
    }
  }
  auto v = validate_workflow(tmpl, metrics);
  throw Error(ErrorCode::kRefinementDiverged,
              "still failing after " + std::to_string(cap) + " passes: " + describe(v.failures));
}

RefineResult build_workflow(const ProblemSpec& spec, const GeneratorSuite& gen) {
  return validate_and_refine(attach_agents(build_network(spec, gen), gen), spec.metrics, gen);
}

}  // namespace saga::workflow
