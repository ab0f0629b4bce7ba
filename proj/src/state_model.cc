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

#include "saga/state_model.h"

#include <algorithm>
#include <deque>
#include <functional>
#include <queue>
#include <sstream>

namespace saga {

// ---------------------------------------------------------------------------
// Enum names

std::string_view to_string(EntityStatus s) {
  switch (s) {
    case EntityStatus::kPending: return "pending";
    case EntityStatus::kActive: return "active";
    case EntityStatus::kCommitted: return "committed";
    case EntityStatus::kCompensated: return "compensated";
  }
  return "pending";
}

EntityStatus entity_status_from_string(std::string_view s) {
  if (s == "pending") return EntityStatus::kPending;
  if (s == "active") return EntityStatus::kActive;
  if (s == "committed") return EntityStatus::kCommitted;
  if (s == "compensated") return EntityStatus::kCompensated;
  throw Error(ErrorCode::kInvalidInput, "unknown entity status '" + std::string(s) + "'");
}

bool entity_transition_allowed(EntityStatus from, EntityStatus to) {
  if (from == to) return true;
  switch (from) {
    case EntityStatus::kPending: return to == EntityStatus::kActive;
    case EntityStatus::kActive:
      return to == EntityStatus::kCommitted || to == EntityStatus::kCompensated;
    default: return false;
  }
}

std::string_view to_string(OpStatus s) {
  switch (s) {
    case OpStatus::kStarted: return "started";
    case OpStatus::kCompleted: return "completed";
    case OpStatus::kFailed: return "failed";
    case OpStatus::kCompensated: return "compensated";
  }
  return "started";
}

OpStatus op_status_from_string(std::string_view s) {
  if (s == "started") return OpStatus::kStarted;
  if (s == "completed") return OpStatus::kCompleted;
  if (s == "failed") return OpStatus::kFailed;
  if (s == "compensated") return OpStatus::kCompensated;
  throw Error(ErrorCode::kInvalidInput, "unknown operation status '" + std::string(s) + "'");
}

bool op_transition_allowed(std::optional<OpStatus> from, OpStatus to) {
  if (!from) return to == OpStatus::kStarted;
  switch (*from) {
    case OpStatus::kStarted: return to == OpStatus::kCompleted || to == OpStatus::kFailed;
    case OpStatus::kCompleted: return to == OpStatus::kCompensated;
    // A failed or compensated operation may be retried from scratch.
    case OpStatus::kFailed:
    case OpStatus::kCompensated: return to == OpStatus::kStarted;
  }
  return false;
}

bool record_well_formed(const OperationRecord& r) {
  bool needs_outputs = r.status == OpStatus::kCompleted || r.status == OpStatus::kCompensated;
  return needs_outputs == r.outputs.has_value();
}

std::string_view to_string(Satisfaction s) {
  switch (s) {
    case Satisfaction::kUnknown: return "unknown";
    case Satisfaction::kSatisfied: return "satisfied";
    case Satisfaction::kViolated: return "violated";
  }
  return "unknown";
}

Satisfaction satisfaction_from_string(std::string_view s) {
  if (s == "unknown") return Satisfaction::kUnknown;
  if (s == "satisfied") return Satisfaction::kSatisfied;
  if (s == "violated") return Satisfaction::kViolated;
  throw Error(ErrorCode::kInvalidInput, "unknown satisfaction '" + std::string(s) + "'");
}

std::string_view to_string(Comparison c) {
  switch (c) {
    case Comparison::kLess: return "<";
    case Comparison::kLessEqual: return "<=";
    case Comparison::kEqual: return "==";
    case Comparison::kNotEqual: return "!=";
    case Comparison::kGreaterEqual: return ">=";
    case Comparison::kGreater: return ">";
  }
  return "<=";
}

Comparison comparison_from_string(std::string_view s) {
  if (s == "<") return Comparison::kLess;
  if (s == "<=") return Comparison::kLessEqual;
  if (s == "==") return Comparison::kEqual;
  if (s == "!=") return Comparison::kNotEqual;
  if (s == ">=") return Comparison::kGreaterEqual;
  if (s == ">") return Comparison::kGreater;
  throw Error(ErrorCode::kInvalidInput, "unknown comparison '" + std::string(s) + "'");
}

bool compare(double lhs, Comparison c, double rhs) {
  switch (c) {
    case Comparison::kLess: return lhs < rhs;
    case Comparison::kLessEqual: return lhs <= rhs;
    case Comparison::kEqual: return lhs == rhs;
    case Comparison::kNotEqual: return lhs != rhs;
    case Comparison::kGreaterEqual: return lhs >= rhs;
    case Comparison::kGreater: return lhs > rhs;
  }
  return false;
}

std::string_view to_string(Severity s) { return s == Severity::kHard ? "hard" : "soft"; }

Severity severity_from_string(std::string_view s) {
  if (s == "hard") return Severity::kHard;
  if (s == "soft") return Severity::kSoft;
  throw Error(ErrorCode::kInvalidInput, "unknown severity '" + std::string(s) + "'");
}

const Value* find_path(const Value& root, std::string_view dotted) {
  const Value* cur = &root;
  std::size_t pos = 0;
  while (pos <= dotted.size()) {
    auto dot = dotted.find('.', pos);
    auto part = dotted.substr(pos, dot == std::string_view::npos ? std::string_view::npos : dot - pos);
    if (!cur->is_object()) return nullptr;
    auto it = cur->find(std::string(part));
    if (it == cur->end()) return nullptr;
    cur = &*it;
    if (dot == std::string_view::npos) break;
    pos = dot + 1;
  }
  return cur;
}

// ---------------------------------------------------------------------------
// AppState

const Entity* AppState::find(const std::string& key) const {
  auto it = entities_.find(key);
  return it == entities_.end() ? nullptr : &it->second;
}

void AppState::put(const std::string& key, Entity entity) {
  auto it = entities_.find(key);
  if (it != entities_.end()) {
    if (!entity_transition_allowed(it->second.status, entity.status)) {
      throw Error(ErrorCode::kInvalidTransition,
                  "entity '" + key + "' " + std::string(to_string(it->second.status)) + " -> " +
                      std::string(to_string(entity.status)));
    }
    it->second = std::move(entity);
  } else {
    entities_.emplace(key, std::move(entity));
  }
}

void AppState::erase(const std::string& key) { entities_.erase(key); }

// ---------------------------------------------------------------------------
// DependencySatisfaction

Satisfaction DependencySatisfaction::state(const EdgeKey& key) const {
  auto it = edges_.find(key);
  return it == edges_.end() ? Satisfaction::kUnknown : it->second.state;
}

void DependencySatisfaction::mark(const EdgeKey& key, Satisfaction state, Tick evidence) {
  if (state == Satisfaction::kUnknown) {
    reset(key, evidence);
    return;
  }
  auto& slot = edges_[key];
  if (slot.state != Satisfaction::kUnknown && slot.state != state) {
    throw Error(ErrorCode::kInvalidTransition,
                "edge " + key.from + "->" + key.to + " already " +
                    std::string(to_string(slot.state)));
  }
  slot.state = state;
  slot.evidence = evidence;
}

void DependencySatisfaction::reset(const EdgeKey& key, Tick evidence) {
  edges_[key] = EdgeState{Satisfaction::kUnknown, evidence};
}

void DependencySatisfaction::reset_outgoing(const std::string& from, Tick evidence) {
  for (auto& [key, st] : edges_) {
    if (key.from == from) st = EdgeState{Satisfaction::kUnknown, evidence};
  }
}

std::uint64_t state_digest(const StateSnapshot& snap) {
  Value j = Value::object();
  Value ents = Value::object();
  for (const auto& [k, e] : snap.app.entities()) ents[k] = e;
  j["app"] = std::move(ents);
  Value ops = Value::object();
  for (const auto& [k, r] : snap.ops) {
    ops[k] = {{"status", to_string(r.status)},
              {"outputs", r.outputs ? *r.outputs : Value(nullptr)}};
  }
  j["ops"] = std::move(ops);
  Value deps = Value::object();
  for (const auto& [k, st] : snap.deps.edges()) {
    deps[k.from + "->" + k.to] = to_string(st.state);
  }
  j["deps"] = std::move(deps);
  return fnv1a(j.dump());
}

// ---------------------------------------------------------------------------
// Condition

struct Condition::Node {
  Kind kind = Kind::kAtom;
  Atom atom = ConstantAtom{true};
  std::vector<Condition> children;
};

Condition::Condition() : node_(std::make_shared<Node>()) {}

Condition Condition::atom(Atom a) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::kAtom;
  n->atom = std::move(a);
  return Condition(std::move(n));
}

Condition Condition::completed(std::string op) {
  return atom(OpStatusAtom{std::move(op), OpStatus::kCompleted});
}

Condition Condition::all(std::vector<Condition> children) {
  if (children.empty()) return Condition();
  auto n = std::make_shared<Node>();
  n->kind = Kind::kAnd;
  n->children = std::move(children);
  return Condition(std::move(n));
}

Condition Condition::any(std::vector<Condition> children) {
  if (children.empty()) return atom(ConstantAtom{false});
  auto n = std::make_shared<Node>();
  n->kind = Kind::kOr;
  n->children = std::move(children);
  return Condition(std::move(n));
}

Condition Condition::negate(Condition child) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::kNot;
  n->children.push_back(std::move(child));
  return Condition(std::move(n));
}

Condition::Kind Condition::kind() const { return node_->kind; }
const Condition::Atom& Condition::as_atom() const { return node_->atom; }
const std::vector<Condition>& Condition::children() const { return node_->children; }

std::size_t Condition::depth() const {
  std::size_t d = 0;
  for (const auto& c : node_->children) d = std::max(d, c.depth());
  return d + 1;
}

std::size_t Condition::atom_count() const {
  if (node_->kind == Kind::kAtom) return 1;
  std::size_t n = 0;
  for (const auto& c : node_->children) n += c.atom_count();
  return n;
}

bool operator==(const Condition& a, const Condition& b) {
  if (a.node_ == b.node_) return true;
  return a.node_->kind == b.node_->kind && a.node_->atom == b.node_->atom &&
         a.node_->children == b.node_->children;
}

namespace {

[[noreturn]] void unresolvable(const std::string& what) {
  throw Error(ErrorCode::kUnresolvableAtom, what);
}

double number_at(const Entity& e, const std::string& key, const std::string& field) {
  const Value* v = find_path(e.data, field);
  if (!v || !v->is_number()) unresolvable(key + "." + field);
  return v->get<double>();
}

Tick tick_at(const Entity& e, const std::string& key, const std::string& field) {
  const Value* v = find_path(e.data, field);
  if (!v) unresolvable(key + "." + field);
  if (v->is_number_integer()) return v->get<Tick>();
  if (v->is_string()) return parse_clock(v->get<std::string>());
  unresolvable(key + "." + field);
}

const Entity& entity_or_throw(const StateSnapshot& snap, const std::string& key) {
  const Entity* e = snap.app.find(key);
  if (!e) unresolvable(key);
  return *e;
}

struct AtomEvaluator {
  const StateSnapshot& snap;

  bool operator()(const OpStatusAtom& a) const {
    auto it = snap.ops.find(a.op);
    if (it == snap.ops.end()) {
      if (snap.declared_ops.count(a.op) == 0) unresolvable(a.op);
      return false;
    }
    return it->second.status == a.status;
  }

  bool operator()(const NumericAtom& a) const {
    double lhs = 0;
    if (a.lhs.kind == NumericOperand::Kind::kEntityField) {
      lhs = number_at(entity_or_throw(snap, a.lhs.entity), a.lhs.entity, a.lhs.field);
    } else {
      for (const auto& [key, e] : snap.app.entities()) {
        if (e.status == EntityStatus::kCompensated) continue;
        if (key.compare(0, a.lhs.prefix.size(), a.lhs.prefix) != 0) continue;
        const Value* v = find_path(e.data, a.lhs.field);
        if (v && v->is_number()) lhs += v->get<double>();
      }
    }
    return compare(lhs, a.cmp, a.bound);
  }

  bool operator()(const DeadlineAtom& a) const {
    return tick_at(entity_or_throw(snap, a.entity), a.entity, a.field) <= a.deadline;
  }

  bool operator()(const LocationAtom& a) const {
    const Entity& e = entity_or_throw(snap, a.entity);
    const Value* v = find_path(e.data, a.field);
    if (!v || !v->is_string()) unresolvable(a.entity + "." + a.field);
    return v->get<std::string>() == a.location;
  }

  bool operator()(const EdgeAtom& a) const {
    if (snap.declared_ops.count(a.edge.from) == 0 && snap.ops.count(a.edge.from) == 0) {
      unresolvable(a.edge.from);
    }
    return snap.deps.state(a.edge) == a.state;
  }

  bool operator()(const ConstantAtom& a) const { return a.value; }
};

}  // namespace

bool Condition::evaluate(const StateSnapshot& snap) const {
  switch (node_->kind) {
    case Kind::kAtom: return std::visit(AtomEvaluator{snap}, node_->atom);
    case Kind::kAnd: {
      // Every child is evaluated so unresolvable atoms surface regardless of
      // short-circuit order.
      bool result = true;
      for (const auto& c : node_->children) result = c.evaluate(snap) && result;
      return result;
    }
    case Kind::kOr: {
      bool result = false;
      for (const auto& c : node_->children) result = c.evaluate(snap) || result;
      return result;
    }
    case Kind::kNot: return !node_->children.front().evaluate(snap);
  }
  return false;
}

std::set<std::string> Condition::referenced_entities(const AppState& app) const {
  std::set<std::string> out;
  if (node_->kind == Kind::kAtom) {
    std::visit(
        [&](const auto& a) {
          using T = std::decay_t<decltype(a)>;
          if constexpr (std::is_same_v<T, NumericAtom>) {
            if (a.lhs.kind == NumericOperand::Kind::kEntityField) {
              out.insert(a.lhs.entity);
            } else {
              for (const auto& [key, e] : app.entities()) {
                if (e.status == EntityStatus::kCompensated) continue;
                if (key.compare(0, a.lhs.prefix.size(), a.lhs.prefix) != 0) continue;
                if (find_path(e.data, a.lhs.field)) out.insert(key);
              }
            }
          } else if constexpr (std::is_same_v<T, DeadlineAtom> || std::is_same_v<T, LocationAtom>) {
            out.insert(a.entity);
          }
        },
        node_->atom);
    return out;
  }
  for (const auto& c : node_->children) {
    auto sub = c.referenced_entities(app);
    out.insert(sub.begin(), sub.end());
  }
  return out;
}

void to_json(Value& j, const Condition& c) {
  switch (c.kind()) {
    case Condition::Kind::kAnd:
    case Condition::Kind::kOr: {
      Value arr = Value::array();
      for (const auto& ch : c.children()) arr.push_back(ch);
      j = Value{{c.kind() == Condition::Kind::kAnd ? "and" : "or", std::move(arr)}};
      return;
    }
    case Condition::Kind::kNot: j = Value{{"not", c.children().front()}}; return;
    case Condition::Kind::kAtom: break;
  }
  std::visit(
      [&](const auto& a) {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, OpStatusAtom>) {
          j = {{"op_status", {{"op", a.op}, {"status", to_string(a.status)}}}};
        } else if constexpr (std::is_same_v<T, NumericAtom>) {
          Value body = {{"field", a.lhs.field}, {"cmp", to_string(a.cmp)}, {"value", a.bound}};
          if (a.lhs.kind == NumericOperand::Kind::kEntityField) {
            body["entity"] = a.lhs.entity;
          } else {
            body["sum_prefix"] = a.lhs.prefix;
          }
          j = {{"compare", std::move(body)}};
        } else if constexpr (std::is_same_v<T, DeadlineAtom>) {
          j = {{"deadline",
                {{"entity", a.entity}, {"field", a.field}, {"by", format_clock(a.deadline)}}}};
        } else if constexpr (std::is_same_v<T, LocationAtom>) {
          j = {{"location_equals",
                {{"entity", a.entity}, {"field", a.field}, {"location", a.location}}}};
        } else if constexpr (std::is_same_v<T, EdgeAtom>) {
          j = {{"edge",
                {{"from", a.edge.from}, {"to", a.edge.to}, {"state", to_string(a.state)}}}};
        } else {
          j = {{"constant", a.value}};
        }
      },
      c.as_atom());
}

void from_json(const Value& j, Condition& c) {
  if (!j.is_object() || j.size() != 1) {
    throw Error(ErrorCode::kInvalidInput, "condition must be a single-key object: " + j.dump());
  }
  const auto& [key, body] = *j.items().begin();
  if (key == "and" || key == "or") {
    std::vector<Condition> kids;
    for (const auto& ch : body) kids.push_back(ch.get<Condition>());
    if (kids.empty()) throw Error(ErrorCode::kInvalidInput, key + " needs children");
    c = key == "and" ? Condition::all(std::move(kids)) : Condition::any(std::move(kids));
  } else if (key == "not") {
    c = Condition::negate(body.get<Condition>());
  } else if (key == "op_status") {
    c = Condition::atom(OpStatusAtom{body.at("op").get<std::string>(),
                                     op_status_from_string(body.value("status", "completed"))});
  } else if (key == "compare") {
    NumericAtom a;
    if (body.contains("sum_prefix")) {
      a.lhs.kind = NumericOperand::Kind::kSum;
      a.lhs.prefix = body.at("sum_prefix").get<std::string>();
    } else {
      a.lhs.entity = body.at("entity").get<std::string>();
    }
    a.lhs.field = body.at("field").get<std::string>();
    a.cmp = comparison_from_string(body.value("cmp", "<="));
    a.bound = body.at("value").get<double>();
    c = Condition::atom(a);
  } else if (key == "deadline") {
    const Value& by = body.at("by");
    Tick t = by.is_string() ? parse_clock(by.get<std::string>()) : by.get<Tick>();
    c = Condition::atom(
        DeadlineAtom{body.at("entity").get<std::string>(), body.at("field").get<std::string>(), t});
  } else if (key == "location_equals") {
    c = Condition::atom(LocationAtom{body.at("entity").get<std::string>(),
                                     body.at("field").get<std::string>(),
                                     body.at("location").get<std::string>()});
  } else if (key == "edge") {
    c = Condition::atom(EdgeAtom{
        EdgeKey{body.at("from").get<std::string>(), body.at("to").get<std::string>()},
        satisfaction_from_string(body.value("state", "satisfied"))});
  } else if (key == "constant") {
    c = Condition::atom(ConstantAtom{body.get<bool>()});
  } else {
    throw Error(ErrorCode::kInvalidInput, "unknown condition node '" + key + "'");
  }
}

// ---------------------------------------------------------------------------
// Invariants

std::vector<InvariantViolation> check_invariants(const InvariantSet& inv, const AppState& state) {
  std::vector<InvariantViolation> out;
  StateSnapshot snap;
  snap.app = state;
  for (const auto& i : inv) {
    bool holds = false;
    std::string detail;
    try {
      holds = i.predicate.evaluate(snap);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kUnresolvableAtom) throw;
      detail = e.what();
    }
    if (holds) continue;
    auto keys = i.predicate.referenced_entities(state);
    out.push_back(InvariantViolation{i.name, i.severity, {keys.begin(), keys.end()},
                                     detail.empty() ? i.description : detail});
  }
  return out;
}

// ---------------------------------------------------------------------------
// DependencyGraph

DependencyGraph DependencyGraph::unchecked(std::vector<OperationId> nodes,
                                           std::vector<DependencyEdge> edges) {
  DependencyGraph g;
  for (auto& n : nodes) g.nodes_.emplace(n.id, std::move(n));
  g.edges_ = std::move(edges);
  return g;
}

void DependencyGraph::add_node(OperationId op) {
  if (nodes_.count(op.id)) {
    throw Error(ErrorCode::kInvalidInput, "duplicate operation id '" + op.id + "'");
  }
  nodes_.emplace(op.id, std::move(op));
}

void DependencyGraph::add_edge(const std::string& from, const std::string& to) {
  add_edge(from, to, Condition::completed(from));
}

void DependencyGraph::add_edge(const std::string& from, const std::string& to,
                               Condition condition) {
  if (!contains(from)) throw Error(ErrorCode::kUnknownOperation, from);
  if (!contains(to)) throw Error(ErrorCode::kUnknownOperation, to);
  if (from == to || reaches(to, from)) {
    throw Error(ErrorCode::kCycleDetected, from + " -> " + to + " closes a cycle");
  }
  edges_.push_back(DependencyEdge{from, to, std::move(condition)});
}

void DependencyGraph::set_composite(const std::string& to, Condition condition) {
  if (!contains(to)) throw Error(ErrorCode::kUnknownOperation, to);
  composite_.insert_or_assign(to, std::move(condition));
}

Condition DependencyGraph::prerequisite(const std::string& to) const {
  if (auto it = composite_.find(to); it != composite_.end()) return it->second;
  std::vector<Condition> parts;
  for (const auto& e : edges_) {
    if (e.to == to) parts.push_back(e.condition);
  }
  return Condition::all(std::move(parts));
}

const OperationId& DependencyGraph::node(const std::string& id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw Error(ErrorCode::kUnknownOperation, id);
  return it->second;
}

std::vector<std::string> DependencyGraph::successors(const std::string& id) const {
  std::vector<std::string> out;
  for (const auto& e : edges_) {
    if (e.from == id) out.push_back(e.to);
  }
  return out;
}

std::vector<std::string> DependencyGraph::predecessors(const std::string& id) const {
  std::vector<std::string> out;
  for (const auto& e : edges_) {
    if (e.to == id) out.push_back(e.from);
  }
  return out;
}

bool DependencyGraph::reaches(const std::string& from, const std::string& to) const {
  std::set<std::string> seen{from};
  std::deque<std::string> frontier{from};
  while (!frontier.empty()) {
    auto cur = frontier.front();
    frontier.pop_front();
    if (cur == to) return true;
    for (const auto& e : edges_) {
      if (e.from == cur && seen.insert(e.to).second) frontier.push_back(e.to);
    }
  }
  return false;
}

namespace {

std::vector<std::string> find_cycle(const DependencyGraph& graph,
                                    const std::set<std::string>& remaining) {
  // Every remaining node has an incoming edge from another remaining node, so
  // walking predecessors must revisit a node.
  std::string cur = *remaining.begin();
  std::vector<std::string> path;
  std::map<std::string, std::size_t> pos;
  while (!pos.count(cur)) {
    pos[cur] = path.size();
    path.push_back(cur);
    for (const auto& p : graph.predecessors(cur)) {
      if (remaining.count(p)) {
        cur = p;
        break;
      }
    }
  }
  std::vector<std::string> cycle(path.begin() + static_cast<std::ptrdiff_t>(pos[cur]), path.end());
  std::reverse(cycle.begin(), cycle.end());
  return cycle;
}

}  // namespace

std::vector<OperationId> topological_order(const DependencyGraph& graph) {
  std::map<std::string, std::size_t> indegree;
  for (const auto& [id, _] : graph.nodes()) indegree[id] = 0;
  for (const auto& e : graph.edges()) {
    if (!graph.contains(e.from)) throw Error(ErrorCode::kUnknownOperation, e.from);
    if (!graph.contains(e.to)) throw Error(ErrorCode::kUnknownOperation, e.to);
    ++indegree[e.to];
  }
  auto later = [&](const std::string& a, const std::string& b) {
    const auto& na = graph.node(a);
    const auto& nb = graph.node(b);
    return std::tie(na.label, na.id) > std::tie(nb.label, nb.id);
  };
  std::priority_queue<std::string, std::vector<std::string>, decltype(later)> ready(later);
  for (const auto& [id, d] : indegree) {
    if (d == 0) ready.push(id);
  }
  std::vector<OperationId> out;
  while (!ready.empty()) {
    auto cur = ready.top();
    ready.pop();
    out.push_back(graph.node(cur));
    for (const auto& e : graph.edges()) {
      if (e.from == cur && --indegree[e.to] == 0) ready.push(e.to);
    }
  }
  if (out.size() != graph.nodes().size()) {
    std::set<std::string> remaining;
    for (const auto& [id, d] : indegree) {
      if (d > 0) remaining.insert(id);
    }
    auto cycle = find_cycle(graph, remaining);
    std::string text;
    for (const auto& id : cycle) text += id + " -> ";
    text += cycle.front();
    throw Error(ErrorCode::kCycleDetected, text);
  }
  return out;
}

std::map<std::string, OpStatus> replay_statuses(std::span<const OperationRecord> log) {
  std::map<std::string, OpStatus> status;
  Tick last = std::numeric_limits<Tick>::min();
  bool first = true;
  for (const auto& r : log) {
    if (!first && r.timestamp <= last) {
      throw Error(ErrorCode::kInvalidTransition,
                  "timestamp " + std::to_string(r.timestamp) + " does not increase");
    }
    first = false;
    last = r.timestamp;
    std::optional<OpStatus> prev;
    if (auto it = status.find(r.op.id); it != status.end()) prev = it->second;
    if (!op_transition_allowed(prev, r.status)) {
      throw Error(ErrorCode::kInvalidTransition,
                  "operation '" + r.op.id + "' " +
                      (prev ? std::string(to_string(*prev)) : std::string("<none>")) + " -> " +
                      std::string(to_string(r.status)));
    }
    if (!record_well_formed(r)) {
      throw Error(ErrorCode::kInvalidInput, "record for '" + r.op.id + "' has malformed outputs");
    }
    status[r.op.id] = r.status;
  }
  return status;
}

std::vector<OperationId> affected_set(const DependencyGraph& graph, const std::string& failed,
                                      std::span<const OperationRecord> log) {
  if (!graph.contains(failed)) throw Error(ErrorCode::kUnknownOperation, failed);

  // Latest status and completion time per operation.
  std::map<std::string, OpStatus> status;
  std::map<std::string, Tick> completed_at;
  for (const auto& r : log) {
    status[r.op.id] = r.status;
    if (r.status == OpStatus::kCompleted) completed_at[r.op.id] = r.timestamp;
  }

  std::set<std::string> downstream{failed};
  std::deque<std::string> frontier{failed};
  while (!frontier.empty()) {
    auto cur = frontier.front();
    frontier.pop_front();
    for (const auto& next : graph.successors(cur)) {
      if (downstream.insert(next).second) frontier.push_back(next);
    }
  }

  std::vector<std::pair<Tick, std::string>> hits;
  for (const auto& id : downstream) {
    auto it = status.find(id);
    if (it != status.end() && it->second == OpStatus::kCompleted) {
      hits.emplace_back(completed_at[id], id);
    }
  }
  std::sort(hits.begin(), hits.end(), std::greater<>());
  std::vector<OperationId> out;
  out.reserve(hits.size());
  for (const auto& [_, id] : hits) out.push_back(graph.node(id));
  return out;
}

bool saga_order_consistent(const Saga& saga, const DependencyGraph& graph) {
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < saga.forward.size(); ++i) pos[saga.forward[i].id] = i;
  for (const auto& e : graph.edges()) {
    auto a = pos.find(e.from);
    auto b = pos.find(e.to);
    if (a != pos.end() && b != pos.end() && a->second >= b->second) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Deltas

void apply_delta(StateSnapshot& snap, const StateDelta& delta) {
  for (const auto& r : delta.records) {
    std::optional<OpStatus> prev;
    if (auto it = snap.ops.find(r.op.id); it != snap.ops.end()) {
      prev = it->second.status;
      if (r.timestamp <= it->second.timestamp) {
        throw Error(ErrorCode::kInvalidTransition,
                    "record for '" + r.op.id + "' does not advance time");
      }
    }
    if (!op_transition_allowed(prev, r.status)) {
      throw Error(ErrorCode::kInvalidTransition,
                  "operation '" + r.op.id + "' -> " + std::string(to_string(r.status)));
    }
    snap.declared_ops.insert(r.op.id);
    snap.ops.insert_or_assign(r.op.id, r);
  }
  for (const auto& c : delta.entities) {
    if (c.after) {
      snap.app.put(c.key, *c.after);
    } else {
      snap.app.erase(c.key);
    }
  }
  for (const auto& m : delta.marks) snap.deps.mark(m.edge, m.state, m.evidence);
  if (!delta.entities.empty()) snap.app.bump_snapshot();
}

// ---------------------------------------------------------------------------
// JSON

void to_json(Value& j, const OperationId& v) { j = {{"id", v.id}, {"label", v.label}}; }

void from_json(const Value& j, OperationId& v) {
  if (j.is_string()) {
    v = OperationId(j.get<std::string>());
    return;
  }
  v = OperationId(j.at("id").get<std::string>(), j.value("label", std::string()));
}

void to_json(Value& j, const Entity& v) { j = {{"status", to_string(v.status)}, {"data", v.data}}; }

void from_json(const Value& j, Entity& v) {
  v.status = entity_status_from_string(j.at("status").get<std::string>());
  v.data = j.value("data", Value::object());
}

void to_json(Value& j, const AppState& v) {
  Value ents = Value::object();
  for (const auto& [k, e] : v.entities()) ents[k] = e;
  j = {{"entities", std::move(ents)}, {"snapshot_id", v.snapshot_id()}};
}

void from_json(const Value& j, AppState& v) {
  v = AppState();
  for (const auto& [k, e] : j.at("entities").items()) v.entities_.emplace(k, e.get<Entity>());
  v.snapshot_id_ = j.value("snapshot_id", std::uint64_t{0});
}

void to_json(Value& j, const OperationRecord& v) {
  j = {{"op", v.op},
       {"inputs", v.inputs},
       {"timestamp", v.timestamp},
       {"status", to_string(v.status)},
       {"reasoning", v.reasoning},
       {"alternatives", v.alternatives}};
  if (v.outputs) j["outputs"] = *v.outputs;
}

void from_json(const Value& j, OperationRecord& v) {
  v.op = j.at("op").get<OperationId>();
  v.inputs = j.value("inputs", Value::object());
  v.timestamp = j.at("timestamp").get<Tick>();
  v.status = op_status_from_string(j.at("status").get<std::string>());
  v.reasoning = j.value("reasoning", std::vector<std::string>{});
  v.alternatives = j.value("alternatives", std::vector<std::string>{});
  if (j.contains("outputs")) {
    v.outputs = j.at("outputs");
  } else {
    v.outputs.reset();
  }
}

void to_json(Value& j, const DependencySatisfaction& v) {
  j = Value::array();
  for (const auto& [k, st] : v.edges()) {
    j.push_back({{"from", k.from}, {"to", k.to}, {"state", to_string(st.state)},
                 {"evidence", st.evidence}});
  }
}

void from_json(const Value& j, DependencySatisfaction& v) {
  v = DependencySatisfaction();
  for (const auto& e : j) {
    v.edges_[EdgeKey{e.at("from").get<std::string>(), e.at("to").get<std::string>()}] =
        EdgeState{satisfaction_from_string(e.at("state").get<std::string>()),
                  e.value("evidence", Tick{0})};
  }
}

void to_json(Value& j, const StateSnapshot& v) {
  Value ops = Value::object();
  for (const auto& [k, r] : v.ops) ops[k] = r;
  j = {{"app", v.app},
       {"ops", std::move(ops)},
       {"declared_ops", v.declared_ops},
       {"log_cursor", v.log_cursor},
       {"deps", v.deps}};
}

void from_json(const Value& j, StateSnapshot& v) {
  v = StateSnapshot();
  v.app = j.at("app").get<AppState>();
  for (const auto& [k, r] : j.at("ops").items()) v.ops.emplace(k, r.get<OperationRecord>());
  v.declared_ops = j.value("declared_ops", std::set<std::string>{});
  v.log_cursor = j.value("log_cursor", std::uint64_t{0});
  v.deps = j.value("deps", Value::array()).get<DependencySatisfaction>();
}

void to_json(Value& j, const CompensationSpec& v) {
  j = {{"for_op", v.for_op},
       {"inverse_actions", v.inverse_actions},
       {"preconditions", v.preconditions},
       {"recovery_state", v.recovery_state}};
}

void from_json(const Value& j, CompensationSpec& v) {
  v.for_op = j.at("for_op").get<std::string>();
  v.inverse_actions = j.value("inverse_actions", std::vector<std::string>{});
  v.preconditions = j.contains("preconditions") ? j.at("preconditions").get<Condition>() : Condition();
  v.recovery_state = j.value("recovery_state", Value::object());
}

void to_json(Value& j, const StateDelta& v) {
  Value ents = Value::array();
  for (const auto& c : v.entities) {
    ents.push_back({{"key", c.key}, {"after", c.after ? Value(*c.after) : Value(nullptr)}});
  }
  Value marks = Value::array();
  for (const auto& m : v.marks) {
    marks.push_back({{"from", m.edge.from}, {"to", m.edge.to}, {"state", to_string(m.state)},
                     {"evidence", m.evidence}});
  }
  j = {{"entities", std::move(ents)}, {"records", v.records}, {"marks", std::move(marks)}};
}

void from_json(const Value& j, StateDelta& v) {
  v = StateDelta();
  for (const auto& c : j.value("entities", Value::array())) {
    EntityChange ch{c.at("key").get<std::string>(), std::nullopt};
    if (!c.at("after").is_null()) ch.after = c.at("after").get<Entity>();
    v.entities.push_back(std::move(ch));
  }
  for (const auto& r : j.value("records", Value::array())) {
    v.records.push_back(r.get<OperationRecord>());
  }
  for (const auto& m : j.value("marks", Value::array())) {
    v.marks.push_back(EdgeMark{EdgeKey{m.at("from").get<std::string>(), m.at("to").get<std::string>()},
                               satisfaction_from_string(m.at("state").get<std::string>()),
                               m.value("evidence", Tick{0})});
  }
}

void to_json(Value& j, const Invariant& v) {
  j = {{"name", v.name},
       {"severity", to_string(v.severity)},
       {"description", v.description},
       {"predicate", v.predicate}};
}

void from_json(const Value& j, Invariant& v) {
  v.name = j.at("name").get<std::string>();
  v.severity = severity_from_string(j.value("severity", "hard"));
  v.description = j.value("description", std::string());
  v.predicate = j.at("predicate").get<Condition>();
}

}  // namespace saga
