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

#include "saga/harness.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "saga/validation.h"

#ifndef SAGA_SOURCE_DATA_DIR
#define SAGA_SOURCE_DATA_DIR ""
#endif

namespace saga::harness {

namespace {

namespace fs = std::filesystem;
using planning::Plan;

[[noreturn]] void parse_error(const std::string& what) { throw Error(ErrorCode::kScenarioParseError, what); }

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::vector<std::string> minus(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

Value plan_json(const Plan& plan) {
  Value a = Value::array();
  for (const auto& x : planning::canonical(plan)) a.push_back(x);
  return a;
}

Value violations_json(const std::vector<planning::Violation>& vs) {
  Value a = Value::array();
  for (const auto& v : vs) a.push_back(planning::violation_to_json(v));
  return a;
}

std::vector<std::string> rule_ids(const std::vector<planning::Violation>& vs) {
  std::vector<std::string> ids;
  for (const auto& v : vs) ids.push_back(v.rule);
  return sorted(ids);
}

// Tasks and where everyone ends up; the facts a reader checks first.
Value plan_summary(const Plan& plan) {
  Value tasks = Value::array();
  std::map<std::string, std::pair<std::string, Tick>> last;
  for (const auto& a : planning::canonical(plan)) {
    if (a.kind == planning::ActionKind::kTask) {
      tasks.push_back({{"task", a.task.empty() ? a.id : a.task},
                       {"actor", a.actor},
                       {"location", a.from},
                       {"start", format_clock(a.start)},
                       {"end", format_clock(a.end)}});
    }
    for (const auto& p : a.participants()) {
      auto& slot = last[p];
      if (a.end >= slot.second) slot = {a.to.empty() ? a.from : a.to, a.end};
    }
  }
  Value where = Value::object();
  for (const auto& [p, s] : last) where[p] = {{"location", s.first}, {"since", format_clock(s.second)}};
  return {{"tasks", tasks}, {"final_positions", where}};
}

fs::path temp_log(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto name = "saga-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + ".log";
  auto p = fs::temp_directory_path() / name;
  fs::remove(p);
  return p;
}

std::set<std::string> physical_rules(const ScenarioBundle& b) {
  std::set<std::string> out;
  for (const auto& r : b.rules) {
    if (b.constraint_rules.count(r.id) == 0) out.insert(r.id);
  }
  return out;
}

std::uint64_t log_verdict(ContextStore& store, const ScenarioBundle& b, const std::string& plan_id,
                          const std::string& source, const std::vector<planning::Violation>& vs, Tick tick) {
  auto physical = physical_rules(b);
  std::size_t n = std::count_if(vs.begin(), vs.end(), [&](const auto& v) { return physical.count(v.rule) != 0; });
  return store.append(LogKind::kValidationVerdict,
                      {{"plan", plan_id},
                       {"source", source},
                       {"violations", violations_json(vs)},
                       {"physical_violations", n}},
                      tick);
}

}  // namespace

// ---------------------------------------------------------------------------
// Scenario loading

fs::path find_scenario(const std::string& name) {
  if (fs::exists(name) && fs::is_regular_file(name)) return name;
  std::vector<fs::path> dirs;
  if (const char* env = std::getenv("SAGA_DATA_DIR")) {
    std::stringstream ss(env);
    std::string dir;
    while (std::getline(ss, dir, ':')) {
      if (!dir.empty()) dirs.emplace_back(dir);
    }
  }
  dirs.emplace_back("data/scenarios");
  if (std::string(SAGA_SOURCE_DATA_DIR).size() > 0) dirs.emplace_back(SAGA_SOURCE_DATA_DIR);
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& d : dirs) {
    for (const auto& n : {name, lower}) {
      for (const auto& candidate : {d / (n + ".json"), d / n}) {
        if (fs::exists(candidate) && fs::is_regular_file(candidate)) return candidate;
      }
    }
  }
  parse_error("scenario '" + name + "' not found (set SAGA_DATA_DIR)");
}

ScenarioBundle load_scenario(const std::string& name_or_path) {
  fs::path p = find_scenario(name_or_path);
  std::ifstream in(p);
  if (!in) parse_error("cannot read " + p.string());
  Value j;
  try {
    j = Value::parse(in);
  } catch (const std::exception& e) {
    parse_error(p.string() + ": " + e.what());
  }
  return parse_scenario(j, p);
}

ScenarioBundle parse_scenario(const Value& j, fs::path path) {
  ScenarioBundle b;
  b.path = std::move(path);
  b.raw = j;
  try {
    if (!j.is_object() || !j.contains("problem")) parse_error("scenario lacks a problem id");
    b.problem = j.at("problem").get<std::string>();
    b.title = j.value("title", "");
    if (b.is_travel()) {
      for (const char* k : {"saga", "inputs", "catalog", "budget"}) {
        if (!j.contains(k)) parse_error(std::string("travel scenario lacks '") + k + "'");
      }
      return b;
    }
    b.world = planning::world_from_json(j.at("world"));
    b.world.check();
    for (const auto& r : j.value("rules", Value::array())) {
      b.rules.push_back(planning::plan_rule_from_json(r));
      if (r.value("class", "constraint") == "constraint") b.constraint_rules.insert(b.rules.back().id);
    }
    if (j.contains("plan")) b.plan = j.at("plan").get<Plan>();
    if (j.contains("goals")) b.goals = planning::goals_from_json(j.at("goals"));
    for (const auto& d : j.value("disruptions", Value::array())) {
      b.disruptions.push_back(planning::disruption_from_json(d));
    }
    for (const auto& a : j.value("augmentation", Value::array())) {
      b.augmentation.push_back(planning::augmentation_rule_from_json(a));
    }
    for (const auto& f : j.value("fixtures", Value::array())) {
      Fixture fx;
      fx.name = f.at("name").get<std::string>();
      fx.source = f.value("source", "");
      fx.plan = f.at("plan").get<Plan>();
      fx.expected_violations = sorted(f.value("expected_violations", std::vector<std::string>{}));
      fx.expected_error = f.value("expected_error", "");
      fx.use_disruptions = f.value("use_disruptions", false);
      fx.reactive = f.value("reactive", false);
      fx.augment = f.value("augment", false);
      b.fixtures.push_back(std::move(fx));
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kScenarioParseError) throw;
    parse_error(b.path.string() + ": " + e.what());
  } catch (const std::exception& e) {
    parse_error(b.path.string() + ": " + e.what());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Travel saga

std::string add_days(const std::string& iso_date, int days) {
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  if (std::sscanf(iso_date.c_str(), "%d-%u-%u", &y, &m, &d) != 3) {
    throw Error(ErrorCode::kInvalidInput, "bad date '" + iso_date + "'");
  }
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw Error(ErrorCode::kInvalidInput, "bad date '" + iso_date + "'");
  std::chrono::year_month_day out{std::chrono::sys_days{ymd} + std::chrono::days{days}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(out.year()),
                static_cast<unsigned>(out.month()), static_cast<unsigned>(out.day()));
  return buf;
}

Value resolve_refs(const Value& inputs, const StateSnapshot& snap) {
  if (inputs.is_object() && inputs.contains("$ref")) {
    auto key = inputs.at("$ref").get<std::string>();
    const Entity* e = snap.app.find(key);
    if (e == nullptr || e->status != EntityStatus::kCommitted) {
      throw Error(ErrorCode::kInvalidInput, "reference to uncommitted entity " + key);
    }
    const Value* v = find_path(e->data, inputs.value("field", ""));
    if (v == nullptr) throw Error(ErrorCode::kInvalidInput, key + " has no field " + inputs.value("field", ""));
    if (inputs.contains("plus_days")) return add_days(v->get<std::string>(), inputs.at("plus_days").get<int>());
    return *v;
  }
  if (inputs.is_object()) {
    Value out = Value::object();
    for (const auto& [k, v] : inputs.items()) out[k] = resolve_refs(v, snap);
    return out;
  }
  if (inputs.is_array()) {
    Value out = Value::array();
    for (const auto& v : inputs) out.push_back(resolve_refs(v, snap));
    return out;
  }
  return inputs;
}

std::vector<AgentBinding> travel_bindings(const ScenarioBundle& bundle,
                                          std::shared_ptr<agents::BookingCatalog> catalog) {
  const Value& saga = bundle.raw.at("saga");
  const std::string budget_key = bundle.raw.at("budget").value("entity", "budget");

  std::map<std::string, agents::AgentKind> kinds;
  for (const auto& f : saga.at("forward")) {
    kinds[f.at("id").get<std::string>()] = agents::agent_kind_from_string(f.at("agent").get<std::string>());
  }
  std::map<std::string, std::vector<std::string>> successors;
  for (const auto& e : saga.value("edges", Value::array())) {
    successors[e.at("from").get<std::string>()].push_back(e.at("to").get<std::string>());
  }

  std::vector<AgentBinding> out;
  for (const auto& [id, kind] : kinds) {
    AgentBinding b;
    b.op = OperationId(id);
    b.executor = [catalog, kind = kind, budget_key](const OperationId& op, const Value& inputs,
                                                    const StateSnapshot& snap) {
      Value in = resolve_refs(inputs, snap);
      auto r = agents::execute_agent(kind, in, *catalog, op.id + "/" + digest_hex(fnv1a(in.dump())));
      AgentCall call{r.outputs, r.internal_state, {}};
      if (const Entity* budget = snap.app.find(budget_key)) {
        agents::ExpenseLedger ledger;
        ledger.limit = budget->data.value("limit_cents", Cents{0});
        ledger.cumulative = budget->data.value("allocated_cents", Cents{0});
        if (budget->data.contains("ledger")) {
          ledger.log = budget->data.at("ledger").value("expense_log", std::vector<Value>{});
        }
        auto u = agents::track_budget(ledger, {{"expense_item", op.label},
                                               {"cost", r.outputs.value("total_cost", Cents{0})},
                                               {"category", std::string(agents::to_string(kind))},
                                               {"transaction_id", op.id}});
        Entity next = *budget;
        next.data["allocated_cents"] = u.ledger.cumulative;
        next.data["remaining_cents"] = u.outputs.at("remaining_budget");
        next.data["budget_status"] = u.outputs.at("budget_status");
        next.data["ledger"] = agents::ledger_internal_state(u.ledger);
        call.effects.push_back({budget_key, next});
      }
      return call;
    };
    b.compensator = [kind = kind, kinds, succ = successors[id]](const OperationId&, const Value&,
                                                              const Value& internal_state) {
      Value patch = agents::compensate_agent(kind, internal_state);
      std::set<std::string> targets;
      for (const auto& flag : patch.value("flags", Value::array())) {
        auto f = flag.get<std::string>();
        for (const auto& [other, k] : kinds) {
          if ((f == "reevaluate-hotel" && k == agents::AgentKind::kHotel) ||
              (f == "reevaluate-train" && k == agents::AgentKind::kTrain)) {
            targets.insert(other);
          }
        }
        if (f == "recalculate-travel-times") targets.insert(succ.begin(), succ.end());
      }
      if (!targets.empty()) patch["reevaluate"] = targets;
      return patch;
    };
    out.push_back(std::move(b));
  }
  return out;
}

TravelSetup make_travel(const ScenarioBundle& bundle, const std::string& variant,
                        std::optional<std::uint64_t> seed) {
  if (!bundle.is_travel()) throw Error(ErrorCode::kInvalidInput, bundle.problem + " is not a saga scenario");
  const Value& j = bundle.raw;
  TravelSetup s;
  try {
    const Value& saga = j.at("saga");
    s.def.id = saga.value("id", "travel");
    s.def.entity_prefix = saga.value("entity_prefix", "booking/");
    for (const auto& f : saga.at("forward")) {
      OperationId op(f.at("id").get<std::string>(), f.value("label", ""));
      s.def.saga.forward.push_back(op);
      s.def.graph.add_node(op);
      CompensationSpec spec;
      spec.for_op = op.id;
      spec.inverse_actions = f.value("inverse_actions", std::vector<std::string>{});
      spec.preconditions = Condition::completed(op.id);
      s.def.saga.compensations[op.id] = spec;
      s.def.schemas[op.id] = f.at("agent").get<std::string>() + ".input";
      s.def.inputs[op.id] = j.at("inputs").value(op.id, Value::object());
    }
    for (const auto& e : saga.value("edges", Value::array())) {
      if (e.contains("condition")) {
        s.def.graph.add_edge(e.at("from").get<std::string>(), e.at("to").get<std::string>(),
                             e.at("condition").get<Condition>());
      } else {
        s.def.graph.add_edge(e.at("from").get<std::string>(), e.at("to").get<std::string>());
      }
    }

    Value cat = j.at("catalog");
    if (seed) {
      cat["generate"] = *seed;
      cat.erase("seed");
    }
    if (!variant.empty()) {
      const Value variants = j.value("variants", Value::object());
      if (!variants.contains(variant)) parse_error("unknown variant '" + variant + "'");
      const Value& v = variants.at(variant);
      cat["failures"] = v.value("failures", Value::object());
      s.expected_trace = v.value("expected_trace", std::vector<std::string>{});
    }
    s.catalog = std::make_shared<agents::BookingCatalog>(agents::catalog_from_json(cat));
    s.bindings = travel_bindings(bundle, s.catalog);

    const Value output_rules_json = j.value("output_rules", Value::object());
    for (const auto& [op, rules] : output_rules_json.items()) {
      s.options.output_rules[op] = load_validation_rules(rules);
    }
    s.options.message_rules = load_validation_rules(j.value("message_rules", Value::array()));
    for (const auto& inv : j.value("invariants", Value::array())) s.options.invariants.push_back(inv.get<Invariant>());

    const Value& budget = j.at("budget");
    s.budget_key = budget.value("entity", "budget");
    agents::ExpenseLedger ledger;
    ledger.limit = budget.at("limit_cents").get<Cents>();
    Entity e;
    e.status = EntityStatus::kCommitted;
    e.data = {{"limit_cents", ledger.limit},
              {"allocated_cents", 0},
              {"remaining_cents", ledger.limit},
              {"budget_status", "ok"},
              {"ledger", agents::ledger_internal_state(ledger)}};
    s.initial.app.put(s.budget_key, e);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kScenarioParseError) throw;
    parse_error(bundle.path.string() + ": " + e.what());
  } catch (const std::exception& e) {
    parse_error(bundle.path.string() + ": " + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Disruption flag

planning::DisruptionEvent parse_disrupt_flag(const std::string& text) {
  planning::DisruptionEvent d;
  bool have_tick = false;
  std::stringstream ss(text);
  std::string part;
  try {
    while (std::getline(ss, part, ',')) {
      auto eq = part.find('=');
      if (eq == std::string::npos) parse_error("disruption field '" + part + "' lacks '='");
      std::string key = part.substr(0, eq);
      std::string val = part.substr(eq + 1);
      if (key == "tick" || key == "at") {
        d.at = parse_clock(val);
        have_tick = true;
      } else if (key == "scope") {
        std::stringstream sc(val);
        std::string loc;
        while (std::getline(sc, loc, '|')) d.scope.insert(loc);
      } else if (key == "mult" || key == "multiplier") {
        d.kind = planning::DisruptionEvent::Kind::kTravelMultiplier;
        d.multiplier = planning::parse_multiplier(Value(val));
      } else if (key == "action") {
        d.kind = planning::DisruptionEvent::Kind::kDelay;
        d.action = val;
      } else if (key == "start" || key == "new_start") {
        d.new_start = parse_clock(val);
      } else {
        parse_error("unknown disruption field '" + key + "'");
      }
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kScenarioParseError) throw;
    parse_error(std::string("bad --disrupt: ") + e.what());
  }
  if (!have_tick) parse_error("--disrupt needs tick=HH:MM");
  d.description = "command line: " + text;
  return d;
}

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::kPlan: return "plan";
    case Mode::kReact: return "react";
    case Mode::kReplayFixture: return "replay-fixture";
  }
  return "plan";
}

Mode mode_from_string(std::string_view s) {
  if (s == "plan") return Mode::kPlan;
  if (s == "react") return Mode::kReact;
  if (s == "replay-fixture" || s == "replay") return Mode::kReplayFixture;
  parse_error("unknown mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Runs

namespace {

using HistoryChecks = std::vector<std::pair<std::uint64_t, std::uint64_t>>;

struct Runner {
  const ScenarioBundle& b;
  const RunOptions& opt;
  ContextStore& store;
  RunReport& r;
  HistoryChecks checks;

  void travel_once(const std::string& variant, FixtureResult* fixture);
  void travel();
  void plan();
  void react();
  void replay();
};

void Runner::travel_once(const std::string& variant, FixtureResult* fixture) {
  auto setup = make_travel(b, variant, opt.seed);
  for (const auto& [op, rules] : setup.options.output_rules) {
    for (const auto& rule : rules) {
      store.append(LogKind::kConstraint,
                   {{"saga", setup.def.id}, {"id", rule.id}, {"rule", validation_rule_to_json(rule)}, {"resolved", false}},
                   0);
    }
  }
  SagaRun run = begin_saga(store, setup.def, setup.initial);
  SagaResult res = execute_saga(run, setup.bindings, store, setup.options);
  if (fixture != nullptr) {
    fixture->expected = setup.expected_trace;
    fixture->found = res.compensation_trace;
    fixture->matches = fixture->found == fixture->expected;
    return;
  }
  r.outcome = std::string(to_string(res.outcome));
  r.compensation_trace = res.compensation_trace;
  r.details = run_report(run, res, store);
  if (const Entity* budget = res.state.app.find(setup.budget_key)) {
    r.details["budget"] = {{"limit_cents", budget->data.at("limit_cents")},
                           {"allocated_cents", budget->data.at("allocated_cents")},
                           {"remaining_cents", budget->data.at("remaining_cents")}};
  }
  Value bookings = Value::object();
  Value confirmations = Value::array();
  for (const auto& op : setup.def.saga.forward) {
    const Entity* e = res.state.app.find(setup.def.entity_key(op.id));
    if (e == nullptr) continue;
    Value summary = {{"label", op.label},
                     {"total_cost", e->data.value("total_cost", Cents{0})},
                     {"covers", e->data.value("covers", Value::object())}};
    if (e->data.contains("confirmation_number")) summary["confirmation"] = e->data.at("confirmation_number");
    if (e->data.contains("seat_res")) summary["confirmation"] = e->data.at("seat_res");
    bookings[op.id] = summary;
    Value c = e->data;
    c.erase("agent_state");
    confirmations.push_back(c);
  }
  r.details["bookings"] = bookings;
  if (res.outcome == SagaOutcome::kCommitted) {
    auto itinerary = agents::execute_agent(
        agents::AgentKind::kItinerary,
        Value{{"user_prefs", {{"interests", {{"museums", 0.9}, {"architecture", 0.7}, {"food", 0.5}}}}},
              {"travel_constraints", Value::object()},
              {"confirmations", confirmations}},
        *setup.catalog);
    r.details["itinerary"] = itinerary.outputs.at("timing_schedule");
  }
  bool expected = setup.expected_trace.empty() ? res.outcome == SagaOutcome::kCommitted
                                               : res.compensation_trace == setup.expected_trace;
  r.exit_code = expected ? kExitOk : kExitMismatch;
}

void Runner::travel() {
  if (opt.mode == Mode::kReplayFixture) {
    const Value variants = b.raw.value("variants", Value::object());
    bool all = true;
    for (const auto& [name, v] : variants.items()) {
      if (!opt.fixture.empty() && opt.fixture != name) continue;
      FixtureResult fr;
      fr.name = name;
      travel_once(name, &fr);
      all = all && fr.matches;
      r.fixtures.push_back(std::move(fr));
    }
    r.outcome = all ? "fixtures-match" : "fixture-mismatch";
    r.exit_code = all ? kExitOk : kExitMismatch;
    return;
  }
  travel_once(opt.variant, nullptr);
}

void Runner::plan() {
  if (b.plan.empty()) parse_error(b.problem + " has no base plan; use --mode replay-fixture");
  PlanRun run = start_plan_run(store, b.problem, b.world, b.rules, b.goals.value_or(planning::Goals{}), b.plan,
                               b.constraint_rules);
  Plan p = b.plan;
  if (!b.augmentation.empty()) {
    p = planning::canonical(planning::augment_common_sense(p, b.augmentation));
    store.append(LogKind::kPlan, {{"plan", b.problem}, {"status", "augmented"}, {"actions", plan_json(p)}}, run.now);
  }
  auto vs = validate_plan(p, b.world, b.rules);
  log_verdict(store, b, b.problem, "engine", vs, run.now);
  r.violations_found = rule_ids(vs);
  r.outcome = vs.empty() ? "valid" : "violations";
  r.exit_code = vs.empty() ? kExitOk : kExitViolations;
  r.plan = plan_json(p);
  r.details = plan_summary(p);
  r.details["violations"] = violations_json(vs);
}

void Runner::react() {
  if (!b.goals) parse_error(b.problem + " has no goals to replan against");
  planning::DisruptionEvent d;
  if (opt.disrupt) {
    d = *opt.disrupt;
  } else if (!b.disruptions.empty()) {
    d = b.disruptions.front();
  } else {
    parse_error(b.problem + " has no disruption; pass --disrupt");
  }
  PlanRun run = start_plan_run(store, b.problem, b.world, b.rules, *b.goals, b.plan, b.constraint_rules);
  log_verdict(store, b, b.problem, "engine", validate_plan(run.plan, b.world, b.rules), run.now);
  advance_plan(run, store, d.at);
  auto upto = store.last_seq();
  auto before = store.prefix_hash(upto);

  PlanRun next = replan(run, store, d);
  checks.emplace_back(upto, before);
  r.details["disruption"] = planning::disruption_to_json(d);
  if (next.needs_human) {
    r.outcome = "needs-human";
    r.exit_code = kExitInfeasible;
    r.details["blocking"] = next.blocking;
    return;
  }
  auto vs = validate_plan(next.plan, b.world, b.rules, next.disruptions);
  log_verdict(store, b, b.problem, "engine", vs, d.at);
  r.violations_found = rule_ids(vs);
  r.outcome = vs.empty() ? "replanned" : "violations";
  r.exit_code = vs.empty() ? kExitOk : kExitViolations;
  r.plan = plan_json(next.plan);
  Value summary = plan_summary(next.plan);
  r.details.update(summary);
  r.details["strategy"] = next.strategy;
  Value history = Value::array();
  for (const auto& a : next.executed) history.push_back(a.id);
  r.details["history"] = history;
  Tick makespan = 0;
  for (const auto& a : next.plan) makespan = std::max(makespan, a.end);
  r.details["makespan"] = format_clock(makespan);
  r.details["violations"] = violations_json(vs);
}

void Runner::replay() {
  bool all = true;
  bool any_found = false;
  std::vector<std::string> found_all;
  std::vector<std::string> expected_all;
  for (const auto& fx : b.fixtures) {
    if (!opt.fixture.empty() && opt.fixture != fx.name) continue;
    FixtureResult fr;
    fr.name = fx.name;
    fr.expected = fx.expected_violations;
    fr.expected_error = fx.expected_error;
    std::string plan_id = b.problem + "/" + fx.name;
    try {
      Plan p = fx.plan;
      std::vector<planning::DisruptionEvent> ds = fx.use_disruptions ? b.disruptions : std::vector<planning::DisruptionEvent>{};
      if (fx.reactive) {
        if (b.disruptions.empty()) parse_error(fx.name + " is reactive but the scenario has no disruption");
        PlanRun run = start_plan_run(store, plan_id, b.world, b.rules, b.goals.value_or(planning::Goals{}), b.plan,
                                     b.constraint_rules);
        const auto& d = b.disruptions.front();
        advance_plan(run, store, d.at);
        auto upto = store.last_seq();
        auto before = store.prefix_hash(upto);
        Replanner fixture_planner = [&](const PlanRun& pr, const planning::DisruptionEvent& ev) {
          auto all_d = pr.disruptions;
          all_d.push_back(ev);
          auto split = planning::split_at(pr.plan, pr.world, ev.at, all_d);
          planning::RescheduleResult res;
          res.history = split.history;
          res.plan = split.history;
          res.plan.insert(res.plan.end(), fx.plan.begin(), fx.plan.end());
          res.plan = planning::canonical(res.plan);
          res.strategy = "fixture";
          return res;
        };
        checks.emplace_back(upto, before);
        PlanRun next = replan(run, store, d, fixture_planner);
        p = next.plan;
        ds = next.disruptions;
      } else {
        if (fx.augment) p = planning::augment_common_sense(p, b.augmentation);
        store.append(LogKind::kPlan, {{"plan", plan_id}, {"status", "fixture"}, {"source", fx.source}, {"actions", plan_json(p)}},
                     p.empty() ? 0 : p.front().start);
      }
      auto vs = validate_plan(p, b.world, b.rules, ds);
      log_verdict(store, b, plan_id, "fixture", vs, p.empty() ? 0 : p.front().start);
      fr.found = rule_ids(vs);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kScenarioParseError) throw;
      fr.error = std::string(error_code_name(e.code()));
      store.append(LogKind::kValidationVerdict,
                   {{"plan", plan_id}, {"source", "fixture"}, {"error", fr.error}, {"detail", e.what()}}, 0);
      r.details[fx.name] = {{"error", e.what()}};
    }
    fr.missing = minus(fr.expected, fr.found);
    fr.extra = minus(fr.found, fr.expected);
    fr.matches = fr.error == fr.expected_error && fr.missing.empty() && fr.extra.empty();
    all = all && fr.matches;
    any_found = any_found || !fr.found.empty() || !fr.error.empty();
    found_all.insert(found_all.end(), fr.found.begin(), fr.found.end());
    expected_all.insert(expected_all.end(), fr.expected.begin(), fr.expected.end());
    r.fixtures.push_back(std::move(fr));
  }
  if (r.fixtures.empty()) parse_error("no fixture named '" + opt.fixture + "'");
  r.violations_found = sorted(found_all);
  r.violations_expected = sorted(expected_all);
  r.outcome = all ? "fixtures-match" : "fixture-mismatch";
  r.exit_code = !all ? kExitMismatch : any_found ? kExitViolations : kExitOk;
}

}  // namespace

RunReport run_scenario(const ScenarioBundle& bundle, const RunOptions& options) {
  auto t0 = std::chrono::steady_clock::now();
  RunReport r;
  r.problem = bundle.problem;
  r.mode = std::string(to_string(options.mode));
  fs::path path = options.log_path.empty() ? temp_log(bundle.problem) : options.log_path;
  StoreOptions so;
  so.sync = options.sync;
  ContextStore store = ContextStore::open(path, so);
  Runner runner{bundle, options, store, r, {}};
  try {
    if (bundle.is_travel()) {
      runner.travel();
    } else {
      switch (options.mode) {
        case Mode::kPlan: runner.plan(); break;
        case Mode::kReact: runner.react(); break;
        case Mode::kReplayFixture: runner.replay(); break;
      }
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInfeasible) {
      r.outcome = "needs-human";
      r.exit_code = kExitInfeasible;
      r.details["blocking"] = e.what();
    } else {
      throw;
    }
  }
  r.capabilities = capability_matrix(store, runner.checks);
  r.log_entries = store.size();
  r.log_path = path.string();
  r.elapsed_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---------------------------------------------------------------------------
// Capability matrix

std::vector<CapabilityRow> capability_matrix(const ContextStore& store, const HistoryChecks& history_checks) {
  auto entries = store.entries();
  auto pl = [](const LogEntry& e) -> const Value& { return e.payload; };
  auto str = [](const Value& p, const char* k) { return p.is_object() ? p.value(k, std::string()) : std::string(); };

  std::vector<CapabilityRow> rows;

  // Executed history survives every replan byte for byte.
  {
    CapabilityRow row{"Maintains historical actions", "Partial/None", "", false, {}};
    for (const auto& e : entries) {
      const Value& p = pl(e);
      bool executed = e.kind == LogKind::kOpRecord && str(p, "status") == "completed";
      bool committed = e.kind == LogKind::kCommit && p.value("ok", false);
      if (executed || committed) row.evidence.push_back(e.seq);
    }
    bool intact = std::all_of(history_checks.begin(), history_checks.end(),
                              [&](const auto& c) { return store.prefix_hash(c.first) == c.second; });
    row.evidenced = !row.evidence.empty() && intact;
    row.engine = row.evidenced ? "Full" : row.evidence.empty() ? "no evidence" : "Partial";
    rows.push_back(std::move(row));
  }

  // Every commit has a registered compensation; in-flight travel is split.
  {
    CapabilityRow row{"Partial journey compensation", "Rarely", "", false, {}};
    std::set<std::pair<std::string, std::string>> committed;
    std::set<std::pair<std::string, std::string>> covered;
    for (const auto& e : entries) {
      const Value& p = pl(e);
      auto key = std::make_pair(str(p, "saga"), str(p, "op"));
      if (e.kind == LogKind::kCommit && p.value("ok", false)) committed.insert(key);
      if ((e.kind == LogKind::kCompensationRegistration && p.value("ok", false)) ||
          e.kind == LogKind::kCompensation) {
        covered.insert(key);
        row.evidence.push_back(e.seq);
      }
      if (e.kind == LogKind::kOpRecord && p.value("partial", false)) row.evidence.push_back(e.seq);
    }
    bool all = std::includes(covered.begin(), covered.end(), committed.begin(), committed.end());
    row.evidenced = !row.evidence.empty() && all;
    row.engine = row.evidenced ? "Always" : row.evidence.empty() ? "no evidence" : "Rarely";
    rows.push_back(std::move(row));
  }

  // Each commit passed output validation; each engine or fixture plan was
  // checked against every rule.
  {
    CapabilityRow row{"Constraint consistency checking", "Ad-hoc", "", false, {}};
    std::set<std::pair<std::string, std::string>> validated;
    std::set<std::string> checked_plans;
    bool all = true;
    for (const auto& e : entries) {
      if (e.kind == LogKind::kValidationVerdict) {
        const Value& p = pl(e);
        row.evidence.push_back(e.seq);
        if (str(p, "phase") == "output-validation" && p.value("ok", false)) {
          validated.insert({str(p, "saga"), str(p, "op")});
        }
        if (p.contains("plan")) checked_plans.insert(str(p, "plan"));
      }
    }
    for (const auto& e : entries) {
      const Value& p = pl(e);
      if (e.kind == LogKind::kCommit && p.value("ok", false)) {
        all = all && validated.count({str(p, "saga"), str(p, "op")}) != 0;
      }
      if (e.kind == LogKind::kPlan && p.contains("actions")) {
        all = all && checked_plans.count(str(p, "plan")) != 0;
      }
    }
    row.evidenced = !row.evidence.empty() && all;
    row.engine = row.evidenced ? "Systematic" : row.evidence.empty() ? "no evidence" : "Ad-hoc";
    rows.push_back(std::move(row));
  }

  // Constraints stay in the bounded context however much history piles up.
  {
    CapabilityRow row{"Handles attention narrowing", "Vulnerable", "", false, {}};
    std::map<std::string, std::uint64_t> latest;
    for (const auto& e : entries) {
      if (e.kind == LogKind::kConstraint) latest[str(pl(e), "id")] = e.seq;
    }
    RetentionPolicy policy;
    policy.max_records = 50;
    policy.max_bytes = 1 << 16;
    try {
      std::set<std::uint64_t> kept;
      for (const auto& e : store.retained_context(policy)) kept.insert(e.seq);
      bool all = true;
      for (const auto& [id, seq] : latest) {
        if (kept.count(seq) != 0) {
          row.evidence.push_back(seq);
        } else {
          all = false;
        }
      }
      std::sort(row.evidence.begin(), row.evidence.end());
      row.evidenced = !latest.empty() && all;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kBudgetTooSmall) throw;
    }
    row.engine = row.evidenced ? "Resistant" : latest.empty() ? "no evidence" : "Vulnerable";
    rows.push_back(std::move(row));
  }

  // The engine's own final states and plans are physically consistent.
  {
    CapabilityRow row{"Physical-temporal consistency", "Inconsistent", "", false, {}};
    bool all = true;
    std::map<std::string, const LogEntry*> last_engine_verdict;
    for (const auto& e : entries) {
      const Value& p = pl(e);
      if (e.kind == LogKind::kValidationVerdict && str(p, "source") == "engine") {
        last_engine_verdict[str(p, "plan")] = &e;
      }
      if (e.kind == LogKind::kVerification) {
        row.evidence.push_back(e.seq);
        all = all && p.value("equals_checkpoint", false) && p.value("invariants_ok", false);
      }
      if (e.kind == LogKind::kSagaOutcome && str(p, "outcome") == "committed") row.evidence.push_back(e.seq);
    }
    for (const auto& [plan, e] : last_engine_verdict) {
      row.evidence.push_back(e->seq);
      all = all && e->payload.value("physical_violations", 0) == 0;
    }
    std::sort(row.evidence.begin(), row.evidence.end());
    row.evidenced = !row.evidence.empty() && all;
    row.engine = row.evidenced ? "Guaranteed" : row.evidence.empty() ? "no evidence" : "Inconsistent";
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Reports

Value report_to_json(const RunReport& r) {
  Value fixtures = Value::array();
  for (const auto& f : r.fixtures) {
    fixtures.push_back({{"name", f.name},
                        {"expected", f.expected},
                        {"found", f.found},
                        {"missing", f.missing},
                        {"extra", f.extra},
                        {"expected_error", f.expected_error},
                        {"error", f.error},
                        {"matches", f.matches}});
  }
  Value caps = Value::array();
  for (const auto& c : r.capabilities) {
    caps.push_back({{"capability", c.capability},
                    {"baseline", c.baseline},
                    {"engine", c.engine},
                    {"evidenced", c.evidenced},
                    {"evidence", c.evidence}});
  }
  return {{"schema_version", r.schema_version},
          {"problem", r.problem},
          {"mode", r.mode},
          {"outcome", r.outcome},
          {"violations_found", r.violations_found},
          {"violations_expected", r.violations_expected},
          {"fixtures", fixtures},
          {"compensation_trace", r.compensation_trace},
          {"capabilities", caps},
          {"details", r.details},
          {"plan", r.plan},
          {"elapsed_ms", r.elapsed_ms},
          {"log_entries", r.log_entries},
          {"log_path", r.log_path},
          {"exit_code", r.exit_code}};
}

RunReport report_from_json(const Value& j) {
  RunReport r;
  r.schema_version = j.value("schema_version", 1);
  r.problem = j.value("problem", "");
  r.mode = j.value("mode", "");
  r.outcome = j.value("outcome", "");
  r.violations_found = j.value("violations_found", std::vector<std::string>{});
  r.violations_expected = j.value("violations_expected", std::vector<std::string>{});
  for (const auto& f : j.value("fixtures", Value::array())) {
    FixtureResult x;
    x.name = f.value("name", "");
    x.expected = f.value("expected", std::vector<std::string>{});
    x.found = f.value("found", std::vector<std::string>{});
    x.missing = f.value("missing", std::vector<std::string>{});
    x.extra = f.value("extra", std::vector<std::string>{});
    x.expected_error = f.value("expected_error", "");
    x.error = f.value("error", "");
    x.matches = f.value("matches", false);
    r.fixtures.push_back(std::move(x));
  }
  r.compensation_trace = j.value("compensation_trace", std::vector<std::string>{});
  for (const auto& c : j.value("capabilities", Value::array())) {
    r.capabilities.push_back({c.value("capability", ""), c.value("baseline", ""), c.value("engine", ""),
                              c.value("evidenced", false),
                              c.value("evidence", std::vector<std::uint64_t>{})});
  }
  r.details = j.value("details", Value::object());
  r.plan = j.value("plan", Value::array());
  r.elapsed_ms = j.value("elapsed_ms", 0.0);
  r.log_entries = j.value("log_entries", std::uint64_t{0});
  r.log_path = j.value("log_path", "");
  r.exit_code = j.value("exit_code", 0);
  return r;
}

namespace {

std::string join(const std::vector<std::string>& v, const std::string& sep = ", ") {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : sep) + s;
  return out.empty() ? "-" : out;
}

std::string evidence_text(const std::vector<std::uint64_t>& seqs) {
  if (seqs.empty()) return "-";
  std::string out;
  std::size_t shown = std::min<std::size_t>(seqs.size(), 6);
  for (std::size_t i = 0; i < shown; ++i) out += (i ? " #" : "#") + std::to_string(seqs[i]);
  if (seqs.size() > shown) out += " (+" + std::to_string(seqs.size() - shown) + ")";
  return out;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

}  // namespace

std::string emit_report(const RunReport& r, ReportFormat format) {
  if (format == ReportFormat::kMachine) return report_to_json(r).dump(2) + "\n";
  std::ostringstream out;
  out << "scenario " << (r.problem.empty() ? "-" : r.problem) << "  mode " << (r.mode.empty() ? "-" : r.mode)
      << "  outcome " << (r.outcome.empty() ? "-" : r.outcome) << "\n";
  if (!r.violations_found.empty() || !r.violations_expected.empty()) {
    out << "violations found:    " << join(r.violations_found) << "\n";
    out << "violations expected: " << join(r.violations_expected) << "\n";
  }
  for (const auto& f : r.fixtures) {
    out << "fixture " << f.name << ": " << (f.matches ? "match" : "MISMATCH");
    if (!f.expected_error.empty() || !f.error.empty()) {
      out << "  error expected " << (f.expected_error.empty() ? "-" : f.expected_error) << ", got "
          << (f.error.empty() ? "-" : f.error);
    } else {
      out << "  found [" << join(f.found) << "]";
    }
    if (!f.missing.empty()) out << "  missing [" << join(f.missing) << "]";
    if (!f.extra.empty()) out << "  extra [" << join(f.extra) << "]";
    out << "\n";
  }
  if (!r.compensation_trace.empty()) out << "compensation trace: " << join(r.compensation_trace) << "\n";
  if (r.details.contains("strategy")) {
    out << "strategy " << r.details.at("strategy").get<std::string>() << ", makespan "
        << r.details.value("makespan", "-") << "\n";
  }
  if (r.details.contains("blocking")) out << "blocking: " << r.details.at("blocking").get<std::string>() << "\n";
  if (r.details.contains("tasks")) {
    for (const auto& t : r.details.at("tasks")) {
      out << "  task " << pad(t.at("task").get<std::string>(), 18) << pad(t.at("actor").get<std::string>(), 10)
          << t.at("location").get<std::string>() << " " << t.at("start").get<std::string>() << "-"
          << t.at("end").get<std::string>() << "\n";
    }
  }
  if (r.details.contains("bookings")) {
    for (const auto& [op, b] : r.details.at("bookings").items()) {
      out << "  booking " << pad(op, 4) << pad(b.value("label", ""), 22) << b.value("total_cost", 0) << " cents";
      if (b.contains("confirmation")) out << "  " << b.at("confirmation").dump();
      out << "\n";
    }
  }
  if (r.details.contains("budget")) {
    const Value& b = r.details.at("budget");
    out << "budget: allocated " << b.value("allocated_cents", 0) << " of " << b.value("limit_cents", 0)
        << " cents\n";
  }
  if (!r.plan.empty()) {
    Plan p;
    for (const auto& a : r.plan) p.push_back(a.get<planning::TimedAction>());
    out << planning::render_plan(p);
  }
  if (!r.capabilities.empty()) {
    out << "\n" << pad("capability", 34) << pad("planner alone", 15) << pad("this run", 13) << "evidence\n";
    for (const auto& c : r.capabilities) {
      out << pad(c.capability, 34) << pad(c.baseline, 15) << pad(c.engine, 13) << evidence_text(c.evidence) << "\n";
    }
  }
  if (r.log_entries > 0) {
    out << "\nlog: " << r.log_entries << " entries";
    if (!r.log_path.empty()) out << " in " << r.log_path;
    out << "\n";
  }
  char ms[32];
  std::snprintf(ms, sizeof ms, "%.1f", r.elapsed_ms);
  out << "elapsed " << ms << " ms, exit " << r.exit_code << "\n";
  return out.str();
}

std::string dump_log(const std::vector<LogEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    Value j = {{"seq", e.seq},
               {"kind", to_string(e.kind)},
               {"tick", e.tick},
               {"committed", e.committed},
               {"payload", e.payload}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace saga::harness
