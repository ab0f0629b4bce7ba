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

#include "saga/planning.h"

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

namespace saga::planning {

namespace {

constexpr Tick kNever = std::numeric_limits<Tick>::max() / 4;

Tick ceil_minutes(const Multiplier& r) {
  auto n = r.numerator();
  auto d = r.denominator();
  if (n >= 0) return (n + d - 1) / d;
  return -((-n) / d);
}

Tick clock_field(const Value& j, const char* key, Tick fallback) {
  if (!j.contains(key)) return fallback;
  const Value& v = j.at(key);
  if (v.is_number_integer()) return v.get<Tick>();
  return parse_clock(v.get<std::string>());
}

std::vector<std::string> string_list(const Value& j, const char* key) {
  std::vector<std::string> out;
  if (j.contains(key)) {
    for (const auto& v : j.at(key)) out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Multiplier

Multiplier parse_multiplier(const Value& j) {
  Multiplier m;
  if (j.is_number_integer()) {
    m = Multiplier(j.get<std::int64_t>());
  } else if (j.is_number()) {
    // Decimal input: interpret with three fractional digits.
    double d = j.get<double>();
    m = Multiplier(static_cast<std::int64_t>(d * 1000 + (d >= 0 ? 0.5 : -0.5)), 1000);
  } else {
    std::string s = j.get<std::string>();
    auto slash = s.find('/');
    try {
      if (slash == std::string::npos) {
        if (s.find('.') != std::string::npos) return parse_multiplier(Value(std::stod(s)));
        m = Multiplier(std::stoll(s));
      } else {
        m = Multiplier(std::stoll(s.substr(0, slash)), std::stoll(s.substr(slash + 1)));
      }
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidInput, "bad multiplier '" + s + "'");
    }
  }
  if (m <= 0) throw Error(ErrorCode::kNegativeInput, "multiplier must be positive");
  return m;
}

Value multiplier_json(const Multiplier& m) {
  if (m.denominator() == 1) return m.numerator();
  return std::to_string(m.numerator()) + "/" + std::to_string(m.denominator());
}

// ---------------------------------------------------------------------------
// World

void WorldModel::add_route(const std::string& a, const std::string& b, int minutes) {
  locations.insert(a);
  locations.insert(b);
  travel[{a, b}] = minutes;
  travel[{b, a}] = minutes;
}

int WorldModel::travel_minutes(const std::string& from, const std::string& to) const {
  if (!locations.count(from)) throw Error(ErrorCode::kUnknownLocation, from);
  if (!locations.count(to)) throw Error(ErrorCode::kUnknownLocation, to);
  if (from == to) return 0;
  auto it = travel.find({from, to});
  if (it == travel.end()) {
    throw Error(ErrorCode::kUnknownLocation, "no route " + from + " -> " + to);
  }
  return it->second;
}

void WorldModel::check() const {
  for (const auto& [key, minutes] : travel) {
    if (minutes <= 0) {
      throw Error(ErrorCode::kInvalidInput, "non-positive travel time " + key.first + "-" + key.second);
    }
    auto back = travel.find({key.second, key.first});
    if (back == travel.end() || back->second != minutes) {
      throw Error(ErrorCode::kInvalidInput, "asymmetric travel time " + key.first + "-" + key.second);
    }
  }
  for (const auto& [loc, w] : windows) {
    if (w.open && w.close && *w.open > *w.close) {
      throw Error(ErrorCode::kInvalidInput, "window at " + loc + " closes before it opens");
    }
  }
}

WorldModel world_from_json(const Value& j) {
  WorldModel w;
  for (const auto& l : j.value("locations", Value::array())) w.locations.insert(l.get<std::string>());
  for (const auto& r : j.value("travel", Value::array())) {
    w.add_route(r.at(0).get<std::string>(), r.at(1).get<std::string>(), r.at(2).get<int>());
  }
  for (const auto& a : j.value("actors", Value::array())) {
    Actor actor;
    actor.name = a.at("name").get<std::string>();
    actor.can_drive = a.value("can_drive", false);
    actor.seats = a.value("seats", 0);
    actor.needs_ride = a.value("needs_ride", false);
    actor.location = a.value("location", "");
    actor.available_from = clock_field(a, "available_from", 0);
    if (!actor.location.empty() && !w.locations.count(actor.location)) {
      throw Error(ErrorCode::kUnknownLocation, actor.location);
    }
    w.actors[actor.name] = actor;
  }
  const Value resources = j.value("resources", Value::object());
  for (const auto& [name, loc] : resources.items()) {
    w.resources[name] = loc.get<std::string>();
  }
  const Value windows = j.value("windows", Value::object());
  for (const auto& [loc, win] : windows.items()) {
    OpeningWindow ow;
    if (win.contains("open")) ow.open = clock_field(win, "open", 0);
    if (win.contains("close")) ow.close = clock_field(win, "close", 0);
    w.windows[loc] = ow;
  }
  w.check();
  return w;
}

Value world_to_json(const WorldModel& w) {
  Value j;
  j["locations"] = w.locations;
  Value travel = Value::array();
  for (const auto& [key, minutes] : w.travel) {
    if (key.first < key.second) travel.push_back({key.first, key.second, minutes});
  }
  j["travel"] = travel;
  Value actors = Value::array();
  for (const auto& [name, a] : w.actors) {
    actors.push_back({{"name", name},
                      {"can_drive", a.can_drive},
                      {"seats", a.seats},
                      {"needs_ride", a.needs_ride},
                      {"location", a.location},
                      {"available_from", format_clock(a.available_from)}});
  }
  j["actors"] = actors;
  j["resources"] = w.resources;
  Value windows = Value::object();
  for (const auto& [loc, win] : w.windows) {
    Value o = Value::object();
    if (win.open) o["open"] = format_clock(*win.open);
    if (win.close) o["close"] = format_clock(*win.close);
    windows[loc] = o;
  }
  j["windows"] = windows;
  return j;
}

// ---------------------------------------------------------------------------
// Actions

namespace {
const std::pair<ActionKind, std::string_view> kActionKinds[] = {
    {ActionKind::kTravel, "travel"}, {ActionKind::kPickup, "pickup"}, {ActionKind::kTask, "task"},
    {ActionKind::kWait, "wait"},     {ActionKind::kArrive, "arrive"},
};
}  // namespace

std::string_view to_string(ActionKind k) {
  for (const auto& [kind, name] : kActionKinds) {
    if (kind == k) return name;
  }
  return "task";
}

ActionKind action_kind_from_string(std::string_view s) {
  for (const auto& [kind, name] : kActionKinds) {
    if (name == s) return kind;
  }
  throw Error(ErrorCode::kInvalidInput, "unknown action kind '" + std::string(s) + "'");
}

std::vector<std::string> TimedAction::participants() const {
  std::vector<std::string> out{actor};
  for (const auto& p : passengers) {
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  }
  return out;
}

void to_json(Value& j, const TimedAction& a) {
  j = Value::object();
  j["id"] = a.id;
  j["actor"] = a.actor;
  j["kind"] = to_string(a.kind);
  if (a.kind == ActionKind::kTravel) {
    j["from"] = a.from;
    j["to"] = a.to;
  } else {
    j["at"] = a.from;
  }
  j["start"] = format_clock(a.start);
  j["end"] = format_clock(a.end);
  if (!a.passengers.empty()) j["passengers"] = a.passengers;
  if (!a.task.empty()) j["task"] = a.task;
  if (!a.resource.empty()) j["resource"] = a.resource;
  if (!a.segment.empty()) j["segment"] = a.segment;
  if (a.fixed) j["fixed"] = true;
  if (a.grants_seats) j["grants_seats"] = a.grants_seats;
  if (a.partial) j["partial"] = true;
}

void from_json(const Value& j, TimedAction& a) {
  a = TimedAction{};
  a.id = j.at("id").get<std::string>();
  a.actor = j.at("actor").get<std::string>();
  a.kind = action_kind_from_string(j.at("kind").get<std::string>());
  if (a.kind == ActionKind::kTravel) {
    a.from = j.at("from").get<std::string>();
    a.to = j.at("to").get<std::string>();
  } else {
    a.from = j.contains("at") ? j.at("at").get<std::string>() : j.at("from").get<std::string>();
    a.to = a.from;
  }
  a.start = clock_field(j, "start", 0);
  a.end = clock_field(j, "end", a.start);
  a.passengers = string_list(j, "passengers");
  a.task = j.value("task", "");
  a.resource = j.value("resource", "");
  a.segment = j.value("segment", "");
  a.fixed = j.value("fixed", false);
  a.grants_seats = j.value("grants_seats", 0);
  a.partial = j.value("partial", false);
  if (a.end < a.start) {
    throw Error(ErrorCode::kInvalidInput, "action " + a.id + " ends before it starts");
  }
}

Plan canonical(Plan plan) {
  std::stable_sort(plan.begin(), plan.end(), [](const TimedAction& a, const TimedAction& b) {
    return std::tie(a.start, a.end, a.actor, a.id) < std::tie(b.start, b.end, b.actor, b.id);
  });
  return plan;
}

std::string render_plan(const Plan& plan) {
  std::ostringstream out;
  for (const auto& a : plan) {
    out << format_clock(a.start) << "-" << format_clock(a.end) << "  " << a.actor << "  "
        << to_string(a.kind) << " ";
    if (a.kind == ActionKind::kTravel) {
      out << a.from << "->" << a.to;
    } else {
      out << "@" << a.from;
    }
    if (!a.task.empty()) out << " [" << a.task << "]";
    if (!a.passengers.empty()) {
      out << " with";
      for (const auto& p : a.passengers) out << " " << p;
    }
    if (a.partial) out << " (partial)";
    out << "  #" << a.id << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Disruptions

bool DisruptionEvent::in_scope(const std::string& from, const std::string& to) const {
  if (kind != Kind::kTravelMultiplier) return false;
  return scope.count(from) || scope.count(to);
}

DisruptionEvent disruption_from_json(const Value& j) {
  DisruptionEvent d;
  std::string kind = j.value("kind", "travel-multiplier");
  if (kind == "travel-multiplier") {
    d.kind = DisruptionEvent::Kind::kTravelMultiplier;
  } else if (kind == "delay") {
    d.kind = DisruptionEvent::Kind::kDelay;
  } else {
    throw Error(ErrorCode::kInvalidInput, "unknown disruption kind '" + kind + "'");
  }
  d.at = clock_field(j, "at", 0);
  for (const auto& s : string_list(j, "scope")) d.scope.insert(s);
  if (j.contains("multiplier")) d.multiplier = parse_multiplier(j.at("multiplier"));
  d.action = j.value("action", "");
  d.new_start = clock_field(j, "new_start", 0);
  for (const auto& s : string_list(j, "past_hazard")) d.past_hazard.insert(s);
  d.description = j.value("description", "");
  return d;
}

Value disruption_to_json(const DisruptionEvent& d) {
  Value j;
  j["kind"] = d.kind == DisruptionEvent::Kind::kDelay ? "delay" : "travel-multiplier";
  j["at"] = format_clock(d.at);
  if (d.kind == DisruptionEvent::Kind::kDelay) {
    j["action"] = d.action;
    j["new_start"] = format_clock(d.new_start);
  } else {
    j["scope"] = d.scope;
    j["multiplier"] = multiplier_json(d.multiplier);
  }
  if (!d.past_hazard.empty()) j["past_hazard"] = d.past_hazard;
  if (!d.description.empty()) j["description"] = d.description;
  return j;
}

Tick compensate_segment(const SegmentProgress& p, const Multiplier& m) {
  if (p.total < 0 || p.elapsed < 0) {
    throw Error(ErrorCode::kNegativeInput, "segment minutes must be non-negative");
  }
  if (m <= 0) throw Error(ErrorCode::kNegativeInput, "multiplier must be positive");
  if (p.elapsed >= p.total) return p.elapsed;
  if (p.past_hazard) return p.total;
  Tick affected = p.total - p.elapsed;
  return p.elapsed + ceil_minutes(m * affected);
}

Tick effective_travel_time(const WorldModel& world, const std::string& from,
                           const std::string& to, Tick depart,
                           const std::vector<DisruptionEvent>& disruptions) {
  Tick base = world.travel_minutes(from, to);
  if (base == 0) return 0;
  std::vector<const DisruptionEvent*> relevant;
  for (const auto& d : disruptions) {
    if (d.in_scope(from, to)) relevant.push_back(&d);
  }
  std::stable_sort(relevant.begin(), relevant.end(),
                   [](const DisruptionEvent* a, const DisruptionEvent* b) { return a->at < b->at; });

  // Piecewise accrual: the latest disruption in force sets the rate.
  Multiplier rate(1);
  std::size_t next = 0;
  while (next < relevant.size() && relevant[next]->at <= depart) rate = relevant[next++]->multiplier;
  Multiplier remaining(base);
  Multiplier t(depart);
  for (;;) {
    if (next == relevant.size()) {
      return ceil_minutes(t + remaining * rate) - depart;
    }
    Multiplier window = Multiplier(relevant[next]->at) - t;
    Multiplier reach = window / rate;
    if (remaining <= reach) {
      return ceil_minutes(t + remaining * rate) - depart;
    }
    remaining -= reach;
    t = Multiplier(relevant[next]->at);
    rate = relevant[next++]->multiplier;
  }
}

// ---------------------------------------------------------------------------
// Rules

namespace {
const std::pair<RuleKind, std::string_view> kRuleKinds[] = {
    {RuleKind::kDeadline, "deadline"},         {RuleKind::kWindow, "window"},
    {RuleKind::kMinDuration, "min-duration"},  {RuleKind::kTravelTime, "travel-time"},
    {RuleKind::kSupervision, "supervision"},   {RuleKind::kCapacity, "capacity"},
    {RuleKind::kContinuity, "continuity"},     {RuleKind::kAvailability, "availability"},
    {RuleKind::kGathering, "gathering"},       {RuleKind::kReadyBy, "ready-by"},
    {RuleKind::kNeedsVehicle, "needs-vehicle"},
};
}  // namespace

std::string_view to_string(RuleKind k) {
  for (const auto& [kind, name] : kRuleKinds) {
    if (kind == k) return name;
  }
  return "deadline";
}

RuleKind rule_kind_from_string(std::string_view s) {
  for (const auto& [kind, name] : kRuleKinds) {
    if (name == s) return kind;
  }
  throw Error(ErrorCode::kInvalidInput, "unknown plan rule kind '" + std::string(s) + "'");
}

PlanRule plan_rule_from_json(const Value& j) {
  PlanRule r;
  r.id = j.at("id").get<std::string>();
  r.kind = rule_kind_from_string(j.at("kind").get<std::string>());
  r.severity = severity_from_string(j.value("severity", "hard"));
  r.params = j.value("params", Value::object());
  r.description = j.value("description", "");
  return r;
}

Value plan_rule_to_json(const PlanRule& r) {
  return {{"id", r.id},
          {"kind", to_string(r.kind)},
          {"severity", to_string(r.severity)},
          {"params", r.params},
          {"description", r.description}};
}

Value violation_to_json(const Violation& v) {
  return {{"rule", v.rule},
          {"kind", to_string(v.kind)},
          {"severity", to_string(v.severity)},
          {"actions", v.actions},
          {"at", format_clock(v.at)},
          {"detail", v.detail}};
}

void check_plan_references(const Plan& plan, const WorldModel& world) {
  for (const auto& a : plan) {
    if (!world.is_person(a.actor) && !world.is_resource(a.actor)) {
      throw Error(ErrorCode::kUnknownPerson, a.actor + " in action " + a.id);
    }
    for (const auto& p : a.passengers) {
      if (!world.is_person(p)) throw Error(ErrorCode::kUnknownPerson, p + " in action " + a.id);
    }
    for (const auto* loc : {&a.from, &a.to}) {
      if (!world.locations.count(*loc)) {
        throw Error(ErrorCode::kUnknownLocation, *loc + " in action " + a.id);
      }
    }
  }
}

namespace {

// Actions of one person in plan order (start, then input order).
struct Timeline {
  const Actor* actor = nullptr;
  std::vector<const TimedAction*> actions;

  // Location at minute t, ignoring `skip`; empty when travelling or absent.
  std::string location_at(Tick t, const TimedAction* skip = nullptr) const {
    std::string loc;
    bool known = false;
    for (const auto* a : actions) {
      if (a == skip) continue;
      if (a->start > t) break;
      if (a->kind == ActionKind::kTravel) {
        if (t < a->end) return {};
        loc = a->partial ? std::string() : a->to;
      } else {
        loc = a->from;
      }
      known = true;
    }
    if (!known) {
      if (actor == nullptr || t < actor->available_from) return {};
      return actor->location;
    }
    return loc;
  }

  bool busy(Tick s, Tick e, const TimedAction* skip = nullptr) const {
    for (const auto* a : actions) {
      if (a == skip) continue;
      if (a->start < e && s < a->end) return true;
      if (a->start == a->end && a->start >= s && a->start < e) return true;
    }
    return false;
  }

  Tick free_from() const {
    Tick t = actor ? actor->available_from : 0;
    for (const auto* a : actions) t = std::max(t, a->end);
    return t;
  }
};

std::map<std::string, Timeline> build_timelines(const Plan& plan, const WorldModel& world) {
  std::map<std::string, Timeline> out;
  for (const auto& [name, actor] : world.actors) out[name].actor = &actor;
  std::vector<const TimedAction*> order;
  for (const auto& a : plan) order.push_back(&a);
  std::stable_sort(order.begin(), order.end(),
                   [](const TimedAction* a, const TimedAction* b) { return a->start < b->start; });
  for (const auto* a : order) {
    for (const auto& p : a->participants()) {
      if (world.is_person(p)) out[p].actions.push_back(a);
    }
  }
  return out;
}

int seats_at(const WorldModel& world, const Timeline& tl, const std::string& person, Tick t) {
  int seats = 0;
  auto it = world.actors.find(person);
  if (it != world.actors.end()) seats = it->second.seats;
  for (const auto* a : tl.actions) {
    if (a->actor == person && a->grants_seats > 0 && a->end <= t) seats = std::max(seats, a->grants_seats);
  }
  return seats;
}

struct Finding {
  std::string action;
  Tick at = 0;
  std::string detail;
};

std::vector<const TimedAction*> with_task(const Plan& plan, const std::string& task) {
  std::vector<const TimedAction*> out;
  for (const auto& a : plan) {
    if (a.task == task) out.push_back(&a);
  }
  return out;
}

std::vector<Finding> check_rule(const PlanRule& rule, const Plan& plan, const WorldModel& world,
                                const std::map<std::string, Timeline>& tls,
                                const std::vector<DisruptionEvent>& disruptions) {
  std::vector<Finding> out;
  const Value& p = rule.params;
  switch (rule.kind) {
    case RuleKind::kDeadline: {
      std::string task = p.at("task").get<std::string>();
      Tick by = clock_field(p, "by", 0);
      bool use_start = p.value("field", "end") == "start";
      auto acts = with_task(plan, task);
      if (acts.empty()) out.push_back({"", by, task + " is not scheduled"});
      for (const auto* a : acts) {
        Tick t = use_start ? a->start : a->end;
        if (t > by) {
          out.push_back({a->id, t, task + " at " + format_clock(t) + " after " + format_clock(by)});
        }
      }
      break;
    }
    case RuleKind::kWindow: {
      std::string loc = p.at("location").get<std::string>();
      OpeningWindow w;
      if (auto it = world.windows.find(loc); it != world.windows.end()) w = it->second;
      if (p.contains("open")) w.open = clock_field(p, "open", 0);
      if (p.contains("close")) w.close = clock_field(p, "close", 0);
      for (const auto& a : plan) {
        if ((a.kind != ActionKind::kTask && a.kind != ActionKind::kPickup) || a.from != loc) continue;
        if (a.task.empty() && a.kind == ActionKind::kPickup) continue;
        if (w.open && a.start < *w.open) {
          out.push_back({a.id, a.start,
                         a.task + " at " + format_clock(a.start) + " before " + loc + " opens " +
                             format_clock(*w.open)});
        }
        if (w.close && a.end > *w.close) {
          out.push_back({a.id, a.start,
                         a.task + " " + format_clock(a.start) + "-" + format_clock(a.end) + " after " +
                             loc + " closes " + format_clock(*w.close)});
        }
      }
      break;
    }
    case RuleKind::kMinDuration: {
      std::string task = p.at("task").get<std::string>();
      Tick need = p.at("minutes").get<Tick>();
      auto acts = with_task(plan, task);
      Tick total = 0;
      for (const auto* a : acts) total += a->end - a->start;
      if (total < need) {
        Tick at = acts.empty() ? 0 : acts.front()->start;
        out.push_back({acts.empty() ? "" : acts.front()->id, at,
                       task + " allocated " + std::to_string(total) + " of " + std::to_string(need) +
                           " min"});
      }
      break;
    }
    case RuleKind::kTravelTime: {
      // Pieces of one split segment are judged together.
      std::map<std::pair<std::string, std::string>, std::vector<const TimedAction*>> groups;
      std::vector<std::vector<const TimedAction*>> singles;
      for (const auto& a : plan) {
        if (a.kind != ActionKind::kTravel) continue;
        if (a.segment.empty()) {
          singles.push_back({&a});
        } else {
          groups[{a.actor, a.segment}].push_back(&a);
        }
      }
      for (auto& [key, g] : groups) singles.push_back(g);
      for (auto& g : singles) {
        std::stable_sort(g.begin(), g.end(),
                         [](const TimedAction* a, const TimedAction* b) { return a->start < b->start; });
        const TimedAction* first = g.front();
        const TimedAction* last = g.back();
        if (last->partial) continue;  // still under way
        Tick actual = last->end - first->start;
        Tick need = effective_travel_time(world, first->from, last->to, first->start, disruptions);
        if (actual < need) {
          out.push_back({first->id, first->start,
                         first->actor + " " + first->from + "->" + last->to + " scheduled " +
                             std::to_string(actual) + " min, needs " + std::to_string(need)});
        }
      }
      break;
    }
    case RuleKind::kSupervision: {
      std::string resource = p.at("resource").get<std::string>();
      std::string loc = p.value("location", "");
      if (loc.empty()) {
        auto it = world.resources.find(resource);
        if (it != world.resources.end()) loc = it->second;
      }
      std::size_t min_people = p.value("min_people", 1);
      for (const auto& a : plan) {
        if (a.actor != resource && a.resource != resource) continue;
        std::optional<Tick> gap_start;
        for (Tick t = a.start; t <= a.end; ++t) {
          std::size_t present = 0;
          if (t < a.end) {
            for (const auto& [name, tl] : tls) {
              if (tl.location_at(t) == loc) ++present;
            }
          }
          bool ok = t == a.end || present >= min_people;
          if (!ok && !gap_start) gap_start = t;
          if (ok && gap_start) {
            out.push_back({a.id, *gap_start,
                           resource + " unattended at " + loc + " " + format_clock(*gap_start) + "-" +
                               format_clock(t)});
            gap_start.reset();
          }
        }
      }
      break;
    }
    case RuleKind::kCapacity: {
      for (const auto& a : plan) {
        if (a.kind != ActionKind::kTravel && a.kind != ActionKind::kPickup) continue;
        if (!world.is_person(a.actor)) continue;
        int seats = seats_at(world, tls.at(a.actor), a.actor, a.start);
        int riders = static_cast<int>(a.participants().size());
        if (seats > 0 && riders > seats) {
          out.push_back({a.id, a.start,
                         std::to_string(riders) + " riders in " + std::to_string(seats) + " seats"});
        }
      }
      break;
    }
    case RuleKind::kNeedsVehicle: {
      for (const auto& a : plan) {
        if (a.kind != ActionKind::kTravel || !world.is_person(a.actor)) continue;
        const Actor& actor = world.actors.at(a.actor);
        if (!actor.can_drive) {
          out.push_back({a.id, a.start, a.actor + " cannot drive"});
        } else if (seats_at(world, tls.at(a.actor), a.actor, a.start) == 0) {
          out.push_back({a.id, a.start, a.actor + " has no vehicle at " + format_clock(a.start)});
        }
      }
      break;
    }
    case RuleKind::kContinuity: {
      for (const auto& [name, tl] : tls) {
        std::string loc = tl.actor ? tl.actor->location : "";
        std::string segment;
        const TimedAction* prev = nullptr;
        for (const auto* a : tl.actions) {
          if (prev && a->start < prev->end) {
            out.push_back({a->id, a->start, name + " in " + prev->id + " and " + a->id + " at once"});
          }
          if (a->kind != ActionKind::kArrive) {
            if (!segment.empty()) {
              if (a->kind != ActionKind::kTravel || a->segment != segment) {
                out.push_back({a->id, a->start, name + " is still travelling on " + segment});
              }
            } else if (!loc.empty() && a->from != loc) {
              out.push_back({a->id, a->start, name + " starts " + a->id + " at " + a->from +
                                                  " but is at " + loc});
            }
          }
          if (a->kind == ActionKind::kTravel) {
            segment = a->partial ? a->segment : std::string();
            loc = a->partial ? std::string() : a->to;
          } else {
            segment.clear();
            loc = a->from;
          }
          if (!prev || a->end >= prev->end) prev = a;
        }
      }
      break;
    }
    case RuleKind::kAvailability: {
      for (const auto& [name, tl] : tls) {
        if (!tl.actor) continue;
        for (const auto* a : tl.actions) {
          if (a->start < tl.actor->available_from) {
            out.push_back({a->id, a->start, name + " not available before " +
                                                format_clock(tl.actor->available_from)});
          }
        }
      }
      break;
    }
    case RuleKind::kGathering: {
      std::string task = p.at("task").get<std::string>();
      std::string loc = p.at("location").get<std::string>();
      std::vector<std::string> persons = string_list(p, "persons");
      if (persons.empty()) {
        for (const auto& [name, a] : world.actors) persons.push_back(name);
      }
      auto acts = with_task(plan, task);
      if (acts.empty()) out.push_back({"", 0, task + " is not scheduled"});
      for (const auto* g : acts) {
        auto parts = g->participants();
        for (const auto& person : persons) {
          bool joins = std::find(parts.begin(), parts.end(), person) != parts.end();
          std::string where = tls.count(person) ? tls.at(person).location_at(g->start, g) : "";
          if (!joins || where != loc) {
            out.push_back({g->id, g->start,
                           person + " not at " + loc + " for " + task + " at " +
                               format_clock(g->start)});
          }
        }
      }
      break;
    }
    case RuleKind::kReadyBy: {
      std::vector<std::string> tasks;
      if (p.contains("tasks")) tasks = p.at("tasks").get<std::vector<std::string>>();
      if (p.contains("task")) tasks.push_back(p.at("task").get<std::string>());
      std::string before = p.at("before").get<std::string>();
      auto later = with_task(plan, before);
      if (later.empty()) {
        out.push_back({"", 0, "no " + before + " scheduled"});
        break;
      }
      Tick begin = kNever;
      for (const auto* a : later) begin = std::min(begin, a->start);
      for (const auto& task : tasks) {
        auto acts = with_task(plan, task);
        if (acts.empty()) out.push_back({"", begin, "no " + task + " before " + before});
        for (const auto* a : acts) {
          if (a->end > begin) {
            out.push_back({a->id, a->start, task + " ends " + format_clock(a->end) + " after " + before +
                                                " starts " + format_clock(begin)});
          }
        }
      }
      break;
    }
  }
  return out;
}

}  // namespace

std::vector<Violation> check_plan_constraints(const Plan& plan, const WorldModel& world,
                                              const std::vector<PlanRule>& rules,
                                              const std::vector<DisruptionEvent>& disruptions) {
  auto tls = build_timelines(plan, world);
  std::vector<Violation> out;
  for (const auto& rule : rules) {
    std::vector<Finding> found;
    try {
      found = check_rule(rule, plan, world, tls, disruptions);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kUnknownLocation || e.code() == ErrorCode::kUnknownPerson) throw;
      found.push_back({"", 0, std::string("malformed rule: ") + e.what()});
    } catch (const std::exception& e) {
      found.push_back({"", 0, std::string("malformed rule: ") + e.what()});
    }
    if (found.empty()) continue;
    std::stable_sort(found.begin(), found.end(),
                     [](const Finding& a, const Finding& b) { return a.at < b.at; });
    Violation v;
    v.rule = rule.id;
    v.kind = rule.kind;
    v.severity = rule.severity;
    v.at = found.front().at;
    for (const auto& f : found) {
      if (!f.action.empty() && std::find(v.actions.begin(), v.actions.end(), f.action) == v.actions.end()) {
        v.actions.push_back(f.action);
      }
      if (!v.detail.empty()) v.detail += "; ";
      v.detail += f.detail;
    }
    out.push_back(std::move(v));
  }
  std::stable_sort(out.begin(), out.end(), [](const Violation& a, const Violation& b) {
    return std::tie(a.at, a.rule) < std::tie(b.at, b.rule);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation and propagation

AugmentationRule augmentation_rule_from_json(const Value& j) {
  AugmentationRule r;
  r.id = j.at("id").get<std::string>();
  r.match_kind = action_kind_from_string(j.value("match_kind", "arrive"));
  for (const auto& s : string_list(j, "match_locations")) r.match_locations.insert(s);
  r.insert_task = j.at("insert_task").get<std::string>();
  r.minutes = j.at("minutes").get<Tick>();
  if (r.minutes < 0) throw Error(ErrorCode::kNegativeInput, "augmentation minutes");
  return r;
}

namespace {

// Single forward pass in plan order. Each action starts no earlier than the
// previous action of each of its people (in plan order) ends.
Plan propagate_impl(const Plan& plan, const WorldModel* world,
                    const std::vector<DisruptionEvent>& disruptions,
                    const std::set<std::string>& pinned) {
  std::vector<std::size_t> order(plan.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return plan[a].start < plan[b].start; });
  Plan out = plan;
  std::map<std::string, Tick> ready;
  if (world) {
    for (const auto& [name, actor] : world->actors) ready[name] = actor.available_from;
  }
  for (std::size_t idx : order) {
    TimedAction& a = out[idx];
    bool hold = a.kind == ActionKind::kArrive || pinned.count(a.id);
    if (!hold) {
      Tick start = a.start;
      for (const auto& p : a.participants()) {
        auto it = ready.find(p);
        if (it != ready.end()) start = std::max(start, it->second);
      }
      Tick duration = a.end - a.start;
      if (a.kind == ActionKind::kTravel && world && !a.partial) {
        duration = std::max(duration, effective_travel_time(*world, a.from, a.to, start, disruptions));
      }
      a.start = start;
      a.end = start + duration;
    }
    for (const auto& p : a.participants()) {
      Tick& r = ready[p];
      r = std::max(r, a.end);
    }
  }
  return out;
}

}  // namespace

Plan propagate(const Plan& plan, const WorldModel& world,
               const std::vector<DisruptionEvent>& disruptions, const std::set<std::string>& pinned) {
  return propagate_impl(plan, &world, disruptions, pinned);
}

Plan augment_common_sense(const Plan& plan, const std::vector<AugmentationRule>& rules) {
  Plan out;
  bool changed = false;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const TimedAction& a = plan[i];
    out.push_back(a);
    for (const auto& rule : rules) {
      if (a.kind != rule.match_kind) continue;
      if (!rule.match_locations.empty() && !rule.match_locations.count(a.to)) continue;
      // Already augmented: an action with the inserted task follows for this actor.
      bool present = std::any_of(plan.begin(), plan.end(), [&](const TimedAction& b) {
        return b.actor == a.actor && b.task == rule.insert_task && b.start == a.end && b.from == a.to;
      });
      if (present) continue;
      TimedAction ins;
      ins.id = a.id + "+" + rule.id;
      ins.actor = a.actor;
      ins.kind = ActionKind::kTask;
      ins.from = ins.to = a.to;
      ins.start = a.end;
      ins.end = a.end + rule.minutes;
      ins.task = rule.insert_task;
      ins.fixed = true;
      out.push_back(ins);
      changed = true;
    }
  }
  if (!changed) return plan;
  return propagate_impl(out, nullptr, {}, {});
}

// ---------------------------------------------------------------------------
// History

SplitPlan split_at(const Plan& plan, const WorldModel& world, Tick tick,
                   const std::vector<DisruptionEvent>& disruptions) {
  SplitPlan out;
  for (const auto& a : plan) {
    if (a.end < tick || (a.end == tick && a.start < tick)) {
      out.history.push_back(a);
      continue;
    }
    if (a.kind == ActionKind::kTravel && a.start < tick && tick < a.end && !a.partial) {
      bool cleared = false;
      Multiplier m(1);
      for (const auto& d : disruptions) {
        if (d.at == tick && d.in_scope(a.from, a.to)) m = d.multiplier;
        if (d.past_hazard.count(a.id)) cleared = true;
      }
      SegmentProgress progress{a.end - a.start, tick - a.start, cleared};
      Tick total = std::max(compensate_segment(progress, m),
                            cleared ? progress.total
                                    : effective_travel_time(world, a.from, a.to, a.start, disruptions));
      if (total != progress.total) {
        std::string seg = a.segment.empty() ? a.id : a.segment;
        TimedAction done = a;
        done.id = a.id + ".a";
        done.end = tick;
        done.segment = seg;
        done.partial = true;
        done.fixed = true;
        TimedAction rest = a;
        rest.id = a.id + ".b";
        rest.start = tick;
        rest.end = a.start + total;
        rest.segment = seg;
        rest.fixed = true;
        out.history.push_back(done);
        out.continuations.push_back(rest);
        out.segments.emplace_back(a.id, progress);
        continue;
      }
    }
    out.pending.push_back(a);
  }
  return out;
}

void check_history_preserved(const Plan& history, const Plan& proposed, const WorldModel& world) {
  std::map<std::string, const TimedAction*> by_id;
  for (const auto& a : proposed) by_id[a.id] = &a;
  std::set<std::string> history_ids;
  for (const auto& h : history) history_ids.insert(h.id);

  // Where each person stands once the history has run.
  struct Resume {
    Tick time = 0;
    std::string location;
    std::string segment;
    std::string since;
  };
  std::map<std::string, Resume> resume;
  Plan sorted = history;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const TimedAction& a, const TimedAction& b) { return a.start < b.start; });
  for (const auto& h : sorted) {
    for (const auto& p : h.participants()) {
      if (!world.is_person(p)) continue;
      Resume& r = resume[p];
      if (h.end < r.time) continue;
      r.time = h.end;
      if (h.kind == ActionKind::kTravel && h.partial) {
        r.location.clear();
        r.segment = h.segment;
        r.since = format_clock(h.start) + " (" + h.from + "->" + h.to + ")";
      } else {
        r.location = h.kind == ActionKind::kTravel ? h.to : h.from;
        r.segment.clear();
      }
    }
  }

  std::vector<const TimedAction*> fresh;
  for (const auto& a : proposed) {
    if (!history_ids.count(a.id)) fresh.push_back(&a);
  }
  std::stable_sort(fresh.begin(), fresh.end(),
                   [](const TimedAction* a, const TimedAction* b) { return a->start < b->start; });
  std::set<std::string> checked;
  for (const auto* a : fresh) {
    for (const auto& p : a->participants()) {
      auto it = resume.find(p);
      if (it == resume.end() || checked.count(p)) continue;
      checked.insert(p);
      const Resume& r = it->second;
      if (a->start < r.time) {
        throw Error(ErrorCode::kRewriteOfPast,
                    p + ": " + a->id + " starts at " + format_clock(a->start) +
                        " before already-executed history ends at " + format_clock(r.time));
      }
      if (!r.segment.empty()) {
        if (a->kind != ActionKind::kTravel || a->segment != r.segment) {
          throw Error(ErrorCode::kRewriteOfPast,
                      p + ": " + a->id + " at " + format_clock(a->start) + " from " + a->from +
                          " while en route since " + r.since);
        }
      } else if (a->kind != ActionKind::kArrive && a->from != r.location) {
        throw Error(ErrorCode::kRewriteOfPast,
                    p + ": " + a->id + " departs " + a->from + " at " + format_clock(a->start) +
                        " but history leaves " + p + " at " + r.location);
      }
    }
  }
  for (const auto& h : history) {
    auto it = by_id.find(h.id);
    if (it == by_id.end()) {
      throw Error(ErrorCode::kRewriteOfPast, "executed action " + h.id + " is missing");
    }
    if (!(*it->second == h)) {
      throw Error(ErrorCode::kRewriteOfPast, "executed action " + h.id + " was altered");
    }
  }
}

// ---------------------------------------------------------------------------
// Rescheduling

Goals goals_from_json(const Value& j) {
  Goals g;
  g.drivers = string_list(j, "drivers");
  for (const auto& r : j.value("rides", Value::array())) g.rides.push_back({r.at("person").get<std::string>()});
  for (const auto& e : j.value("errands", Value::array())) {
    g.errands.push_back({e.at("task").get<std::string>(), e.at("location").get<std::string>(),
                         e.at("minutes").get<Tick>()});
  }
  for (const auto& h : j.value("home_tasks", Value::array())) {
    HomeTask t;
    t.task = h.at("task").get<std::string>();
    t.location = h.at("location").get<std::string>();
    t.minutes = h.at("minutes").get<Tick>();
    t.eligible = string_list(h, "eligible");
    t.min_participants = h.value("min_participants", 1);
    t.not_before = clock_field(h, "not_before", 0);
    t.resource = h.value("resource", "");
    g.home_tasks.push_back(t);
  }
  if (j.contains("gathering")) {
    const Value& gj = j.at("gathering");
    GatheringGoal gg;
    gg.task = gj.at("task").get<std::string>();
    gg.location = gj.at("location").get<std::string>();
    gg.not_before = clock_field(gj, "not_before", 0);
    gg.minutes = gj.value("minutes", 0);
    gg.host = gj.at("host").get<std::string>();
    gg.persons = string_list(gj, "persons");
    g.gathering = gg;
  }
  return g;
}

namespace {

std::size_t hard_count(const std::vector<Violation>& v) {
  return static_cast<std::size_t>(
      std::count_if(v.begin(), v.end(), [](const Violation& x) { return x.severity == Severity::kHard; }));
}

std::vector<Violation> soft_only(const std::vector<Violation>& v) {
  std::vector<Violation> out;
  for (const auto& x : v) {
    if (x.severity == Severity::kSoft) out.push_back(x);
  }
  return out;
}

struct PersonResume {
  Tick time = 0;
  std::string location;
};

PersonResume resume_of(const Plan& plan, const WorldModel& world, const std::string& person) {
  PersonResume r;
  const Actor& actor = world.actors.at(person);
  r.time = actor.available_from;
  r.location = actor.location;
  Tick last = -1;
  for (const auto& a : plan) {
    auto parts = a.participants();
    if (std::find(parts.begin(), parts.end(), person) == parts.end()) continue;
    if (a.end < last) continue;
    last = a.end;
    r.time = std::max(r.time, a.end);
    r.location = a.kind == ActionKind::kTravel ? a.to : a.from;
  }
  return r;
}

struct Candidate {
  Plan added;
  Tick makespan = 0;
  Tick route_minutes = 0;
};

// Builds every person's remaining actions for one driver assignment.
Candidate build_candidate(const WorldModel& world, const Plan& base, const Goals& goals,
                          const std::vector<DisruptionEvent>& disruptions,
                          const std::vector<std::vector<std::size_t>>& routes) {
  Candidate c;
  std::map<std::string, PersonResume> rs;
  for (const auto& [name, a] : world.actors) rs[name] = resume_of(base, world, name);
  std::set<std::string> riders_assigned;
  for (const auto& r : goals.rides) riders_assigned.insert(r.person);

  std::size_t seq = 0;
  auto next_id = [&](const std::string& who, const std::string& what) {
    return "r" + std::to_string(++seq) + "-" + who + "-" + what;
  };

  std::vector<std::string> goal_location;
  for (const auto& r : goals.rides) goal_location.push_back(rs.at(r.person).location);
  for (const auto& e : goals.errands) goal_location.push_back(e.location);
  const std::string dest = goals.gathering ? goals.gathering->location : std::string();

  Tick makespan = 0;
  std::map<std::string, PersonResume> final_pos;
  for (std::size_t d = 0; d < goals.drivers.size(); ++d) {
    const std::string& driver = goals.drivers[d];
    PersonResume pos = rs.at(driver);
    std::vector<std::string> riders;
    auto drive = [&](const std::string& to) {
      if (pos.location == to) return;
      Tick minutes = effective_travel_time(world, pos.location, to, pos.time, disruptions);
      TimedAction t;
      t.id = next_id(driver, "drive");
      t.actor = driver;
      t.kind = ActionKind::kTravel;
      t.from = pos.location;
      t.to = to;
      t.start = pos.time;
      t.end = pos.time + minutes;
      t.passengers = riders;
      c.added.push_back(t);
      c.route_minutes += minutes;
      pos.time = t.end;
      pos.location = to;
      makespan = std::max(makespan, t.end);
    };
    for (std::size_t gi : routes[d]) {
      drive(goal_location[gi]);
      if (gi < goals.rides.size()) {
        const std::string& person = goals.rides[gi].person;
        TimedAction pk;
        pk.id = next_id(driver, "pickup-" + person);
        pk.actor = driver;
        pk.kind = ActionKind::kPickup;
        pk.from = pk.to = pos.location;
        pk.start = pk.end = std::max(pos.time, rs.at(person).time);
        riders.push_back(person);
        pk.passengers = riders;
        c.added.push_back(pk);
        pos.time = pk.end;
        makespan = std::max(makespan, pk.end);
      } else {
        const ErrandGoal& e = goals.errands[gi - goals.rides.size()];
        TimedAction t;
        t.id = next_id(driver, e.task);
        t.actor = driver;
        t.kind = ActionKind::kTask;
        t.from = t.to = pos.location;
        t.start = pos.time;
        if (auto w = world.windows.find(e.location); w != world.windows.end() && w->second.open) {
          t.start = std::max(t.start, *w->second.open);
        }
        t.end = t.start + e.minutes;
        t.task = e.task;
        t.passengers = riders;
        c.added.push_back(t);
        pos.time = t.end;
        makespan = std::max(makespan, t.end);
      }
    }
    if (!dest.empty()) drive(dest);
    final_pos[driver] = pos;
    for (const auto& r : riders) final_pos[r] = pos;
  }
  for (const auto& [name, r] : rs) {
    if (!final_pos.count(name)) final_pos[name] = r;
  }

  // Home tasks go to eligible people who are there and idle.
  Plan so_far = base;
  so_far.insert(so_far.end(), c.added.begin(), c.added.end());
  for (const auto& ht : goals.home_tasks) {
    auto tls = build_timelines(so_far, world);
    Tick horizon = goals.gathering ? std::max(goals.gathering->not_before, ht.not_before) + 12 * 60
                                   : ht.not_before + 12 * 60;
    std::optional<TimedAction> chosen;
    for (Tick s = ht.not_before; s <= horizon && !chosen; s += 5) {
      std::vector<std::string> who;
      for (const auto& person : ht.eligible) {
        if (!tls.count(person)) continue;
        const Timeline& tl = tls.at(person);
        bool there = true;
        for (Tick t = s; t < s + ht.minutes && there; t += 5) {
          if (tl.location_at(t) != ht.location) there = false;
        }
        if (there && !tl.busy(s, s + ht.minutes)) who.push_back(person);
      }
      if (who.size() >= ht.min_participants && !who.empty()) {
        TimedAction t;
        t.id = next_id(who.front(), ht.task);
        t.actor = who.front();
        t.kind = ActionKind::kTask;
        t.from = t.to = ht.location;
        t.start = s;
        t.end = s + ht.minutes;
        t.task = ht.task;
        t.resource = ht.resource;
        t.passengers.assign(who.begin() + 1, who.end());
        chosen = t;
      }
    }
    if (!chosen) {
      TimedAction t;
      t.id = next_id(ht.eligible.empty() ? "nobody" : ht.eligible.front(), ht.task);
      t.actor = ht.eligible.empty() ? goals.drivers.front() : ht.eligible.front();
      t.kind = ActionKind::kTask;
      t.from = t.to = ht.location;
      t.start = ht.not_before;
      t.end = t.start + ht.minutes;
      t.task = ht.task;
      chosen = t;
    }
    c.added.push_back(*chosen);
    so_far.push_back(*chosen);
  }

  if (goals.gathering) {
    const GatheringGoal& g = *goals.gathering;
    std::vector<std::string> persons = g.persons;
    if (persons.empty()) {
      for (const auto& [name, a] : world.actors) persons.push_back(name);
    }
    Tick start = g.not_before;
    auto tls = build_timelines(so_far, world);
    for (const auto& p : persons) {
      if (tls.count(p)) start = std::max(start, tls.at(p).free_from());
    }
    TimedAction t;
    t.id = next_id(g.host, g.task);
    t.actor = g.host;
    t.kind = ActionKind::kTask;
    t.from = t.to = g.location;
    t.start = start;
    t.end = start + g.minutes;
    t.task = g.task;
    for (const auto& p : persons) {
      if (p != g.host) t.passengers.push_back(p);
    }
    c.added.push_back(t);
  }
  c.makespan = makespan;
  return c;
}

// Calls `visit` with every assignment of goals to drivers and every visiting
// order per driver.
void enumerate_routes(std::size_t drivers, std::size_t goals,
                      const std::function<void(const std::vector<std::vector<std::size_t>>&)>& visit) {
  std::vector<std::size_t> owner(goals, 0);
  for (;;) {
    std::vector<std::vector<std::size_t>> routes(drivers);
    for (std::size_t g = 0; g < goals; ++g) routes[owner[g]].push_back(g);
    // Odometer over per-driver permutations.
    std::function<void(std::size_t)> perm = [&](std::size_t d) {
      if (d == drivers) {
        visit(routes);
        return;
      }
      std::sort(routes[d].begin(), routes[d].end());
      do {
        perm(d + 1);
      } while (std::next_permutation(routes[d].begin(), routes[d].end()));
    };
    perm(0);
    std::size_t i = 0;
    while (i < goals && ++owner[i] == drivers) owner[i++] = 0;
    if (i == goals) break;
  }
}

}  // namespace

RescheduleResult reactive_reschedule(const WorldModel& world_in, const Plan& plan,
                                     const DisruptionEvent& disruption, const Goals& goals,
                                     const std::vector<PlanRule>& rules,
                                     const std::vector<DisruptionEvent>& prior) {
  WorldModel world = world_in;
  std::vector<DisruptionEvent> disruptions = prior;
  if (disruption.kind == DisruptionEvent::Kind::kTravelMultiplier) disruptions.push_back(disruption);

  Plan source = plan;
  if (disruption.kind == DisruptionEvent::Kind::kDelay) {
    auto it = std::find_if(source.begin(), source.end(),
                           [&](const TimedAction& a) { return a.id == disruption.action; });
    if (it == source.end()) {
      throw Error(ErrorCode::kInvalidInput, "delay names unknown action " + disruption.action);
    }
    if (it->end <= disruption.at && it->start < disruption.at) {
      throw Error(ErrorCode::kRewriteOfPast, "delay of already-executed action " + it->id);
    }
  }

  SplitPlan split = split_at(source, world, disruption.at, disruptions);
  std::set<std::string> pinned;
  for (const auto& a : split.continuations) pinned.insert(a.id);
  for (auto& a : split.pending) {
    if (a.start < disruption.at) pinned.insert(a.id);
    if (disruption.kind == DisruptionEvent::Kind::kDelay && a.id == disruption.action) {
      Tick delta = disruption.new_start - a.start;
      a.start += delta;
      a.end += delta;
      pinned.insert(a.id);
      if (a.kind == ActionKind::kArrive && world.is_person(a.actor)) {
        world.actors[a.actor].available_from = a.start;
      }
    }
  }

  RescheduleResult result;
  result.history = split.history;
  result.segments = split.segments;

  auto finish = [&](Plan remaining, std::string strategy) {
    Plan full = split.history;
    full.insert(full.end(), remaining.begin(), remaining.end());
    result.plan = canonical(std::move(full));
    result.strategy = std::move(strategy);
    for (const auto& a : remaining) {
      if (a.kind == ActionKind::kTravel) result.route_minutes += a.end - a.start;
      if (a.kind == ActionKind::kTravel || a.kind == ActionKind::kPickup) {
        result.makespan = std::max(result.makespan, a.end);
      }
    }
    check_history_preserved(result.history, result.plan, world);
    return result;
  };

  // Strategy 1: keep every pending action, retimed.
  Plan kept = split.continuations;
  kept.insert(kept.end(), split.pending.begin(), split.pending.end());
  kept = propagate(kept, world, disruptions, pinned);
  {
    Plan full = split.history;
    full.insert(full.end(), kept.begin(), kept.end());
    auto v = check_plan_constraints(full, world, rules, disruptions);
    if (hard_count(v) == 0) {
      result.soft_violations = soft_only(v);
      bool same = canonical(full) == canonical(plan);
      return finish(kept, same ? "unchanged" : "retime");
    }
  }

  // Strategy 2: cancel movable actions, reassign goals.
  Plan fixed = split.continuations;
  for (const auto& a : split.pending) {
    if (a.fixed || pinned.count(a.id) || a.kind == ActionKind::kArrive || !world.is_person(a.actor)) {
      fixed.push_back(a);
    } else {
      result.cancelled.push_back(a.id);
    }
  }
  fixed = propagate(fixed, world, disruptions, pinned);
  Plan base = split.history;
  base.insert(base.end(), fixed.begin(), fixed.end());

  if (goals.drivers.empty()) {
    auto v = check_plan_constraints(base, world, rules, disruptions);
    std::string blocking;
    for (const auto& x : v) blocking += (blocking.empty() ? "" : ", ") + x.rule;
    throw Error(ErrorCode::kInfeasible, "no drivers to reassign; blocking: " + blocking);
  }

  std::size_t goal_count = goals.rides.size() + goals.errands.size();
  std::optional<Candidate> best;
  std::optional<std::vector<Violation>> least;
  enumerate_routes(goals.drivers.size(), goal_count, [&](const auto& routes) {
    Candidate c = build_candidate(world, base, goals, disruptions, routes);
    Plan full = base;
    full.insert(full.end(), c.added.begin(), c.added.end());
    auto v = check_plan_constraints(full, world, rules, disruptions);
    if (hard_count(v) == 0) {
      if (!best || std::tie(c.makespan, c.route_minutes) < std::tie(best->makespan, best->route_minutes)) {
        best = c;
        result.soft_violations = soft_only(v);
      }
    } else if (!least || hard_count(v) < hard_count(*least)) {
      least = v;
    }
  });
  if (!best) {
    std::string blocking;
    if (least) {
      for (const auto& x : *least) {
        if (x.severity == Severity::kHard) blocking += (blocking.empty() ? "" : ", ") + x.rule;
      }
    }
    throw Error(ErrorCode::kInfeasible, "no assignment satisfies the hard rules; blocking: " + blocking);
  }
  Plan remaining = fixed;
  remaining.insert(remaining.end(), best->added.begin(), best->added.end());
  RescheduleResult r = finish(remaining, "reassign");
  r.makespan = best->makespan;
  r.route_minutes = best->route_minutes;
  return r;
}

}  // namespace saga::planning
