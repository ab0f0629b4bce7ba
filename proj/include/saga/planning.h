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

#ifndef SAGA_PLANNING_H_
#define SAGA_PLANNING_H_

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <boost/rational.hpp>

#include "saga/common.h"
#include "saga/state_model.h"

namespace saga::planning {

// Travel-time multiplier M.
using Multiplier = boost::rational<std::int64_t>;

Multiplier parse_multiplier(const Value& j);  // 3, "3", "5/2", 2.5
Value multiplier_json(const Multiplier& m);

// ---------------------------------------------------------------------------
// World model

struct Actor {
  std::string name;
  bool can_drive = false;
  int seats = 0;  // own vehicle seats including the driver; 0 = no vehicle
  bool needs_ride = false;
  std::string location;  // where the actor is at `available_from`
  Tick available_from = 0;
};

struct OpeningWindow {
  std::optional<Tick> open;
  std::optional<Tick> close;
};

struct WorldModel {
  std::set<std::string> locations;
  std::map<std::pair<std::string, std::string>, int> travel;  // both orders
  std::map<std::string, Actor> actors;                        // persons
  std::map<std::string, std::string> resources;               // name -> location
  std::map<std::string, OpeningWindow> windows;               // per location

  void add_route(const std::string& a, const std::string& b, int minutes);
  // Throws Error(kUnknownLocation).
  int travel_minutes(const std::string& from, const std::string& to) const;
  bool is_person(const std::string& name) const { return actors.count(name) != 0; }
  bool is_resource(const std::string& name) const { return resources.count(name) != 0; }

  // Positive, symmetric, windows well-ordered. Throws Error(kInvalidInput).
  void check() const;
};

WorldModel world_from_json(const Value& j);
Value world_to_json(const WorldModel& w);

// ---------------------------------------------------------------------------
// Plans

enum class ActionKind { kTravel, kPickup, kTask, kWait, kArrive };

std::string_view to_string(ActionKind k);
ActionKind action_kind_from_string(std::string_view s);

// One step of a plan. Travel moves `actor` and `passengers` from `from` to
// `to`; every other kind happens at `from` (== `to`). For tasks,
// `passengers` lists co-participants.
struct TimedAction {
  std::string id;
  std::string actor;
  ActionKind kind = ActionKind::kTask;
  std::string from;
  std::string to;
  Tick start = 0;
  Tick end = 0;
  std::vector<std::string> passengers;
  std::string task;
  std::string resource;
  std::string segment;  // shared by the pieces of a split travel segment
  bool fixed = false;   // the rescheduler may retime but never cancel it
  int grants_seats = 0; // a task that hands the actor a vehicle (car rental)

  bool partial = false; // executed piece that stopped short of `to`

  const std::string& location() const { return from; }
  std::vector<std::string> participants() const;
  friend bool operator==(const TimedAction&, const TimedAction&) = default;
};

using Plan = std::vector<TimedAction>;

void to_json(Value& j, const TimedAction& a);
void from_json(const Value& j, TimedAction& a);

// Canonical order: start, end, actor, id.
Plan canonical(Plan plan);
std::string render_plan(const Plan& plan);

// ---------------------------------------------------------------------------
// Disruptions and segment compensation

struct DisruptionEvent {
  enum class Kind { kTravelMultiplier, kDelay };
  Kind kind = Kind::kTravelMultiplier;
  Tick at = 0;
  std::set<std::string> scope;  // travel touching any of these locations
  Multiplier multiplier{1};
  std::string action;           // kDelay: the action that moves
  Tick new_start = 0;           // kDelay
  std::set<std::string> past_hazard;  // travel actions already clear of the hazard
  std::string description;

  bool in_scope(const std::string& from, const std::string& to) const;
};

DisruptionEvent disruption_from_json(const Value& j);
Value disruption_to_json(const DisruptionEvent& d);

struct SegmentProgress {
  Tick total = 0;    // scheduled minutes
  Tick elapsed = 0;  // minutes travelled before the disruption
  bool past_hazard = false;
};

// T_new = T_elapsed + M * max(0, T_total - T_elapsed), rounded up to whole
// minutes. A segment already past the hazard keeps T_total. Throws
// Error(kNegativeInput) on negative minutes or M <= 0.
Tick compensate_segment(const SegmentProgress& p, const Multiplier& m);

// Minutes to travel from -> to departing at `depart`, with minutes after
// each in-scope travel-multiplier disruption accrued at rate 1/M.
Tick effective_travel_time(const WorldModel& world, const std::string& from,
                           const std::string& to, Tick depart,
                           const std::vector<DisruptionEvent>& disruptions);

// ---------------------------------------------------------------------------
// Constraint checking

enum class RuleKind {
  kDeadline,      // {task, by, field: start|end}; missing task violates
  kWindow,        // {location[, open, close]}: tasks there inside the window
  kMinDuration,   // {task, minutes}
  kTravelTime,    // travel at least the effective travel time
  kSupervision,   // {resource, location, min_people}
  kCapacity,      // riders within vehicle seats
  kContinuity,    // no bilocation; departures from the current location
  kAvailability,  // no action before a person is available
  kGathering,     // {task, location, persons}: everyone present at start
  kReadyBy,       // {task, before}: task ends before `before` starts
  kNeedsVehicle,  // drivers need a vehicle
};

std::string_view to_string(RuleKind k);
RuleKind rule_kind_from_string(std::string_view s);

struct PlanRule {
  std::string id;
  RuleKind kind = RuleKind::kDeadline;
  Severity severity = Severity::kHard;
  Value params = Value::object();
  std::string description;
};

PlanRule plan_rule_from_json(const Value& j);
Value plan_rule_to_json(const PlanRule& r);

struct Violation {
  std::string rule;
  RuleKind kind = RuleKind::kDeadline;
  Severity severity = Severity::kHard;
  std::vector<std::string> actions;  // offending action ids
  Tick at = 0;                       // earliest offending time
  std::string detail;
};

Value violation_to_json(const Violation& v);

// One aggregated violation per broken rule, ordered by time then rule id.
std::vector<Violation> check_plan_constraints(const Plan& plan, const WorldModel& world,
                                              const std::vector<PlanRule>& rules,
                                              const std::vector<DisruptionEvent>& disruptions = {});

// Throws Error(kUnknownPerson / kUnknownLocation) for dangling references.
void check_plan_references(const Plan& plan, const WorldModel& world);

// Where a person is: at a location, or travelling on a segment.
struct PersonState {
  std::string location;  // empty while travelling or before arrival
  std::string segment;   // non-empty while mid-way through a split segment
  Tick time = 0;         // when the state began
};

// ---------------------------------------------------------------------------
// Common-sense augmentation

struct AugmentationRule {
  std::string id;
  ActionKind match_kind = ActionKind::kArrive;
  std::set<std::string> match_locations;  // empty = any
  std::string insert_task;
  Tick minutes = 0;
};

AugmentationRule augmentation_rule_from_json(const Value& j);

// Inserts the configured action after each matching action and shifts
// downstream actions of the same people forward.
Plan augment_common_sense(const Plan& plan, const std::vector<AugmentationRule>& rules);

// Moves every action to max(scheduled start, participants ready), keeping
// durations; travel keeps at least its effective time. Arrivals and
// actions in `pinned` never move.
Plan propagate(const Plan& plan, const WorldModel& world,
               const std::vector<DisruptionEvent>& disruptions,
               const std::set<std::string>& pinned = {});

// ---------------------------------------------------------------------------
// Reactive rescheduling

struct SplitPlan {
  Plan history;        // ended by the tick, plus executed pieces of in-flight travel
  Plan continuations;  // the compensated remainder of in-flight travel
  Plan pending;        // everything else
  std::vector<std::pair<std::string, SegmentProgress>> segments;  // split segments
};

// Splits `plan` at `tick`. Travel in progress whose effective time changes
// under `disruptions` is split into an executed piece and a continuation.
SplitPlan split_at(const Plan& plan, const WorldModel& world, Tick tick,
                   const std::vector<DisruptionEvent>& disruptions);

// Throws Error(kRewriteOfPast) unless `proposed` keeps every action of
// `history` verbatim and each actor's new actions start no earlier than,
// and from where, their history leaves them.
void check_history_preserved(const Plan& history, const Plan& proposed, const WorldModel& world);

struct RideGoal {
  std::string person;
};

struct ErrandGoal {
  std::string task;
  std::string location;
  Tick minutes = 0;
};

struct HomeTask {
  std::string task;
  std::string location;
  Tick minutes = 0;
  std::vector<std::string> eligible;
  std::size_t min_participants = 1;
  Tick not_before = 0;
  std::string resource;
};

struct GatheringGoal {
  std::string task;
  std::string location;
  Tick not_before = 0;
  Tick minutes = 0;
  std::string host;
  std::vector<std::string> persons;  // empty = every person
};

struct Goals {
  std::vector<std::string> drivers;
  std::vector<RideGoal> rides;
  std::vector<ErrandGoal> errands;
  std::vector<HomeTask> home_tasks;
  std::optional<GatheringGoal> gathering;
};

Goals goals_from_json(const Value& j);

struct RescheduleResult {
  Plan plan;      // history + new actions, canonical order
  Plan history;
  std::string strategy;  // "unchanged", "retime" or "reassign"
  std::vector<std::string> cancelled;
  std::vector<std::pair<std::string, SegmentProgress>> segments;
  Tick makespan = 0;
  Tick route_minutes = 0;
  std::vector<Violation> soft_violations;
};

// Keeps history, compensates in-flight travel, then either retimes the
// remaining plan or cancels its movable actions and reassigns goals to
// drivers, minimising (makespan, total route minutes). Throws
// Error(kInfeasible) naming the blocking rules.
RescheduleResult reactive_reschedule(const WorldModel& world, const Plan& plan,
                                     const DisruptionEvent& disruption, const Goals& goals,
                                     const std::vector<PlanRule>& rules,
                                     const std::vector<DisruptionEvent>& prior = {});

}  // namespace saga::planning

#endif  // SAGA_PLANNING_H_
