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

#ifndef SAGA_AGENTS_H_
#define SAGA_AGENTS_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "saga/common.h"

namespace saga::agents {

enum class AgentKind { kFlight, kHotel, kTrain, kBudget, kItinerary };

std::string_view to_string(AgentKind k);
AgentKind agent_kind_from_string(std::string_view s);
const std::vector<AgentKind>& all_agent_kinds();

struct AgentSchema {
  AgentKind kind = AgentKind::kFlight;
  std::vector<std::string> input_fields;
  std::vector<std::string> output_fields;
  std::vector<std::string> internal_state_fields;
};

const AgentSchema& agent_schema(AgentKind kind);

// Field that carries booked/cancelled for a booking agent.
std::string status_field(AgentKind kind);

// Required fields present and values well-formed (dates ordered, amounts
// non-negative). Throws Error(kInvalidInput).
void check_inputs(AgentKind kind, const Value& inputs);

// Seeded provider tables. Rows are plain JSON objects:
//   flights  {flight_number, airline, origin, destination, date, departure_time,
//             arrival_date, arrival_time, stops, price_cents, seats, policy}
//   hotels   {name, city, stars, nightly_cents, amenities, minutes_to_station, policy}
//   trains   {train_number, from, to, departure_time, duration_minutes, price_cents,
//             pass_price_cents, transfers, policy}
struct BookingCatalog {
  std::uint64_t seed = 0;
  std::vector<Value> flights;
  std::vector<Value> hotels;
  std::vector<Value> trains;
  std::map<std::string, int> refund_percent;   // cancellation policy -> percent refunded
  std::map<std::uint64_t, ErrorCode> failures; // request index -> scripted error
  std::uint64_t requests = 0;                  // execute_agent calls so far
  std::map<std::string, Value> served;         // idempotency key -> recorded answer

  // June 2025 inventory for the SFO / Berlin / Cologne trip.
  static BookingCatalog generate(std::uint64_t seed);
  int refund_for(const std::string& policy) const;
};

Value catalog_to_json(const BookingCatalog& c);
BookingCatalog catalog_from_json(const Value& j);

struct AgentResult {
  Value outputs = Value::object();
  Value internal_state = Value::object();
};

// Runs one booking/planning request against the catalog. Scripted failures
// fire by request index before anything is reserved. Throws
// Error(kProviderUnavailable / kNoInventory / kInvalidInput).
AgentResult execute_agent(AgentKind kind, const Value& inputs, BookingCatalog& catalog);

// Same, but a request repeating an earlier key gets the recorded answer
// (result or error) back without reaching inventory or the failure script.
AgentResult execute_agent(AgentKind kind, const Value& inputs, BookingCatalog& catalog, const std::string& key);

// Patch that cancels a booking. Flights and hotels refund the recorded
// payment; trains refund per their recorded refund policy.
//   {internal_state: {<status field>: "cancelled", booking_reference: null},
//    refund_cents, flags}
// An already-cancelled booking yields {}. Throws Error(kNothingToCompensate)
// for any other status, and for agents without reservations.
Value compensate_agent(AgentKind kind, const Value& internal_state);

// Merges `patch["internal_state"]` into an internal state.
Value apply_state_patch(const Value& internal_state, const Value& patch);

// Budget tracking.
struct ExpenseLedger {
  Cents limit = 0;
  Cents cumulative = 0;
  std::vector<Value> log;  // {transaction_id, expense_item, category, cost}

  friend bool operator==(const ExpenseLedger&, const ExpenseLedger&) = default;
};

struct BudgetUpdate {
  ExpenseLedger ledger;
  Value outputs = Value::object();  // updated_total, remaining_budget, budget_status, expense_breakdown
};

// item: {expense_item, cost, category, transaction_id}. Negative cost throws
// Error(kNegativeInput); use refund_expense for adjustments.
BudgetUpdate track_budget(const ExpenseLedger& ledger, const Value& item);
// Negative adjustment of `amount` against a recorded transaction.
BudgetUpdate refund_expense(const ExpenseLedger& ledger, const std::string& transaction_id,
                            Cents amount);
Value ledger_internal_state(const ExpenseLedger& ledger);

}  // namespace saga::agents

#endif  // SAGA_AGENTS_H_
