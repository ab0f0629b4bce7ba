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
#include <random>

#include "saga/agents.h"

namespace saga::agents {
namespace {

using Fields = std::vector<std::string>;

TEST(Schemas, FieldListsAreExact) {
  const auto& f = agent_schema(AgentKind::kFlight);
  EXPECT_EQ(f.input_fields, (Fields{"travel_dates", "budget_limit", "airline_preferences", "passenger_details"}));
  EXPECT_EQ(f.output_fields, (Fields{"flight_details", "confirmation_number", "total_cost", "cancellation_policy"}));
  EXPECT_EQ(f.internal_state_fields, (Fields{"reservation_status", "booking_reference", "payment"}));

  const auto& h = agent_schema(AgentKind::kHotel);
  EXPECT_EQ(h.input_fields,
            (Fields{"checkin_date", "checkout_date", "location_constraints", "amenity_preferences", "budget_limit"}));
  EXPECT_EQ(h.output_fields,
            (Fields{"hotel_details", "room_type", "confirmation_number", "total_cost", "cancellation_policy"}));
  EXPECT_EQ(h.internal_state_fields, (Fields{"reservation_status", "booking_reference", "payment"}));

  const auto& t = agent_schema(AgentKind::kTrain);
  EXPECT_EQ(t.input_fields,
            (Fields{"departure_location", "arrival_location", "travel_time", "connection_requirements"}));
  EXPECT_EQ(t.output_fields, (Fields{"train_details", "seat_res", "total_cost", "schedule_details"}));
  EXPECT_EQ(t.internal_state_fields, (Fields{"ticket_status", "booking_reference", "refund_policy"}));

  const auto& b = agent_schema(AgentKind::kBudget);
  EXPECT_EQ(b.input_fields, (Fields{"expense_item", "cost", "category", "transaction_id"}));
  EXPECT_EQ(b.output_fields, (Fields{"updated_total", "remaining_budget", "budget_status", "expense_breakdown"}));
  EXPECT_EQ(b.internal_state_fields, (Fields{"cumulative_expenses", "expense_log", "constraints"}));

  const auto& i = agent_schema(AgentKind::kItinerary);
  EXPECT_EQ(i.input_fields, (Fields{"user_prefs", "travel_constraints", "confirmations"}));
  EXPECT_EQ(i.output_fields, (Fields{"optimized_itinerary", "timing_schedule", "activity_recommendations"}));
  EXPECT_EQ(i.internal_state_fields, (Fields{"preference_history", "optimization_parameters", "constraint_violations"}));
}

Value flight_request(Cents budget = 500000) {
  return {{"travel_dates", {{"origin", "SFO"}, {"destination", "BER"}, {"earliest", "2025-06-02"}, {"latest", "2025-06-04"}}},
          {"budget_limit", budget},
          {"airline_preferences", {"Lufthansa"}},
          {"passenger_details", {{"count", 1}}}};
}

// Preferred airline first, then fewest stops, then price, then date.
const Value* oracle_flight(const BookingCatalog& c, const Value& req) {
  std::vector<const Value*> rows;
  const auto& d = req.at("travel_dates");
  for (const auto& f : c.flights) {
    if (f.at("origin") != d.at("origin") || f.at("destination") != d.at("destination")) continue;
    std::string date = f.at("date");
    if (date < d.at("earliest").get<std::string>() || date > d.at("latest").get<std::string>()) continue;
    if (f.at("seats").get<int>() < 1 || f.at("price_cents").get<Cents>() > req.at("budget_limit").get<Cents>()) continue;
    rows.push_back(&f);
  }
  if (rows.empty()) return nullptr;
  auto pref = [&](const Value* f) {
    const auto& p = req.at("airline_preferences");
    return std::find(p.begin(), p.end(), f->at("airline")) == p.end();
  };
  std::sort(rows.begin(), rows.end(), [&](const Value* a, const Value* b) {
    return std::make_tuple(pref(a), a->at("stops").get<int>(), a->at("price_cents").get<Cents>(),
                           a->at("date").get<std::string>(), a->at("flight_number").get<std::string>()) <
           std::make_tuple(pref(b), b->at("stops").get<int>(), b->at("price_cents").get<Cents>(),
                           b->at("date").get<std::string>(), b->at("flight_number").get<std::string>());
  });
  return rows.front();
}

TEST(Flight, CostComesFromCatalogRow) {
  for (std::uint64_t seed : {1u, 7u, 42u, 2025u}) {
    auto cat = BookingCatalog::generate(seed);
    auto req = flight_request();
    const Value* row = oracle_flight(cat, req);
    ASSERT_NE(row, nullptr);
    auto r = execute_agent(AgentKind::kFlight, req, cat);
    EXPECT_EQ(r.outputs.at("total_cost"), row->at("price_cents")) << seed;
    EXPECT_EQ(r.outputs.at("flight_details").at("flight_number"), row->at("flight_number"));
    for (const auto& f : agent_schema(AgentKind::kFlight).output_fields) EXPECT_TRUE(r.outputs.contains(f)) << f;
    EXPECT_EQ(r.internal_state.at("reservation_status"), "booked");
    EXPECT_EQ(r.internal_state.at("payment").at("amount_cents"), row->at("price_cents"));
  }
}

TEST(Flight, TinyBudgetHasNoInventory) {
  auto cat = BookingCatalog::generate(1);
  try {
    execute_agent(AgentKind::kFlight, flight_request(100), cat);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoInventory);
  }
}

TEST(Hotel, CheckoutBeforeCheckinIsRejected) {
  auto cat = BookingCatalog::generate(1);
  Value req = {{"checkin_date", "2025-06-05"},
               {"checkout_date", "2025-06-03"},
               {"location_constraints", {{"city", "Berlin"}}},
               {"amenity_preferences", Value::array()},
               {"budget_limit", 100000}};
  try {
    execute_agent(AgentKind::kHotel, req, cat);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidInput);
  }
  EXPECT_EQ(cat.requests, 0u);
}

TEST(Catalog, ScriptedFailureLeavesNothingBooked) {
  auto cat = BookingCatalog::generate(3);
  cat.failures[1] = ErrorCode::kProviderUnavailable;
  execute_agent(AgentKind::kFlight, flight_request(), cat);
  try {
    execute_agent(AgentKind::kFlight, flight_request(), cat);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProviderUnavailable);
  }
  EXPECT_EQ(cat.requests, 2u);
  EXPECT_NO_THROW(execute_agent(AgentKind::kFlight, flight_request(), cat));
}

TEST(Catalog, RepeatedKeyGetsTheRecordedAnswer) {
  auto cat = BookingCatalog::generate(3);
  cat.failures[1] = ErrorCode::kProviderUnavailable;
  auto first = execute_agent(AgentKind::kFlight, flight_request(), cat, "T1/a");
  auto again = execute_agent(AgentKind::kFlight, flight_request(), cat, "T1/a");
  EXPECT_EQ(first.outputs, again.outputs);
  EXPECT_EQ(cat.requests, 1u);
  EXPECT_THROW(execute_agent(AgentKind::kFlight, flight_request(), cat, "T2/b"), Error);
  try {
    execute_agent(AgentKind::kFlight, flight_request(), cat, "T2/b");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProviderUnavailable);
    EXPECT_EQ(std::string(e.what()).rfind("ProviderUnavailable: scripted", 0), 0u);
  }
  EXPECT_EQ(cat.requests, 2u);
  EXPECT_EQ(catalog_to_json(catalog_from_json(catalog_to_json(cat))), catalog_to_json(cat));
}

TEST(Catalog, DeterministicForSeed) {
  auto a = BookingCatalog::generate(11);
  auto b = BookingCatalog::generate(11);
  EXPECT_EQ(catalog_to_json(a), catalog_to_json(b));
  EXPECT_EQ(catalog_to_json(catalog_from_json(catalog_to_json(a))), catalog_to_json(a));
  for (const auto& f : a.flights) EXPECT_GE(f.at("price_cents").get<Cents>(), 0);
  for (const auto& h : a.hotels) EXPECT_GE(h.at("nightly_cents").get<Cents>(), 0);
  auto ra = execute_agent(AgentKind::kFlight, flight_request(), a);
  auto rb = execute_agent(AgentKind::kFlight, flight_request(), b);
  EXPECT_EQ(ra.outputs, rb.outputs);
  EXPECT_EQ(ra.internal_state, rb.internal_state);
}

TEST(Compensation, FlightRefundsPaymentAndFlagsDependents) {
  auto cat = BookingCatalog::generate(5);
  auto r = execute_agent(AgentKind::kFlight, flight_request(), cat);
  auto patch = compensate_agent(AgentKind::kFlight, r.internal_state);
  EXPECT_EQ(patch.at("refund_cents"), r.internal_state.at("payment").at("amount_cents"));
  auto after = apply_state_patch(r.internal_state, patch);
  EXPECT_EQ(after.at("reservation_status"), "cancelled");
  EXPECT_TRUE(after.at("booking_reference").is_null());
  EXPECT_EQ(patch.at("flags"), Value({"reevaluate-hotel", "reevaluate-train"}));
  EXPECT_EQ(compensate_agent(AgentKind::kFlight, after), Value::object());
}

TEST(Compensation, TrainRaisesRecalculationFlag) {
  auto cat = BookingCatalog::generate(5);
  Value req = {{"departure_location", "Berlin"},
               {"arrival_location", "Cologne"},
               {"travel_time", {{"date", "2025-06-07"}, {"earliest", "09:00"}}},
               {"connection_requirements", {{"max_transfers", 1}}}};
  auto r = execute_agent(AgentKind::kTrain, req, cat);
  EXPECT_EQ(r.internal_state.at("ticket_status"), "booked");
  auto patch = compensate_agent(AgentKind::kTrain, r.internal_state);
  EXPECT_EQ(patch.at("flags"), Value({"recalculate-travel-times"}));
  const auto& p = r.internal_state.at("refund_policy");
  EXPECT_EQ(patch.at("refund_cents").get<Cents>(),
            p.at("paid_cents").get<Cents>() * p.at("refund_percent").get<int>() / 100);
}

TEST(Compensation, OnlyBookedReservationsCompensate) {
  try {
    compensate_agent(AgentKind::kHotel, {{"reservation_status", "pending"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNothingToCompensate);
  }
  EXPECT_THROW(compensate_agent(AgentKind::kBudget, Value::object()), Error);
}

Value item(const std::string& id, Cents cost) {
  return {{"expense_item", id}, {"cost", cost}, {"category", "transport"}, {"transaction_id", id}};
}

TEST(Budget, ArithmeticAtTheLimit) {
  ExpenseLedger l{500000, 480000, {}};
  auto ok = track_budget(l, item("a", 10000));
  EXPECT_EQ(ok.outputs.at("remaining_budget"), 10000);
  EXPECT_EQ(ok.outputs.at("budget_status"), "ok");
  EXPECT_EQ(ok.ledger.cumulative, 490000);
  auto over = track_budget(l, item("b", 30000));
  EXPECT_EQ(over.outputs.at("budget_status"), "over-budget");
  try {
    track_budget(l, item("c", -1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNegativeInput);
  }
}

TEST(Budget, RefundRestoresRemaining) {
  std::mt19937 rng(3);
  for (int i = 0; i < 200; ++i) {
    ExpenseLedger l{500000, static_cast<Cents>(rng() % 400000), {}};
    Cents before = l.limit - l.cumulative;
    Cents cost = static_cast<Cents>(rng() % 150000);
    auto added = track_budget(l, item("tx", cost));
    auto back = refund_expense(added.ledger, "tx", cost);
    EXPECT_EQ(back.outputs.at("remaining_budget").get<Cents>(), before);
    EXPECT_EQ(back.ledger.cumulative, l.cumulative);
  }
}

// execute then compensate, repeated over random seeds: every refund equals
// what was charged
TEST(Compensation, RoundTripOverRandomDraws) {
  std::mt19937 rng(99);
  for (int i = 0; i < 50; ++i) {
    auto cat = BookingCatalog::generate(rng());
    ExpenseLedger l{500000, 0, {}};
    auto r = execute_agent(AgentKind::kFlight, flight_request(), cat);
    Cents cost = r.outputs.at("total_cost").get<Cents>();
    auto charged = track_budget(l, item("T1", cost));
    auto patch = compensate_agent(AgentKind::kFlight, r.internal_state);
    auto refunded = refund_expense(charged.ledger, "T1", patch.at("refund_cents").get<Cents>());
    EXPECT_EQ(refunded.ledger.cumulative, l.cumulative);
  }
}

}  // namespace
}  // namespace saga::agents
