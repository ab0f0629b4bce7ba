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

#include "saga/agents.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>
#include <tuple>

namespace saga::agents {

namespace {

const std::map<AgentKind, std::string_view>& kind_names() {
  static const std::map<AgentKind, std::string_view> names = {
      {AgentKind::kFlight, "flight"},
      {AgentKind::kHotel, "hotel"},
      {AgentKind::kTrain, "train"},
      {AgentKind::kBudget, "budget"},
      {AgentKind::kItinerary, "itinerary"},
  };
  return names;
}

// Days since epoch for "YYYY-MM-DD".
int parse_date(const Value& v, const std::string& what) {
  if (!v.is_string()) throw Error(ErrorCode::kInvalidInput, what + " must be a YYYY-MM-DD string");
  int y = 0;
  unsigned m = 0, d = 0;
  if (std::sscanf(v.get<std::string>().c_str(), "%d-%u-%u", &y, &m, &d) != 3) {
    throw Error(ErrorCode::kInvalidInput, what + ": bad date " + v.get<std::string>());
  }
  std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw Error(ErrorCode::kInvalidInput, what + ": bad date " + v.get<std::string>());
  return std::chrono::sys_days{ymd}.time_since_epoch().count();
}

std::string format_date(int days) {
  std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{days}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

Cents cents_field(const Value& j, const std::string& key) {
  const Value& v = j.at(key);
  if (!v.is_number_integer()) throw Error(ErrorCode::kInvalidInput, key + " must be integer cents");
  Cents c = v.get<Cents>();
  if (c < 0) throw Error(ErrorCode::kNegativeInput, key + " is negative");
  return c;
}

// Short stable reference derived from the request, not from call order, so a
// re-executed request after recovery books the same reference.
std::string reference(std::string_view prefix, std::uint64_t seed, const Value& inputs) {
  std::uint64_t h = fnv1a(inputs.dump(), fnv1a(std::to_string(seed)));
  return std::string(prefix) + "-" + digest_hex(h).substr(0, 8);
}

bool contains(const Value& list, const std::string& s) {
  if (!list.is_array()) return false;
  return std::any_of(list.begin(), list.end(), [&](const Value& x) { return x == s; });
}

void maybe_fail(BookingCatalog& catalog) {
  std::uint64_t index = catalog.requests++;
  auto it = catalog.failures.find(index);
  if (it != catalog.failures.end()) {
    throw Error(it->second, "scripted failure at request " + std::to_string(index));
  }
}

AgentResult book_flight(const Value& in, BookingCatalog& cat) {
  const Value& dates = in.at("travel_dates");
  std::string origin = dates.at("origin").get<std::string>();
  std::string destination = dates.at("destination").get<std::string>();
  int earliest = parse_date(dates.at("earliest"), "travel_dates.earliest");
  int latest = parse_date(dates.value("latest", dates.at("earliest")), "travel_dates.latest");
  Cents budget = cents_field(in, "budget_limit");
  int passengers = in.at("passenger_details").value("count", 1);
  const Value prefs = in.value("airline_preferences", Value::array());

  const Value* best = nullptr;
  std::tuple<int, int, Cents, int, std::string> best_key;
  for (const auto& f : cat.flights) {
    if (f.at("origin") != origin || f.at("destination") != destination) continue;
    int day = parse_date(f.at("date"), "flight date");
    if (day < earliest || day > latest) continue;
    if (f.at("seats").get<int>() < passengers) continue;
    Cents cost = f.at("price_cents").get<Cents>() * passengers;
    if (cost > budget) continue;
    auto key = std::make_tuple(contains(prefs, f.at("airline").get<std::string>()) ? 0 : 1,
                               f.at("stops").get<int>(), cost, day,
                               f.at("flight_number").get<std::string>());
    if (!best || key < best_key) {
      best = &f;
      best_key = key;
    }
  }
  if (!best) throw Error(ErrorCode::kNoInventory, "no flight " + origin + "->" + destination);
  const Value& f = *best;
  Cents cost = std::get<2>(best_key);
  std::string ref = reference("FL", cat.seed, in);
  AgentResult r;
  r.outputs = {{"flight_details",
                {{"flight_number", f.at("flight_number")},
                 {"airline", f.at("airline")},
                 {"origin", origin},
                 {"destination", destination},
                 {"departure_date", f.at("date")},
                 {"departure_time", f.at("departure_time")},
                 {"arrival_date", f.at("arrival_date")},
                 {"arrival_time", f.at("arrival_time")},
                 {"stops", f.at("stops")},
                 {"passengers", passengers}}},
               {"confirmation_number", ref},
               {"total_cost", cost},
               {"cancellation_policy", f.at("policy")},
               {"covers", {{"from", f.at("date")}, {"to", f.at("arrival_date")}}}};
  r.internal_state = {{"reservation_status", "booked"},
                      {"booking_reference", ref},
                      {"payment", {{"amount_cents", cost}, {"method", "card"}}}};
  return r;
}

AgentResult book_hotel(const Value& in, BookingCatalog& cat) {
  int checkin = parse_date(in.at("checkin_date"), "checkin_date");
  int checkout = parse_date(in.at("checkout_date"), "checkout_date");
  int nights = checkout - checkin;
  const Value& where = in.at("location_constraints");
  std::string city = where.at("city").get<std::string>();
  int max_station = where.value("max_minutes_to_station", 1 << 30);
  int min_stars = where.value("min_stars", 0);
  int max_stars = where.value("max_stars", 5);
  const Value amenities = in.value("amenity_preferences", Value::array());
  Cents budget = cents_field(in, "budget_limit");

  const Value* best = nullptr;
  std::tuple<int, Cents, std::string> best_key;
  for (const auto& h : cat.hotels) {
    if (h.at("city") != city) continue;
    int stars = h.at("stars").get<int>();
    if (stars < min_stars || stars > max_stars) continue;
    if (h.at("minutes_to_station").get<int>() > max_station) continue;
    Cents cost = h.at("nightly_cents").get<Cents>() * nights;
    if (cost > budget) continue;
    int missing = 0;
    for (const auto& a : amenities) {
      if (!contains(h.at("amenities"), a.get<std::string>())) ++missing;
    }
    auto key = std::make_tuple(missing, cost, h.at("name").get<std::string>());
    if (!best || key < best_key) {
      best = &h;
      best_key = key;
    }
  }
  if (!best) throw Error(ErrorCode::kNoInventory, "no hotel in " + city);
  const Value& h = *best;
  Cents cost = std::get<1>(best_key);
  std::string ref = reference("HT", cat.seed, in);
  AgentResult r;
  r.outputs = {{"hotel_details",
                {{"name", h.at("name")},
                 {"city", city},
                 {"stars", h.at("stars")},
                 {"checkin_date", format_date(checkin)},
                 {"checkout_date", format_date(checkout)},
                 {"nights", nights},
                 {"minutes_to_station", h.at("minutes_to_station")}}},
               {"room_type", h.at("stars").get<int>() >= 4 ? "double superior" : "double standard"},
               {"confirmation_number", ref},
               {"total_cost", cost},
               {"cancellation_policy", h.at("policy")},
               {"covers", {{"from", format_date(checkin)}, {"to", format_date(checkout)}}}};
  r.internal_state = {{"reservation_status", "booked"},
                      {"booking_reference", ref},
                      {"payment", {{"amount_cents", cost}, {"method", "card"}}}};
  return r;
}

AgentResult book_train(const Value& in, BookingCatalog& cat) {
  std::string from = in.at("departure_location").get<std::string>();
  std::string to = in.at("arrival_location").get<std::string>();
  const Value& when = in.at("travel_time");
  int day = parse_date(when.at("date"), "travel_time.date");
  Tick earliest = parse_clock(when.value("earliest", "00:00"));
  const Value& conn = in.at("connection_requirements");
  int max_transfers = conn.value("max_transfers", 9);
  bool pass = conn.value("pass", false);

  const Value* best = nullptr;
  std::tuple<Tick, std::string> best_key;
  for (const auto& t : cat.trains) {
    if (t.at("from") != from || t.at("to") != to) continue;
    if (t.at("transfers").get<int>() > max_transfers) continue;
    Tick dep = parse_clock(t.at("departure_time").get<std::string>());
    if (dep < earliest) continue;
    auto key = std::make_tuple(dep, t.at("train_number").get<std::string>());
    if (!best || key < best_key) {
      best = &t;
      best_key = key;
    }
  }
  if (!best) throw Error(ErrorCode::kNoInventory, "no train " + from + "->" + to);
  const Value& t = *best;
  Cents cost = t.at(pass ? "pass_price_cents" : "price_cents").get<Cents>();
  Tick dep = std::get<0>(best_key);
  int duration = t.at("duration_minutes").get<int>();
  std::string ref = reference("TR", cat.seed, in);
  std::uint64_t h = fnv1a(ref);
  std::string policy = t.at("policy").get<std::string>();
  AgentResult r;
  r.outputs = {{"train_details",
                {{"train_number", t.at("train_number")},
                 {"from", from},
                 {"to", to},
                 {"date", format_date(day)},
                 {"transfers", t.at("transfers")}}},
               {"seat_res", "coach " + std::to_string(1 + h % 12) + " seat " + std::to_string(1 + (h / 12) % 80)},
               {"total_cost", cost},
               {"schedule_details",
                {{"departure_time", format_clock(dep)},
                 {"arrival_time", format_clock((dep + duration) % (24 * 60))},
                 {"duration_minutes", duration}}},
               {"covers", {{"from", format_date(day)}, {"to", format_date(day)}}}};
  r.internal_state = {{"ticket_status", "booked"},
                      {"booking_reference", ref},
                      {"refund_policy",
                       {{"policy", policy}, {"refund_percent", cat.refund_for(policy)}, {"paid_cents", cost}}}};
  return r;
}

AgentResult run_budget(const Value& in) {
  ExpenseLedger ledger;
  if (in.contains("ledger")) {
    const Value& l = in.at("ledger");
    ledger.cumulative = l.at("cumulative_expenses").get<Cents>();
    ledger.log = l.at("expense_log").get<std::vector<Value>>();
    ledger.limit = l.at("constraints").at("limit_cents").get<Cents>();
  }
  if (in.contains("limit_cents")) ledger.limit = cents_field(in, "limit_cents");
  BudgetUpdate u = track_budget(ledger, in);
  return {u.outputs, ledger_internal_state(u.ledger)};
}

// Orders confirmations by date and ranks activities by preference weight.
AgentResult plan_itinerary(const Value& in) {
  std::vector<Value> items = in.at("confirmations").get<std::vector<Value>>();
  auto start_of = [](const Value& c) -> std::string {
    const Value* cov = c.contains("covers") ? &c.at("covers") : nullptr;
    return cov ? cov->at("from").get<std::string>() : std::string();
  };
  std::stable_sort(items.begin(), items.end(),
                   [&](const Value& a, const Value& b) { return start_of(a) < start_of(b); });
  Value schedule = Value::array();
  Value violations = Value::array();
  std::string last_end;
  for (const auto& c : items) {
    if (!c.contains("covers")) continue;
    const Value& cov = c.at("covers");
    schedule.push_back({{"from", cov.at("from")},
                        {"to", cov.at("to")},
                        {"confirmation", c.value("confirmation_number", c.value("seat_res", ""))}});
    if (!last_end.empty() && cov.at("from").get<std::string>() != last_end) {
      violations.push_back("gap between " + last_end + " and " + cov.at("from").get<std::string>());
    }
    last_end = cov.at("to").get<std::string>();
  }
  const Value& prefs = in.at("user_prefs");
  std::vector<std::pair<double, std::string>> ranked;
  const Value weights = prefs.value("interests", Value::object());
  for (const auto& [name, w] : weights.items()) ranked.emplace_back(-w.get<double>(), name);
  std::sort(ranked.begin(), ranked.end());
  Value recs = Value::array();
  std::string weather = in.at("travel_constraints").value("weather", "");
  for (const auto& [w, name] : ranked) {
    Value rec = {{"activity", name}, {"weight", -w}};
    if (!weather.empty()) rec["because"] = "forecast: " + weather;
    recs.push_back(rec);
  }
  AgentResult r;
  r.outputs = {{"optimized_itinerary", items},
               {"timing_schedule", schedule},
               {"activity_recommendations", recs}};
  r.internal_state = {{"preference_history", Value::array({prefs})},
                      {"optimization_parameters", {{"strategy", "preference-weighted greedy"}}},
                      {"constraint_violations", violations}};
  return r;
}

}  // namespace

std::string_view to_string(AgentKind k) { return kind_names().at(k); }

AgentKind agent_kind_from_string(std::string_view s) {
  for (const auto& [k, name] : kind_names()) {
    if (name == s) return k;
  }
  throw Error(ErrorCode::kInvalidInput, "unknown agent kind " + std::string(s));
}

const std::vector<AgentKind>& all_agent_kinds() {
  static const std::vector<AgentKind> kinds = {AgentKind::kFlight, AgentKind::kHotel, AgentKind::kTrain,
                                               AgentKind::kBudget, AgentKind::kItinerary};
  return kinds;
}

const AgentSchema& agent_schema(AgentKind kind) {
  static const std::map<AgentKind, AgentSchema> schemas = {
      {AgentKind::kFlight,
       {AgentKind::kFlight,
        {"travel_dates", "budget_limit", "airline_preferences", "passenger_details"},
        {"flight_details", "confirmation_number", "total_cost", "cancellation_policy"},
        {"reservation_status", "booking_reference", "payment"}}},
      {AgentKind::kHotel,
       {AgentKind::kHotel,
        {"checkin_date", "checkout_date", "location_constraints", "amenity_preferences", "budget_limit"},
        {"hotel_details", "room_type", "confirmation_number", "total_cost", "cancellation_policy"},
        {"reservation_status", "booking_reference", "payment"}}},
      {AgentKind::kTrain,
       {AgentKind::kTrain,
        {"departure_location", "arrival_location", "travel_time", "connection_requirements"},
        {"train_details", "seat_res", "total_cost", "schedule_details"},
        {"ticket_status", "booking_reference", "refund_policy"}}},
      {AgentKind::kBudget,
       {AgentKind::kBudget,
        {"expense_item", "cost", "category", "transaction_id"},
        {"updated_total", "remaining_budget", "budget_status", "expense_breakdown"},
        {"cumulative_expenses", "expense_log", "constraints"}}},
      {AgentKind::kItinerary,
       {AgentKind::kItinerary,
        {"user_prefs", "travel_constraints", "confirmations"},
        {"optimized_itinerary", "timing_schedule", "activity_recommendations"},
        {"preference_history", "optimization_parameters", "constraint_violations"}}},
  };
  return schemas.at(kind);
}

std::string status_field(AgentKind kind) {
  switch (kind) {
    case AgentKind::kFlight:
    case AgentKind::kHotel: return "reservation_status";
    case AgentKind::kTrain: return "ticket_status";
    default: return {};
  }
}

void check_inputs(AgentKind kind, const Value& inputs) {
  if (!inputs.is_object()) throw Error(ErrorCode::kInvalidInput, "inputs must be an object");
  std::string missing;
  for (const auto& f : agent_schema(kind).input_fields) {
    if (!inputs.contains(f)) missing += (missing.empty() ? "" : ", ") + f;
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::kInvalidInput, std::string(to_string(kind)) + " input missing " + missing);
  }
  switch (kind) {
    case AgentKind::kFlight: {
      const Value& d = inputs.at("travel_dates");
      for (const char* k : {"origin", "destination", "earliest"}) {
        if (!d.contains(k)) throw Error(ErrorCode::kInvalidInput, std::string("travel_dates.") + k + " missing");
      }
      int a = parse_date(d.at("earliest"), "travel_dates.earliest");
      if (d.contains("latest") && parse_date(d.at("latest"), "travel_dates.latest") < a) {
        throw Error(ErrorCode::kInvalidInput, "travel_dates.latest before earliest");
      }
      cents_field(inputs, "budget_limit");
      break;
    }
    case AgentKind::kHotel: {
      int in = parse_date(inputs.at("checkin_date"), "checkin_date");
      int out = parse_date(inputs.at("checkout_date"), "checkout_date");
      if (out <= in) throw Error(ErrorCode::kInvalidInput, "checkout_date must follow checkin_date");
      if (!inputs.at("location_constraints").contains("city")) {
        throw Error(ErrorCode::kInvalidInput, "location_constraints.city missing");
      }
      cents_field(inputs, "budget_limit");
      break;
    }
    case AgentKind::kTrain:
      parse_date(inputs.at("travel_time").at("date"), "travel_time.date");
      break;
    case AgentKind::kBudget:
      if (!inputs.at("cost").is_number_integer()) throw Error(ErrorCode::kInvalidInput, "cost must be integer cents");
      break;
    case AgentKind::kItinerary:
      if (!inputs.at("confirmations").is_array()) {
        throw Error(ErrorCode::kInvalidInput, "confirmations must be a list");
      }
      break;
  }
}

int BookingCatalog::refund_for(const std::string& policy) const {
  auto it = refund_percent.find(policy);
  return it == refund_percent.end() ? 100 : it->second;
}

BookingCatalog BookingCatalog::generate(std::uint64_t seed) {
  BookingCatalog c;
  c.seed = seed;
  std::mt19937_64 rng(seed);
  auto uniform = [&](std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
  };
  const int june1 = parse_date("2025-06-01", "june");
  const std::vector<std::string> airlines = {"Condor", "Lufthansa", "United"};
  struct Route {
    const char* from;
    const char* to;
    int overnight;
  };
  const std::vector<Route> routes = {{"SFO", "BER", 1}, {"SFO", "CGN", 1}, {"BER", "SFO", 0}, {"CGN", "SFO", 0}};
  for (int d = 0; d < 30; ++d) {
    for (const auto& r : routes) {
      for (std::size_t a = 0; a < airlines.size(); ++a) {
        Tick dep = uniform(6, 21) * 60 + 5 * uniform(0, 11);
        int stops = static_cast<int>(uniform(0, 1));
        Tick flight = (r.overnight ? 11 * 60 : 12 * 60) + stops * 120 + 5 * uniform(0, 6);
        Tick arrive_abs = dep + flight + (r.overnight ? 9 * 60 : -9 * 60);  // time zones
        int arrive_day = june1 + d + static_cast<int>(arrive_abs >= 24 * 60 ? 1 : 0);
        char number[16];
        std::snprintf(number, sizeof number, "%c%c%03d", airlines[a][0], airlines[a][1],
                      static_cast<int>(100 + d * 10 + (&r - routes.data()) * 3 + a));
        c.flights.push_back({{"flight_number", number},
                             {"airline", airlines[a]},
                             {"origin", r.from},
                             {"destination", r.to},
                             {"date", format_date(june1 + d)},
                             {"departure_time", format_clock(dep)},
                             {"arrival_date", format_date(arrive_day)},
                             {"arrival_time", format_clock(((arrive_abs % (24 * 60)) + 24 * 60) % (24 * 60))},
                             {"stops", stops},
                             {"price_cents", uniform(600, 1400) * 100},
                             {"seats", uniform(0, 9)},
                             {"policy", "full-refund"}});
      }
    }
  }
  const std::vector<std::pair<std::string, std::vector<std::string>>> hotels = {
      {"Berlin", {"Hotel Spree", "Mitte Suites", "Alex Inn", "Tiergarten House", "Kreuzberg Loft", "Hauptbahnhof Stay"}},
      {"Cologne", {"Dom Hotel", "Rhine View", "Altstadt Inn", "Deutz Rooms", "Ehrenfeld House", "Bahnhof Hotel"}}};
  const std::vector<std::string> amenities = {"wifi", "breakfast", "gym", "laundry", "parking"};
  for (const auto& [city, names] : hotels) {
    for (const auto& name : names) {
      Value am = Value::array();
      for (const auto& a : amenities) {
        if (uniform(0, 1)) am.push_back(a);
      }
      c.hotels.push_back({{"name", name},
                          {"city", city},
                          {"stars", uniform(2, 5)},
                          {"nightly_cents", uniform(80, 250) * 100},
                          {"amenities", am},
                          {"minutes_to_station", 5 * uniform(1, 9)},
                          {"policy", "full-refund"}});
    }
  }
  const std::vector<std::pair<std::string, std::string>> legs = {{"Berlin", "Cologne"}, {"Cologne", "Berlin"}};
  for (const auto& [from, to] : legs) {
    for (int k = 0; k < 8; ++k) {
      Tick dep = (6 + 2 * k) * 60 + 5 * uniform(0, 11);
      int transfers = static_cast<int>(uniform(0, 1));
      Cents price = uniform(40, 150) * 100;
      c.trains.push_back({{"train_number", "ICE " + std::to_string(540 + k * 2 + (from == "Cologne"))},
                          {"from", from},
                          {"to", to},
                          {"departure_time", format_clock(dep)},
                          {"duration_minutes", 270 + 30 * transfers},
                          {"price_cents", price},
                          {"pass_price_cents", price * 3 / 5},
                          {"transfers", transfers},
                          {"policy", "rail-standard"}});
    }
  }
  c.refund_percent = {{"full-refund", 100}, {"rail-standard", 100}};
  return c;
}

Value catalog_to_json(const BookingCatalog& c) {
  Value failures = Value::object();
  for (const auto& [idx, code] : c.failures) failures[std::to_string(idx)] = error_code_name(code);
  return {{"seed", c.seed},
          {"flights", c.flights},
          {"hotels", c.hotels},
          {"trains", c.trains},
          {"refund_percent", c.refund_percent},
          {"failures", failures},
          {"requests", c.requests},
          {"served", c.served}};
}

namespace {

ErrorCode error_code_from_name(const std::string& name) {
  for (ErrorCode code : {ErrorCode::kProviderUnavailable, ErrorCode::kNoInventory, ErrorCode::kInvalidInput}) {
    if (error_code_name(code) == name) return code;
  }
  throw Error(ErrorCode::kInvalidInput, "unsupported scripted failure " + name);
}

}  // namespace

BookingCatalog catalog_from_json(const Value& j) {
  BookingCatalog c;
  if (j.contains("generate")) c = BookingCatalog::generate(j.at("generate").get<std::uint64_t>());
  c.seed = j.value("seed", c.seed);
  if (j.contains("flights")) c.flights = j.at("flights").get<std::vector<Value>>();
  if (j.contains("hotels")) c.hotels = j.at("hotels").get<std::vector<Value>>();
  if (j.contains("trains")) c.trains = j.at("trains").get<std::vector<Value>>();
  if (j.contains("refund_percent")) c.refund_percent = j.at("refund_percent").get<std::map<std::string, int>>();
  const Value failures = j.value("failures", Value::object());
  for (const auto& [idx, name] : failures.items()) {
    c.failures[std::stoull(idx)] = error_code_from_name(name.get<std::string>());
  }
  c.requests = j.value("requests", std::uint64_t{0});
  if (j.contains("served")) c.served = j.at("served").get<std::map<std::string, Value>>();
  return c;
}

AgentResult execute_agent(AgentKind kind, const Value& inputs, BookingCatalog& catalog) {
  check_inputs(kind, inputs);
  maybe_fail(catalog);
  switch (kind) {
    case AgentKind::kFlight: return book_flight(inputs, catalog);
    case AgentKind::kHotel: return book_hotel(inputs, catalog);
    case AgentKind::kTrain: return book_train(inputs, catalog);
    case AgentKind::kBudget: return run_budget(inputs);
    case AgentKind::kItinerary: return plan_itinerary(inputs);
  }
  throw Error(ErrorCode::kInvalidInput, "unknown agent");
}

AgentResult execute_agent(AgentKind kind, const Value& inputs, BookingCatalog& catalog, const std::string& key) {
  auto hit = catalog.served.find(key);
  if (hit != catalog.served.end()) {
    const Value& a = hit->second;
    if (a.contains("error")) {
      throw Error(error_code_from_name(a.at("error").get<std::string>()), a.at("detail").get<std::string>());
    }
    return {a.at("outputs"), a.at("internal_state")};
  }
  try {
    auto r = execute_agent(kind, inputs, catalog);
    catalog.served[key] = {{"outputs", r.outputs}, {"internal_state", r.internal_state}};
    return r;
  } catch (const Error& e) {
    std::string name(error_code_name(e.code()));
    std::string detail = e.what();
    catalog.served[key] = {{"error", name}, {"detail", detail.substr(name.size() + 2)}};
    throw;
  }
}

Value compensate_agent(AgentKind kind, const Value& state) {
  std::string field = status_field(kind);
  if (field.empty()) {
    throw Error(ErrorCode::kNothingToCompensate, std::string(to_string(kind)) + " agent holds no reservation");
  }
  std::string status = state.value(field, "");
  if (status == "cancelled") return Value::object();
  if (status != "booked") {
    throw Error(ErrorCode::kNothingToCompensate, field + " is '" + status + "'");
  }
  Cents refund = 0;
  Value flags = Value::array();
  if (kind == AgentKind::kTrain) {
    const Value& p = state.at("refund_policy");
    refund = p.at("paid_cents").get<Cents>() * p.at("refund_percent").get<int>() / 100;
    flags.push_back("recalculate-travel-times");
  } else {
    refund = state.at("payment").at("amount_cents").get<Cents>();
    if (kind == AgentKind::kFlight) {
      flags.push_back("reevaluate-hotel");
      flags.push_back("reevaluate-train");
    } else {
      flags.push_back("adjust-itinerary");
    }
  }
  return {{"internal_state", {{field, "cancelled"}, {"booking_reference", nullptr}}},
          {"refund_cents", refund},
          {"flags", flags}};
}

Value apply_state_patch(const Value& internal_state, const Value& patch) {
  Value out = internal_state;
  if (patch.contains("internal_state")) {
    for (const auto& [k, v] : patch.at("internal_state").items()) out[k] = v;
  }
  return out;
}

namespace {

Value budget_outputs(const ExpenseLedger& l) {
  Value breakdown = Value::object();
  for (const auto& e : l.log) {
    std::string cat = e.at("category").get<std::string>();
    breakdown[cat] = breakdown.value(cat, Cents{0}) + e.at("cost").get<Cents>();
  }
  return {{"updated_total", l.cumulative},
          {"remaining_budget", l.limit - l.cumulative},
          {"budget_status", l.cumulative > l.limit ? "over-budget" : "ok"},
          {"expense_breakdown", breakdown}};
}

}  // namespace

BudgetUpdate track_budget(const ExpenseLedger& ledger, const Value& item) {
  Cents cost = item.at("cost").get<Cents>();
  if (cost < 0) throw Error(ErrorCode::kNegativeInput, "expense cost is negative");
  BudgetUpdate u;
  u.ledger = ledger;
  u.ledger.cumulative += cost;
  u.ledger.log.push_back({{"transaction_id", item.at("transaction_id")},
                          {"expense_item", item.at("expense_item")},
                          {"category", item.at("category")},
                          {"cost", cost}});
  u.outputs = budget_outputs(u.ledger);
  return u;
}

BudgetUpdate refund_expense(const ExpenseLedger& ledger, const std::string& transaction_id, Cents amount) {
  if (amount < 0) throw Error(ErrorCode::kNegativeInput, "refund is negative");
  auto it = std::find_if(ledger.log.begin(), ledger.log.end(),
                         [&](const Value& e) { return e.at("transaction_id") == transaction_id; });
  if (it == ledger.log.end()) {
    throw Error(ErrorCode::kNothingToCompensate, "no expense " + transaction_id);
  }
  BudgetUpdate u;
  u.ledger = ledger;
  Value entry = *it;
  u.ledger.cumulative -= amount;
  u.ledger.log.push_back({{"transaction_id", transaction_id + ":refund"},
                          {"expense_item", entry.at("expense_item")},
                          {"category", entry.at("category")},
                          {"cost", -amount}});
  u.outputs = budget_outputs(u.ledger);
  return u;
}

Value ledger_internal_state(const ExpenseLedger& l) {
  return {{"cumulative_expenses", l.cumulative},
          {"expense_log", l.log},
          {"constraints", {{"limit_cents", l.limit}}}};
}

}  // namespace saga::agents
