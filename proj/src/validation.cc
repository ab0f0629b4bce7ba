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

#include "saga/validation.h"

#include <algorithm>
#include <set>

#include "saga/agents.h"

namespace saga {

namespace {

template <typename E>
using NameTable = std::vector<std::pair<E, std::string_view>>;

const NameTable<ValidationCategory>& category_names() {
  static const NameTable<ValidationCategory> t = {
      {ValidationCategory::kSyntactic, "syntactic"},
      {ValidationCategory::kSemantic, "semantic"},
      {ValidationCategory::kFactual, "factual"},
      {ValidationCategory::kConstraint, "constraint"},
      {ValidationCategory::kReasoning, "reasoning"},
      {ValidationCategory::kContract, "contract"},
      {ValidationCategory::kDependency, "dependency"},
      {ValidationCategory::kConsistency, "consistency"},
      {ValidationCategory::kTemporal, "temporal"},
      {ValidationCategory::kMutualAgreement, "mutual-agreement"},
      {ValidationCategory::kBoundary, "boundary"},
  };
  return t;
}

const NameTable<PredicateKind>& predicate_names() {
  static const NameTable<PredicateKind> t = {
      {PredicateKind::kCondition, "condition"},
      {PredicateKind::kRequiredFields, "required-fields"},
      {PredicateKind::kCoverage, "coverage"},
      {PredicateKind::kTravelTime, "travel-time"},
      {PredicateKind::kCitedEdges, "cited-edges"},
      {PredicateKind::kSchema, "schema"},
      {PredicateKind::kDependencies, "dependencies"},
      {PredicateKind::kSendOrder, "send-order"},
      {PredicateKind::kCanonical, "canonical"},
      {PredicateKind::kAgreement, "agreement"},
      {PredicateKind::kBoundary, "boundary"},
  };
  return t;
}

const NameTable<VerdictOutcome>& outcome_names() {
  static const NameTable<VerdictOutcome> t = {{VerdictOutcome::kPass, "pass"},
                                              {VerdictOutcome::kReject, "reject"},
                                              {VerdictOutcome::kAugment, "augment"},
                                              {VerdictOutcome::kFeedback, "feedback"}};
  return t;
}

template <typename E>
std::string_view name_of(const NameTable<E>& t, E e) {
  for (const auto& [k, n] : t) {
    if (k == e) return n;
  }
  return "?";
}

template <typename E>
E parse_name(const NameTable<E>& t, std::string_view s, const char* what) {
  for (const auto& [k, n] : t) {
    if (n == s) return k;
  }
  throw Error(ErrorCode::kInvalidInput, std::string("unknown ") + what + " '" + std::string(s) + "'");
}

std::string join(const std::vector<std::string>& xs) {
  std::string out;
  for (const auto& x : xs) out += (out.empty() ? "" : ", ") + x;
  return out;
}

std::vector<std::string> strings(const Value& params, const char* key) {
  if (!params.contains(key)) return {};
  return params.at(key).get<std::vector<std::string>>();
}

// --- intra-agent predicates -------------------------------------------------

std::optional<std::string> check_required(const ValidationRule& r, const Value& output,
                                          const SchemaRegistry& schemas) {
  std::vector<std::string> fields = strings(r.params, "fields");
  if (r.params.contains("schema")) {
    const auto& extra = schemas.fields(r.params.at("schema").get<std::string>());
    fields.insert(fields.end(), extra.begin(), extra.end());
  }
  std::vector<std::string> missing;
  for (const auto& f : fields) {
    const Value* v = find_path(output, f);
    if (!v || v->is_null()) missing.push_back(f);
  }
  if (missing.empty()) return std::nullopt;
  return "missing " + join(missing);
}

std::optional<std::string> check_condition(const ValidationRule& r, const StateSnapshot& staged) {
  Condition c = r.params.at("condition").get<Condition>();
  try {
    if (c.evaluate(staged)) return std::nullopt;
    return "condition false: " + r.params.at("condition").dump();
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kUnresolvableAtom) throw;
    return std::string("unresolvable: ") + e.what();
  }
}

// Dates are ISO strings, so lexical order is date order.
std::optional<std::string> check_coverage(const ValidationRule& r, const Value& output,
                                          const StateSnapshot& snap, const std::string& stage_key) {
  std::string from_path = r.params.value("from", "covers.from");
  std::string to_path = r.params.value("to", "covers.to");
  const Value* from = find_path(output, from_path);
  const Value* to = find_path(output, to_path);
  if (!from || !to) return "no coverage interval in output";
  if (*to < *from) return "interval ends before it starts";
  std::string start = from->get<std::string>();
  if (r.params.contains("trip_start") && start == r.params.at("trip_start").get<std::string>()) {
    return std::nullopt;
  }
  std::string prefix = r.params.value("prefix", "");
  std::set<std::string> ends;
  for (const auto& [key, e] : snap.app.entities()) {
    if (key == stage_key || e.status != EntityStatus::kCommitted) continue;
    if (key.compare(0, prefix.size(), prefix) != 0) continue;
    if (const Value* end = find_path(e.data, to_path)) ends.insert(end->get<std::string>());
  }
  if (ends.count(start)) return std::nullopt;
  if (ends.empty()) return "starts " + start + " with nothing covered before it";
  std::string latest = *ends.rbegin();
  return "gap: coverage ends " + latest + ", next interval starts " + start;
}

std::optional<std::string> check_travel_time(const ValidationRule& r, const Value& output) {
  const Value* minutes = find_path(output, r.params.at("field").get<std::string>());
  const Value* a = find_path(output, r.params.at("from_field").get<std::string>());
  const Value* b = find_path(output, r.params.at("to_field").get<std::string>());
  if (!minutes || !a || !b) return std::nullopt;  // not a leg this rule knows
  int tolerance = r.params.value("tolerance", 0);
  for (const auto& row : r.params.at("table")) {
    bool match = (row.at(0) == *a && row.at(1) == *b) || (row.at(0) == *b && row.at(1) == *a);
    if (!match) continue;
    int expected = row.at(2).get<int>();
    int got = minutes->get<int>();
    if (std::abs(got - expected) <= tolerance) return std::nullopt;
    return a->get<std::string>() + "-" + b->get<std::string>() + " takes " + std::to_string(expected) +
           " min, output says " + std::to_string(got);
  }
  return std::nullopt;
}

std::optional<std::string> check_cited_edges(const ValidationRule& r, const Value& output,
                                             const StateSnapshot& snap) {
  const Value* cites = find_path(output, r.params.value("field", "cites"));
  if (!cites) return std::nullopt;
  std::vector<std::string> bad;
  for (const auto& c : *cites) {
    EdgeKey key{c.at("from").get<std::string>(), c.at("to").get<std::string>()};
    if (snap.deps.state(key) != Satisfaction::kSatisfied) bad.push_back(key.from + "->" + key.to);
  }
  if (bad.empty()) return std::nullopt;
  return "cited preconditions not satisfied: " + join(bad);
}

// --- inter-agent predicates -------------------------------------------------

const OperationRecord* record_of(const StateSnapshot& snap, const std::string& op) {
  auto it = snap.ops.find(op);
  return it == snap.ops.end() ? nullptr : &it->second;
}

std::optional<std::string> check_message(const ValidationRule& r, const MessageEnvelope& m,
                                         const StateSnapshot& snap, const SchemaRegistry& schemas) {
  switch (r.predicate) {
    case PredicateKind::kSchema: {
      std::vector<std::string> missing;
      for (const auto& f : schemas.fields(m.declared_schema)) {
        if (!find_path(m.payload, f)) missing.push_back(f);
      }
      if (missing.empty()) return std::nullopt;
      return m.declared_schema + " payload missing " + join(missing);
    }
    case PredicateKind::kDependencies: {
      std::vector<std::string> open;
      for (const auto& d : m.depends_on) {
        const OperationRecord* rec = record_of(snap, d);
        if (!rec || rec->status != OpStatus::kCompleted) open.push_back(d);
      }
      if (open.empty()) return std::nullopt;
      return "prerequisites not completed: " + join(open);
    }
    case PredicateKind::kSendOrder: {
      std::vector<std::string> later;
      for (const auto& d : m.depends_on) {
        const OperationRecord* rec = record_of(snap, d);
        if (rec && rec->timestamp > m.send_time) {
          later.push_back(d + "@" + std::to_string(rec->timestamp));
        }
      }
      if (later.empty()) return std::nullopt;
      return "sent at " + std::to_string(m.send_time) + " before " + join(later);
    }
    case PredicateKind::kCanonical: {
      std::vector<std::string> canon = strings(r.params, "canonical");
      std::vector<std::string> bad;
      for (const auto& f : strings(r.params, "fields")) {
        const Value* v = find_path(m.payload, f);
        if (!v) continue;
        if (!v->is_string() || std::find(canon.begin(), canon.end(), v->get<std::string>()) == canon.end()) {
          bad.push_back(f + "=" + v->dump());
        }
      }
      if (bad.empty()) return std::nullopt;
      return "non-canonical location: " + join(bad);
    }
    case PredicateKind::kAgreement: {
      const Value* mine = find_path(m.payload, r.params.at("field").get<std::string>());
      const Entity* shared = snap.app.find(r.params.at("entity").get<std::string>());
      if (!mine || !shared) return std::nullopt;
      const Value* theirs = find_path(shared->data, r.params.at("entity_field").get<std::string>());
      if (theirs && *theirs == *mine) return std::nullopt;
      return "disagrees on " + r.params.at("field").get<std::string>() + ": " + mine->dump() + " vs " +
             (theirs ? theirs->dump() : "absent");
    }
    case PredicateKind::kBoundary: {
      std::vector<std::string> broken;
      for (const auto& d : m.depends_on) {
        const OperationRecord* rec = record_of(snap, d);
        if (rec && (rec->status == OpStatus::kFailed || rec->status == OpStatus::kCompensated)) {
          broken.push_back(d + " " + std::string(to_string(rec->status)));
        }
      }
      if (broken.empty()) return std::nullopt;
      return "depends on " + join(broken);
    }
    default:
      throw Error(ErrorCode::kInvalidInput, "predicate " + std::string(to_string(r.predicate)) +
                                                " does not apply to messages");
  }
}

}  // namespace

std::string_view to_string(ValidationTier t) { return t == ValidationTier::kIntra ? "intra" : "inter"; }

ValidationTier validation_tier_from_string(std::string_view s) {
  if (s == "intra") return ValidationTier::kIntra;
  if (s == "inter") return ValidationTier::kInter;
  throw Error(ErrorCode::kInvalidInput, "unknown tier '" + std::string(s) + "'");
}

std::string_view to_string(ValidationCategory c) { return name_of(category_names(), c); }
ValidationCategory validation_category_from_string(std::string_view s) {
  return parse_name(category_names(), s, "category");
}
std::string_view to_string(PredicateKind k) { return name_of(predicate_names(), k); }
PredicateKind predicate_kind_from_string(std::string_view s) { return parse_name(predicate_names(), s, "predicate"); }
std::string_view to_string(VerdictOutcome o) { return name_of(outcome_names(), o); }
VerdictOutcome verdict_outcome_from_string(std::string_view s) { return parse_name(outcome_names(), s, "outcome"); }

bool category_legal(ValidationTier tier, ValidationCategory c) {
  bool intra = c == ValidationCategory::kSyntactic || c == ValidationCategory::kSemantic ||
               c == ValidationCategory::kFactual || c == ValidationCategory::kConstraint ||
               c == ValidationCategory::kReasoning;
  return intra == (tier == ValidationTier::kIntra);
}

void check_rule(const ValidationRule& r) {
  if (!category_legal(r.tier, r.category)) {
    throw Error(ErrorCode::kInvalidInput, r.id + ": category " + std::string(to_string(r.category)) +
                                              " is not legal for tier " + std::string(to_string(r.tier)));
  }
  bool message_pred = r.predicate == PredicateKind::kSchema || r.predicate == PredicateKind::kDependencies ||
                      r.predicate == PredicateKind::kSendOrder || r.predicate == PredicateKind::kCanonical ||
                      r.predicate == PredicateKind::kAgreement || r.predicate == PredicateKind::kBoundary;
  if (message_pred != (r.tier == ValidationTier::kInter)) {
    throw Error(ErrorCode::kInvalidInput, r.id + ": predicate " + std::string(to_string(r.predicate)) +
                                              " does not fit tier " + std::string(to_string(r.tier)));
  }
  if (r.predicate == PredicateKind::kCondition) r.params.at("condition").get<Condition>();
  if (r.patch) {
    if (r.severity != Severity::kSoft) {
      throw Error(ErrorCode::kInvalidInput, r.id + ": only soft rules may carry a patch");
    }
    if (!r.patch->is_object()) throw Error(ErrorCode::kInvalidInput, r.id + ": patch must be an object");
    for (const auto& [k, v] : r.patch->items()) {
      if (std::find(r.patch_fields.begin(), r.patch_fields.end(), k) == r.patch_fields.end()) {
        throw Error(ErrorCode::kInvalidInput, r.id + ": patch touches non-whitelisted field " + k);
      }
    }
  }
}

ValidationRule validation_rule_from_json(const Value& j) {
  ValidationRule r;
  r.id = j.at("id").get<std::string>();
  r.tier = validation_tier_from_string(j.at("tier").get<std::string>());
  r.category = validation_category_from_string(j.at("category").get<std::string>());
  r.predicate = predicate_kind_from_string(j.at("predicate").get<std::string>());
  r.params = j.value("params", Value::object());
  r.severity = severity_from_string(j.value("severity", "hard"));
  if (j.contains("patch")) r.patch = j.at("patch");
  r.patch_fields = j.value("patch_fields", std::vector<std::string>{});
  r.description = j.value("description", "");
  check_rule(r);
  return r;
}

Value validation_rule_to_json(const ValidationRule& r) {
  Value j = {{"id", r.id},
             {"tier", to_string(r.tier)},
             {"category", to_string(r.category)},
             {"predicate", to_string(r.predicate)},
             {"params", r.params},
             {"severity", to_string(r.severity)},
             {"description", r.description}};
  if (r.patch) {
    j["patch"] = *r.patch;
    j["patch_fields"] = r.patch_fields;
  }
  return j;
}

std::vector<ValidationRule> load_validation_rules(const Value& j) {
  std::vector<ValidationRule> out;
  std::set<std::string> ids;
  for (const auto& x : j.is_array() ? j : j.at("rules")) {
    out.push_back(validation_rule_from_json(x));
    if (!ids.insert(out.back().id).second) {
      throw Error(ErrorCode::kInvalidInput, "duplicate rule id " + out.back().id);
    }
  }
  return out;
}

Value verdict_to_json(const ValidationVerdict& v) {
  Value failed = Value::array();
  for (const auto& f : v.failed) {
    failed.push_back({{"rule", f.rule},
                      {"category", to_string(f.category)},
                      {"severity", to_string(f.severity)},
                      {"evidence", f.evidence}});
  }
  Value j = {{"outcome", to_string(v.outcome)}, {"failed", failed}, {"recorded_at", v.recorded_at}};
  if (v.augmentation) j["augmentation"] = *v.augmentation;
  return j;
}

ValidationVerdict verdict_from_json(const Value& j) {
  ValidationVerdict v;
  v.outcome = verdict_outcome_from_string(j.at("outcome").get<std::string>());
  for (const auto& f : j.at("failed")) {
    v.failed.push_back({f.at("rule").get<std::string>(),
                        validation_category_from_string(f.at("category").get<std::string>()),
                        severity_from_string(f.at("severity").get<std::string>()),
                        f.value("evidence", "")});
  }
  if (j.contains("augmentation")) v.augmentation = j.at("augmentation");
  v.recorded_at = j.value("recorded_at", std::uint64_t{0});
  return v;
}

ValidationVerdict classify(std::vector<FailedRule> failed, std::optional<Value> patch) {
  ValidationVerdict v;
  bool hard = std::any_of(failed.begin(), failed.end(),
                          [](const FailedRule& f) { return f.severity == Severity::kHard; });
  if (failed.empty()) {
    v.outcome = VerdictOutcome::kPass;
  } else if (hard) {
    v.outcome = VerdictOutcome::kReject;
  } else if (patch && !patch->empty()) {
    v.outcome = VerdictOutcome::kAugment;
    v.augmentation = std::move(patch);
  } else {
    v.outcome = VerdictOutcome::kFeedback;
  }
  v.failed = std::move(failed);
  return v;
}

const SchemaRegistry& SchemaRegistry::builtin() {
  static const SchemaRegistry reg = [] {
    SchemaRegistry r;
    for (auto kind : agents::all_agent_kinds()) {
      const auto& s = agents::agent_schema(kind);
      std::string name(agents::to_string(kind));
      r.add(name + ".input", s.input_fields);
      r.add(name + ".output", s.output_fields);
      r.add(name + ".state", s.internal_state_fields);
    }
    return r;
  }();
  return reg;
}

void SchemaRegistry::add(const std::string& name, std::vector<std::string> fields) {
  schemas_[name] = std::move(fields);
}

const std::vector<std::string>& SchemaRegistry::fields(const std::string& name) const {
  auto it = schemas_.find(name);
  if (it == schemas_.end()) throw Error(ErrorCode::kSchemaUnknown, "schema '" + name + "' is not registered");
  return it->second;
}

ValidationVerdict validate_output(const OperationId& op, const Value& output, const StateSnapshot& snap,
                                  const std::vector<ValidationRule>& rules, const std::string& stage_key_in,
                                  const SchemaRegistry& schemas) {
  const std::string stage_key = stage_key_in.empty() ? op.id : stage_key_in;
  StateSnapshot staged = snap;
  Entity e;
  e.status = EntityStatus::kActive;
  e.data = output;
  if (const Entity* prior = staged.app.find(stage_key); prior && prior->status != EntityStatus::kPending) {
    staged.app.erase(stage_key);
  }
  staged.app.put(stage_key, e);

  std::vector<FailedRule> failed;
  std::optional<Value> patch;
  for (const auto& r : rules) {
    if (r.tier != ValidationTier::kIntra) {
      throw Error(ErrorCode::kInvalidInput, "rule " + r.id + " is not an intra-agent rule");
    }
    std::optional<std::string> problem;
    switch (r.predicate) {
      case PredicateKind::kCondition: problem = check_condition(r, staged); break;
      case PredicateKind::kRequiredFields: problem = check_required(r, output, schemas); break;
      case PredicateKind::kCoverage: problem = check_coverage(r, output, snap, stage_key); break;
      case PredicateKind::kTravelTime: problem = check_travel_time(r, output); break;
      case PredicateKind::kCitedEdges: problem = check_cited_edges(r, output, snap); break;
      default:
        throw Error(ErrorCode::kInvalidInput, "predicate " + std::string(to_string(r.predicate)) +
                                                  " does not apply to outputs");
    }
    if (!problem) continue;
    failed.push_back({r.id, r.category, r.severity, *problem});
    if (r.severity == Severity::kSoft && r.patch) {
      if (!patch) patch = Value::object();
      for (const auto& [k, v] : r.patch->items()) (*patch)[k] = v;
    }
  }
  return classify(std::move(failed), std::move(patch));
}

ValidationVerdict validate_message(const MessageEnvelope& msg, const StateSnapshot& snap,
                                   const std::vector<ValidationRule>& rules, const SchemaRegistry& schemas) {
  schemas.fields(msg.declared_schema);  // SchemaUnknown before anything else
  std::vector<FailedRule> failed;
  for (const auto& r : rules) {
    if (r.tier != ValidationTier::kInter) {
      throw Error(ErrorCode::kInvalidInput, "rule " + r.id + " is not an inter-agent rule");
    }
    if (auto problem = check_message(r, msg, snap, schemas)) {
      failed.push_back({r.id, r.category, r.severity, *problem});
    }
  }
  return classify(std::move(failed), std::nullopt);
}

std::vector<planning::Violation> validate_plan(const planning::Plan& plan, const planning::WorldModel& world,
                                               const std::vector<planning::PlanRule>& rules,
                                               const std::vector<planning::DisruptionEvent>& disruptions) {
  planning::check_plan_references(plan, world);
  return planning::check_plan_constraints(plan, world, rules, disruptions);
}

std::string_view to_string(Response r) {
  switch (r) {
    case Response::kCommit: return "commit";
    case Response::kCompensate: return "compensate";
    case Response::kAugmentAndRevalidate: return "augment-and-revalidate";
    case Response::kRecordFeedback: return "record-feedback";
  }
  return "?";
}

Response decide_response(const ValidationVerdict& verdict, std::size_t round, std::size_t max_rounds) {
  switch (verdict.outcome) {
    case VerdictOutcome::kPass: return Response::kCommit;
    case VerdictOutcome::kReject: return Response::kCompensate;
    case VerdictOutcome::kFeedback: return Response::kRecordFeedback;
    case VerdictOutcome::kAugment:
      if (round >= max_rounds) {
        throw Error(ErrorCode::kRetryExhausted,
                    "still augmenting after " + std::to_string(max_rounds) + " rounds");
      }
      return Response::kAugmentAndRevalidate;
  }
  return Response::kCompensate;
}

Value apply_patch(const Value& output, const Value& patch) {
  Value out = output;
  for (const auto& [k, v] : patch.items()) out[k] = v;
  return out;
}

ValidationLoopResult validate_with_augmentation(const OperationId& op, Value output, const StateSnapshot& snap,
                                                const std::vector<ValidationRule>& rules,
                                                const std::string& stage_key, std::size_t max_rounds) {
  ValidationLoopResult res;
  for (std::size_t round = 0;; ++round) {
    res.verdict = validate_output(op, output, snap, rules, stage_key);
    res.rounds = round + 1;
    res.response = decide_response(res.verdict, round, max_rounds);
    if (res.response != Response::kAugmentAndRevalidate) break;
    output = apply_patch(output, *res.verdict.augmentation);
  }
  res.output = std::move(output);
  return res;
}

}  // namespace saga
