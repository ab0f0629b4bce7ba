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

#ifndef SAGA_VALIDATION_H_
#define SAGA_VALIDATION_H_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "saga/common.h"
#include "saga/planning.h"
#include "saga/state_model.h"

namespace saga {

enum class ValidationTier { kIntra, kInter };

enum class ValidationCategory {
  // intra-agent output checks
  kSyntactic,
  kSemantic,
  kFactual,
  kConstraint,
  kReasoning,
  // inter-agent message checks
  kContract,
  kDependency,
  kConsistency,
  kTemporal,
  kMutualAgreement,
  kBoundary,
};

std::string_view to_string(ValidationTier t);
ValidationTier validation_tier_from_string(std::string_view s);
std::string_view to_string(ValidationCategory c);
ValidationCategory validation_category_from_string(std::string_view s);
bool category_legal(ValidationTier tier, ValidationCategory category);

// What a rule evaluates. Each kind reads `params`:
//   condition        the `condition` tree, over the snapshot with the output staged
//   required-fields  {fields: [dotted paths]} or {schema: name}
//   coverage         {from, to: dotted date fields, trip_start}: the new interval
//                    starts where a committed one ends (or at trip_start)
//   travel-time      {field, from_field, to_field, table: [[a, b, minutes]], tolerance}
//   cited-edges      {field}: every edge cited under `field` is satisfied in S_D
//   schema           message payload carries the declared schema's fields
//   dependencies     every depends-on operation completed
//   send-order       send-time not earlier than any depends-on completion
//   canonical        {fields, canonical: [names]}: payload values use canonical spellings
//   agreement        {field, entity, entity_field}: payload value equals the shared record
//   boundary         no depends-on operation failed or compensated
enum class PredicateKind {
  kCondition,
  kRequiredFields,
  kCoverage,
  kTravelTime,
  kCitedEdges,
  kSchema,
  kDependencies,
  kSendOrder,
  kCanonical,
  kAgreement,
  kBoundary,
};

std::string_view to_string(PredicateKind k);
PredicateKind predicate_kind_from_string(std::string_view s);

struct ValidationRule {
  std::string id;
  ValidationTier tier = ValidationTier::kIntra;
  ValidationCategory category = ValidationCategory::kSyntactic;
  PredicateKind predicate = PredicateKind::kCondition;
  Value params = Value::object();
  Severity severity = Severity::kHard;
  // Soft rules may carry a field-level patch; it may only touch `patch_fields`.
  std::optional<Value> patch;
  std::vector<std::string> patch_fields;
  std::string description;
};

// Throws Error(kInvalidInput) for an illegal tier/category pair or a patch
// outside its whitelist.
void check_rule(const ValidationRule& rule);
ValidationRule validation_rule_from_json(const Value& j);
Value validation_rule_to_json(const ValidationRule& r);
std::vector<ValidationRule> load_validation_rules(const Value& j);

struct FailedRule {
  std::string rule;
  ValidationCategory category = ValidationCategory::kSyntactic;
  Severity severity = Severity::kHard;
  std::string evidence;
};

enum class VerdictOutcome { kPass, kReject, kAugment, kFeedback };
std::string_view to_string(VerdictOutcome o);
VerdictOutcome verdict_outcome_from_string(std::string_view s);

struct ValidationVerdict {
  VerdictOutcome outcome = VerdictOutcome::kPass;
  std::vector<FailedRule> failed;
  std::optional<Value> augmentation;
  std::uint64_t recorded_at = 0;  // set by the caller once logged
};

Value verdict_to_json(const ValidationVerdict& v);
ValidationVerdict verdict_from_json(const Value& j);

// Outcome from failed rules alone: none -> pass, any hard -> reject, soft
// with a patch -> augment, soft without -> feedback.
ValidationVerdict classify(std::vector<FailedRule> failed, std::optional<Value> patch);

// Required fields per named schema. The default registry holds every agent
// input/output schema as "<agent>.input" / "<agent>.output".
class SchemaRegistry {
 public:
  static const SchemaRegistry& builtin();
  void add(const std::string& name, std::vector<std::string> fields);
  bool contains(const std::string& name) const { return schemas_.count(name) != 0; }
  // Throws Error(kSchemaUnknown).
  const std::vector<std::string>& fields(const std::string& name) const;

 private:
  std::map<std::string, std::vector<std::string>> schemas_;
};

struct MessageEnvelope {
  std::string from_agent;
  std::string to_agent;
  Value payload = Value::object();
  std::string declared_schema;
  std::vector<std::string> depends_on;
  Tick send_time = 0;
};

// Intra-agent check of `output` before commit. The output is staged as an
// active entity under `stage_key` (default: the operation id) so condition
// rules see it alongside committed state.
ValidationVerdict validate_output(const OperationId& op, const Value& output,
                                  const StateSnapshot& snap, const std::vector<ValidationRule>& rules,
                                  const std::string& stage_key = {},
                                  const SchemaRegistry& schemas = SchemaRegistry::builtin());

ValidationVerdict validate_message(const MessageEnvelope& msg, const StateSnapshot& snap,
                                   const std::vector<ValidationRule>& rules,
                                   const SchemaRegistry& schemas = SchemaRegistry::builtin());

// Reference check plus every plan rule, ordered by time.
std::vector<planning::Violation> validate_plan(const planning::Plan& plan,
                                               const planning::WorldModel& world,
                                               const std::vector<planning::PlanRule>& rules,
                                               const std::vector<planning::DisruptionEvent>& disruptions = {});

enum class Response { kCommit, kCompensate, kAugmentAndRevalidate, kRecordFeedback };
std::string_view to_string(Response r);

// `round` counts augmentations already applied. Throws Error(kRetryExhausted)
// when an augment verdict arrives at round >= max_rounds.
Response decide_response(const ValidationVerdict& verdict, std::size_t round = 0,
                         std::size_t max_rounds = 3);

// Applies a whitelisted patch (top-level merge) to an output.
Value apply_patch(const Value& output, const Value& patch);

struct ValidationLoopResult {
  Value output;
  ValidationVerdict verdict;
  Response response = Response::kCommit;
  std::size_t rounds = 1;  // validation passes run
};

// Validates, applying augmentation patches and revalidating until the
// verdict stops asking for augmentation.
ValidationLoopResult validate_with_augmentation(const OperationId& op, Value output,
                                                const StateSnapshot& snap,
                                                const std::vector<ValidationRule>& rules,
                                                const std::string& stage_key = {},
                                                std::size_t max_rounds = 3);

}  // namespace saga

#endif  // SAGA_VALIDATION_H_
