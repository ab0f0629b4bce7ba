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

#include "saga/workflow.h"
#include "test_util.h"

namespace saga::workflow {
namespace {

ProblemSpec load_spec(const std::string& name) {
  return spec_from_json(testing::scenario(name).raw.at("workflow"));
}

std::set<std::pair<std::string, std::string>> edge_set(const WorkflowTemplate& t) {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& e : t.edges) out.emplace(e.from, e.to);
  return out;
}

TEST(Network, TravelIsAFiveStepChain) {
  auto t = build_network(load_spec("travel"));
  ASSERT_EQ(t.nodes.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(t.nodes[i].id, "T" + std::to_string(i + 1));
  EXPECT_EQ(edge_set(t), (std::set<std::pair<std::string, std::string>>{
                             {"T1", "T2"}, {"T2", "T3"}, {"T3", "T4"}, {"T4", "T5"}}));
  EXPECT_EQ(t.terminal, "T5");
}

TEST(Network, NoConstraintsMeansNoEdges) {
  auto spec = load_spec("travel");
  spec.constraints.clear();
  auto t = build_network(spec);
  EXPECT_EQ(t.nodes.size(), 5u);
  EXPECT_TRUE(t.edges.empty());
}

TEST(Network, ThanksgivingAdjacency) {
  auto t = build_network(load_spec("p6"));
  // written out by hand from who waits on whom
  std::map<std::string, std::set<std::string>> expected = {
      {"pickup-james", {"pickup-emily", "dinner"}},
      {"pickup-emily", {"dinner"}},
      {"pickup-grandma", {"dinner"}},
      {"turkey", {"side-dishes", "dinner"}},
      {"side-dishes", {"dinner"}},
  };
  std::map<std::string, std::set<std::string>> got;
  for (const auto& e : t.edges) got[e.from].insert(e.to);
  EXPECT_EQ(got, expected);
  EXPECT_EQ(t.edges.size(), 7u);
  std::set<std::string> roles(t.roles.begin(), t.roles.end());
  EXPECT_TRUE(roles.count("pickup") && roles.count("cooking"));
  const Edge* sup = t.edge("turkey", "side-dishes");
  ASSERT_NE(sup, nullptr);
  EXPECT_EQ(sup->constraints, (std::vector<std::string>{"cooking-supervision"}));
}

TEST(Network, EmptyDescriptionHasNoRoles) {
  ProblemSpec s;
  s.name = "empty";
  try {
    build_network(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRoleExtractionEmpty);
  }
}

TEST(Network, MutualWaitIsACycle) {
  auto spec = load_spec("travel");
  SpecConstraint back;
  back.id = "t1-after-t3";
  back.applies_to = "T1";
  back.condition = Condition::completed("T3");
  spec.constraints.push_back(back);
  try {
    build_network(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCycleDetected);
  }
}

TEST(Spec, UndeclaredEntityIsRejected) {
  auto j = testing::scenario("travel").raw.at("workflow");
  j["constraints"][0]["condition"] = Value::parse(R"({"compare": {"entity": "ghost", "field": "x", "cmp": "<=", "value": 1}})");
  EXPECT_THROW(spec_from_json(j), Error);
  auto spec = load_spec("travel");
  EXPECT_EQ(spec_to_json(spec_from_json(spec_to_json(spec))), spec_to_json(spec));
}

TEST(Agents, TravelCounts) {
  auto t = attach_agents(build_network(load_spec("travel")));
  std::size_t node_agents = 0, edge_agents = 0;
  for (const auto& n : t.nodes) node_agents += t.agents.count(n.id);
  for (const auto& e : t.edges) edge_agents += t.agents.count(edge_key(e.from, e.to));
  EXPECT_EQ(node_agents, t.nodes.size());
  EXPECT_EQ(edge_agents, t.edges.size());
  EXPECT_EQ(node_agents, 5u);
  EXPECT_EQ(edge_agents, 4u);
  EXPECT_EQ(t.comp_agents.size(), 9u);
  EXPECT_EQ(t.schemas.size(), 9u);
  EXPECT_EQ(t.agents.at("T1").kind, "flight");
  EXPECT_EQ(t.agents.at("T1").reads,
            (std::vector<std::string>{"travel_dates", "budget_limit", "airline_preferences", "passenger_details"}));
}

TEST(Agents, SchemasCoverEverythingTouched) {
  for (const char* name : {"travel", "p5", "p6"}) {
    auto t = attach_agents(build_network(load_spec(name)));
    for (const auto& [owner, a] : t.agents) {
      const auto& f = t.schemas.at(owner).fields;
      std::set<std::string> have(f.begin(), f.end());
      for (const auto& r : a.reads) EXPECT_TRUE(have.count(r)) << name << " " << owner << " " << r;
      for (const auto& w : a.writes) EXPECT_TRUE(have.count(w)) << name << " " << owner << " " << w;
      EXPECT_TRUE(t.comp_agents.count(owner)) << owner;
    }
  }
}

TEST(Agents, NarrowSchemaIsAGap) {
  auto gen = default_generators();
  auto base = gen.define_log_schema;
  gen.define_log_schema = [base](const std::string& owner, const Value& profile) {
    auto s = base(owner, profile);
    if (owner == "T2") std::erase(s.fields, "confirmation_number");
    return s;
  };
  try {
    attach_agents(build_network(load_spec("travel"), gen), gen);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSchemaGapDetected);
    std::string msg = e.what();
    EXPECT_NE(msg.find("T2"), std::string::npos);
    EXPECT_NE(msg.find("confirmation_number"), std::string::npos);
  }
}

TEST(Refine, ValidTemplateIsAFixedPoint) {
  auto t = attach_agents(build_network(load_spec("travel")));
  auto r = validate_and_refine(t);
  EXPECT_EQ(r.iterations, 1u);
  EXPECT_EQ(template_digest(r.tmpl), template_digest(t));
}

TEST(Refine, MissingHotelCompensatorIsAdded) {
  auto t = attach_agents(build_network(load_spec("travel")));
  t.comp_agents.erase("T2");
  auto first = validate_workflow(t);
  ASSERT_EQ(first.failures.size(), 1u);
  EXPECT_EQ(first.failures[0].validator, "compensation");
  EXPECT_EQ(first.failures[0].subject, "T2");
  auto r = validate_and_refine(t);
  EXPECT_EQ(r.iterations, 2u);
  EXPECT_TRUE(r.tmpl.comp_agents.count("T2"));
  EXPECT_TRUE(validate_workflow(r.tmpl).ok());
}

TEST(Refine, DroppedEdgeIsRestored) {
  auto t = attach_agents(build_network(load_spec("p6")));
  std::erase_if(t.edges, [](const Edge& e) { return e.from == "turkey" && e.to == "side-dishes"; });
  t.agents.erase(edge_key("turkey", "side-dishes"));
  t.comp_agents.erase(edge_key("turkey", "side-dishes"));
  t.schemas.erase(edge_key("turkey", "side-dishes"));
  auto r = validate_and_refine(t);
  EXPECT_GE(r.iterations, 2u);
  EXPECT_NE(r.tmpl.edge("turkey", "side-dishes"), nullptr);
  EXPECT_TRUE(validate_workflow(r.tmpl).ok());
}

TEST(Refine, TailorClosingAtElevenDiverges) {
  auto j = testing::scenario("p5").raw.at("workflow");
  for (auto& c : j["constraints"]) {
    if (c.at("id") == "tailor-closed") c["condition"]["deadline"]["by"] = "11:00";
  }
  auto spec = spec_from_json(j);
  try {
    build_workflow(spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRefinementDiverged);
    EXPECT_NE(std::string(e.what()).find("tailor-closed"), std::string::npos);
  }
}

TEST(Refine, ScenarioWorkflowsValidate) {
  for (const char* name : {"travel", "p5", "p6"}) {
    auto spec = load_spec(name);
    auto r = build_workflow(spec);
    EXPECT_TRUE(validate_workflow(r.tmpl, spec.metrics).ok()) << name;
  }
}

TEST(Schedule, WeddingEarliestTimes) {
  auto t = build_network(load_spec("p5"));
  auto s = earliest_schedule(t);
  // Chris is free at W 13:30; W to T is 15 minutes
  EXPECT_EQ(s.at("tailor").first, parse_clock("13:45"));
  EXPECT_EQ(s.at("tailor").second, parse_clock("13:55"));
  EXPECT_EQ(s.at("photos").first, parse_clock("15:00"));
}

TEST(Template, DeterministicAndRoundTrips) {
  auto spec = load_spec("p6");
  auto a = build_workflow(spec, default_generators(7));
  auto b = build_workflow(spec, default_generators(7));
  EXPECT_EQ(template_digest(a.tmpl), template_digest(b.tmpl));
  auto back = template_from_json(template_to_json(a.tmpl));
  EXPECT_EQ(template_digest(back), template_digest(a.tmpl));
  auto dot = template_to_dot(a.tmpl);
  EXPECT_NE(dot.find("\"turkey\" -> \"side-dishes\""), std::string::npos);
}

}  // namespace
}  // namespace saga::workflow
