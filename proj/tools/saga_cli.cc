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

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "saga/harness.h"
#include "saga/workflow.h"

namespace {

using saga::Value;
namespace h = saga::harness;
namespace wf = saga::workflow;

int fail(const std::string& msg, int code) {
  std::cerr << "saga: " << msg << "\n";
  return code;
}

int code_for(const saga::Error& e) {
  switch (e.code()) {
    case saga::ErrorCode::kScenarioParseError:
    case saga::ErrorCode::kInvalidInput:
      return h::kExitParse;
    case saga::ErrorCode::kInfeasible:
    case saga::ErrorCode::kRefinementDiverged:
      return h::kExitInfeasible;
    case saga::ErrorCode::kFixtureMismatch:
      return h::kExitMismatch;
    default:
      return 1;
  }
}

Value read_json(const std::string& name) {
  std::filesystem::path p = std::filesystem::exists(name) ? std::filesystem::path(name) : h::find_scenario(name);
  std::ifstream in(p);
  if (!in) throw saga::Error(saga::ErrorCode::kScenarioParseError, "cannot read " + p.string());
  try {
    return Value::parse(in);
  } catch (const std::exception& e) {
    throw saga::Error(saga::ErrorCode::kScenarioParseError, p.string() + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"saga: transactional multi-agent planning harness"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run a scenario and report");
  std::string scenario;
  std::string mode = "plan";
  std::string disrupt;
  std::uint64_t seed = 0;
  std::string report = "text";
  bool log_dump = false;
  std::string variant;
  std::string fixture;
  std::string log_path;
  bool no_sync = false;
  run->add_option("scenario", scenario, "scenario name (P5, P6, P8, P9, travel) or path")->required();
  run->add_option("--mode", mode, "plan, react or replay-fixture")
      ->check(CLI::IsMember({"plan", "react", "replay-fixture", "replay"}));
  run->add_option("--disrupt", disrupt, "tick=HH:MM,scope=LOC[|LOC],mult=N or tick=HH:MM,action=ID,start=HH:MM");
  auto* seed_opt = run->add_option("--seed", seed, "catalog seed for the travel scenario");
  run->add_option("--report", report, "text or machine")->check(CLI::IsMember({"text", "machine"}));
  run->add_flag("--log-dump", log_dump, "print the log as JSON lines after the report");
  run->add_option("--variant", variant, "travel failure variant (t3-failure, t5-failure)");
  run->add_option("--fixture", fixture, "replay a single fixture");
  run->add_option("--log", log_path, "keep the log at this path");
  run->add_flag("--no-sync", no_sync, "skip fsync on log appends");

  // dump
  auto* dump = app.add_subcommand("dump", "print a log file as JSON lines");
  std::string dump_path;
  dump->add_option("log", dump_path, "log file")->required();

  // graph
  auto* graph = app.add_subcommand("graph", "build and print the workflow template of a scenario");
  std::string graph_source;
  std::string graph_format = "dot";
  std::string stage = "validated";
  graph->add_option("source", graph_source, "scenario with a workflow section, problem spec or exported template")
      ->required();
  graph->add_option("--format", graph_format, "dot or json")->check(CLI::IsMember({"dot", "json"}));
  graph->add_option("--stage", stage, "network, agents or validated")
      ->check(CLI::IsMember({"network", "agents", "validated"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return h::kExitParse;
  }

  try {
    if (*run) {
      h::RunOptions opt;
      opt.mode = h::mode_from_string(mode);
      if (!disrupt.empty()) opt.disrupt = h::parse_disrupt_flag(disrupt);
      if (*seed_opt) opt.seed = seed;
      opt.variant = variant;
      opt.fixture = fixture;
      opt.log_path = log_path;
      opt.sync = !no_sync;
      auto bundle = h::load_scenario(scenario);
      auto r = h::run_scenario(bundle, opt);
      std::cout << h::emit_report(r, report == "machine" ? h::ReportFormat::kMachine : h::ReportFormat::kText);
      if (log_dump) {
        saga::StoreOptions so;
        so.sync = false;
        auto store = saga::ContextStore::open(r.log_path, so);
        std::cout << h::dump_log(store.entries());
      }
      if (log_path.empty()) std::filesystem::remove(r.log_path);
      return r.exit_code;
    }
    if (*dump) {
      if (!std::filesystem::exists(dump_path)) return fail("no log at " + dump_path, h::kExitParse);
      saga::StoreOptions so;
      so.sync = false;
      auto store = saga::ContextStore::open(dump_path, so);
      std::cout << h::dump_log(store.entries());
      return 0;
    }
    if (*graph) {
      Value j = read_json(graph_source);
      wf::WorkflowTemplate t;
      if (j.contains("nodes")) {
        t = wf::template_from_json(j);
      } else {
        const Value& spec_json = j.contains("workflow") ? j.at("workflow") : j;
        if (!spec_json.contains("description")) {
          return fail(graph_source + " has no workflow section", h::kExitParse);
        }
        auto spec = wf::spec_from_json(spec_json);
        t = wf::build_network(spec);
        if (stage != "network") t = wf::attach_agents(t);
        if (stage == "validated") t = wf::validate_and_refine(t, spec.metrics).tmpl;
      }
      std::cout << (graph_format == "json" ? wf::template_to_json(t).dump(2) + "\n" : wf::template_to_dot(t));
      return 0;
    }
  } catch (const saga::Error& e) {
    return fail(e.what(), code_for(e));
  } catch (const std::exception& e) {
    return fail(e.what(), 1);
  }
  return 0;
}
