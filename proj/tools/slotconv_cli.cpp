// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "slotconv/report.hpp"

using namespace slotconv;

namespace {

enum Exit { kPass = 0, kMismatch = 1, kConfigError = 2 };

// Command-line value for section/key; set only when the flag was given.
struct Binding {
  std::string section, key, value;
  CLI::Option* opt = nullptr;
};

void bind_opt(CLI::App* app, std::vector<std::unique_ptr<Binding>>& out, const std::string& flag,
          const std::string& section, const std::string& key, const std::string& help) {
  auto b = std::make_unique<Binding>();
  b->section = section;
  b->key = key;
  b->opt = app->add_option(flag, b->value, help);
  out.push_back(std::move(b));
}

void bind_flag(CLI::App* app, std::vector<std::unique_ptr<Binding>>& out, const std::string& flag,
               const std::string& section, const std::string& key, const std::string& value, const std::string& help) {
  auto b = std::make_unique<Binding>();
  b->section = section;
  b->key = key;
  b->value = value;
  b->opt = app->add_flag(flag, help);
  out.push_back(std::move(b));
}

void network_options(CLI::App* app, std::vector<std::unique_ptr<Binding>>& out) {
  bind_opt(app, out, "--preset", "network", "preset", "resnet20, resnet32, resnet44 or resnet18");
  bind_opt(app, out, "--plan", "network", "plan", "named plan or m,d/m,d/...");
  bind_opt(app, out, "--scheme", "network", "scheme", "hybrid or baseline");
  bind_flag(app, out, "--naive", "network", "reorder", "false", "naive RAConv slides");
  bind_flag(app, out, "--unfused", "network", "fused", "false", "run CAConv and RAConv separately");
  bind_opt(app, out, "--params", "params", "preset", "set_hyp or set_lc");
  bind_opt(app, out, "--slots", "params", "slot_count", "slot count override");
  bind_opt(app, out, "--usable-level", "params", "usable_level", "level after bootstrapping (L')");
}

Config gather(const std::string& path, const std::vector<std::unique_ptr<Binding>>& binds) {
  Config c = path.empty() ? Config() : Config::load(path);
  for (const auto& b : binds)
    if (b->opt->count() > 0) c.set(b->section, b->key, b->value);
  return c;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::ConfigError, "cannot write " + path);
  f << text;
}

int cmd_run(const Config& c) {
  RunConfig rc = run_config_from(c);
  RunOutcome r = execute_run(rc);
  emit(c.get_or("run", "out", ""), run_report_json(r));
  std::cerr << "run " << r.spec.preset << " " << r.spec.plan.to_string() << ": conv rotations " << r.conv_rotations
            << ", boots " << r.boots;
  if (r.mode == Mode::Full) std::cerr << ", oracle max error " << r.oracle_max_error;
  std::cerr << (r.pass ? " PASS" : " FAIL") << "\n";
  return r.pass ? kPass : kMismatch;
}

int cmd_tables(const Config& c) {
  TableOptions opt;
  const std::string only = c.get_or("tables", "only", "cost,runtime,memory");
  opt.cost = only.find("cost") != std::string::npos;
  opt.runtime = only.find("runtime") != std::string::npos;
  opt.memory = only.find("memory") != std::string::npos;
  if (only == "none") opt.cost = opt.runtime = opt.memory = false;
  auto cells = table_diff(opt);
  emit(c.get_or("tables", "out", ""), cells_csv(cells));
  int fails = 0;
  for (const auto& x : cells) fails += x.pass ? 0 : 1;
  std::cerr << cells.size() - fails << "/" << cells.size() << " cells PASS\n";
  return fails ? kMismatch : kPass;
}

int cmd_search(const Config& c) {
  Objective obj;
  obj.crot = c.get_double("search", "crot", obj.crot);
  obj.boot = c.get_double("search", "boot", obj.boot);
  AlgoMix algo;
  algo.reorder = c.get_bool("network", "reorder", true);
  algo.fused = c.get_bool("network", "fused", true);
  const std::string preset = c.get_or("network", "preset", "resnet20");
  auto ranked = search_plans(preset, obj, params_from(c), algo);
  emit(c.get_or("search", "out", ""), search_csv(ranked, static_cast<size_t>(c.get_int("search", "top", 0))));
  return kPass;
}

int cmd_footprint(const Config& c) {
  NetworkSpec spec = spec_from(c);
  const int seg = static_cast<int>(c.get_int("footprint", "prcr_segments", 1));
  emit(c.get_or("footprint", "out", ""), memory_json(spec, memory_footprint(spec, spec.params, seg)));
  return kPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Packed convolution simulator, cost model and plan search"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Binding>> binds;
  std::string config;
  app.add_option("--config", config, "key/value config file; flags override it");

  CLI::App* run = app.add_subcommand("run", "simulate one inference and write a JSON report");
  network_options(run, binds);
  bind_opt(run, binds, "--mode", "run", "mode", "full or trace");
  bind_opt(run, binds, "--seed", "run", "seed", "weight and input seed");
  bind_opt(run, binds, "--weights", "run", "weights", "weight manifest");
  bind_opt(run, binds, "--input", "run", "input", "input manifest with array x");
  bind_opt(run, binds, "--max-memory-gb", "run", "max_memory_gb", "full-mode memory limit");
  bind_opt(run, binds, "--out", "run", "out", "report path (stdout if absent)");

  CLI::App* tables = app.add_subcommand("tables", "expected vs measured rows of the published tables (CSV)");
  bind_opt(tables, binds, "--only", "tables", "only", "comma list of cost, runtime, memory; or none");
  bind_opt(tables, binds, "--out", "tables", "out", "CSV path (stdout if absent)");

  CLI::App* search = app.add_subcommand("search", "rank every (m,d) plan of a preset (CSV)");
  network_options(search, binds);
  bind_opt(search, binds, "--crot", "search", "crot", "cost per rotation");
  bind_opt(search, binds, "--boot", "search", "boot", "cost per bootstrap");
  bind_opt(search, binds, "--top", "search", "top", "rows to keep, 0 for all");
  bind_opt(search, binds, "--out", "search", "out", "CSV path (stdout if absent)");

  CLI::App* foot = app.add_subcommand("footprint", "plaintext, ciphertext and key memory (JSON)");
  network_options(foot, binds);
  bind_opt(foot, binds, "--prcr", "footprint", "prcr_segments", "PRCR segments");
  bind_opt(foot, binds, "--out", "footprint", "out", "report path (stdout if absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kPass : kConfigError;
  }

  try {
    const Config c = gather(config, binds);
    if (run->parsed()) return cmd_run(c);
    if (tables->parsed()) return cmd_tables(c);
    if (search->parsed()) return cmd_search(c);
    if (foot->parsed()) return cmd_footprint(c);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    switch (e.code()) {
      case ErrorCode::ConfigError:
      case ErrorCode::PlanViolation:
      case ErrorCode::InvalidParams:
      case ErrorCode::InfeasibleBudget:
      case ErrorCode::IoError:
        return kConfigError;
      default:
        return kMismatch;
    }
  }
  return kConfigError;
}
