// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slotconv/costmodel.hpp"

namespace slotconv {

constexpr int kReportSchema = 1;

// Flat key/value text with sections:
//   [network]
//   preset = resnet20   # comment
// Keys before the first section land in section "".
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

  void set(const std::string& section, const std::string& key, const std::string& value);
  // Values of `o` win.
  void merge(const Config& o);
  std::string dump() const;
  const std::map<std::string, std::map<std::string, std::string>>& data() const { return data_; }

 private:
  std::map<std::string, std::map<std::string, std::string>> data_;
};

HeParams params_from(const Config& c);
void write_params(Config& c, const HeParams& p);
// Named plan ("optimal") or an explicit "m,d/m,d/..." list.
GapPlan plan_from(const std::string& preset, const std::string& text, std::optional<Scheme> scheme);
Config to_config(const NetworkSpec& spec);
// Builds and schedules the network described by [network] and [params].
NetworkSpec spec_from(const Config& c);

// ---- run ----

struct RunConfig {
  NetworkSpec spec;
  Mode mode = Mode::Trace;
  uint64_t seed = 1;
  std::string weights;  // manifest; empty: seeded weights
  std::string input;    // manifest with array "x"; empty: seeded input
  double max_memory_gb = 16;
};
RunConfig run_config_from(const Config& c);

// Slot-vector bytes a full-mode run keeps alive at its widest point (estimate).
double full_mode_bytes(const NetworkSpec& spec);

struct RunOutcome {
  NetworkSpec spec;
  Mode mode = Mode::Trace;
  uint64_t seed = 0;
  TagCounts tags{};
  std::array<int64_t, kOpCount> ops{};
  int64_t conv_rotations = 0;
  int64_t boots = 0, scheduled_boots = 0;
  int64_t eff_total = 0;
  std::vector<LevelMark> levels;
  std::vector<double> logits;
  std::vector<double> oracle_logits;
  double oracle_max_error = -1;  // full mode only
  double layer_max_rel = -1;
  std::string checksum;
  bool pass = false;
};
// Logit tolerance and per-layer relative tolerance of a full run.
constexpr double kLogitTol = 1e-4;
constexpr double kLayerTol = 1e-6;

RunOutcome execute_run(const RunConfig& rc);
std::string run_report_json(const RunOutcome& r);
std::string logits_checksum(const std::vector<double>& logits);

// ---- published-table diffs ----

struct DiffCell {
  std::string table, row, column;
  double expected = 0, measured = 0;
  double tolerance = 0;  // relative; 0 means exact
  bool pass = false;
};

using CostFormula = std::function<ConvCost(Algo, int, int, int, int)>;
struct TableOptions {
  bool cost = true, runtime = true, memory = true;
  CostFormula formula = conv_cost;  // swapped in mutation tests
};
std::vector<DiffCell> table_diff(const TableOptions& opt);
bool all_pass(const std::vector<DiffCell>& cells);
std::string cells_csv(const std::vector<DiffCell>& cells);

// Settings compared per algorithm: (c_n, m, d) for f = 1 and f = 3.
struct CostSetting {
  Algo algo;
  int c_n, m, d;
};
const std::vector<CostSetting>& cost_settings();

std::string search_csv(const std::vector<PlanScore>& ranked, size_t top);
std::string memory_json(const NetworkSpec& spec, const MemoryReport& m);

}  // namespace slotconv
