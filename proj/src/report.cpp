// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#include "slotconv/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace slotconv {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad(const std::string& section, const std::string& key, const std::string& v) {
  throw Error(ErrorCode::ConfigError, "[" + section + "] " + key + ": bad value '" + v + "'");
}

}  // namespace

// ---- config ----

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line, section;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCode::ConfigError, "line " + std::to_string(n) + ": unclosed section");
      section = trim(line.substr(1, line.size() - 2));
      c.data_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ConfigError, "line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::ConfigError, "line " + std::to_string(n) + ": empty key");
    c.data_[section][key] = trim(line.substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::ConfigError, "cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::optional<std::string> Config::get(const std::string& section, const std::string& key) const {
  auto s = data_.find(section);
  if (s == data_.end()) return std::nullopt;
  auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

std::string Config::get_or(const std::string& section, const std::string& key, const std::string& fallback) const {
  return get(section, key).value_or(fallback);
}

int64_t Config::get_int(const std::string& section, const std::string& key, int64_t fallback) const {
  auto v = get(section, key);
  if (!v) return fallback;
  try {
    size_t pos = 0;
    int64_t x = std::stoll(*v, &pos);
    if (pos != v->size()) bad(section, key, *v);
    return x;
  } catch (const std::logic_error&) {
    bad(section, key, *v);
  }
}

double Config::get_double(const std::string& section, const std::string& key, double fallback) const {
  auto v = get(section, key);
  if (!v) return fallback;
  try {
    size_t pos = 0;
    double x = std::stod(*v, &pos);
    if (pos != v->size()) bad(section, key, *v);
    return x;
  } catch (const std::logic_error&) {
    bad(section, key, *v);
  }
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  auto v = get(section, key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  bad(section, key, *v);
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  data_[section][key] = value;
}

void Config::merge(const Config& o) {
  for (const auto& [s, kv] : o.data_)
    for (const auto& [k, v] : kv) data_[s][k] = v;
}

std::string Config::dump() const {
  std::ostringstream out;
  bool first = true;
  for (const auto& [s, kv] : data_) {
    if (!first) out << "\n";
    first = false;
    if (!s.empty()) out << "[" << s << "]\n";
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  }
  return out.str();
}

HeParams params_from(const Config& c) {
  HeParams p;
  try {
    p = HeParams::by_name(c.get_or("params", "preset", "set_hyp"));
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.detail());
  }
  p.slot_count = c.get_int("params", "slot_count", p.slot_count);
  p.max_level = static_cast<int>(c.get_int("params", "max_level", p.max_level));
  p.usable_level = static_cast<int>(c.get_int("params", "usable_level", p.usable_level));
  p.dnum = static_cast<int>(c.get_int("params", "dnum", p.dnum));
  p.ct_bytes = c.get_double("params", "ct_bytes", p.ct_bytes);
  p.pt_bytes = c.get_double("params", "pt_bytes", p.pt_bytes);
  p.evk_bytes = c.get_double("params", "evk_bytes", p.evk_bytes);
  try {
    p.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.detail());
  }
  return p;
}

void write_params(Config& c, const HeParams& p) {
  auto num = [](double v) {
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
  };
  c.set("params", "preset", p.name);
  c.set("params", "slot_count", std::to_string(p.slot_count));
  c.set("params", "max_level", std::to_string(p.max_level));
  c.set("params", "usable_level", std::to_string(p.usable_level));
  c.set("params", "dnum", std::to_string(p.dnum));
  c.set("params", "ct_bytes", num(p.ct_bytes));
  c.set("params", "pt_bytes", num(p.pt_bytes));
  c.set("params", "evk_bytes", num(p.evk_bytes));
}

GapPlan plan_from(const std::string& preset, const std::string& text, std::optional<Scheme> scheme) {
  GapPlan p;
  if (text.find(',') != std::string::npos) {
    p = GapPlan::parse(text, scheme.value_or(Scheme::Hybrid));
  } else {
    p = named_plan(preset, text);
    if (scheme && *scheme != p.scheme)
      throw Error(ErrorCode::ConfigError, "plan '" + text + "' is a " + scheme_name(p.scheme) + " plan");
  }
  return p;
}

Config to_config(const NetworkSpec& spec) {
  Config c;
  c.set("network", "preset", spec.preset);
  c.set("network", "plan", spec.plan.name != "custom" ? spec.plan.name : spec.plan.to_string());
  c.set("network", "scheme", scheme_name(spec.scheme));
  c.set("network", "reorder", spec.algo.reorder ? "true" : "false");
  c.set("network", "fused", spec.algo.fused ? "true" : "false");
  write_params(c, spec.params);
  return c;
}

NetworkSpec spec_from(const Config& c) {
  const std::string preset = c.get_or("network", "preset", "resnet20");
  std::optional<Scheme> scheme;
  if (auto s = c.get("network", "scheme")) {
    if (*s == "hybrid") scheme = Scheme::Hybrid;
    else if (*s == "baseline") scheme = Scheme::Baseline;
    else bad("network", "scheme", *s);
  }
  AlgoMix algo;
  algo.reorder = c.get_bool("network", "reorder", true);
  algo.fused = c.get_bool("network", "fused", true);
  const HeParams params = params_from(c);
  try {
    GapPlan plan = plan_from(preset, c.get_or("network", "plan", "optimal"), scheme);
    return schedule_bootstraps(build_network(preset, plan, algo, params));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InfeasibleBudget) throw;
    throw Error(ErrorCode::ConfigError, e.detail());
  }
}

// ---- run ----

RunConfig run_config_from(const Config& c) {
  RunConfig rc;
  rc.spec = spec_from(c);
  const std::string mode = c.get_or("run", "mode", "trace");
  if (mode == "full") rc.mode = Mode::Full;
  else if (mode == "trace") rc.mode = Mode::Trace;
  else bad("run", "mode", mode);
  rc.seed = static_cast<uint64_t>(c.get_int("run", "seed", 1));
  rc.weights = c.get_or("run", "weights", "");
  rc.input = c.get_or("run", "input", "");
  rc.max_memory_gb = c.get_double("run", "max_memory_gb", rc.max_memory_gb);
  return rc;
}

double full_mode_bytes(const NetworkSpec& spec) {
  const double ct = static_cast<double>(spec.params.slot_count) * sizeof(double);
  double widest = 0;
  for (size_t s = 0; s < spec.stages.size(); ++s) {
    const Format f = spec.stage_format(static_cast<int>(s));
    const double mid = spec.scheme == Scheme::Hybrid ? ra_format(f.geo, f.m, f.d, f.channels).num_cts() : f.num_cts();
    widest = std::max(widest, f.num_cts() * 9.0 + mid * 10.0 + f.num_cts() * 2.0);
  }
  double stem = 0;
  if (spec.stem_kind == StemKind::Im2col)
    stem = (spec.stem_pool ? 4.0 : 1.0) * spec.in_channels * spec.stem_f * spec.stem_f + 2.0 * spec.stage_format(0).num_cts();
  return std::max(widest, stem) * ct;
}

std::string logits_checksum(const std::vector<double>& logits) {
  uint64_t h = 1469598103934665603ull;
  char buf[64];
  for (double v : logits) {
    std::snprintf(buf, sizeof buf, "%.6e;", v);
    for (const char* p = buf; *p; ++p) {
      h ^= static_cast<unsigned char>(*p);
      h *= 1099511628211ull;
    }
  }
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {
double rel_err(const Tensor& got, const Tensor& ref) {
  double m = 0, s = 0;
  const size_t n = std::min(got.v.size(), ref.v.size());
  if (got.v.size() != ref.v.size()) return INFINITY;
  for (size_t i = 0; i < n; ++i) {
    m = std::max(m, std::abs(got.v[i] - ref.v[i]));
    s = std::max(s, std::abs(ref.v[i]));
  }
  return m / (s > 0 ? s : 1.0);
}
}  // namespace

RunOutcome execute_run(const RunConfig& rc) {
  const NetworkSpec& spec = rc.spec;
  if (rc.mode == Mode::Full && full_mode_bytes(spec) > rc.max_memory_gb * 1e9)
    throw Error(ErrorCode::ConfigError, "full mode needs about " + std::to_string(full_mode_bytes(spec) / 1e9) +
                                            " GB of slot vectors; raise max_memory_gb or use trace mode");
  RunOutcome out;
  out.spec = spec;
  out.mode = rc.mode;
  out.seed = rc.seed;

  ModelWeights w = random_weights(spec, rc.seed);
  Tensor x(spec.in_channels, spec.in_img, spec.in_img);
  if (!rc.input.empty()) {
    auto arrays = load_arrays(rc.input);
    auto it = arrays.find("x");
    if (it == arrays.end()) throw Error(ErrorCode::ConfigError, "input manifest has no array 'x'");
    x = to_tensor(it->second);
    if (x.c != spec.in_channels || x.h != spec.in_img || x.w != spec.in_img)
      throw Error(ErrorCode::ConfigError, "input shape does not fit the network");
  } else {
    std::mt19937_64 rng(rc.seed + 1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : x.v) v = u(rng);
  }
  if (!rc.weights.empty()) {
    import_weights(w, load_arrays(rc.weights));
  } else if (rc.mode == Mode::Full) {
    calibrate_weights(w, x, true, 0, static_cast<int>(w.blocks.size()));
  }

  Backend be(spec.params, rc.mode);
  RunOptions opt;
  opt.keep_outputs = rc.mode == Mode::Full;
  InferenceResult res = run_inference(be, spec, w, x, opt);
  const CostLedger& led = be.ledger();
  for (int t = 0; t < kTagCount; ++t) out.tags[t] = led.rotations(static_cast<RotTag>(t));
  for (int o = 0; o < kOpCount; ++o) out.ops[o] = led.get(static_cast<Op>(o));
  out.conv_rotations = led.total_rotations() - out.tags[static_cast<int>(RotTag::Other)];
  out.boots = res.boots;
  out.scheduled_boots = scheduled_boot_count(spec);
  out.eff_total = effective_rotations(led, KeySet::for_network(spec)).eff_total;
  out.levels = led.level_marks();
  out.pass = out.boots == out.scheduled_boots;

  if (rc.mode == Mode::Full) {
    ForwardTrace tr;
    out.oracle_logits = forward_ref(w, x, &tr);
    out.logits = res.logits;
    out.checksum = logits_checksum(out.logits);
    double err = 0;
    for (size_t i = 0; i < out.logits.size(); ++i) err = std::max(err, std::abs(out.logits[i] - out.oracle_logits[i]));
    out.oracle_max_error = err;
    double rel = rel_err(res.stem_out, tr.stem_out);
    for (size_t b = 0; b < res.block_out.size(); ++b) rel = std::max(rel, rel_err(res.block_out[b], tr.block_out[b]));
    out.layer_max_rel = rel;
    out.pass = out.pass && err < kLogitTol && rel < kLayerTol;
  }
  return out;
}

std::string run_report_json(const RunOutcome& r) {
  json j;
  j["schema"] = kReportSchema;
  j["command"] = "run";
  j["preset"] = r.spec.preset;
  j["plan"] = {{"name", r.spec.plan.name}, {"stages", r.spec.plan.to_string()}, {"scheme", scheme_name(r.spec.scheme)}};
  j["algo"] = {{"reorder", r.spec.algo.reorder}, {"fused", r.spec.algo.fused}};
  j["params"] = {{"name", r.spec.params.name},
                 {"slot_count", r.spec.params.slot_count},
                 {"usable_level", r.spec.params.usable_level},
                 {"max_level", r.spec.params.max_level}};
  j["mode"] = r.mode == Mode::Full ? "full" : "trace";
  j["seed"] = r.seed;
  json tags = json::object();
  for (int t = 0; t < kTagCount; ++t) tags[tag_name(static_cast<RotTag>(t))] = r.tags[t];
  json ops = json::object();
  for (int o = 0; o < kOpCount; ++o) ops[op_name(static_cast<Op>(o))] = r.ops[o];
  j["ledger"] = {{"rotations", tags}, {"ops", ops}, {"conv_rotations", r.conv_rotations}, {"eff_total", r.eff_total}};
  j["boots"] = r.boots;
  j["scheduled_boots"] = r.scheduled_boots;
  json sites = json::array();
  for (const BootSite& b : r.spec.boots) sites.push_back({{"where", b.where}, {"cts", b.cts}, {"level", b.level}});
  j["boot_sites"] = sites;
  json lv = json::array();
  for (const LevelMark& m : r.levels) lv.push_back({{"where", m.where}, {"level", m.level}});
  j["levels"] = lv;
  if (r.mode == Mode::Full) {
    j["logits"] = r.logits;
    j["logits_checksum"] = r.checksum;
    j["oracle_max_error"] = r.oracle_max_error;
    j["layer_max_rel_error"] = r.layer_max_rel;
    j["tolerance"] = {{"logits", kLogitTol}, {"layer_rel", kLayerTol}};
  } else {
    j["oracle_max_error"] = nullptr;
  }
  j["pass"] = r.pass;
  return j.dump(2) + "\n";
}

// ---- table diffs ----

const std::vector<CostSetting>& cost_settings() {
  static const std::vector<CostSetting> s = {
      {Algo::MPConvLC, 2, 1, 2},      {Algo::MPConvLC, 4, 4, 2},    {Algo::CAConv, 2, 2, 2},
      {Algo::CAConv, 4, 4, 2},        {Algo::RAConvNaive, 2, 2, 2}, {Algo::RAConvNaive, 4, 4, 2},
      {Algo::RAConvReorder, 2, 2, 2}, {Algo::RAConvReorder, 4, 4, 2},
  };
  return s;
}

namespace {
DiffCell cell(std::string table, std::string row, std::string col, double expected, double measured, double tol) {
  DiffCell c{std::move(table), std::move(row), std::move(col), expected, measured, tol, false};
  c.pass = tol == 0 ? expected == measured : std::abs(measured - expected) <= tol * std::abs(expected);
  return c;
}
}  // namespace

std::vector<DiffCell> table_diff(const TableOptions& opt) {
  std::vector<DiffCell> cells;
  if (opt.cost) {
    for (const CostSetting& s : cost_settings())
      for (int f : {1, 3}) {
        const ConvCost want = opt.formula(s.algo, f, s.c_n, s.m, s.d);
        const ConvCost got = measure_conv_cost(s.algo, f, s.c_n, s.m, s.d);
        const std::string row = std::string(algo_name(s.algo)) + " f=" + std::to_string(f) + " c_n=" +
                                std::to_string(s.c_n) + " m=" + std::to_string(s.m) + " d=" + std::to_string(s.d);
        cells.push_back(cell("conv_cost", row, "n_i", want.n_i, got.n_i, 0));
        cells.push_back(cell("conv_cost", row, "n_o", want.n_o, got.n_o, 0));
        for (int t = 0; t < kTagCount; ++t)
          if (static_cast<RotTag>(t) != RotTag::Other)
            cells.push_back(cell("conv_cost", row, tag_name(static_cast<RotTag>(t)), want.rot[t], got.rot[t], 0));
      }
  }
  if (opt.runtime) {
    for (const RuntimeRow& r : runtime_table()) {
      NetworkSpec spec = schedule_bootstraps(build_network(r.preset, named_plan(r.preset, r.plan)));
      KeySet keys = KeySet::for_network(spec);
      NetworkCount c = count_network(spec, &keys);
      const std::string row = r.preset + " " + r.plan;
      cells.push_back(cell("runtime", row, "siso", r.siso, c.siso, 0));
      cells.push_back(cell("runtime", row, "ras", r.ras, c.ras, 0));
      cells.push_back(cell("runtime", row, "ir", r.ir, c.ir, 0));
      cells.push_back(cell("runtime", row, "total", r.total, c.total, 0));
      cells.push_back(cell("runtime", row, "eff_total", r.eff_total, c.eff_total, 0.05));
      cells.push_back(cell("runtime", row, "boots", r.boots, c.boots, 0));
    }
  }
  if (opt.memory) {
    NetworkSpec spec = build_network("resnet18", named_plan("resnet18", "optimal"));
    const HeParams p = HeParams::set_hyp();
    const MemoryReport m1 = memory_footprint(spec, p, 1);
    for (const MemoryRow& r : memory_table()) {
      const MemoryReport m = memory_footprint(spec, p, r.prcr_segments);
      cells.push_back(cell("memory", r.name, "weight_gb", r.weight_gb, m.weight_pt_bytes / 1e9, 0.02));
      if (r.prcr_segments > 1)
        cells.push_back(cell("memory", r.name, "reduction", r.prcr_segments, m1.weight_pt_bytes / m.weight_pt_bytes, 0));
    }
  }
  return cells;
}

bool all_pass(const std::vector<DiffCell>& cells) {
  for (const DiffCell& c : cells)
    if (!c.pass) return false;
  return true;
}

std::string cells_csv(const std::vector<DiffCell>& cells) {
  std::ostringstream o;
  o << "table,row,column,expected,measured,tolerance,result\n";
  o.precision(10);
  for (const DiffCell& c : cells)
    o << c.table << "," << c.row << "," << c.column << "," << c.expected << "," << c.measured << "," << c.tolerance
      << "," << (c.pass ? "PASS" : "FAIL") << "\n";
  return o.str();
}

std::string search_csv(const std::vector<PlanScore>& ranked, size_t top) {
  std::ostringstream o;
  o << "rank,plan,siso,ras,ir,total,boots,score\n";
  for (size_t i = 0; i < ranked.size() && (top == 0 || i < top); ++i) {
    const PlanScore& s = ranked[i];
    o << i + 1 << ",\"" << s.plan.to_string() << "\"," << s.count.siso << "," << s.count.ras << "," << s.count.ir << ","
      << s.count.total << "," << s.count.boots << "," << s.score << "\n";
  }
  return o.str();
}

std::string memory_json(const NetworkSpec& spec, const MemoryReport& m) {
  json j;
  j["schema"] = kReportSchema;
  j["command"] = "footprint";
  j["preset"] = spec.preset;
  j["plan"] = spec.plan.to_string();
  j["params"] = spec.params.name;
  j["prcr_segments"] = m.prcr_segments;
  j["weight_slots"] = m.weight_slots;
  j["weight_pt_bytes"] = m.weight_pt_bytes;
  j["bias_pt_bytes"] = m.bias_pt_bytes;
  j["ct_bytes"] = m.ct_bytes;
  j["evk_count"] = m.evk_count;
  j["evk_bytes"] = m.evk_bytes;
  j["total_bytes"] = m.total();
  json e = json::array();
  for (const MemoryEntry& x : m.entries)
    e.push_back({{"name", x.name},
                 {"weight_slots", x.weight_slots},
                 {"weight_pt_bytes", x.weight_pt_bytes},
                 {"bias_pt_bytes", x.bias_pt_bytes},
                 {"ct_bytes", x.ct_bytes}});
  j["entries"] = e;
  return j.dump(2) + "\n";
}

}  // namespace slotconv
