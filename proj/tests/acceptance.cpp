// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
//
// One PASS/FAIL line per acceptance criterion.
//   acceptance            report mode, exits 0 once every criterion ran
//   acceptance --strict   exits 1 if any criterion failed
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <sstream>
#include <string>

#include "slotconv/report.hpp"
#include "support.hpp"

using namespace slotconv;
using namespace testsupport;

namespace {

// Tolerances.
constexpr double kEffSlack = 0.05;        // criterion 2
constexpr double kTraceSeconds = 60;      // criterion 1, per network
constexpr double kFullSeconds = 600;      // criterion 3
constexpr int kFusedConstant = 4;         // criterion 6
constexpr double kWeightGb = 364.8;       // criterion 8
constexpr double kWeightSlack = 0.02;
constexpr int kPrcrSegments = 8;

struct Verdict {
  bool pass = true;
  std::ostringstream why;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      why << " [" << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

NetworkSpec scheduled(const std::string& preset, const std::string& plan) {
  return schedule_bootstraps(build_network(preset, named_plan(preset, plan)));
}

// ---- 1 ----
void rotation_counts(Verdict& v) {
  for (const RuntimeRow& r : runtime_table()) {
    auto t0 = std::chrono::steady_clock::now();
    NetworkCount c = count_network(scheduled(r.preset, r.plan), nullptr);
    const double s = seconds_since(t0);
    const std::string row = r.preset + " " + r.plan;
    v.why << " " << row << " " << c.total << "/" << r.total << " boot " << c.boots << "/" << r.boots << ";";
    v.require(c.total == r.total, row + " total");
    v.require(c.boots == r.boots, row + " boots");
    if (r.preset == "resnet20" && r.plan == "optimal") {
      v.require(c.siso == r.siso, row + " siso");
      v.require(c.ras == r.ras, row + " ras");
      v.require(c.ir == r.ir, row + " ir");
    }
    v.require(s < kTraceSeconds, row + " trace time");
  }
}

// ---- 2 ----
void effective_counts(Verdict& v) {
  for (const RuntimeRow& r : runtime_table()) {
    if (r.preset == "resnet20" && r.plan == "baseline") continue;
    NetworkSpec spec = scheduled(r.preset, r.plan);
    KeySet keys = KeySet::for_network(spec);
    NetworkCount c = count_network(spec, &keys);
    const double rel = (double(c.eff_total) - r.eff_total) / r.eff_total;
    char buf[96];
    std::snprintf(buf, sizeof buf, " %s %s %lld/%lld (%+.1f%%);", r.preset.c_str(), r.plan.c_str(),
                  static_cast<long long>(c.eff_total), static_cast<long long>(r.eff_total), 100 * rel);
    v.why << buf;
    v.require(std::abs(rel) <= kEffSlack, r.preset + " " + r.plan);
  }
}

// ---- 3 ----
Tensor block_ref(const BlockWeights& b, const Tensor& x) {
  Tensor a = square_ref(conv2d_ref(x, b.conv1, b.stride, 1));
  Tensor m = conv2d_ref(a, b.conv2, 1, 1);
  Tensor sc = b.proj ? conv2d_ref(x, *b.proj, b.stride, 0) : x;
  return square_ref(add_ref(m, sc));
}

void oracle_equivalence(Verdict& v) {
  auto t0 = std::chrono::steady_clock::now();
  RunConfig rc;
  rc.spec = scheduled("resnet20", "optimal");
  rc.mode = Mode::Full;
  rc.seed = 1;
  RunOutcome r = execute_run(rc);
  v.why << " resnet20 logits " << r.oracle_max_error << " layers " << r.layer_max_rel << ";";
  v.require(r.oracle_max_error >= 0 && r.oracle_max_error < kLogitTol, "resnet20 logits");
  v.require(r.layer_max_rel >= 0 && r.layer_max_rel < kLayerTol, "resnet20 layers");

  // ResNet-18 Layer1 + Layer2 (blocks 0..3) from a packed stage-0 input.
  NetworkSpec spec = scheduled("resnet18", "optimal");
  ModelWeights w = random_weights(spec, 2);
  const StageSpec& s0 = spec.stages.at(0);
  Tensor x = random_tensor(s0.channels, s0.img, s0.img, 3);
  calibrate_weights(w, x, false, 0, 4);
  Backend be(spec.params, Mode::Full);
  std::vector<Tensor> outs;
  PackedTensor y = run_blocks(be, spec, w, pack(be, x, spec.stage_format(0), spec.params.usable_level), 0, 4, &outs);
  Tensor h = x;
  double worst = 0;
  for (int b = 0; b < 4; ++b) {
    h = block_ref(w.blocks[b], h);
    worst = std::max(worst, b < static_cast<int>(outs.size()) ? rel_err(outs[b], h) : 1.0);
  }
  v.why << " resnet18 slice layers " << worst << ";";
  v.require(outs.size() == 4, "resnet18 slice outputs");
  v.require(worst < kLayerTol, "resnet18 slice layers");
  v.require(rel_err(unpack(be, y), h) < kLayerTol, "resnet18 slice output");
  const double s = seconds_since(t0);
  v.why << " " << s << " s";
  v.require(s < kFullSeconds, "full-mode time");
}

// ---- 4 ----
void formula_agreement(Verdict& v) {
  TableOptions o;
  o.runtime = o.memory = false;
  auto cells = table_diff(o);
  int fails = 0;
  for (const DiffCell& c : cells)
    if (!c.pass) {
      ++fails;
      v.require(false, c.row + " " + c.column);
    }
  v.why << " " << cost_settings().size() * 2 << " combinations, " << cells.size() - fails << "/" << cells.size()
        << " cells equal";
  v.require(cost_settings().size() * 2 == 16, "combination count");
}

// ---- 5 ----
void reorder_property(Verdict& v) {
  for (int c : {2, 4, 8})
    for (int f : {1, 3}) {
      const int64_t slots = 16 * c;  // 4x4 image, c groups
      Geometry g = grid_geometry(slots, 4, 1, 1);
      HeParams p = HeParams::set_hyp();
      p.slot_count = slots;
      Tensor x = random_tensor(c, 4, 4, 10 + c);
      ConvWeights k = random_conv(c, c, f, 20 + c);
      Backend a(p, Mode::Full), b(p, Mode::Full);
      auto ia = pack(a, x, ra_format(g, 1, 1, c), 6);
      auto ib = pack(b, x, ra_format(g, 1, 1, c), 6);
      const int n_i = static_cast<int>(ia.cts.size());
      auto ya = raconv(a, ia, k, raconv_out_format(ia.format, c), false);
      auto yb = raconv(b, ib, k, raconv_out_format(ib.format, c), true);
      const int64_t naive = a.ledger().rotations(RotTag::Slide), reord = b.ledger().rotations(RotTag::Slide);
      const std::string tag = "c=" + std::to_string(c) + " f=" + std::to_string(f);
      v.require(naive == int64_t(n_i) * (f * f - 1), tag + " naive slides");
      v.require(reord == f * f - 1, tag + " reordered slides");
      bool same = ya.cts.size() == yb.cts.size();
      for (size_t i = 0; same && i < ya.cts.size(); ++i) same = a.decrypt(ya.cts[i]) == b.decrypt(yb.cts[i]);
      v.require(same, tag + " bitwise outputs");
      if (f == 3) v.why << " n_i=" << n_i << " naive " << naive << " reordered " << reord << ";";
    }
}

// ---- 6 ----
void fused_memory(Verdict& v) {
  struct Case {
    int64_t slots;
    int img, ch, cw, m, d, c;
    Mode mode;
  };
  // Small full-value cases, then ResNet-20 stage 1 and ResNet-18 layer 1 shapes in trace mode.
  for (Case t : {Case{64, 4, 1, 1, 1, 1, 4, Mode::Full}, Case{256, 4, 2, 1, 1, 2, 8, Mode::Full},
                 Case{256, 4, 1, 1, 1, 1, 32, Mode::Full}, Case{32768, 32, 2, 1, 1, 2, 16, Mode::Trace},
                 Case{32768, 56, 1, 1, 1, 1, 64, Mode::Trace}}) {
    Geometry g = grid_geometry(t.slots, t.img, t.ch, t.cw);
    HeParams p = HeParams::set_hyp();
    p.slot_count = t.slots;
    Backend be(p, t.mode);
    Tensor x = random_tensor(t.c, t.img, t.img, 30);
    ConvWeights k1 = random_conv(t.c, t.c, 3, 31), k2 = random_conv(t.c, t.c, 3, 32);
    auto in = pack(be, x, ca_format(g, t.m, t.d, t.c), 6);
    const int64_t n_ca = static_cast<int64_t>(in.cts.size());
    FusedStats st;
    auto y = fused_block(be, in, k1, k2, in.format, &st);
    const int64_t bound = n_ca * 9 + kFusedConstant;
    v.why << " n_CA=" << n_ca << " peak " << st.peak_intermediate << "<=" << bound << ";";
    v.require(st.peak_intermediate <= bound, "n_CA=" + std::to_string(n_ca));
    if (t.mode == Mode::Full)
      v.require(max_abs_diff(unpack(be, y), conv2d_ref(square_ref(conv2d_ref(x, k1, 1, 1)), k2, 1, 1)) < 1e-8,
                "fused output");
  }
}

// ---- 7 ----
void level_budget(Verdict& v) {
  for (const RuntimeRow& r : runtime_table()) {
    const std::string row = r.preset + " " + r.plan;
    try {
      NetworkSpec spec = scheduled(r.preset, r.plan);
      v.require(spec.params.usable_level == 6, row + " L'");
      Backend be(spec.params, Mode::Trace);
      ModelWeights w = random_weights(spec, 0);
      Tensor x(spec.in_channels, spec.in_img, spec.in_img);
      InferenceResult res = run_inference(be, spec, w, x);
      auto marks = be.ledger().level_marks();
      std::vector<int> used;
      for (size_t i = 0; i + 1 < marks.size(); ++i)
        if (marks[i].where.size() > 3 && marks[i].where.ends_with(".in") && marks[i + 1].where.ends_with(".out"))
          used.push_back(marks[i].level - marks[i + 1].level);
      v.require(used.size() == spec.blocks.size(), row + " block marks");
      // The final hybrid block hands its selection mask level to the head.
      const int last = spec.scheme == Scheme::Hybrid ? kBlockLevels - 1 : kBlockLevels;
      for (size_t b = 0; b < used.size(); ++b)
        v.require(used[b] == (b + 1 == used.size() ? last : kBlockLevels), row + " block" + std::to_string(b));
      v.require(res.boots == r.boots && res.boots == scheduled_boot_count(spec), row + " boots");
    } catch (const Error& e) {
      v.require(false, row + " " + e.what());
    }
  }
  v.why << " six networks, L'=6";
}

// ---- 8 ----
void memory(Verdict& v) {
  NetworkSpec spec = build_network("resnet18", named_plan("resnet18", "optimal"));
  const HeParams p = HeParams::set_hyp();
  MemoryReport m1 = memory_footprint(spec, p, 1), m8 = memory_footprint(spec, p, kPrcrSegments);
  const double gb = m1.weight_pt_bytes / 1e9;
  v.why << " " << gb << " GB, PRCR " << m8.weight_pt_bytes / 1e9 << " GB;";
  v.require(std::abs(gb - kWeightGb) <= kWeightSlack * kWeightGb, "weight bytes");
  v.require(m1.weight_pt_bytes == m8.weight_pt_bytes * kPrcrSegments, "PRCR ratio");

  // Base case: one conv on an unpadded grid, simulator plaintexts vs w*h*f^2*ci*co.
  for (int c : {2, 4}) {
    Geometry g = grid_geometry(16 * c, 4, 1, 1);
    ConvLayerSpec l{c, c, 4, 4, 3, 1, 1, {}, {}, Algo::CAConv};
    const int64_t want = 4 * 4 * 9 * int64_t(c) * c;
    v.require(conv_weight_slots(l) == want, "slot formula");
    v.require(caconv_weight_stats(ca_format(g, 1, 1, c), c, 3).weight_slots == want, "simulated slots");
  }
  v.why << " base case exact";
}

// ---- 9 ----
void plan_search(Verdict& v) {
  auto r20 = search_plans("resnet20", Objective{}, HeParams::set_hyp(), AlgoMix{});
  v.require(!r20.empty() && r20[0].plan.to_string() == "1,2/2,4/4,8", "resnet20 first");
  if (!r20.empty()) v.why << " resnet20 first " << r20[0].plan.to_string() << ";";
  auto r18 = search_plans("resnet18", Objective{}, HeParams::set_hyp(), AlgoMix{});
  auto rank = [&](const std::string& s) {
    for (size_t i = 0; i < r18.size(); ++i)
      if (r18[i].plan.to_string() == s) return static_cast<int>(i) + 1;
    return -1;
  };
  const int opt = rank("1,1/2,2/4,4/8,8"), mb = rank("1,1/4,1/16,1/64,1");
  v.why << " resnet18 optimal rank " << opt << ", min boot rank " << mb;
  v.require(opt > 0 && mb > 0 && opt < mb, "resnet18 order");
}

// ---- 10 ----
void not_reproducible(Verdict& v) {
  v.require(false, "declared");
  v.why << " wall-clock latency and dataset accuracy are not reproduced; criteria 1-9 stand in";
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0) {
      strict = true;
    } else {
      std::fprintf(stderr, "usage: acceptance [--strict]\n");
      return 2;
    }
  }
  const std::vector<std::pair<const char*, std::function<void(Verdict&)>>> criteria = {
      {"rotation counts", rotation_counts},  {"effective rotations", effective_counts},
      {"oracle equivalence", oracle_equivalence}, {"formula vs simulator", formula_agreement},
      {"reorder property", reorder_property}, {"fused block memory", fused_memory},
      {"level budget", level_budget},         {"memory footprint", memory},
      {"plan search", plan_search},           {"not reproducible", not_reproducible},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      criteria[i].second(v);
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    failed += v.pass ? 0 : 1;
    std::printf("criterion %zu %s: %s%s\n", i + 1, criteria[i].first, v.pass ? "PASS" : "FAIL", v.why.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria PASS\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return strict && failed > 0 ? 1 : 0;
}
