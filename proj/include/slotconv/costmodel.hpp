// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "slotconv/network.hpp"

namespace slotconv {

using TagCounts = std::array<int64_t, kTagCount>;

// Closed-form rotation counts of one conv in its unit setting:
// CAConv and MP-Conv take one input ciphertext, RAConv produces one.
struct ConvCost {
  Algo algo = Algo::CAConv;
  int f = 3, c_n = 1, m = 1, d = 1;
  int64_t n_i = 1, n_o = 1;
  TagCounts rot{};

  int64_t operator[](RotTag t) const { return rot[static_cast<int>(t)]; }
  int64_t total() const;
  bool operator==(const ConvCost&) const = default;
};

ConvCost conv_cost(Algo algo, int f, int c_n, int m, int d);
// Runs the same unit setting through the trace simulator.
ConvCost measure_conv_cost(Algo algo, int f, int c_n, int m, int d);

// Loaded rotation keys as signed representatives in (-slots/2, slots/2].
class KeySet {
 public:
  explicit KeySet(int64_t slots, std::vector<int64_t> amounts = {});

  // +-2^k for 2^k < slots.
  static KeySet power_of_two(int64_t slots);
  // power_of_two plus every f=3 Slide amount of the network's geometries.
  static KeySet for_network(const NetworkSpec& spec);

  void add(int64_t amount);
  bool contains(int64_t amount) const;
  const std::vector<int64_t>& amounts() const { return keys_; }
  int64_t slots() const { return slots_; }
  size_t size() const { return keys_.size(); }
  // Shortest composition length, -1 when unreachable.
  int distance(int64_t amount) const;

 private:
  void rebuild();
  int64_t slots_;
  std::vector<int64_t> keys_;
  std::vector<int> dist_;
};

int64_t normalize_rotation(int64_t amount, int64_t slots);

// Shortest key sequence composing `amount`; ties go to the lexicographically
// smallest sequence. Throws Unreachable.
std::vector<int64_t> decompose_rotation(int64_t amount, const KeySet& keys);

struct EffectiveRotations {
  TagCounts raw{}, eff{};
  int64_t raw_total = 0, eff_total = 0;  // conv tags only (Other excluded)
};
EffectiveRotations effective_rotations(const CostLedger& led, const KeySet& keys);

// Evaluation keys kept for the memory tally: bootstrap rotations,
// relinearization, conjugation and the Slide amounts that are not powers of two.
constexpr int kBootstrapKeys = 48;
int64_t evaluation_key_count(const NetworkSpec& spec);

struct MemoryEntry {
  std::string name;
  int64_t weight_slots = 0;
  double weight_pt_bytes = 0, bias_pt_bytes = 0, ct_bytes = 0;
};
struct MemoryReport {
  int prcr_segments = 1;
  int64_t weight_slots = 0;  // before PRCR
  double weight_pt_bytes = 0, bias_pt_bytes = 0, ct_bytes = 0, evk_bytes = 0;
  int64_t evk_count = 0;
  std::vector<MemoryEntry> entries;  // stem, then one per residual block

  double total() const { return weight_pt_bytes + bias_pt_bytes + ct_bytes + evk_bytes; }
};
// Weight slots of one conv: w_i*h_i*f^2*c_i*c_o, with w_i the fragment count.
int64_t conv_weight_slots(const ConvLayerSpec& l);
MemoryReport memory_footprint(const NetworkSpec& spec, const HeParams& params, int prcr_segments = 1);

// ---- network counts ----

struct NetworkCount {
  TagCounts tags{};
  int64_t siso = 0, ras = 0, ir = 0, total = 0;  // conv rotations
  int64_t boots = 0;
  int64_t eff_total = 0;
};
// Trace run of the whole network. keys == nullptr skips the decomposition.
NetworkCount count_network(const NetworkSpec& spec, const ModelWeights& w, const KeySet* keys = nullptr);
NetworkCount count_network(const NetworkSpec& spec, const KeySet* keys = nullptr);

struct Objective {
  double crot = 15.5;   // time units per rotation
  double boot = 2160;   // time units per bootstrap
};

struct PlanScore {
  GapPlan plan;
  NetworkCount count;
  double score = 0;
};

// Slots of the stage-1 cell: the smallest cell putting every stage-1
// channel of one image copy into a single ciphertext, at least 1.
int first_cell_slots(const std::string& preset, int64_t slots);
std::vector<GapPlan> enumerate_plans(const std::string& preset, int64_t slots = 32768);
// Exhaustive, best first. Plans the network rejects are skipped.
std::vector<PlanScore> search_plans(const std::string& preset, const Objective& obj = {},
                                    const HeParams& params = HeParams::set_hyp(), const AlgoMix& algo = {});

// ---- published numbers ----

struct RuntimeRow {
  std::string preset, plan;
  int64_t siso, ras, ir, total, eff_total, boots;
};
const std::vector<RuntimeRow>& runtime_table();

struct MemoryRow {
  std::string name;
  int prcr_segments;
  double weight_gb;
};
const std::vector<MemoryRow>& memory_table();

}  // namespace slotconv
