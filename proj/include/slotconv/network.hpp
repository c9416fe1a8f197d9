// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "slotconv/hconv.hpp"
#include "slotconv/oracle.hpp"

namespace slotconv {

// Hybrid: CAConv/RAConv pairs with 2D gap packing. Baseline: multiplexed conv.
enum class Scheme { Hybrid, Baseline };
const char* scheme_name(Scheme s);

// (m,d) per stage. Baseline plans use d = 1 and m = cell area.
struct GapPlan {
  std::string name = "custom";
  Scheme scheme = Scheme::Hybrid;
  std::vector<GapConfig> stages;

  std::string to_string() const;  // "1,2/2,4/4,8"
  static GapPlan parse(const std::string& text, Scheme scheme = Scheme::Hybrid);
  // Throws PlanViolation unless m*d grows by 4 at every stage.
  void validate() const;
};

struct AlgoMix {
  bool reorder = true;  // RAConv reordered or naive
  bool fused = true;    // basic blocks through fused_block
};

struct StageSpec {
  int channels = 16, img = 32, blocks = 3;
};

struct BlockSpec {
  int stage = 0;
  int ci = 0, co = 0, img_in = 0, img_out = 0, stride = 1;
  bool projection = false;
  bool last = false;
};

// Site where every ciphertext of the tensor is bootstrapped.
struct BootSite {
  std::string where;  // "block3", "head.mask", "head.fc"
  int block = -1;     // block index, -1 for the head
  int cts = 0;
  int level = 0;      // level before bootstrapping
};

struct NetworkSpec {
  std::string preset;
  Scheme scheme = Scheme::Hybrid;
  GapPlan plan;
  AlgoMix algo;
  HeParams params;

  int in_channels = 3, in_img = 32, classes = 10;
  StemKind stem_kind = StemKind::Conv;
  int stem_channels = 16, stem_f = 3, stem_stride = 1, stem_pad = 1;
  bool stem_square = true, stem_pool = false;
  std::vector<StageSpec> stages;
  int grid = 32;  // baseline grid side; hybrid grids derive from the first cell

  std::vector<BlockSpec> blocks;
  std::vector<ConvLayerSpec> layers;  // stem first, then conv1, conv2, projection per block
  std::vector<BootSite> boots;
  bool scheduled = false;

  Geometry stage_geometry(int stage) const;
  Format stage_format(int stage) const;
  // Client packing of the network input (conv stems only).
  Format input_format() const;
  int stem_img() const;
  void validate() const;
};

std::vector<std::string> preset_names();
// optimal, minrot, minboot, baseline (availability depends on the preset).
std::vector<std::string> plan_names(const std::string& preset);
GapPlan named_plan(const std::string& preset, const std::string& name);

NetworkSpec build_network(const std::string& preset, const GapPlan& plan, const AlgoMix& algo = {},
                          const HeParams& params = HeParams::set_hyp());
// Single stage with no blocks: stem conv then head. Used for small checks.
NetworkSpec build_micro(int channels, int img, int stem_f, const GapConfig& gap, int64_t slots, bool stem_square);

// Static level walk. Throws InfeasibleBudget when L' cannot hold a block or the head.
NetworkSpec schedule_bootstraps(const NetworkSpec& spec);
int64_t scheduled_boot_count(const NetworkSpec& spec);
int stem_levels(const NetworkSpec& spec);
constexpr int kBlockLevels = 6;

// Seeded weights shaped per spec. Calibration scales each conv on the
// oracle so its output RMS hits a fixed target.
ModelWeights random_weights(const NetworkSpec& spec, uint64_t seed);
void calibrate_weights(ModelWeights& w, const Tensor& x, bool from_stem, int first_block, int nblocks);

struct RunOptions {
  bool keep_outputs = false;  // unpack stem and block outputs (full mode)
};

struct InferenceResult {
  std::vector<double> logits;  // empty in trace mode
  Tensor stem_out;
  std::vector<Tensor> block_out;
  int64_t boots = 0;
};

InferenceResult run_inference(Backend& be, const NetworkSpec& spec, const ModelWeights& w, const Tensor& x,
                              const RunOptions& opt = {});
// Runs blocks [first, first + count) on a packed tensor in the stage format.
PackedTensor run_blocks(Backend& be, const NetworkSpec& spec, const ModelWeights& w, PackedTensor x, int first,
                        int count, std::vector<Tensor>* outs = nullptr);

// Global average pool then FC. Logits end up in slots 0..classes-1.
// boot_mask / boot_fc bootstrap before the selection mask / before the FC.
Ct avg_pool_and_fc(Backend& be, const PackedTensor& x, const FcWeights& fc, bool boot_mask, bool boot_fc);
std::vector<double> decode_logits(const Backend& be, const Ct& ct, int classes);

// Stem through client-side im2col rows: a rotation-free plaintext product.
// pool averages 2x2 windows after the optional square.
PackedTensor im2col_head(Backend& be, const Tensor& x, const ConvWeights& k, int stride, int pad, bool square,
                         bool pool, const Format& out, int level);

}  // namespace slotconv
