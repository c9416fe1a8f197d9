// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "slotconv/heslot.hpp"
#include "slotconv/layout.hpp"
#include "slotconv/tensor.hpp"

namespace slotconv {

enum class Algo { SISO, MPConvLC, CAConv, RAConvNaive, RAConvReorder, Im2col };
const char* algo_name(Algo a);
std::optional<Algo> parse_algo(const std::string& s);

struct GapConfig {
  int m = 1, d = 1;
  bool operator==(const GapConfig&) const = default;
};

struct ConvLayerSpec {
  int ci = 1, co = 1, wi = 1, wo = 1, f = 3, s = 1, pad = 1;
  GapConfig gap_in, gap_out;
  Algo algo = Algo::CAConv;
  void validate() const;
};

enum class WeightLayout { Standard, InverseRotated, Prcr };

// Left-rotation amount that brings the (ky, kx) neighbour onto the centre pixel.
int64_t slide_shift(const Geometry& g, int f, int ky, int kx);
// Physical offset of cell position t inside its pixel cell.
int64_t cell_shift(const Geometry& g, int t);

// ---- single channel ----

// in: one channel packed with m = d = 1. Output keeps the geometry; for
// stride 2 the valid outputs sit on even pixels and the rest are zero.
PackedTensor siso(Backend& be, const PackedTensor& in, const ConvWeights& k, int stride = 1);

// Sum over i of conv(x_i, k_i), all single channel in one format.
// Naive slides every input; reordered rotates once per tap after the
// inputs are accumulated against pre-rotated plaintexts.
Ct siso_sum(Backend& be, const std::vector<Ct>& xs, const Format& fmt, const std::vector<ConvWeights>& ks,
            bool reordered);

// ---- building blocks ----

// log2(groups) rotations by stride_slots * 2^b; every slot gets the cyclic sum.
Ct ras(Backend& be, const Ct& ct, int groups, int64_t stride_slots, RotTag tag);
// Sum over the cell positions t = base + step*i, i < count (power of two).
Ct ras_cell(Backend& be, const Ct& ct, const Geometry& g, int step, int count, RotTag tag);
// Inverse of ras_cell on a ciphertext that is zero outside position 0.
Ct replicate_cell(Backend& be, const Ct& ct, const Geometry& g, int step, int count, RotTag tag);
Ct square_activation(Backend& be, const Ct& ct);

// Raw channels left by a strided conv before realignment.
struct RawItem {
  int channel;
  int rep;    // repetition block of the source
  int group;  // -1: replicated over all groups
  int t;      // cell position in the output geometry
};
struct RawTensor {
  std::vector<Ct> cts;
  std::vector<std::vector<RawItem>> items;
  Geometry geo;  // output geometry
  int channels = 0;
};

struct Move {
  int target;  // output ciphertext
  int src;     // raw ciphertext
  int64_t delta;
  std::vector<int64_t> slots;  // source slots selected by the mask
};
struct GatherPlan {
  Format format;  // target with its channel table filled in
  std::vector<Move> moves;
  std::vector<int64_t> replicate_shifts;  // one doubling each, applied after the moves
  int rotations() const;
};

// Realignment planner into pi_RA or pi_CA. Zero-shift moves
// first, then moves that reuse a shift already taken by the same source.
GatherPlan plan_gather(const RawTensor& raw, Packing kind, const Geometry& g, int m, int d);
// Fixed-order gather used by the multiplexed baseline.
GatherPlan plan_gather_mp(const RawTensor& raw, const Format& target);
// Applies the plan: mask, rotate, add, one rescale, then replicate.
PackedTensor ir(Backend& be, const RawTensor& raw, const GatherPlan& plan, int height, int width);

// ---- convolutions ----

struct ConvOptions {
  int stride = 1;
  bool mask = true;        // final IR_g mask and replication
  bool add_bias = true;
  RotTag ir_tag = RotTag::IR;
};

// pi_CA -> pi_RA (stride 1). Passes = c_o / d.
PackedTensor caconv(Backend& be, const PackedTensor& in, const ConvWeights& k, const ConvOptions& opt = {});
// Strided CAConv: passes = c_o / d_in; returns the raw pass ciphertexts.
RawTensor caconv_raw(Backend& be, const PackedTensor& in, const ConvWeights& k, int stride);
// pi_RA -> pi_CA. out_format fixes the output channel table.
PackedTensor raconv(Backend& be, const PackedTensor& in, const ConvWeights& k, const Format& out_format,
                    bool reorder, const ConvOptions& opt = {});
// Canonical pi_CA output for an RAConv on `in`.
Format raconv_out_format(const Format& in, int co);
// Multiplexed baseline: same fixed grid in and out, output in `out_format`.
PackedTensor mp_conv(Backend& be, const PackedTensor& in, const ConvWeights& k, int stride,
                     const Format& out_format);
RawTensor mp_conv_raw(Backend& be, const PackedTensor& in, const ConvWeights& k, int stride);
// Baseline format for a fixed grid: c_n = min(c/m, groups), reps fill the rest.
Format mp_format(int64_t slots, int grid, int img, int m, int channels);

struct FusedStats {
  int64_t peak_intermediate = 0;  // excluding the slide copies of the input
  int64_t peak_total = 0;
  int64_t slide_copies = 0;
  int64_t accumulators = 0;
};
// CAConv -> square -> RAConv (reorder) without materialising all pi_RA ciphertexts.
PackedTensor fused_block(Backend& be, const PackedTensor& in, const ConvWeights& w_ca, const ConvWeights& w_ra,
                         const Format& out_format, FusedStats* stats = nullptr, const ConvOptions& ra_opt = {});

// CAConv on a segmented pi_CA' input. One plaintext per (pass, set, tap) is
// rotated by the fragment size for each ciphertext of the set.
struct PrcrStats {
  int64_t weight_plaintexts = 0;
  int64_t weight_slots = 0;
};
PackedTensor caconv_prcr(Backend& be, const PackedTensor& in, const ConvWeights& k, PrcrStats* stats = nullptr,
                         const ConvOptions& opt = {});
// Weight plaintext count and slots of the standard CAConv for comparison.
PrcrStats caconv_weight_stats(const Format& in, int co, int f);

// Elementwise helpers on packed tensors.
PackedTensor square_all(Backend& be, const PackedTensor& x);
PackedTensor add_all(Backend& be, const PackedTensor& a, const PackedTensor& b);
PackedTensor bootstrap_all(Backend& be, const PackedTensor& x);
PackedTensor level_down_all(Backend& be, const PackedTensor& x, int level);
int level_of(const PackedTensor& x);

}  // namespace slotconv
