// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "slotconv/heslot.hpp"
#include "slotconv/tensor.hpp"

namespace slotconv {

int ilog2(int64_t x);
bool is_pow2(int64_t x);
int64_t pow2_ceil(int64_t x);

// Physical placement of one image stage inside the slot vector.
//   slot = rep*block + a*G + (h*cell_h + rr)*grid_w + w*cell_w + cc
// with cell position t = rr*cell_w + cc.
struct Geometry {
  int64_t slots = 32768;
  int grid_h = 1, grid_w = 1;
  int cell_h = 1, cell_w = 1;
  int img = 1;
  int reps = 1;

  int64_t group_size() const { return static_cast<int64_t>(grid_h) * grid_w; }
  int64_t block_size() const { return slots / reps; }
  int groups() const { return static_cast<int>(block_size() / group_size()); }
  int cell_slots() const { return cell_h * cell_w; }
  int64_t row_step() const { return static_cast<int64_t>(cell_h) * grid_w; }
  int64_t col_step() const { return cell_w; }
  int pixel_rows() const { return grid_h / cell_h; }
  int pixel_cols() const { return grid_w / cell_w; }
  int64_t cell_offset(int t) const { return static_cast<int64_t>(t / cell_w) * grid_w + t % cell_w; }
  int64_t pixel_offset(int h, int w) const { return h * row_step() + w * col_step(); }
  int64_t slot(int rep, int a, int h, int w, int t) const {
    return rep * block_size() + a * group_size() + pixel_offset(h, w) + cell_offset(t);
  }
  // Geometry after a stride-2 layer: same grid, doubled cell, halved image.
  Geometry strided() const;
  void validate() const;
  bool operator==(const Geometry& o) const;
};

// Padded power-of-two grid for an img x img image with the given cell.
Geometry grid_geometry(int64_t slots, int img, int cell_h, int cell_w, int reps = 1);

enum class Packing { CA, RA };

// Concrete slot map. Cell position t splits as t = j + m*k.
//   CA: entry (a*S + s)*m + j holds a channel; copies over k.
//   RA: entry k holds a channel; copies over groups and j.
struct Format {
  Packing kind = Packing::CA;
  Geometry geo;
  int m = 1, d = 1;
  int segments = 1;
  int channels = 0;
  int valid_dups = 0;  // CA only: copies k >= valid_dups hold garbage; 0 means all valid
  std::vector<std::vector<int>> chan;

  int num_cts() const { return static_cast<int>(chan.size()); }
  int groups() const { return geo.groups(); }
  int entries() const { return kind == Packing::CA ? groups() * segments * m : d; }
  int seg_rows() const { return geo.grid_h / segments; }
  int segment_of(int h, int rr) const { return (h * geo.cell_h + rr) / seg_rows(); }
  std::string describe() const;
  void validate() const;
};

Format ca_format(const Geometry& g, int m, int d, int channels);
Format ra_format(const Geometry& g, int m, int d, int channels);
// Circular segment layout: ct q of a set holds at fragment u = a*S + s the
// channel block (u + q) mod (c_n*S).
Format prcr_ca_format(const Geometry& g, int m, int d, int channels, int segments);

bool same_layout(const Format& a, const Format& b);

// Visits every occupied slot: fn(ct, slot, channel, h, w).
template <class Fn>
void for_each_slot(const Format& f, Fn&& fn);

std::vector<std::vector<double>> pack_slots(const Tensor& t, const Format& f);
Tensor unpack_slots(const std::vector<std::vector<double>>& cts, const Format& f, int h, int w);

struct PackedTensor {
  std::vector<Ct> cts;
  Format format;
  int channels = 0, height = 0, width = 0;
};

PackedTensor pack(Backend& be, const Tensor& t, const Format& f, int level);
Tensor unpack(const Backend& be, const PackedTensor& p);

// Multiplexed packing of m channels into sqrt(m) x sqrt(m) cells.
PackedTensor multiplexed_pack(Backend& be, const Tensor& t, int m, int level);

// Descriptive dimension list with the text grammar
//   KIND[c=N] followed by DIM[size] tokens, e.g. CA[c=16]H[32]W[32]Rg[2]Cg[1]
struct DataFormat {
  std::string kind = "CA";  // CA, RA or MP
  int channels = 0;
  std::vector<std::pair<std::string, int>> dims;

  int dim(const std::string& name, int fallback = 0) const;
  std::string to_string() const;
  static DataFormat parse(const std::string& text);
  int64_t product() const;
};

DataFormat data_format(const Format& f);
DataFormat prcr_format(const DataFormat& f, int segments);
// Builds a concrete format from a descriptor; cells are Rg rows by Cg columns.
Format format_from(const DataFormat& df, int64_t slots);

using MaskSet = std::map<std::string, std::vector<double>>;
// purpose: gap_select, ir_move, segment
MaskSet build_masks(const Format& f, const std::string& purpose);

// ---- template definitions ----

template <class Fn>
void for_each_slot(const Format& f, Fn&& fn) {
  const Geometry& g = f.geo;
  const int cs = g.cell_slots();
  for (int ct = 0; ct < f.num_cts(); ++ct) {
    const auto& tab = f.chan[ct];
    for (int r = 0; r < g.reps; ++r)
      for (int a = 0; a < g.groups(); ++a)
        for (int h = 0; h < g.img; ++h)
          for (int w = 0; w < g.img; ++w)
            for (int t = 0; t < cs; ++t) {
              int j = t % f.m, k = t / f.m;
              int c;
              if (f.kind == Packing::CA) {
                if (f.valid_dups > 0 && k >= f.valid_dups) continue;
                int s = f.segments > 1 ? f.segment_of(h, t / g.cell_w) : 0;
                c = tab[(a * f.segments + s) * f.m + j];
              } else {
                c = tab[k];
              }
              if (c < 0) continue;
              fn(ct, g.slot(r, a, h, w, t), c, h, w);
            }
  }
}

}  // namespace slotconv
