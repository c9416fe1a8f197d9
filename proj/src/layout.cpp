// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#include "slotconv/layout.hpp"

#include <cctype>
#include <sstream>

namespace slotconv {

int ilog2(int64_t x) {
  int r = 0;
  while ((int64_t{1} << (r + 1)) <= x) ++r;
  return r;
}

bool is_pow2(int64_t x) { return x > 0 && (x & (x - 1)) == 0; }

int64_t pow2_ceil(int64_t x) {
  int64_t p = 1;
  while (p < x) p <<= 1;
  return p;
}

Geometry Geometry::strided() const {
  Geometry g = *this;
  g.cell_h *= 2;
  g.cell_w *= 2;
  g.img = (img + 1) / 2;
  return g;
}

void Geometry::validate() const {
  if (!is_pow2(grid_h) || !is_pow2(grid_w) || !is_pow2(cell_h) || !is_pow2(cell_w) || !is_pow2(reps))
    throw Error(ErrorCode::GapMismatch, "grid, cell and repetition sizes must be powers of two");
  if (static_cast<int64_t>(img) * cell_h > grid_h || static_cast<int64_t>(img) * cell_w > grid_w)
    throw Error(ErrorCode::CapacityExceeded, "image does not fit the group grid");
  if (group_size() * reps > slots) throw Error(ErrorCode::CapacityExceeded, "group grid exceeds slots");
}

bool Geometry::operator==(const Geometry& o) const {
  return slots == o.slots && grid_h == o.grid_h && grid_w == o.grid_w && cell_h == o.cell_h &&
         cell_w == o.cell_w && img == o.img && reps == o.reps;
}

Geometry grid_geometry(int64_t slots, int img, int cell_h, int cell_w, int reps) {
  Geometry g;
  g.slots = slots;
  g.img = img;
  g.cell_h = cell_h;
  g.cell_w = cell_w;
  g.grid_h = static_cast<int>(pow2_ceil(static_cast<int64_t>(img) * cell_h));
  g.grid_w = static_cast<int>(pow2_ceil(static_cast<int64_t>(img) * cell_w));
  g.reps = reps;
  g.validate();
  return g;
}

std::string Format::describe() const { return data_format(*this).to_string(); }

void Format::validate() const {
  geo.validate();
  if (!is_pow2(m) || !is_pow2(d)) throw Error(ErrorCode::GapMismatch, "m and d must be powers of two");
  if (m * d != geo.cell_slots())
    throw Error(ErrorCode::GapMismatch, "m*d must equal the cell size " + std::to_string(geo.cell_slots()));
  if (segments < 1 || geo.grid_h % segments != 0 || seg_rows() % geo.cell_h != 0)
    throw Error(ErrorCode::IndivisibleHeight, "segments must split the grid on pixel rows");
  for (const auto& row : chan)
    if (static_cast<int>(row.size()) != entries())
      throw Error(ErrorCode::ShapeMismatch, "channel table width mismatch");
}

Format ca_format(const Geometry& g, int m, int d, int channels) {
  Format f;
  f.kind = Packing::CA;
  f.geo = g;
  f.m = m;
  f.d = d;
  f.channels = channels;
  f.validate();
  int e = f.entries();
  int n = (channels + e - 1) / e;
  f.chan.assign(n, std::vector<int>(e, -1));
  for (int c = 0; c < channels; ++c) f.chan[c / e][c % e] = c;
  return f;
}

Format ra_format(const Geometry& g, int m, int d, int channels) {
  Format f;
  f.kind = Packing::RA;
  f.geo = g;
  f.m = m;
  f.d = d;
  f.channels = channels;
  f.validate();
  int n = (channels + d - 1) / d;
  f.chan.assign(n, std::vector<int>(d, -1));
  for (int c = 0; c < channels; ++c) f.chan[c / d][c % d] = c;
  return f;
}

Format prcr_ca_format(const Geometry& g, int m, int d, int channels, int segments) {
  Format f;
  f.kind = Packing::CA;
  f.geo = g;
  f.m = m;
  f.d = d;
  f.segments = segments;
  f.channels = channels;
  f.validate();
  if (g.img % segments != 0) throw Error(ErrorCode::IndivisibleHeight, "image height not divisible by segments");
  const int frags = g.groups() * segments;  // fragments per ciphertext
  const int per_set = frags * m;            // channels covered by one set of S cts
  const int sets = (channels + per_set - 1) / per_set;
  f.chan.assign(static_cast<size_t>(sets) * segments, std::vector<int>(f.entries(), -1));
  for (int set = 0; set < sets; ++set)
    for (int q = 0; q < segments; ++q)
      for (int u = 0; u < frags; ++u)
        for (int j = 0; j < m; ++j) {
          int c = set * per_set + ((u + q) % frags) * m + j;
          f.chan[set * segments + q][u * m + j] = c < channels ? c : -1;
        }
  return f;
}

bool same_layout(const Format& a, const Format& b) {
  return a.kind == b.kind && a.geo == b.geo && a.m == b.m && a.d == b.d && a.segments == b.segments &&
         a.chan == b.chan;
}

std::vector<std::vector<double>> pack_slots(const Tensor& t, const Format& f) {
  if (t.h != f.geo.img || t.w != f.geo.img) throw Error(ErrorCode::ShapeMismatch, "image size differs from format");
  if (t.c > f.channels) throw Error(ErrorCode::CapacityExceeded, "more channels than the format holds");
  std::vector<std::vector<double>> out(f.num_cts(), std::vector<double>(f.geo.slots, 0.0));
  for_each_slot(f, [&](int ct, int64_t slot, int c, int h, int w) {
    if (c < t.c) out[ct][slot] = t.at(c, h, w);
  });
  return out;
}

Tensor unpack_slots(const std::vector<std::vector<double>>& cts, const Format& f, int h, int w) {
  if (static_cast<int>(cts.size()) != f.num_cts()) throw Error(ErrorCode::ShapeMismatch, "ciphertext count");
  Tensor t(f.channels, h, w);
  std::vector<char> seen(t.size(), 0);
  for_each_slot(f, [&](int ct, int64_t slot, int c, int y, int x) {
    size_t idx = (static_cast<size_t>(c) * h + y) * w + x;
    if (!seen[idx]) {
      t.v[idx] = cts[ct][slot];
      seen[idx] = 1;
    }
  });
  return t;
}

PackedTensor pack(Backend& be, const Tensor& t, const Format& f, int level) {
  if (f.geo.slots != be.slots()) throw Error(ErrorCode::ShapeMismatch, "format slot count differs from backend");
  PackedTensor p;
  p.format = f;
  p.channels = t.c;
  p.height = t.h;
  p.width = t.w;
  if (be.full()) {
    auto slots = pack_slots(t, f);
    for (auto& s : slots) p.cts.push_back(be.encrypt(s, level));
  } else {
    if (t.h != f.geo.img || t.w != f.geo.img) throw Error(ErrorCode::ShapeMismatch, "image size differs from format");
    for (int i = 0; i < f.num_cts(); ++i) p.cts.push_back(be.encrypt_trace(level));
  }
  return p;
}

Tensor unpack(const Backend& be, const PackedTensor& p) {
  std::vector<std::vector<double>> v;
  for (const auto& c : p.cts) v.push_back(be.decrypt(c));
  Tensor t = unpack_slots(v, p.format, p.height, p.width);
  if (p.channels && p.channels < t.c) {
    Tensor cut(p.channels, t.h, t.w);
    std::copy(t.v.begin(), t.v.begin() + cut.size(), cut.v.begin());
    return cut;
  }
  return t;
}

PackedTensor multiplexed_pack(Backend& be, const Tensor& t, int m, int level) {
  int side = 1;
  while (side * side < m) ++side;
  if (side * side != m || !is_pow2(side)) throw Error(ErrorCode::GapMismatch, "m must be a square power of two");
  Geometry g = grid_geometry(be.slots(), t.h, side, side);
  return pack(be, t, ca_format(g, m, 1, t.c), level);
}

// ---- DataFormat ----

int DataFormat::dim(const std::string& name, int fallback) const {
  for (const auto& [n, s] : dims)
    if (n == name) return s;
  return fallback;
}

std::string DataFormat::to_string() const {
  std::ostringstream os;
  os << kind << "[c=" << channels << "]";
  for (const auto& [n, s] : dims) os << n << "[" << s << "]";
  return os.str();
}

int64_t DataFormat::product() const {
  int64_t p = 1;
  for (const auto& d : dims) p *= d.second;
  return p;
}

DataFormat DataFormat::parse(const std::string& text) {
  DataFormat df;
  size_t i = 0;
  auto fail = [&](const std::string& why) { throw Error(ErrorCode::ConfigError, "format '" + text + "': " + why); };
  auto token = [&](std::string& name, std::string& arg) {
    size_t s = i;
    while (i < text.size() && (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '\'' || text[i] == '_')) ++i;
    name = text.substr(s, i - s);
    if (name.empty() || i >= text.size() || text[i] != '[') fail("expected NAME[...]");
    size_t e = text.find(']', i);
    if (e == std::string::npos) fail("unclosed bracket");
    arg = text.substr(i + 1, e - i - 1);
    i = e + 1;
  };
  std::string name, arg;
  token(name, arg);
  if (name != "CA" && name != "RA" && name != "MP") fail("kind must be CA, RA or MP");
  df.kind = name;
  if (arg.rfind("c=", 0) != 0) fail("kind token needs c=N");
  df.channels = std::stoi(arg.substr(2));
  static const char* kNames[] = {"C_a", "R_a", "S", "H", "H'", "W", "Rg", "Cg", "R", "C"};
  while (i < text.size()) {
    token(name, arg);
    bool ok = false;
    for (auto* k : kNames) ok |= name == k;
    if (!ok) fail("unknown dimension " + name);
    int v = std::stoi(arg);
    if (v <= 0) fail("dimension sizes must be positive");
    df.dims.emplace_back(name, v);
  }
  return df;
}

DataFormat data_format(const Format& f) {
  DataFormat df;
  df.channels = f.channels;
  const Geometry& g = f.geo;
  if (f.kind == Packing::CA && g.reps > 1) {
    df.kind = "MP";
    df.dims = {{"R", g.reps}, {"C_a", g.groups()}, {"H", g.img}, {"W", g.img}, {"Cg", f.m}};
    return df;
  }
  if (f.kind == Packing::CA) {
    df.kind = "CA";
    df.dims.emplace_back("C_a", g.groups());
    if (f.segments > 1) {
      df.dims.emplace_back("S", f.segments);
      df.dims.emplace_back("H'", g.img / f.segments);
    } else {
      df.dims.emplace_back("H", g.img);
    }
    df.dims.emplace_back("W", g.img);
    df.dims.emplace_back("Rg", f.d);
    df.dims.emplace_back("Cg", f.m);
  } else {
    df.kind = "RA";
    df.dims = {{"R_a", g.groups()}, {"H", g.img}, {"W", g.img}, {"Cg", f.m}, {"Rg", f.d}};
  }
  return df;
}

DataFormat prcr_format(const DataFormat& f, int segments) {
  if (segments == 1) return f;
  if (segments < 1) throw Error(ErrorCode::IndivisibleHeight, "segments must be positive");
  DataFormat out;
  out.kind = f.kind;
  out.channels = f.channels;
  bool done = false;
  for (const auto& [n, s] : f.dims) {
    if (n == "H" && !done) {
      if (s % segments != 0)
        throw Error(ErrorCode::IndivisibleHeight,
                    "H=" + std::to_string(s) + " not divisible by " + std::to_string(segments));
      out.dims.emplace_back("S", segments);
      out.dims.emplace_back("H'", s / segments);
      done = true;
    } else {
      out.dims.emplace_back(n, s);
    }
  }
  if (!done) throw Error(ErrorCode::IndivisibleHeight, "format has no H dimension");
  return out;
}

Format format_from(const DataFormat& df, int64_t slots) {
  int h = df.dim("H");
  int segs = df.dim("S", 1);
  if (!h) h = df.dim("H'") * segs;
  int w = df.dim("W", h);
  if (h != w) throw Error(ErrorCode::ShapeMismatch, "only square images are supported");
  int m = df.dim("Cg", 1), d = df.dim("Rg", 1);
  if (df.kind == "MP") {
    int reps = df.dim("R", 1);
    int side = 1;
    while (side * side < m) ++side;
    if (side * side != m) throw Error(ErrorCode::GapMismatch, "MP mux count must be a square");
    Geometry g = grid_geometry(slots, h, side, side, reps);
    return ca_format(g, m, 1, df.channels);
  }
  Geometry g = grid_geometry(slots, h, d, m);
  if (df.kind == "RA") return ra_format(g, m, d, df.channels);
  if (segs > 1) return prcr_ca_format(g, m, d, df.channels, segs);
  return ca_format(g, m, d, df.channels);
}

MaskSet build_masks(const Format& f, const std::string& purpose) {
  MaskSet ms;
  const Geometry& g = f.geo;
  auto blank = [&] { return std::vector<double>(g.slots, 0.0); };
  auto each_valid = [&](auto&& fn) {
    for (int r = 0; r < g.reps; ++r)
      for (int a = 0; a < g.groups(); ++a)
        for (int h = 0; h < g.img; ++h)
          for (int w = 0; w < g.img; ++w)
            for (int t = 0; t < g.cell_slots(); ++t) fn(g.slot(r, a, h, w, t), t, h);
  };
  if (purpose == "gap_select") {
    auto v = blank();
    each_valid([&](int64_t s, int t, int) {
      if (t / f.m == 0) v[s] = 1.0;
    });
    ms["gap_select"] = std::move(v);
  } else if (purpose == "ir_move") {
    for (int j = 0; j < f.m; ++j) {
      auto v = blank();
      each_valid([&](int64_t s, int t, int) {
        if (t % f.m == j) v[s] = 1.0;
      });
      ms["mux" + std::to_string(j)] = std::move(v);
    }
  } else if (purpose == "segment") {
    for (int sg = 0; sg < f.segments; ++sg) {
      auto v = blank();
      each_valid([&](int64_t s, int t, int h) {
        if (f.segment_of(h, t / g.cell_w) == sg) v[s] = 1.0;
      });
      ms["segment" + std::to_string(sg)] = std::move(v);
    }
  } else {
    throw Error(ErrorCode::ConfigError, "unknown mask purpose " + purpose);
  }
  return ms;
}

}  // namespace slotconv
