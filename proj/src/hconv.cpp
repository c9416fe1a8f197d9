// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#include "slotconv/hconv.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <tuple>

namespace slotconv {

const char* algo_name(Algo a) {
  switch (a) {
    case Algo::SISO: return "SISO";
    case Algo::MPConvLC: return "MPConvLC";
    case Algo::CAConv: return "CAConv";
    case Algo::RAConvNaive: return "RAConvNaive";
    case Algo::RAConvReorder: return "RAConvReorder";
    case Algo::Im2col: return "Im2col";
  }
  return "?";
}

std::optional<Algo> parse_algo(const std::string& s) {
  for (Algo a : {Algo::SISO, Algo::MPConvLC, Algo::CAConv, Algo::RAConvNaive, Algo::RAConvReorder, Algo::Im2col})
    if (s == algo_name(a)) return a;
  return std::nullopt;
}

void ConvLayerSpec::validate() const {
  if (ci < 1 || co < 1 || wi < 1) throw Error(ErrorCode::ShapeMismatch, "channel and width counts must be positive");
  if (f < 1 || f % 2 == 0) throw Error(ErrorCode::ShapeMismatch, "filter width must be odd");
  if (s != 1 && s != 2) throw Error(ErrorCode::ShapeMismatch, "stride must be 1 or 2");
  if (wo != (wi + s - 1) / s) throw Error(ErrorCode::ShapeMismatch, "w_o must equal w_i / s");
  for (const GapConfig* g : {&gap_in, &gap_out})
    if (!is_pow2(g->m) || !is_pow2(g->d)) throw Error(ErrorCode::GapMismatch, "m and d must be powers of two");
  int grow = s == 2 ? 4 : 1;
  if (gap_out.m * gap_out.d != grow * gap_in.m * gap_in.d)
    throw Error(ErrorCode::GapMismatch, "m*d must grow by 4 per stride-2 layer and stay fixed otherwise");
}

int64_t slide_shift(const Geometry& g, int f, int ky, int kx) {
  return (ky - f / 2) * g.row_step() + (kx - f / 2) * g.col_step();
}

int64_t cell_shift(const Geometry& g, int t) { return g.cell_offset(t); }

namespace {

struct Tap {
  int ky, kx, dy, dx;
  int64_t r;
  bool center() const { return dy == 0 && dx == 0; }
};

std::vector<Tap> taps_of(const Geometry& g, int f) {
  std::vector<Tap> t;
  for (int ky = 0; ky < f; ++ky)
    for (int kx = 0; kx < f; ++kx) t.push_back({ky, kx, ky - f / 2, kx - f / 2, slide_shift(g, f, ky, kx)});
  return t;
}

bool inside(int v, int n) { return v >= 0 && v < n; }

using TabFn = std::function<double(int rep, int a, int t)>;

// Writes fn(rep, a, t) at every output pixel whose (dy, dx) neighbour lies in the image.
void spread(std::vector<double>& v, const Geometry& g, const TabFn& fn, int dy, int dx, int stride) {
  const int cs = g.cell_slots(), ng = g.groups();
  std::vector<int64_t> off(cs);
  for (int t = 0; t < cs; ++t) off[t] = g.cell_offset(t);
  std::vector<double> tab(cs);
  for (int r = 0; r < g.reps; ++r)
    for (int a = 0; a < ng; ++a) {
      bool any = false;
      for (int t = 0; t < cs; ++t) {
        tab[t] = fn(r, a, t);
        any = any || tab[t] != 0.0;
      }
      if (!any) continue;
      for (int h = 0; h < g.img; h += stride) {
        if (!inside(h + dy, g.img)) continue;
        for (int w = 0; w < g.img; w += stride) {
          if (!inside(w + dx, g.img)) continue;
          const int64_t base = g.slot(r, a, h, w, 0);
          for (int t = 0; t < cs; ++t) v[base + off[t]] = tab[t];
        }
      }
    }
}

void rotate_right(std::vector<double>& v, int64_t r) {
  const int64_t n = static_cast<int64_t>(v.size());
  r = ((r % n) + n) % n;
  if (r) std::rotate(v.begin(), v.begin() + (n - r), v.end());
}

// Plaintext for one tap. pre_rot > 0 stores it rotated right (inverse rotation).
Pt tap_pt(Backend& be, int level, const Geometry& g, const Tap& tp, int stride, const TabFn& fn, int64_t pre_rot = 0) {
  return be.encode(level, [&](std::vector<double>& v) {
    spread(v, g, fn, tp.dy, tp.dx, stride);
    if (pre_rot) rotate_right(v, pre_rot);
  });
}

Pt select_pt(Backend& be, int level, const Geometry& g, const std::function<bool(int t)>& keep, int stride = 1) {
  return tap_pt(be, level, g, Tap{0, 0, 0, 0, 0}, stride, [&](int, int, int t) { return keep(t) ? 1.0 : 0.0; });
}

Pt slots_pt(Backend& be, int level, const std::vector<int64_t>& slots) {
  return be.encode(level, [&](std::vector<double>& v) {
    for (int64_t s : slots) v[s] = 1.0;
  });
}

// Bias of ciphertext `row` of f at every slot f assigns to a channel.
Pt bias_pt(Backend& be, int level, const Format& f, int row, const ConvWeights& k) {
  return be.encode(level, [&](std::vector<double>& v) {
    Format one = f;
    one.chan = {f.chan[row]};
    for_each_slot(one, [&](int, int64_t slot, int c, int, int) {
      if (c < k.co) v[slot] = k.b(c);
    });
  });
}

Ct add_or_set(Backend& be, const Ct& acc, const Ct& x) { return acc.valid() ? be.add_ct(acc, x) : x; }

using Slides = std::vector<std::vector<Ct>>;  // [input ct][tap]

Slides make_slides(Backend& be, const std::vector<Ct>& cts, const std::vector<Tap>& taps) {
  Slides s(cts.size());
  for (size_t c = 0; c < cts.size(); ++c)
    for (const Tap& tp : taps) s[c].push_back(tp.center() ? cts[c] : be.crot(cts[c], tp.r, RotTag::Slide));
  return s;
}

// sum_tap sum_c MulPt(slides[c][tap], w(c, tap)), then one rescale.
Ct slide_sum(Backend& be, const Slides& slides, size_t ntaps, const std::function<Pt(int, int)>& w) {
  Ct out;
  for (size_t ti = 0; ti < ntaps; ++ti) {
    Ct tmp;
    for (size_t c = 0; c < slides.size(); ++c) {
      Ct p = be.mul_pt(slides[c][ti], w(static_cast<int>(c), static_cast<int>(ti)));
      tmp = add_or_set(be, tmp, p);
    }
    out = add_or_set(be, out, tmp);
  }
  return be.rescale(out);
}

// Reordered form: per tap, accumulate against pre-rotated plaintexts, then rotate once.
Ct reordered_sum(Backend& be, const std::vector<Ct>& xs, const std::vector<Tap>& taps,
                 const std::function<Pt(int, int)>& w_pre) {
  Ct out;
  for (size_t ti = 0; ti < taps.size(); ++ti) {
    Ct acc;
    for (size_t i = 0; i < xs.size(); ++i) {
      Ct p = be.mul_pt(xs[i], w_pre(static_cast<int>(i), static_cast<int>(ti)));
      acc = add_or_set(be, acc, p);
    }
    if (!taps[ti].center()) acc = be.crot(acc, taps[ti].r, RotTag::Slide);
    out = add_or_set(be, out, acc);
  }
  return be.rescale(out);
}

int level_of_cts(const std::vector<Ct>& cts) {
  if (cts.empty()) throw Error(ErrorCode::ShapeMismatch, "no ciphertexts");
  int l = cts[0].level();
  for (const Ct& c : cts)
    if (c.level() != l) throw Error(ErrorCode::LevelMismatch, "input ciphertexts sit at different levels");
  return l;
}

// RaS over groups and the j bits, j = 0 mask, replication over j, bias.
Ct ca_tail(Backend& be, const Ct& sum, const Format& out, int p, const ConvWeights& k, const ConvOptions& opt) {
  const Geometry& g = out.geo;
  Ct x = ras(be, sum, g.groups(), g.group_size(), RotTag::RaS);
  x = ras_cell(be, x, g, 1, out.m, RotTag::RaS_g);
  const int m = out.m;
  x = be.rescale(be.mul_pt(x, select_pt(be, x.level(), g, [m](int t) { return t % m == 0; })));
  x = replicate_cell(be, x, g, 1, m, RotTag::IR_g);
  if (opt.add_bias) x = be.add_pt(x, bias_pt(be, x.level(), out, p, k));
  return x;
}

// RaS over the k bits, k = 0 mask, replication over k, bias.
Ct ra_tail(Backend& be, const Ct& sum, const Format& out, int l, const ConvWeights& k, const ConvOptions& opt) {
  const Geometry& g = out.geo;
  const int m = out.m, d = out.d;
  Ct x = ras_cell(be, sum, g, m, d, RotTag::RaS_g);
  if (opt.mask) {
    x = be.rescale(be.mul_pt(x, select_pt(be, x.level(), g, [m](int t) { return t / m == 0; })));
    x = replicate_cell(be, x, g, m, d, RotTag::IR_g);
  }
  if (opt.add_bias) x = be.add_pt(x, bias_pt(be, x.level(), out, l, k));
  return x;
}

void check_ca_input(const PackedTensor& in, const ConvWeights& k) {
  const Format& f = in.format;
  if (f.kind != Packing::CA) throw Error(ErrorCode::FormatMismatch, "CAConv needs a pi_CA input");
  if (f.valid_dups != 0) throw Error(ErrorCode::FormatMismatch, "CAConv input carries garbage duplicates");
  if (f.geo.reps != 1) throw Error(ErrorCode::FormatMismatch, "CAConv input must not be repeated");
  if (k.ci > f.channels) throw Error(ErrorCode::ShapeMismatch, "filter has more inputs than the tensor");
}

// Weights of CA pass p against input ct c: output channel p*d + k at copy k.
TabFn ca_weight(const Format& fi, int c, int p, int dpass, const ConvWeights& k, const Tap& tp) {
  const int m = fi.m;
  return [&fi, c, p, dpass, &k, tp, m](int, int a, int t) {
    int ci = fi.chan[c][a * m + t % m];
    int o = p * dpass + t / m;
    if (ci < 0 || ci >= k.ci || o >= k.co) return 0.0;
    return k.at(o, ci, tp.ky, tp.kx);
  };
}

// Weights of RA output ct l against input ct i.
TabFn ra_weight(const Format& fi, int i, const Format& fo, int l, const ConvWeights& k, const Tap& tp) {
  const int m = fi.m;
  return [&fi, i, &fo, l, &k, tp, m](int, int a, int t) {
    int o = fo.chan[l][a * m + t % m];
    int ci = fi.chan[i][t / m];
    if (o < 0 || ci < 0 || o >= k.co || ci >= k.ci) return 0.0;
    return k.at(o, ci, tp.ky, tp.kx);
  };
}

void check_same_pixels(const Geometry& a, const Geometry& b) {
  if (a.slots != b.slots || a.grid_h != b.grid_h || a.grid_w != b.grid_w || a.cell_h != b.cell_h ||
      a.cell_w != b.cell_w || a.img != b.img)
    throw Error(ErrorCode::UnsupportedTransition, "gather source and target use different pixel grids");
}

std::vector<int64_t> cell_shifts(const Geometry& g, int step, int count) {
  std::vector<int64_t> s;
  for (int b = 0; (1 << b) < count; ++b) s.push_back(g.cell_offset(step << b));
  return s;
}

}  // namespace

// ---- single channel ----

PackedTensor siso(Backend& be, const PackedTensor& in, const ConvWeights& k, int stride) {
  const Format& fi = in.format;
  if (in.cts.size() != 1) throw Error(ErrorCode::ShapeMismatch, "siso takes one ciphertext");
  if (stride != 1 && stride != 2) throw Error(ErrorCode::ShapeMismatch, "stride must be 1 or 2");
  const Geometry& g = fi.geo;
  auto taps = taps_of(g, k.f);
  const int level = level_of_cts(in.cts);
  Slides sl = make_slides(be, in.cts, taps);
  const int m = fi.m;
  Ct y = slide_sum(be, sl, taps.size(), [&](int, int ti) {
    const Tap tp = taps[ti];
    return tap_pt(be, level, g, tp, stride, [&](int, int a, int t) {
      int e = fi.kind == Packing::CA ? a * m + t % m : t / m;
      return fi.chan[0][e] >= 0 ? k.at(0, 0, tp.ky, tp.kx) : 0.0;
    });
  });
  PackedTensor out;
  out.cts = {y};
  out.channels = 1;
  if (stride == 1) {
    out.format = fi;
    out.height = in.height;
    out.width = in.width;
  } else {
    if (fi.kind != Packing::CA || fi.m != 1 || fi.d != 1)
      throw Error(ErrorCode::UnsupportedTransition, "strided siso expects a plain row-major input");
    Geometry gs = g.strided();
    out.format = ca_format(gs, 1, gs.cell_slots(), fi.channels);
    out.format.valid_dups = 1;
    out.height = out.width = gs.img;
  }
  return out;
}

Ct siso_sum(Backend& be, const std::vector<Ct>& xs, const Format& fmt, const std::vector<ConvWeights>& ks,
            bool reordered) {
  if (xs.size() != ks.size() || xs.empty()) throw Error(ErrorCode::ShapeMismatch, "one kernel per input");
  const Geometry& g = fmt.geo;
  auto taps = taps_of(g, ks[0].f);
  const int level = level_of_cts(xs);
  auto w = [&](int i, int ti, int64_t pre) {
    const Tap tp = taps[ti];
    double v = ks[i].at(0, 0, tp.ky, tp.kx);
    return tap_pt(be, level, g, tp, 1, [v](int, int, int) { return v; }, pre);
  };
  if (reordered) return reordered_sum(be, xs, taps, [&](int i, int ti) { return w(i, ti, taps[ti].r); });
  Slides sl = make_slides(be, xs, taps);
  return slide_sum(be, sl, taps.size(), [&](int i, int ti) { return w(i, ti, 0); });
}

// ---- building blocks ----

Ct ras(Backend& be, const Ct& ct, int groups, int64_t stride_slots, RotTag tag) {
  if (!is_pow2(groups)) throw Error(ErrorCode::NonPowerOfTwoGroups, "RaS group count must be a power of two");
  Ct x = ct;
  for (int b = 0; (1 << b) < groups; ++b) x = be.add_ct(x, be.crot(x, stride_slots << b, tag));
  return x;
}

Ct ras_cell(Backend& be, const Ct& ct, const Geometry& g, int step, int count, RotTag tag) {
  if (!is_pow2(count)) throw Error(ErrorCode::NonPowerOfTwoGroups, "cell sum count must be a power of two");
  Ct x = ct;
  for (int64_t s : cell_shifts(g, step, count)) x = be.add_ct(x, be.crot(x, s, tag));
  return x;
}

Ct replicate_cell(Backend& be, const Ct& ct, const Geometry& g, int step, int count, RotTag tag) {
  if (!is_pow2(count)) throw Error(ErrorCode::NonPowerOfTwoGroups, "replication count must be a power of two");
  Ct x = ct;
  for (int64_t s : cell_shifts(g, step, count)) x = be.add_ct(x, be.crot(x, -s, tag));
  return x;
}

Ct square_activation(Backend& be, const Ct& ct) { return be.rescale(be.mul_ct(ct, ct)); }

// ---- realignment ----

int GatherPlan::rotations() const {
  int n = 0;
  for (const auto& mv : moves) n += mv.delta != 0;
  return n + format.num_cts() * static_cast<int>(replicate_shifts.size());
}

GatherPlan plan_gather(const RawTensor& raw, Packing kind, const Geometry& g, int m, int d) {
  check_same_pixels(raw.geo, g);
  GatherPlan plan;
  plan.format = kind == Packing::RA ? ra_format(g, m, d, raw.channels) : ca_format(g, m, d, raw.channels);
  Format& f = plan.format;
  const int cap = f.entries();

  struct Pos {
    int entry, group, t;  // group -1: every group
  };
  std::vector<Pos> pos;
  if (kind == Packing::RA) {
    for (int k = 0; k < d; ++k) pos.push_back({k, -1, m * k});
  } else {
    for (int j = 0; j < m; ++j)
      for (int a = 0; a < g.groups(); ++a) pos.push_back({a * m + j, a, j});
  }

  std::vector<int> src_of(raw.channels, -1);
  std::vector<RawItem> item_of(raw.channels);
  for (size_t s = 0; s < raw.items.size(); ++s)
    for (const RawItem& it : raw.items[s])
      if (it.channel >= 0 && it.channel < raw.channels) {
        src_of[it.channel] = static_cast<int>(s);
        item_of[it.channel] = it;
      }

  auto delta = [&](const RawItem& it, const Pos& p) -> int64_t {
    if (it.group >= 0 && p.group < 0)
      throw Error(ErrorCode::UnsupportedTransition, "pi_RA gather needs sources replicated over groups");
    int da = p.group < 0 ? 0 : p.group;
    int sa = it.group < 0 ? da : it.group;
    return raw.geo.slot(it.rep, sa, 0, 0, it.t) - g.slot(0, da, 0, 0, p.t);
  };

  const int targets = (raw.channels + cap - 1) / cap;
  f.chan.assign(targets, std::vector<int>(cap, -1));
  for (int q = 0; q < targets; ++q) {
    std::vector<int> chans;
    for (int c = q * cap; c < std::min(raw.channels, (q + 1) * cap); ++c) {
      if (src_of[c] < 0) throw Error(ErrorCode::ShapeMismatch, "raw tensor lacks channel " + std::to_string(c));
      chans.push_back(c);
    }
    std::vector<int> at(chans.size(), -1);  // position index per channel
    std::vector<char> used(pos.size(), 0);
    std::map<int, std::vector<int64_t>> shifts;  // nonzero shifts taken per source
    for (size_t i = 0; i < chans.size(); ++i)
      for (size_t p = 0; p < pos.size(); ++p)
        if (!used[p] && delta(item_of[chans[i]], pos[p]) == 0) {
          at[i] = static_cast<int>(p);
          used[p] = 1;
          break;
        }
    for (size_t i = 0; i < chans.size(); ++i) {
      if (at[i] >= 0) continue;
      const RawItem& it = item_of[chans[i]];
      auto& taken = shifts[src_of[chans[i]]];
      int pick = -1;
      for (size_t p = 0; p < pos.size() && pick < 0; ++p)
        if (!used[p] && std::find(taken.begin(), taken.end(), delta(it, pos[p])) != taken.end())
          pick = static_cast<int>(p);
      for (size_t p = 0; p < pos.size() && pick < 0; ++p)
        if (!used[p]) pick = static_cast<int>(p);
      at[i] = pick;
      used[pick] = 1;
      taken.push_back(delta(it, pos[pick]));
    }
    std::map<std::pair<int, int64_t>, size_t> move_of;
    for (size_t i = 0; i < chans.size(); ++i) {
      const RawItem& it = item_of[chans[i]];
      const Pos& p = pos[at[i]];
      f.chan[q][p.entry] = chans[i];
      int64_t dl = delta(it, p);
      auto key = std::make_pair(src_of[chans[i]], dl);
      auto found = move_of.find(key);
      if (found == move_of.end()) {
        found = move_of.emplace(key, plan.moves.size()).first;
        plan.moves.push_back({q, key.first, dl, {}});
      }
      auto& slots = plan.moves[found->second].slots;
      for (int a = 0; a < g.groups(); ++a) {
        if (p.group >= 0 && a != p.group) continue;
        int sa = it.group < 0 ? a : it.group;
        for (int h = 0; h < g.img; ++h)
          for (int w = 0; w < g.img; ++w) slots.push_back(raw.geo.slot(it.rep, sa, h, w, it.t));
      }
    }
  }
  plan.replicate_shifts = kind == Packing::RA ? cell_shifts(g, 1, m) : cell_shifts(g, m, d);
  return plan;
}

GatherPlan plan_gather_mp(const RawTensor& raw, const Format& target) {
  const Geometry& g = target.geo;
  if (target.kind != Packing::CA || target.d != 1)
    throw Error(ErrorCode::UnsupportedTransition, "baseline gather writes a multiplexed pi_CA format");
  if (raw.geo.grid_h != g.grid_h || raw.geo.grid_w != g.grid_w || raw.geo.cell_h != g.cell_h ||
      raw.geo.cell_w != g.cell_w || raw.geo.img != g.img)
    throw Error(ErrorCode::UnsupportedTransition, "baseline gather keeps the pixel grid");
  GatherPlan plan;
  plan.format = target;
  std::vector<int> src_of(raw.channels, -1);
  std::vector<RawItem> item_of(raw.channels);
  for (size_t s = 0; s < raw.items.size(); ++s)
    for (const RawItem& it : raw.items[s]) {
      src_of[it.channel] = static_cast<int>(s);
      item_of[it.channel] = it;
    }
  const int m = target.m;
  for (int q = 0; q < target.num_cts(); ++q) {
    std::map<std::pair<int, int64_t>, size_t> move_of;
    for (int a = 0; a < g.groups(); ++a)
      for (int j = 0; j < m; ++j) {
        int c = target.chan[q][a * m + j];
        if (c < 0 || c >= raw.channels) continue;
        if (src_of[c] < 0) throw Error(ErrorCode::ShapeMismatch, "raw tensor lacks channel " + std::to_string(c));
        const RawItem& it = item_of[c];
        int sa = it.group < 0 ? a : it.group;
        int64_t dl = raw.geo.slot(it.rep, sa, 0, 0, it.t) - g.slot(0, a, 0, 0, j);
        auto key = std::make_pair(src_of[c], dl);
        auto found = move_of.find(key);
        if (found == move_of.end()) {
          found = move_of.emplace(key, plan.moves.size()).first;
          plan.moves.push_back({q, key.first, dl, {}});
        }
        auto& slots = plan.moves[found->second].slots;
        for (int h = 0; h < g.img; ++h)
          for (int w = 0; w < g.img; ++w) slots.push_back(raw.geo.slot(it.rep, sa, h, w, it.t));
      }
  }
  for (int b = 0; (1 << b) < g.reps; ++b) plan.replicate_shifts.push_back(g.block_size() << b);
  return plan;
}

PackedTensor ir(Backend& be, const RawTensor& raw, const GatherPlan& plan, int height, int width) {
  const int level = level_of_cts(raw.cts);
  PackedTensor out;
  out.format = plan.format;
  out.channels = raw.channels;
  out.height = height;
  out.width = width;
  for (int q = 0; q < plan.format.num_cts(); ++q) {
    Ct acc;
    for (const Move& mv : plan.moves) {
      if (mv.target != q) continue;
      Ct x = be.mul_pt(raw.cts[mv.src], slots_pt(be, level, mv.slots));
      if (mv.delta != 0) x = be.crot(x, mv.delta, RotTag::IR);
      acc = add_or_set(be, acc, x);
    }
    if (!acc.valid()) throw Error(ErrorCode::ShapeMismatch, "gather target without channels");
    acc = be.rescale(acc);
    for (int64_t s : plan.replicate_shifts) acc = be.add_ct(acc, be.crot(acc, -s, RotTag::IR_g));
    out.cts.push_back(acc);
  }
  return out;
}

// ---- convolutions ----

PackedTensor caconv(Backend& be, const PackedTensor& in, const ConvWeights& k, const ConvOptions& opt) {
  check_ca_input(in, k);
  const Format& fi = in.format;
  if (fi.segments != 1) throw Error(ErrorCode::FormatMismatch, "segmented input needs caconv_prcr");
  if (opt.stride != 1) throw Error(ErrorCode::UnsupportedTransition, "strided CAConv goes through caconv_raw");
  const Geometry& g = fi.geo;
  auto taps = taps_of(g, k.f);
  const int level = level_of_cts(in.cts);
  Slides sl = make_slides(be, in.cts, taps);
  PackedTensor out;
  out.format = ra_format(g, fi.m, fi.d, k.co);
  out.channels = k.co;
  out.height = in.height;
  out.width = in.width;
  for (int p = 0; p < out.format.num_cts(); ++p) {
    Ct s = slide_sum(be, sl, taps.size(), [&](int c, int ti) {
      return tap_pt(be, level, g, taps[ti], 1, ca_weight(fi, c, p, fi.d, k, taps[ti]));
    });
    out.cts.push_back(ca_tail(be, s, out.format, p, k, opt));
  }
  return out;
}

RawTensor caconv_raw(Backend& be, const PackedTensor& in, const ConvWeights& k, int stride) {
  check_ca_input(in, k);
  const Format& fi = in.format;
  if (fi.segments != 1) throw Error(ErrorCode::FormatMismatch, "segmented input is not supported here");
  if (stride != 1 && stride != 2) throw Error(ErrorCode::ShapeMismatch, "stride must be 1 or 2");
  const Geometry& g = fi.geo;
  const int m = fi.m, d = fi.d;
  auto taps = taps_of(g, k.f);
  const int level = level_of_cts(in.cts);
  Slides sl = make_slides(be, in.cts, taps);
  RawTensor raw;
  raw.geo = stride == 2 ? g.strided() : g;
  raw.channels = k.co;
  const int passes = (k.co + d - 1) / d;
  for (int p = 0; p < passes; ++p) {
    Ct s = slide_sum(be, sl, taps.size(), [&](int c, int ti) {
      return tap_pt(be, level, g, taps[ti], stride, ca_weight(fi, c, p, d, k, taps[ti]));
    });
    s = ras(be, s, g.groups(), g.group_size(), RotTag::RaS);
    s = ras_cell(be, s, g, 1, m, RotTag::RaS_g);
    s = be.add_pt(s, be.encode(s.level(), [&](std::vector<double>& v) {
      spread(v, g, [&](int, int, int t) {
        int o = p * d + t / m;
        return t % m == 0 && o < k.co ? k.b(o) : 0.0;
      }, 0, 0, stride);
    }));
    raw.cts.push_back(s);
    std::vector<RawItem> items;
    for (int kk = 0; kk < d; ++kk) {
      int o = p * d + kk;
      if (o >= k.co) break;
      int t = m * kk;
      int tn = stride == 2 ? (t / g.cell_w) * raw.geo.cell_w + t % g.cell_w : t;
      items.push_back({o, 0, -1, tn});
    }
    raw.items.push_back(items);
  }
  return raw;
}

Format raconv_out_format(const Format& in, int co) { return ca_format(in.geo, in.m, in.d, co); }

PackedTensor raconv(Backend& be, const PackedTensor& in, const ConvWeights& k, const Format& out_format,
                    bool reorder, const ConvOptions& opt) {
  const Format& fi = in.format;
  if (fi.kind != Packing::RA) throw Error(ErrorCode::FormatMismatch, "RAConv needs a pi_RA input");
  if (out_format.kind != Packing::CA || !(out_format.geo == fi.geo) || out_format.m != fi.m ||
      out_format.d != fi.d || out_format.segments != 1)
    throw Error(ErrorCode::FormatMismatch, "RAConv output must be pi_CA on the input geometry");
  if (opt.stride != 1) throw Error(ErrorCode::UnsupportedTransition, "RAConv runs at stride 1");
  if (k.ci > fi.channels) throw Error(ErrorCode::ShapeMismatch, "filter has more inputs than the tensor");
  const Geometry& g = fi.geo;
  auto taps = taps_of(g, k.f);
  const int level = level_of_cts(in.cts);
  PackedTensor out;
  out.format = out_format;
  out.format.valid_dups = opt.mask ? 0 : 1;
  out.channels = k.co;
  out.height = in.height;
  out.width = in.width;
  auto w = [&](int i, int l, int ti, bool pre) {
    return tap_pt(be, level, g, taps[ti], 1, ra_weight(fi, i, out_format, l, k, taps[ti]), pre ? taps[ti].r : 0);
  };
  Slides sl;
  if (!reorder) sl = make_slides(be, in.cts, taps);
  for (int l = 0; l < out_format.num_cts(); ++l) {
    Ct s = reorder ? reordered_sum(be, in.cts, taps, [&](int i, int ti) { return w(i, l, ti, true); })
                   : slide_sum(be, sl, taps.size(), [&](int i, int ti) { return w(i, l, ti, false); });
    out.cts.push_back(ra_tail(be, s, out.format, l, k, opt));
  }
  return out;
}

Format mp_format(int64_t slots, int grid, int img, int m, int channels) {
  int side = 1;
  while (side * side < m) ++side;
  if (side * side != m || !is_pow2(side)) throw Error(ErrorCode::GapMismatch, "m must be a square power of two");
  Geometry g;
  g.slots = slots;
  g.grid_h = g.grid_w = grid;
  g.cell_h = g.cell_w = side;
  g.img = img;
  const int64_t room = slots / g.group_size();
  if (room < 1) throw Error(ErrorCode::CapacityExceeded, "grid larger than the slot vector");
  int64_t cn = std::max<int64_t>(1, std::min<int64_t>(pow2_ceil((channels + m - 1) / m), room));
  g.reps = static_cast<int>(room / cn);
  return ca_format(g, m, 1, channels);
}

RawTensor mp_conv_raw(Backend& be, const PackedTensor& in, const ConvWeights& k, int stride) {
  const Format& fi = in.format;
  if (fi.kind != Packing::CA || fi.d != 1) throw Error(ErrorCode::FormatMismatch, "baseline conv needs a multiplexed input");
  if (stride != 1 && stride != 2) throw Error(ErrorCode::ShapeMismatch, "stride must be 1 or 2");
  if (k.ci > fi.channels) throw Error(ErrorCode::ShapeMismatch, "filter has more inputs than the tensor");
  const Geometry& g = fi.geo;
  const int m = fi.m, R = g.reps;
  auto taps = taps_of(g, k.f);
  const int level = level_of_cts(in.cts);
  Slides sl = make_slides(be, in.cts, taps);
  RawTensor raw;
  raw.geo = stride == 2 ? g.strided() : g;
  raw.channels = k.co;
  const int passes = (k.co + R - 1) / R;
  for (int p = 0; p < passes; ++p) {
    Ct s = slide_sum(be, sl, taps.size(), [&](int c, int ti) {
      const Tap tp = taps[ti];
      return tap_pt(be, level, g, tp, stride, [&, c, p, tp](int r, int a, int t) {
        int ci = fi.chan[c][a * m + t];
        int o = p * R + r;
        if (ci < 0 || ci >= k.ci || o >= k.co) return 0.0;
        return k.at(o, ci, tp.ky, tp.kx);
      });
    });
    s = ras(be, s, g.groups(), g.group_size(), RotTag::RaS);
    s = ras_cell(be, s, g, 1, m, RotTag::RaS_g);
    s = be.add_pt(s, be.encode(s.level(), [&](std::vector<double>& v) {
      spread(v, g, [&](int r, int a, int t) {
        int o = p * R + r;
        return a == 0 && t == 0 && o < k.co ? k.b(o) : 0.0;
      }, 0, 0, stride);
    }));
    raw.cts.push_back(s);
    std::vector<RawItem> items;
    for (int r = 0; r < R && p * R + r < k.co; ++r) items.push_back({p * R + r, r, 0, 0});
    raw.items.push_back(items);
  }
  return raw;
}

PackedTensor mp_conv(Backend& be, const PackedTensor& in, const ConvWeights& k, int stride, const Format& out_format) {
  RawTensor raw = mp_conv_raw(be, in, k, stride);
  GatherPlan plan = plan_gather_mp(raw, out_format);
  return ir(be, raw, plan, raw.geo.img, raw.geo.img);
}

// ---- fused block ----

PackedTensor fused_block(Backend& be, const PackedTensor& in, const ConvWeights& w_ca, const ConvWeights& w_ra,
                         const Format& out_format, FusedStats* stats, const ConvOptions& ra_opt) {
  check_ca_input(in, w_ca);
  const Format& fi = in.format;
  if (fi.segments != 1) throw Error(ErrorCode::FormatMismatch, "segmented input is not supported here");
  if (w_ra.ci != w_ca.co) throw Error(ErrorCode::ShapeMismatch, "RAConv inputs must match CAConv outputs");
  if (out_format.kind != Packing::CA || !(out_format.geo == fi.geo) || out_format.m != fi.m || out_format.d != fi.d)
    throw Error(ErrorCode::FormatMismatch, "fused output must be pi_CA on the input geometry");
  CostLedger& led = be.ledger();
  const int64_t live0 = led.live_cts();
  led.reset_peak();

  const Geometry& g = fi.geo;
  auto taps = taps_of(g, w_ca.f);
  auto taps_ra = taps_of(g, w_ra.f);
  const int level = level_of_cts(in.cts);
  Slides sl = make_slides(be, in.cts, taps);
  const int64_t copies = static_cast<int64_t>(in.cts.size()) * (static_cast<int64_t>(taps.size()) - 1);

  Format mid = ra_format(g, fi.m, fi.d, w_ca.co);
  const int n_out = out_format.num_cts();
  std::vector<std::vector<Ct>> acc(n_out, std::vector<Ct>(taps_ra.size()));
  int ra_level = 0;
  for (int p = 0; p < mid.num_cts(); ++p) {
    Ct s = slide_sum(be, sl, taps.size(), [&](int c, int ti) {
      return tap_pt(be, level, g, taps[ti], 1, ca_weight(fi, c, p, fi.d, w_ca, taps[ti]));
    });
    Ct c3 = square_activation(be, ca_tail(be, s, mid, p, w_ca, ConvOptions{}));
    s = Ct();
    ra_level = c3.level();
    for (int l = 0; l < n_out; ++l)
      for (size_t ti = 0; ti < taps_ra.size(); ++ti) {
        Pt wp = tap_pt(be, ra_level, g, taps_ra[ti], 1, ra_weight(mid, p, out_format, l, w_ra, taps_ra[ti]),
                       taps_ra[ti].r);
        Ct t = be.mul_pt(c3, wp);
        acc[l][ti] = add_or_set(be, acc[l][ti], t);
      }
  }
  sl.clear();

  PackedTensor out;
  out.format = out_format;
  out.format.valid_dups = ra_opt.mask ? 0 : 1;
  out.channels = w_ra.co;
  out.height = in.height;
  out.width = in.width;
  for (int l = 0; l < n_out; ++l) {
    Ct sum;
    for (size_t ti = 0; ti < taps_ra.size(); ++ti) {
      Ct a = std::move(acc[l][ti]);
      if (!taps_ra[ti].center()) a = be.crot(a, taps_ra[ti].r, RotTag::Slide);
      sum = add_or_set(be, sum, a);
    }
    out.cts.push_back(ra_tail(be, be.rescale(sum), out.format, l, w_ra, ra_opt));
  }
  if (stats) {
    stats->peak_total = led.peak_cts() - live0;
    stats->slide_copies = copies;
    stats->peak_intermediate = stats->peak_total - copies;
    stats->accumulators = static_cast<int64_t>(n_out) * static_cast<int64_t>(taps_ra.size());
  }
  return out;
}

// ---- segmented CAConv ----

PrcrStats caconv_weight_stats(const Format& in, int co, int f) {
  PrcrStats st;
  const int64_t passes = (co + in.d - 1) / in.d;
  const int64_t per_pass = in.segments > 1 ? in.num_cts() / in.segments : in.num_cts();
  st.weight_plaintexts = passes * per_pass * f * f;
  st.weight_slots = st.weight_plaintexts * in.geo.slots;
  return st;
}

PackedTensor caconv_prcr(Backend& be, const PackedTensor& in, const ConvWeights& k, PrcrStats* stats,
                         const ConvOptions& opt) {
  const Format& fi = in.format;
  if (fi.segments == 1) {
    if (stats) *stats = caconv_weight_stats(fi, k.co, k.f);
    return caconv(be, in, k, opt);
  }
  check_ca_input(in, k);
  const int S = fi.segments;
  if (fi.num_cts() % S != 0) throw Error(ErrorCode::FormatMismatch, "segmented input must come in sets of S");
  const Geometry& g = fi.geo;
  if (k.f > 1 && g.grid_h - g.img * g.cell_h < fi.seg_rows())
    throw Error(ErrorCode::FormatMismatch, "f > 1 needs one all-padding segment below the image");
  const int m = fi.m, d = fi.d;
  const int sets = fi.num_cts() / S;
  const int64_t frag = static_cast<int64_t>(fi.seg_rows()) * g.grid_w;
  const int64_t G = g.group_size();
  const int spr = fi.seg_rows() / g.cell_h;  // pixel rows per segment
  const int prow = g.pixel_rows();
  auto taps = taps_of(g, k.f);
  const int level = level_of_cts(in.cts);

  Slides sl = make_slides(be, in.cts, taps);
  // Rotated copies standing in for ct_S and ct_{-1} of each set.
  Slides up(sets, std::vector<Ct>(taps.size())), dn(sets, std::vector<Ct>(taps.size()));
  for (int s = 0; s < sets; ++s)
    for (size_t ti = 0; ti < taps.size(); ++ti) {
      if (taps[ti].dy < 0) up[s][ti] = be.crot(in.cts[s * S], G + taps[ti].r, RotTag::Slide);
      if (taps[ti].dy > 0) dn[s][ti] = be.crot(in.cts[s * S + S - 1], -G + taps[ti].r, RotTag::Slide);
    }

  // Interior and boundary masks, the same in every fragment.
  std::vector<std::vector<double>> m_int(taps.size()), m_bnd(taps.size());
  if (be.full()) {
    for (size_t ti = 0; ti < taps.size(); ++ti) {
      m_int[ti].assign(g.slots, 0.0);
      m_bnd[ti].assign(g.slots, 0.0);
      const Tap& tp = taps[ti];
      for (int a = 0; a < g.groups(); ++a)
        for (int h = 0; h < prow; ++h)
          for (int w = 0; w < g.img; ++w) {
            if (!inside(w + tp.dx, g.img)) continue;
            bool interior = inside(h % spr + tp.dy, spr);
            for (int t = 0; t < g.cell_slots(); ++t)
              (interior ? m_int : m_bnd)[ti][g.slot(0, a, h, w, t)] = 1.0;
          }
    }
  }
  auto masked = [&](const Pt& p, const std::vector<double>& mask) {
    if (!be.full()) return be.encode(level, [](std::vector<double>&) {});
    std::vector<double> v = p.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
    return be.encode_values(std::move(v), level);
  };

  PackedTensor out;
  out.format = ra_format(g, m, d, k.co);
  out.channels = k.co;
  out.height = in.height;
  out.width = in.width;
  int64_t base_pts = 0;
  for (int p = 0; p < out.format.num_cts(); ++p) {
    Ct sum;
    for (size_t ti = 0; ti < taps.size(); ++ti) {
      const Tap tp = taps[ti];
      for (int set = 0; set < sets; ++set) {
        const auto& tab0 = fi.chan[set * S];
        Pt P = be.encode(level, [&](std::vector<double>& v) {
          for (int a = 0; a < g.groups(); ++a)
            for (int h = 0; h < prow; ++h) {
              const int u = a * S + h / spr;
              for (int w = 0; w < g.img; ++w)
                for (int t = 0; t < g.cell_slots(); ++t) {
                  int ci = tab0[u * m + t % m];
                  int o = p * d + t / m;
                  if (ci >= 0 && ci < k.ci && o < k.co) v[g.slot(0, a, h, w, t)] = k.at(o, ci, tp.ky, tp.kx);
                }
            }
        });
        ++base_pts;
        for (int q = 0; q < S; ++q) {
          Pt Pq = q == 0 ? P : be.prot(P, q * frag);
          sum = add_or_set(be, sum, be.mul_pt(sl[set * S + q][ti], masked(Pq, m_int[ti])));
          if (tp.dy == 0) continue;
          const Ct& nb = tp.dy < 0 ? (q + 1 < S ? sl[set * S + q + 1][ti] : up[set][ti])
                                   : (q >= 1 ? sl[set * S + q - 1][ti] : dn[set][ti]);
          sum = add_or_set(be, sum, be.mul_pt(nb, masked(Pq, m_bnd[ti])));
        }
      }
    }
    out.cts.push_back(ca_tail(be, be.rescale(sum), out.format, p, k, opt));
  }
  if (stats) {
    stats->weight_plaintexts = base_pts;
    stats->weight_slots = base_pts * g.slots;
  }
  return out;
}

// ---- elementwise ----

PackedTensor square_all(Backend& be, const PackedTensor& x) {
  PackedTensor y = x;
  for (auto& c : y.cts) c = square_activation(be, c);
  return y;
}

PackedTensor add_all(Backend& be, const PackedTensor& a, const PackedTensor& b) {
  if (!same_layout(a.format, b.format)) throw Error(ErrorCode::FormatMismatch, "residual add needs one layout");
  PackedTensor y = a;
  for (size_t i = 0; i < y.cts.size(); ++i) y.cts[i] = be.add_ct(a.cts[i], b.cts[i]);
  y.format.valid_dups = std::max(a.format.valid_dups, b.format.valid_dups);
  if (a.format.valid_dups && b.format.valid_dups)
    y.format.valid_dups = std::min(a.format.valid_dups, b.format.valid_dups);
  return y;
}

PackedTensor bootstrap_all(Backend& be, const PackedTensor& x) {
  PackedTensor y = x;
  for (auto& c : y.cts) c = be.bootstrap(c);
  return y;
}

PackedTensor level_down_all(Backend& be, const PackedTensor& x, int level) {
  PackedTensor y = x;
  for (auto& c : y.cts) c = be.level_down(c, level);
  return y;
}

int level_of(const PackedTensor& x) { return level_of_cts(x.cts); }

}  // namespace slotconv
