// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#include "slotconv/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace slotconv {

const char* scheme_name(Scheme s) { return s == Scheme::Hybrid ? "hybrid" : "baseline"; }

// ---- plans ----

std::string GapPlan::to_string() const {
  std::string s;
  for (size_t i = 0; i < stages.size(); ++i) {
    if (i) s += "/";
    s += std::to_string(stages[i].m) + "," + std::to_string(stages[i].d);
  }
  return s;
}

GapPlan GapPlan::parse(const std::string& text, Scheme scheme) {
  GapPlan p;
  p.scheme = scheme;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, '/')) {
    auto comma = item.find(',');
    if (comma == std::string::npos) throw Error(ErrorCode::ConfigError, "plan stage needs m,d: " + item);
    try {
      p.stages.push_back({std::stoi(item.substr(0, comma)), std::stoi(item.substr(comma + 1))});
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigError, "bad plan stage: " + item);
    }
  }
  if (p.stages.empty()) throw Error(ErrorCode::ConfigError, "empty plan");
  return p;
}

void GapPlan::validate() const {
  for (size_t i = 0; i < stages.size(); ++i) {
    const GapConfig& g = stages[i];
    if (!is_pow2(g.m) || !is_pow2(g.d)) throw Error(ErrorCode::PlanViolation, "m and d must be powers of two");
    if (scheme == Scheme::Baseline && g.d != 1) throw Error(ErrorCode::PlanViolation, "baseline stages use d = 1");
    if (i > 0 && g.m * g.d != 4 * stages[i - 1].m * stages[i - 1].d)
      throw Error(ErrorCode::PlanViolation, "m*d must grow by 4 at stage " + std::to_string(i + 1));
  }
}

namespace {

struct Preset {
  std::string name;
  int in_channels, in_img, classes;
  StemKind stem;
  int stem_channels, stem_f, stem_stride, stem_pad;
  bool stem_pool;
  std::vector<StageSpec> stages;
  int grid;
};

Preset preset_of(const std::string& name) {
  auto cifar = [&](int n) {
    return Preset{name, 3, 32, 10, StemKind::Conv, 16, 3, 1, 1, false, {{16, 32, n}, {32, 16, n}, {64, 8, n}}, 32};
  };
  if (name == "resnet20") return cifar(3);
  if (name == "resnet32") return cifar(5);
  if (name == "resnet44") return cifar(7);
  if (name == "resnet18")
    return Preset{name, 3, 224, 1000, StemKind::Im2col, 64, 7, 2, 3, true,
                  {{64, 56, 2}, {128, 28, 2}, {256, 14, 2}, {512, 7, 2}}, 64};
  throw Error(ErrorCode::ConfigError, "unknown preset " + name);
}

GapPlan make_plan(const std::string& name, Scheme s, std::vector<GapConfig> st) {
  GapPlan p;
  p.name = name;
  p.scheme = s;
  p.stages = std::move(st);
  return p;
}

double rms(const Tensor& t) {
  double s = 0;
  for (double v : t.v) s += v * v;
  return t.v.empty() ? 0.0 : std::sqrt(s / t.v.size());
}

void scale_conv(ConvWeights& k, double s) {
  for (auto& v : k.w) v *= s;
  for (auto& v : k.bias) v *= s;
}

ConvWeights seeded_conv(std::mt19937_64& rng, int co, int ci, int f) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ConvWeights k(co, ci, f);
  const double s = 1.0 / std::sqrt(static_cast<double>(ci) * f * f);
  for (auto& v : k.w) v = u(rng) * s;
  for (auto& v : k.bias) v = 0.1 * u(rng);
  return k;
}

const BootSite* find_site(const NetworkSpec& spec, const std::string& where) {
  for (const auto& b : spec.boots)
    if (b.where == where) return &b;
  return nullptr;
}

std::string block_name(int b) { return "block" + std::to_string(b); }

}  // namespace

std::vector<std::string> preset_names() { return {"resnet20", "resnet32", "resnet44", "resnet18"}; }

std::vector<std::string> plan_names(const std::string& preset) {
  if (preset == "resnet18") return {"optimal", "minboot", "baseline"};
  preset_of(preset);
  return {"optimal", "minrot", "baseline"};
}

GapPlan named_plan(const std::string& preset, const std::string& name) {
  if (preset == "resnet18") {
    if (name == "optimal") return make_plan(name, Scheme::Hybrid, {{1, 1}, {2, 2}, {4, 4}, {8, 8}});
    if (name == "minboot") return make_plan(name, Scheme::Hybrid, {{1, 1}, {4, 1}, {16, 1}, {64, 1}});
    if (name == "baseline") return make_plan(name, Scheme::Baseline, {{1, 1}, {4, 1}, {16, 1}, {64, 1}});
  } else {
    preset_of(preset);
    if (name == "optimal") return make_plan(name, Scheme::Hybrid, {{1, 2}, {2, 4}, {4, 8}});
    if (name == "minrot") return make_plan(name, Scheme::Hybrid, {{1, 2}, {1, 8}, {2, 16}});
    if (name == "baseline") return make_plan(name, Scheme::Baseline, {{1, 1}, {4, 1}, {16, 1}});
  }
  throw Error(ErrorCode::ConfigError, "no plan '" + name + "' for " + preset);
}

// ---- network description ----

int NetworkSpec::stem_img() const {
  if (stem_kind == StemKind::None) return in_img;
  int o = (in_img + 2 * stem_pad - stem_f) / stem_stride + 1;
  return stem_pool ? o / 2 : o;
}

Geometry NetworkSpec::stage_geometry(int stage) const {
  if (stage < 0 || stage >= static_cast<int>(stages.size())) throw Error(ErrorCode::ShapeMismatch, "no such stage");
  if (scheme == Scheme::Baseline) {
    const GapConfig& g = plan.stages[stage];
    return mp_format(params.slot_count, grid, stages[stage].img, g.m, stages[stage].channels).geo;
  }
  if (stage > 0) return stage_geometry(stage - 1).strided();
  const int cs = plan.stages[0].m * plan.stages[0].d;
  const int ch = 1 << ((ilog2(cs) + 1) / 2);
  return grid_geometry(params.slot_count, stages[0].img, ch, cs / ch);
}

Format NetworkSpec::stage_format(int stage) const {
  const Geometry g = stage_geometry(stage);
  const GapConfig& p = plan.stages[stage];
  return ca_format(g, p.m, p.d, stages[stage].channels);
}

Format NetworkSpec::input_format() const {
  if (stem_kind != StemKind::Conv) throw Error(ErrorCode::FormatMismatch, "only conv stems take a packed input");
  if (scheme == Scheme::Baseline) return mp_format(params.slot_count, grid, in_img, 1, in_channels);
  const GapConfig& p = plan.stages[0];
  return ra_format(stage_geometry(0), p.m, p.d, in_channels);
}

void NetworkSpec::validate() const {
  params.validate();
  if (plan.stages.size() != stages.size())
    throw Error(ErrorCode::PlanViolation, "plan has " + std::to_string(plan.stages.size()) + " stages, network has " +
                                              std::to_string(stages.size()));
  if (plan.scheme != scheme) throw Error(ErrorCode::PlanViolation, "plan scheme differs from the network");
  plan.validate();
  if (stem_img() != stages[0].img) throw Error(ErrorCode::ShapeMismatch, "stem output size differs from stage 1");
  if (stem_kind == StemKind::Conv && stem_stride != 1)
    throw Error(ErrorCode::UnsupportedTransition, "packed conv stems run at stride 1");
  for (size_t s = 0; s < stages.size(); ++s) {
    Format f = stage_format(static_cast<int>(s));
    f.validate();
  }
  for (const BlockSpec& b : blocks) {
    ConvLayerSpec l;
    l.ci = b.ci;
    l.co = b.co;
    l.wi = b.img_in;
    l.wo = b.img_out;
    l.s = b.stride;
    l.f = 3;
    const int prev = b.stride == 2 ? b.stage - 1 : b.stage;
    l.gap_in = plan.stages[prev];
    l.gap_out = plan.stages[b.stage];
    if (scheme == Scheme::Baseline) {
      l.gap_in.d = l.gap_out.d = 1;
    }
    try {
      l.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::PlanViolation, e.detail());
    }
  }
}

NetworkSpec build_network(const std::string& preset, const GapPlan& plan, const AlgoMix& algo,
                          const HeParams& params) {
  Preset p = preset_of(preset);
  NetworkSpec n;
  n.preset = preset;
  n.scheme = plan.scheme;
  n.plan = plan;
  n.algo = algo;
  n.params = params;
  n.in_channels = p.in_channels;
  n.in_img = p.in_img;
  n.classes = p.classes;
  n.stem_kind = p.stem;
  n.stem_channels = p.stem_channels;
  n.stem_f = p.stem_f;
  n.stem_stride = p.stem_stride;
  n.stem_pad = p.stem_pad;
  n.stem_pool = p.stem_pool;
  n.stages = p.stages;
  n.grid = p.grid;

  const bool hyb = plan.scheme == Scheme::Hybrid;
  ConvLayerSpec stem;
  stem.ci = n.in_channels;
  stem.co = n.stem_channels;
  stem.wi = n.in_img;
  stem.wo = (n.in_img + 2 * n.stem_pad - n.stem_f) / n.stem_stride + 1;
  stem.f = n.stem_f;
  stem.s = n.stem_stride;
  stem.pad = n.stem_pad;
  stem.algo = p.stem == StemKind::Im2col ? Algo::Im2col
              : hyb                      ? (algo.reorder ? Algo::RAConvReorder : Algo::RAConvNaive)
                                         : Algo::MPConvLC;
  if (!plan.stages.empty()) stem.gap_in = stem.gap_out = plan.stages[0];
  n.layers.push_back(stem);

  int ch = n.stem_channels, img = n.stages.empty() ? 0 : n.stages[0].img;
  for (size_t s = 0; s < n.stages.size(); ++s)
    for (int i = 0; i < n.stages[s].blocks; ++i) {
      BlockSpec b;
      b.stage = static_cast<int>(s);
      b.ci = ch;
      b.co = n.stages[s].channels;
      b.img_in = img;
      b.img_out = n.stages[s].img;
      b.stride = b.img_out == img ? 1 : 2;
      b.projection = b.stride == 2 || b.ci != b.co;
      n.blocks.push_back(b);
      ch = b.co;
      img = b.img_out;
    }
  if (!n.blocks.empty()) n.blocks.back().last = true;

  if (plan.stages.size() == n.stages.size()) {
    for (const BlockSpec& b : n.blocks) {
      const GapConfig gin = plan.stages[b.stride == 2 ? b.stage - 1 : b.stage], gout = plan.stages[b.stage];
      ConvLayerSpec c1{b.ci, b.co, b.img_in, b.img_out, 3, b.stride, 1, gin, gout, hyb ? Algo::CAConv : Algo::MPConvLC};
      ConvLayerSpec c2{b.co, b.co, b.img_out, b.img_out, 3, 1, 1, gout, gout,
                       hyb ? (algo.reorder ? Algo::RAConvReorder : Algo::RAConvNaive) : Algo::MPConvLC};
      n.layers.push_back(c1);
      n.layers.push_back(c2);
      if (b.projection)
        n.layers.push_back({b.ci, b.co, b.img_in, b.img_out, 1, b.stride, 0, gin, gout,
                            hyb ? Algo::CAConv : Algo::MPConvLC});
    }
  }
  n.validate();
  return n;
}

NetworkSpec build_micro(int channels, int img, int stem_f, const GapConfig& gap, int64_t slots, bool stem_square) {
  NetworkSpec n;
  n.preset = "micro";
  n.plan = make_plan("custom", Scheme::Hybrid, {gap});
  n.params = HeParams::set_hyp();
  n.params.slot_count = slots;
  n.in_channels = n.stem_channels = n.classes = channels;
  n.in_img = img;
  n.stem_f = stem_f;
  n.stem_pad = stem_f / 2;
  n.stem_square = stem_square;
  n.stages = {{channels, img, 0}};
  n.grid = static_cast<int>(pow2_ceil(img));
  ConvLayerSpec stem{channels, channels, img, img, stem_f, 1, stem_f / 2, gap, gap, Algo::RAConvReorder};
  n.layers.push_back(stem);
  n.validate();
  return n;
}

// ---- bootstrapping ----

int stem_levels(const NetworkSpec& spec) {
  const int sq = spec.stem_square ? 1 : 0;
  switch (spec.stem_kind) {
    case StemKind::None: return 0;
    case StemKind::Im2col: return 1 + sq;
    case StemKind::Conv: return 2 + sq;
  }
  return 0;
}

NetworkSpec schedule_bootstraps(const NetworkSpec& in) {
  NetworkSpec spec = in;
  spec.boots.clear();
  const int L = spec.params.usable_level;
  if (!spec.blocks.empty() && L < kBlockLevels)
    throw Error(ErrorCode::InfeasibleBudget,
                "a block needs " + std::to_string(kBlockLevels) + " levels, L' is " + std::to_string(L));
  if (L < 2 || L < stem_levels(spec)) throw Error(ErrorCode::InfeasibleBudget, "L' too small for the stem or head");
  int level = L - stem_levels(spec);
  int cts = spec.stage_format(0).num_cts();
  for (size_t b = 0; b < spec.blocks.size(); ++b) {
    const BlockSpec& bs = spec.blocks[b];
    if (level < kBlockLevels) {
      spec.boots.push_back({block_name(static_cast<int>(b)), static_cast<int>(b), cts, level});
      level = L;
    }
    const bool deferred = bs.last && spec.scheme == Scheme::Hybrid;
    level -= deferred ? kBlockLevels - 1 : kBlockLevels;
    cts = spec.stage_format(bs.stage).num_cts();
  }
  if (level < 1) {
    spec.boots.push_back({"head.mask", -1, cts, level});
    level = L;
  }
  level -= 1;
  if (level < 2) {
    spec.boots.push_back({"head.fc", -1, 1, level});
    level = L;
  }
  spec.scheduled = true;
  return spec;
}

int64_t scheduled_boot_count(const NetworkSpec& spec) {
  int64_t n = 0;
  for (const auto& b : spec.boots) n += b.cts;
  return n;
}

// ---- weights ----

ModelWeights random_weights(const NetworkSpec& spec, uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelWeights w;
  w.stem_kind = spec.stem_kind;
  w.stem = seeded_conv(rng, spec.stem_channels, spec.in_channels, spec.stem_f);
  w.stem_stride = spec.stem_stride;
  w.stem_pad = spec.stem_pad;
  w.stem_square = spec.stem_square;
  w.stem_pool = spec.stem_pool;
  for (const BlockSpec& b : spec.blocks) {
    BlockWeights bw;
    bw.conv1 = seeded_conv(rng, b.co, b.ci, 3);
    bw.conv2 = seeded_conv(rng, b.co, b.co, 3);
    if (b.projection) bw.proj = seeded_conv(rng, b.co, b.ci, 1);
    bw.stride = b.stride;
    w.blocks.push_back(std::move(bw));
  }
  const int last = spec.stages.empty() ? spec.stem_channels : spec.stages.back().channels;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  w.fc.out = spec.classes;
  w.fc.in = last;
  w.fc.w.resize(static_cast<size_t>(spec.classes) * last);
  for (auto& v : w.fc.w) v = u(rng) / std::sqrt(static_cast<double>(last));
  w.fc.bias.resize(spec.classes);
  for (auto& v : w.fc.bias) v = 0.1 * u(rng);
  return w;
}

void calibrate_weights(ModelWeights& w, const Tensor& x, bool from_stem, int first_block, int nblocks) {
  constexpr double kStem = 0.3, kFirst = 1.0, kSecond = 0.25;
  auto fit = [](ConvWeights& k, const Tensor& in, int stride, int pad, double target) {
    Tensor y = conv2d_ref(in, k, stride, pad);
    double r = rms(y);
    if (r > 0) {
      scale_conv(k, target / r);
      for (auto& v : y.v) v *= target / r;
    }
    return y;
  };
  Tensor h = x;
  if (from_stem && w.stem_kind != StemKind::None) {
    h = fit(w.stem, h, w.stem_stride, w.stem_pad, kStem);
    if (w.stem_square) h = square_ref(h);
    if (w.stem_pool) h = avgpool_ref(h, 2);
  }
  for (int b = first_block; b < first_block + nblocks; ++b) {
    BlockWeights& bw = w.blocks.at(b);
    Tensor a = square_ref(fit(bw.conv1, h, bw.stride, 1, kFirst));
    Tensor m = fit(bw.conv2, a, 1, 1, kSecond);
    Tensor sc = bw.proj ? fit(*bw.proj, h, bw.stride, 0, kSecond) : h;
    h = square_ref(add_ref(m, sc));
  }
}

// ---- head ----

Ct avg_pool_and_fc(Backend& be, const PackedTensor& x, const FcWeights& fc, bool boot_mask, bool boot_fc) {
  const Format& f = x.format;
  const Geometry& g = f.geo;
  if (f.kind != Packing::CA || f.segments != 1) throw Error(ErrorCode::FormatMismatch, "head expects pi_CA");
  if (fc.in > x.channels) throw Error(ErrorCode::ShapeMismatch, "FC input wider than the tensor");
  const int n = f.num_cts();
  if (n > g.pixel_rows() * g.pixel_cols()) throw Error(ErrorCode::CapacityExceeded, "too many ciphertexts to merge");

  std::vector<Ct> cts = x.cts;
  for (Ct& c : cts) {
    for (int b = 0; (1 << b) < g.pixel_cols(); ++b) c = be.add_ct(c, be.crot(c, g.col_step() << b, RotTag::Other));
    for (int b = 0; (1 << b) < g.pixel_rows(); ++b) c = be.add_ct(c, be.crot(c, g.row_step() << b, RotTag::Other));
    if (boot_mask) c = be.bootstrap(c);
  }

  // pixel (0,0), duplicate 0 of every channel; ct i moves to pixel i
  std::vector<int64_t> slot_of(x.channels, -1);
  Ct merged;
  for (int i = 0; i < n; ++i) {
    std::vector<int64_t> keep;
    const int64_t shift = g.pixel_offset(i / g.pixel_cols(), i % g.pixel_cols());
    for (int a = 0; a < g.groups(); ++a)
      for (int j = 0; j < f.m; ++j) {
        int c = f.chan[i][a * f.m + j];
        if (c < 0 || c >= x.channels) continue;
        int64_t s = g.slot(0, a, 0, 0, j);
        keep.push_back(s);
        slot_of[c] = s + shift;
      }
    Ct y = be.rescale(be.mul_pt(cts[i], be.encode(cts[i].level(), [&](std::vector<double>& v) {
      for (int64_t s : keep) v[s] = 1.0;
    })));
    if (shift) y = be.crot(y, -shift, RotTag::Other);
    merged = merged.valid() ? be.add_ct(merged, y) : y;
  }
  if (boot_fc) merged = be.bootstrap(merged);

  const double inv = 1.0 / (static_cast<double>(x.height) * x.width);
  const int64_t slots = be.slots();
  if (fc.out > slots) throw Error(ErrorCode::CapacityExceeded, "more classes than slots");
  Ct acc;
  for (int o = 0; o < fc.out; ++o) {
    Ct y = be.rescale(be.mul_pt(merged, be.encode(merged.level(), [&](std::vector<double>& v) {
      for (int c = 0; c < fc.in; ++c)
        if (slot_of[c] >= 0) v[slot_of[c]] = fc.at(o, c) * inv;
    })));
    y = ras(be, y, static_cast<int>(slots), 1, RotTag::Other);
    y = be.rescale(be.mul_pt(y, be.encode(y.level(), [o](std::vector<double>& v) { v[o] = 1.0; })));
    acc = acc.valid() ? be.add_ct(acc, y) : y;
  }
  return be.add_pt(acc, be.encode(acc.level(), [&](std::vector<double>& v) {
    for (int o = 0; o < fc.out; ++o) v[o] = fc.bias.empty() ? 0.0 : fc.bias[o];
  }));
}

std::vector<double> decode_logits(const Backend& be, const Ct& ct, int classes) {
  auto v = be.decrypt(ct);
  return std::vector<double>(v.begin(), v.begin() + classes);
}

// ---- im2col stem ----

PackedTensor im2col_head(Backend& be, const Tensor& x, const ConvWeights& k, int stride, int pad, bool square,
                         bool pool, const Format& out, int level) {
  if (out.kind != Packing::CA || out.segments != 1 || out.geo.reps != 1)
    throw Error(ErrorCode::FormatMismatch, "im2col output must be plain pi_CA");
  if (x.c != k.ci) throw Error(ErrorCode::ShapeMismatch, "stem input channels differ from the kernel");
  const Geometry& g = out.geo;
  const int ho = (x.h + 2 * pad - k.f) / stride + 1;
  const int fin = pool ? ho / 2 : ho;
  if (fin != g.img) throw Error(ErrorCode::ShapeMismatch, "stem output size differs from the format");
  const int Q = pool ? 4 : 1;
  const int K = k.ci * k.f * k.f;
  const int cs = g.cell_slots();

  // Client: one row per (pool offset, patch element), copied to every group and cell slot.
  std::vector<std::vector<Ct>> rows(Q);
  for (int q = 0; q < Q; ++q)
    for (int e = 0; e < K; ++e) {
      if (!be.full()) {
        rows[q].push_back(be.encrypt_trace(level));
        continue;
      }
      const int ci = e / (k.f * k.f), ky = (e / k.f) % k.f, kx = e % k.f;
      std::vector<double> v(g.slots, 0.0);
      for (int h = 0; h < g.img; ++h)
        for (int w = 0; w < g.img; ++w) {
          const int ph = pool ? 2 * h + q / 2 : h, pw = pool ? 2 * w + q % 2 : w;
          const int iy = ph * stride + ky - pad, ix = pw * stride + kx - pad;
          if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
          const double val = x.at(ci, iy, ix);
          for (int a = 0; a < g.groups(); ++a)
            for (int t = 0; t < cs; ++t) v[g.slot(0, a, h, w, t)] = val;
        }
      rows[q].push_back(be.encrypt(v, level));
    }

  // Squaring after a 1/2 scale averages the four squares; without it the scale is 1/4.
  const double scale = pool ? (square ? 0.5 : 0.25) : 1.0;
  auto fill = [&](int l, const std::function<double(int o)>& val) {
    return [&, l, val](std::vector<double>& v) {
      for (int a = 0; a < g.groups(); ++a)
        for (int t = 0; t < cs; ++t) {
          int o = out.chan[l][a * out.m + t % out.m];
          if (o < 0 || o >= k.co) continue;
          const double c = val(o);
          for (int h = 0; h < g.img; ++h)
            for (int w = 0; w < g.img; ++w) v[g.slot(0, a, h, w, t)] = c;
        }
    };
  };
  PackedTensor res;
  res.format = out;
  res.channels = k.co;
  res.height = res.width = g.img;
  for (int l = 0; l < out.num_cts(); ++l) {
    std::vector<Pt> wpt;
    for (int e = 0; e < K; ++e) {
      const int ci = e / (k.f * k.f), ky = (e / k.f) % k.f, kx = e % k.f;
      wpt.push_back(be.encode(level, fill(l, [&, ci, ky, kx](int o) { return scale * k.at(o, ci, ky, kx); })));
    }
    Ct total;
    for (int q = 0; q < Q; ++q) {
      Ct acc;
      for (int e = 0; e < K; ++e) {
        Ct p = be.mul_pt(rows[q][e], wpt[e]);
        acc = acc.valid() ? be.add_ct(acc, p) : p;
      }
      acc = be.rescale(acc);
      acc = be.add_pt(acc, be.encode(acc.level(), fill(l, [&](int o) { return scale * k.b(o); })));
      if (square) acc = square_activation(be, acc);
      total = total.valid() ? be.add_ct(total, acc) : acc;
    }
    res.cts.push_back(total);
  }
  return res;
}

// ---- inference ----

namespace {

PackedTensor run_block(Backend& be, const NetworkSpec& spec, const BlockSpec& bs, const BlockWeights& bw,
                       const PackedTensor& x) {
  const bool last_hybrid = bs.last && spec.scheme == Scheme::Hybrid;
  PackedTensor main, sc;
  if (spec.scheme == Scheme::Baseline) {
    const Format fo = spec.stage_format(bs.stage);
    PackedTensor a = square_all(be, mp_conv(be, x, bw.conv1, bs.stride, fo));
    main = mp_conv(be, a, bw.conv2, 1, fo);
    sc = bw.proj ? mp_conv(be, x, *bw.proj, bs.stride, fo) : x;
  } else {
    ConvOptions ra;
    ra.mask = !last_hybrid;
    if (!bw.proj) {
      if (spec.algo.fused && spec.algo.reorder) {
        main = fused_block(be, x, bw.conv1, bw.conv2, x.format, nullptr, ra);
      } else {
        PackedTensor a = square_all(be, caconv(be, x, bw.conv1));
        main = raconv(be, a, bw.conv2, x.format, spec.algo.reorder, ra);
      }
      sc = x;
    } else {
      if (bs.stride != 2) throw Error(ErrorCode::UnsupportedTransition, "hybrid projections run at stride 2");
      const Geometry g = x.format.geo.strided();
      const GapConfig gp = spec.plan.stages[bs.stage];
      RawTensor rp = caconv_raw(be, x, *bw.proj, 2);
      GatherPlan pp = plan_gather(rp, Packing::CA, g, gp.m, gp.d);
      RawTensor rd = caconv_raw(be, x, bw.conv1, 2);
      GatherPlan pd = plan_gather(rd, Packing::RA, g, gp.m, gp.d);
      PackedTensor a = square_all(be, ir(be, rd, pd, g.img, g.img));
      main = raconv(be, a, bw.conv2, pp.format, spec.algo.reorder, ra);
      sc = ir(be, rp, pp, g.img, g.img);
    }
  }
  sc = level_down_all(be, sc, level_of(main));
  return square_all(be, add_all(be, main, sc));
}

PackedTensor blocks_impl(Backend& be, const NetworkSpec& spec, const ModelWeights& w, PackedTensor x, int first,
                         int count, std::vector<Tensor>* outs, bool check_schedule) {
  CostLedger& led = be.ledger();
  for (int b = first; b < first + count; ++b) {
    const std::string name = block_name(b);
    LedgerScope scope(led, name);
    const bool need = level_of(x) < kBlockLevels;
    if (check_schedule && need != (find_site(spec, name) != nullptr))
      throw Error(ErrorCode::InfeasibleBudget, "bootstrap schedule disagrees with the run at " + name);
    if (need) x = bootstrap_all(be, x);
    led.mark_level(name + ".in", level_of(x));
    x = run_block(be, spec, spec.blocks.at(b), w.blocks.at(b), x);
    led.mark_level(name + ".out", level_of(x));
    if (outs && be.full()) outs->push_back(unpack(be, x));
  }
  return x;
}

}  // namespace

PackedTensor run_blocks(Backend& be, const NetworkSpec& spec, const ModelWeights& w, PackedTensor x, int first,
                        int count, std::vector<Tensor>* outs) {
  if (first < 0 || count < 0 || first + count > static_cast<int>(spec.blocks.size()))
    throw Error(ErrorCode::ShapeMismatch, "block range outside the network");
  return blocks_impl(be, spec, w, std::move(x), first, count, outs, false);
}

InferenceResult run_inference(Backend& be, const NetworkSpec& in_spec, const ModelWeights& w, const Tensor& x,
                              const RunOptions& opt) {
  const NetworkSpec spec = in_spec.scheduled ? in_spec : schedule_bootstraps(in_spec);
  if (be.slots() != spec.params.slot_count || be.params().usable_level != spec.params.usable_level)
    throw Error(ErrorCode::ConfigError, "backend parameters differ from the network");
  if (w.blocks.size() != spec.blocks.size()) throw Error(ErrorCode::ShapeMismatch, "weights do not fit the network");
  CostLedger& led = be.ledger();
  const int L = spec.params.usable_level;
  const int64_t boots0 = led.get(Op::Boot);
  InferenceResult res;

  PackedTensor h;
  {
    LedgerScope scope(led, "stem");
    const Format f0 = spec.stage_format(0);
    switch (spec.stem_kind) {
      case StemKind::Im2col:
        h = im2col_head(be, x, w.stem, spec.stem_stride, spec.stem_pad, spec.stem_square, spec.stem_pool, f0, L);
        break;
      case StemKind::Conv: {
        PackedTensor in = pack(be, x, spec.input_format(), L);
        if (spec.scheme == Scheme::Baseline) {
          h = mp_conv(be, in, w.stem, 1, f0);
        } else {
          h = raconv(be, in, w.stem, f0, spec.algo.reorder);
        }
        if (spec.stem_square) h = square_all(be, h);
        break;
      }
      case StemKind::None:
        h = pack(be, x, f0, L);
        break;
    }
    led.mark_level("stem.out", level_of(h));
    if (opt.keep_outputs && be.full()) res.stem_out = unpack(be, h);
  }
  h = blocks_impl(be, spec, w, std::move(h), 0, static_cast<int>(spec.blocks.size()),
                  opt.keep_outputs ? &res.block_out : nullptr, true);
  {
    LedgerScope scope(led, "head");
    Ct logits = avg_pool_and_fc(be, h, w.fc, find_site(spec, "head.mask") != nullptr,
                                find_site(spec, "head.fc") != nullptr);
    if (be.full()) res.logits = decode_logits(be, logits, spec.classes);
  }
  res.boots = led.get(Op::Boot) - boots0;
  return res;
}

}  // namespace slotconv
