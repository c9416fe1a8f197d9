// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#include "slotconv/costmodel.hpp"

#include <algorithm>
#include <deque>
#include <future>
#include <set>
#include <thread>

namespace slotconv {

namespace {

int lg(int x) { return ilog2(x); }

void need_pow2(int v, const char* what) {
  if (v < 1 || !is_pow2(v)) throw Error(ErrorCode::InvalidParams, std::string(what) + " must be a power of two");
}


}  // namespace

int64_t ConvCost::total() const {
  int64_t s = 0;
  for (int t = 0; t < kTagCount; ++t) s += rot[t];
  return s;
}

ConvCost conv_cost(Algo algo, int f, int c_n, int m, int d) {
  if (algo != Algo::MPConvLC && algo != Algo::CAConv && algo != Algo::RAConvNaive && algo != Algo::RAConvReorder)
    throw Error(ErrorCode::UnsupportedAlgo, std::string("no closed form for ") + algo_name(algo));
  need_pow2(c_n, "c_n");
  need_pow2(m, "m");
  need_pow2(d, "d");
  if (f < 1) throw Error(ErrorCode::InvalidParams, "filter size must be positive");
  if (m * c_n < d) throw Error(ErrorCode::InvalidParams, "d exceeds m*c_n");
  ConvCost c;
  c.algo = algo;
  c.f = f;
  c.c_n = c_n;
  c.m = m;
  c.d = d;
  const int64_t passes = static_cast<int64_t>(m) * c_n / d;
  const int64_t slide = static_cast<int64_t>(f) * f - 1;
  auto set = [&](RotTag t, int64_t v) { c.rot[static_cast<int>(t)] = v; };
  switch (algo) {
    case Algo::MPConvLC:
      set(RotTag::Slide, slide);
      set(RotTag::RaS, passes * lg(c_n));
      set(RotTag::RaS_g, passes * lg(m));
      // one merged column in the published table: gather, then replicate over d
      set(RotTag::IR, static_cast<int64_t>(m) * c_n - 1);
      set(RotTag::IR_g, lg(d));
      break;
    case Algo::CAConv:
      c.n_o = passes;
      set(RotTag::Slide, slide);
      set(RotTag::RaS, passes * lg(c_n));
      set(RotTag::RaS_g, passes * lg(m));
      set(RotTag::IR_g, passes * lg(m));
      break;
    case Algo::RAConvNaive:
    case Algo::RAConvReorder:
      // the selection runs over the d distinct channels of each input
      c.n_i = passes;
      set(RotTag::Slide, algo == Algo::RAConvNaive ? passes * slide : slide);
      set(RotTag::RaS_g, lg(d));
      set(RotTag::IR_g, lg(d));
      break;
    default:
      break;
  }
  return c;
}

ConvCost measure_conv_cost(Algo algo, int f, int c_n, int m, int d) {
  ConvCost want = conv_cost(algo, f, c_n, m, d);  // validates the arguments
  constexpr int img = 4;
  const int c = c_n * m;
  Tensor x(c, img, img);
  ConvWeights k(c, c, f);

  ConvCost got = want;
  got.rot = {};
  auto finish = [&](const Backend& be, size_t ni, size_t no) {
    got.n_i = static_cast<int64_t>(ni);
    got.n_o = static_cast<int64_t>(no);
    for (int t = 0; t < kTagCount; ++t) got.rot[t] = be.ledger().rotations(static_cast<RotTag>(t));
    return got;
  };

  if (algo == Algo::MPConvLC) {
    int side = 1;
    while (side * side < m) side *= 2;
    if (side * side != m) throw Error(ErrorCode::GapMismatch, "multiplexed cells are square");
    const int grid = img * side;
    HeParams p = HeParams::set_hyp();
    p.slot_count = static_cast<int64_t>(d) * c_n * grid * grid;
    Backend be(p, Mode::Trace);
    Format fm = mp_format(p.slot_count, grid, img, m, c);
    if (fm.groups() != c_n || fm.geo.reps != d) throw Error(ErrorCode::GapMismatch, "unit setting does not fit");
    PackedTensor in = pack(be, x, fm, p.usable_level);
    PackedTensor out = mp_conv(be, in, k, 1, fm);
    return finish(be, in.cts.size(), out.cts.size());
  }

  const int b = lg(m * d);
  const int ch = 1 << ((b + 1) / 2), cw = 1 << (b / 2);
  HeParams p = HeParams::set_hyp();
  p.slot_count = static_cast<int64_t>(c_n) * pow2_ceil(img * ch) * pow2_ceil(img * cw);
  Geometry g = grid_geometry(p.slot_count, img, ch, cw);
  if (g.groups() != c_n) throw Error(ErrorCode::GapMismatch, "unit setting does not fit");
  Backend be(p, Mode::Trace);
  if (algo == Algo::CAConv) {
    PackedTensor in = pack(be, x, ca_format(g, m, d, c), p.usable_level);
    PackedTensor out = caconv(be, in, k);
    return finish(be, in.cts.size(), out.cts.size());
  }
  PackedTensor in = pack(be, x, ra_format(g, m, d, c), p.usable_level);
  PackedTensor out = raconv(be, in, k, ca_format(g, m, d, c), algo == Algo::RAConvReorder);
  return finish(be, in.cts.size(), out.cts.size());
}

// ---- keys ----

int64_t normalize_rotation(int64_t amount, int64_t slots) {
  if (slots <= 1) return 0;
  int64_t r = amount % slots;
  if (r < 0) r += slots;
  if (r > slots / 2) r -= slots;
  return r;
}

KeySet::KeySet(int64_t slots, std::vector<int64_t> amounts) : slots_(slots) {
  if (slots < 1) throw Error(ErrorCode::InvalidParams, "slot count must be positive");
  for (int64_t a : amounts) {
    int64_t r = normalize_rotation(a, slots_);
    if (r != 0) keys_.push_back(r);
  }
  rebuild();
}

KeySet KeySet::power_of_two(int64_t slots) {
  std::vector<int64_t> a;
  for (int64_t p = 1; p < slots; p *= 2) {
    a.push_back(p);
    a.push_back(-p);
  }
  return KeySet(slots, a);
}

namespace {
std::vector<Geometry> network_geometries(const NetworkSpec& spec) {
  std::vector<Geometry> gs;
  for (size_t s = 0; s < spec.stages.size(); ++s) gs.push_back(spec.stage_geometry(static_cast<int>(s)));
  if (spec.stem_kind == StemKind::Conv) gs.push_back(spec.input_format().geo);
  return gs;
}
}  // namespace

KeySet KeySet::for_network(const NetworkSpec& spec) {
  KeySet k = power_of_two(spec.params.slot_count);
  for (const Geometry& g : network_geometries(spec))
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) k.keys_.push_back(normalize_rotation(slide_shift(g, 3, ky, kx), k.slots_));
  k.rebuild();
  return k;
}

void KeySet::add(int64_t amount) {
  int64_t r = normalize_rotation(amount, slots_);
  if (r == 0) return;
  keys_.push_back(r);
  rebuild();
}

bool KeySet::contains(int64_t amount) const {
  return std::binary_search(keys_.begin(), keys_.end(), normalize_rotation(amount, slots_));
}

void KeySet::rebuild() {
  std::erase(keys_, 0);
  std::sort(keys_.begin(), keys_.end());
  keys_.erase(std::unique(keys_.begin(), keys_.end()), keys_.end());
  dist_.assign(static_cast<size_t>(slots_), -1);
  dist_[0] = 0;
  std::deque<int64_t> q{0};
  while (!q.empty()) {
    int64_t u = q.front();
    q.pop_front();
    for (int64_t k : keys_) {
      int64_t v = ((u + k) % slots_ + slots_) % slots_;
      if (dist_[v] < 0) {
        dist_[v] = dist_[u] + 1;
        q.push_back(v);
      }
    }
  }
}

int KeySet::distance(int64_t amount) const {
  int64_t r = ((amount % slots_) + slots_) % slots_;
  return dist_[static_cast<size_t>(r)];
}

std::vector<int64_t> decompose_rotation(int64_t amount, const KeySet& keys) {
  const int64_t n = keys.slots();
  int64_t cur = ((amount % n) + n) % n;
  if (keys.distance(cur) < 0)
    throw Error(ErrorCode::Unreachable, "rotation " + std::to_string(amount) + " cannot be composed from the keys");
  std::vector<int64_t> out;
  while (cur != 0) {
    const int dc = keys.distance(cur);
    for (int64_t k : keys.amounts()) {
      int64_t nxt = ((cur - k) % n + n) % n;
      if (keys.distance(nxt) == dc - 1) {
        out.push_back(k);
        cur = nxt;
        break;
      }
    }
  }
  return out;
}

EffectiveRotations effective_rotations(const CostLedger& led, const KeySet& keys) {
  EffectiveRotations e;
  for (const RotationRecord& r : led.rotation_log()) {
    const int t = static_cast<int>(r.tag);
    const int64_t n = static_cast<int64_t>(decompose_rotation(r.amount, keys).size());
    e.raw[t] += 1;
    e.eff[t] += n;
    if (r.tag != RotTag::Other) {
      e.raw_total += 1;
      e.eff_total += n;
    }
  }
  return e;
}

int64_t evaluation_key_count(const NetworkSpec& spec) {
  std::set<int64_t> slides;
  for (const Geometry& g : network_geometries(spec))
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        int64_t a = normalize_rotation(slide_shift(g, 3, ky, kx), spec.params.slot_count);
        if (a != 0 && !is_pow2(a < 0 ? -a : a)) slides.insert(a);
      }
  return kBootstrapKeys + 2 + static_cast<int64_t>(slides.size());
}

// ---- memory ----

int64_t conv_weight_slots(const ConvLayerSpec& l) {
  // im2col stems hold one fragment per output pixel
  const int64_t w = l.algo == Algo::Im2col ? l.wo : l.wi;
  return w * w * l.f * l.f * static_cast<int64_t>(l.ci) * l.co;
}

MemoryReport memory_footprint(const NetworkSpec& spec, const HeParams& params, int prcr_segments) {
  if (prcr_segments < 1 || !is_pow2(prcr_segments))
    throw Error(ErrorCode::InvalidParams, "PRCR segments must be a power of two");
  MemoryReport r;
  r.prcr_segments = prcr_segments;
  const double per_slot = params.pt_bytes / static_cast<double>(params.slot_count);
  auto add_conv = [&](MemoryEntry& e, const ConvLayerSpec& l) {
    const int64_t ws = conv_weight_slots(l);
    e.weight_slots += ws;
    e.weight_pt_bytes += ws * per_slot / prcr_segments;
    e.bias_pt_bytes += static_cast<double>(l.wo) * l.wo * l.co * per_slot;
  };
  if (spec.layers.empty()) return r;

  MemoryEntry stem{"stem"};
  add_conv(stem, spec.layers[0]);
  stem.ct_bytes = spec.stage_format(0).num_cts() * params.ct_bytes;
  r.entries.push_back(stem);
  size_t li = 1;
  for (size_t b = 0; b < spec.blocks.size(); ++b) {
    const BlockSpec& bs = spec.blocks[b];
    MemoryEntry e{"block" + std::to_string(b)};
    const int n = bs.projection ? 3 : 2;
    for (int i = 0; i < n; ++i) add_conv(e, spec.layers.at(li++));
    const Format out = spec.stage_format(bs.stage);
    const Format in = spec.stage_format(bs.stride == 2 ? bs.stage - 1 : bs.stage);
    const int mid = spec.scheme == Scheme::Hybrid ? ra_format(out.geo, out.m, out.d, bs.co).num_cts() : out.num_cts();
    e.ct_bytes = (in.num_cts() + mid + out.num_cts()) * params.ct_bytes;
    r.entries.push_back(e);
  }
  for (const MemoryEntry& e : r.entries) {
    r.weight_slots += e.weight_slots;
    r.weight_pt_bytes += e.weight_pt_bytes;
    r.bias_pt_bytes += e.bias_pt_bytes;
    r.ct_bytes = std::max(r.ct_bytes, e.ct_bytes);
  }
  r.evk_count = evaluation_key_count(spec);
  r.evk_bytes = r.evk_count * params.evk_bytes;
  return r;
}

// ---- network counts and search ----

NetworkCount count_network(const NetworkSpec& spec, const ModelWeights& w, const KeySet* keys) {
  Backend be(spec.params, Mode::Trace);
  Tensor x(spec.in_channels, spec.in_img, spec.in_img);
  InferenceResult res = run_inference(be, spec, w, x);
  NetworkCount c;
  const CostLedger& led = be.ledger();
  for (int t = 0; t < kTagCount; ++t) c.tags[t] = led.rotations(static_cast<RotTag>(t));
  auto g = [&](RotTag t) { return c.tags[static_cast<int>(t)]; };
  c.siso = g(RotTag::Slide);
  c.ras = g(RotTag::RaS) + g(RotTag::RaS_g);
  c.ir = g(RotTag::IR) + g(RotTag::IR_g);
  c.total = c.siso + c.ras + c.ir;
  c.boots = res.boots;
  if (keys) c.eff_total = effective_rotations(led, *keys).eff_total;
  return c;
}

NetworkCount count_network(const NetworkSpec& spec, const KeySet* keys) {
  return count_network(spec, random_weights(spec, 0), keys);
}

int first_cell_slots(const std::string& preset, int64_t slots) {
  NetworkSpec n = build_network(preset, named_plan(preset, "baseline"));
  const int64_t grid = pow2_ceil(n.stages.at(0).img);
  const int64_t cs = slots / (grid * grid * n.stages[0].channels);
  return static_cast<int>(std::max<int64_t>(1, cs));
}

std::vector<GapPlan> enumerate_plans(const std::string& preset, int64_t slots) {
  NetworkSpec n = build_network(preset, named_plan(preset, "baseline"));
  std::vector<GapPlan> plans(1);
  int cs = first_cell_slots(preset, slots);
  for (size_t s = 0; s < n.stages.size(); ++s, cs *= 4) {
    std::vector<GapPlan> next;
    for (const GapPlan& p : plans)
      for (int m = 1; m <= cs; m *= 2) {
        GapPlan q = p;
        q.stages.push_back({m, cs / m});
        next.push_back(q);
      }
    plans = std::move(next);
  }
  for (GapPlan& p : plans) p.name = "custom";
  return plans;
}

std::vector<PlanScore> search_plans(const std::string& preset, const Objective& obj, const HeParams& params,
                                    const AlgoMix& algo) {
  std::vector<GapPlan> plans = enumerate_plans(preset, params.slot_count);
  std::vector<NetworkSpec> specs;
  for (const GapPlan& p : plans) {
    try {
      specs.push_back(schedule_bootstraps(build_network(preset, p, algo, params)));
    } catch (const Error&) {
      // plan outside what the network can run
    }
  }
  std::vector<PlanScore> out;
  if (specs.empty()) return out;
  const ModelWeights w = random_weights(specs.front(), 0);

  const size_t width = std::max(1u, std::thread::hardware_concurrency());
  for (size_t lo = 0; lo < specs.size(); lo += width) {
    std::vector<std::future<NetworkCount>> fs;
    for (size_t i = lo; i < std::min(specs.size(), lo + width); ++i)
      fs.push_back(std::async(std::launch::async, [&, i] { return count_network(specs[i], w); }));
    for (size_t i = 0; i < fs.size(); ++i) {
      PlanScore s;
      s.plan = specs[lo + i].plan;
      s.count = fs[i].get();
      s.score = obj.crot * s.count.total + obj.boot * s.count.boots;
      out.push_back(std::move(s));
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const PlanScore& a, const PlanScore& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.plan.to_string() < b.plan.to_string();
  });
  return out;
}

// ---- published numbers ----

const std::vector<RuntimeRow>& runtime_table() {
  static const std::vector<RuntimeRow> rows = {
      {"resnet20", "baseline", 152, 924, 800, 1876, 3638, 10},
      {"resnet20", "optimal", 152, 580, 187, 919, 1002, 10},
      {"resnet20", "minrot", 240, 407, 142, 789, 881, 15},
      {"resnet18", "baseline", 536, 32384, 4669, 37589, 43672, 38},
      {"resnet18", "minboot", 536, 17920, 9544, 28000, 30072, 38},
      {"resnet18", "optimal", 1024, 4512, 1823, 7359, 9095, 65},
  };
  return rows;
}

const std::vector<MemoryRow>& memory_table() {
  static const std::vector<MemoryRow> rows = {{"weights", 1, 364.8}, {"weights_prcr", 8, 45.6}};
  return rows;
}

}  // namespace slotconv
