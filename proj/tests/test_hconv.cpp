// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "slotconv/hconv.hpp"
#include "slotconv/oracle.hpp"
#include "support.hpp"

using namespace slotconv;
using namespace testsupport;

namespace {
HeParams tiny(int64_t slots) {
  HeParams p = HeParams::set_hyp();
  p.slot_count = slots;
  return p;
}

int64_t tag(const Backend& be, RotTag t) { return be.ledger().rotations(t); }

ConvWeights single(const ConvWeights& k, int o, int i) {
  ConvWeights s(1, 1, k.f);
  for (int a = 0; a < k.f; ++a)
    for (int b = 0; b < k.f; ++b) s.at(0, 0, a, b) = k.at(o, i, a, b);
  s.bias[0] = 0;
  return s;
}

// cell with m*d slots, as square as possible, taller than wide
std::pair<int, int> cell_of(int m, int d) {
  int b = ilog2(m * d);
  return {1 << ((b + 1) / 2), 1 << (b / 2)};
}
}  // namespace

TEST_CASE("siso with the identity kernel returns the input") {
  Backend be(tiny(16), Mode::Full);
  Tensor x(1, 4, 4);
  for (int i = 0; i < 16; ++i) x.v[i] = i + 1;
  ConvWeights k(1, 1, 3);
  k.at(0, 0, 1, 1) = 1;
  auto p = pack(be, x, ca_format(grid_geometry(16, 4, 1, 1), 1, 1, 1), 6);
  auto y = siso(be, p, k);
  CHECK(unpack(be, y).v == x.v);
  CHECK(tag(be, RotTag::Slide) == 8);
  CHECK(be.ledger().get(Op::MulPt) == 9);
  CHECK(be.ledger().get(Op::Rescale) == 1);
  CHECK(level_of(y) == 5);
}

TEST_CASE("siso stride 2 leaves c1..c4 on the gap-2 grid") {
  Backend be(tiny(16), Mode::Full);
  Tensor x(1, 4, 4);
  for (int i = 0; i < 16; ++i) x.v[i] = i + 1;
  ConvWeights k = random_conv(1, 1, 3, 5, false);
  auto p = pack(be, x, ca_format(grid_geometry(16, 4, 1, 1), 1, 1, 1), 6);
  auto y = siso(be, p, k, 2);
  Tensor ref = conv2d_ref(x, k, 2, 1);
  auto v = be.decrypt(y.cts[0]);
  CHECK(v[0] == doctest::Approx(ref.at(0, 0, 0)));
  CHECK(v[2] == doctest::Approx(ref.at(0, 0, 1)));
  CHECK(v[8] == doctest::Approx(ref.at(0, 1, 0)));
  CHECK(v[10] == doctest::Approx(ref.at(0, 1, 1)));
  for (int s : {1, 3, 4, 5, 6, 7, 9, 11, 12, 13, 14, 15}) CHECK(v[s] == 0.0);
  CHECK(max_abs_diff(unpack(be, y), ref) < 1e-12);
}

TEST_CASE("siso on a random 8x8 image matches conv2d_ref") {
  Backend be(tiny(64), Mode::Full);
  Tensor x = random_tensor(1, 8, 8, 17);
  ConvWeights k = random_conv(1, 1, 3, 18, false);
  auto y = siso(be, pack(be, x, ca_format(grid_geometry(64, 8, 1, 1), 1, 1, 1), 6), k);
  CHECK(max_abs_diff(unpack(be, y), conv2d_ref(x, k, 1, 1)) < 1e-9);
}

TEST_CASE("reordered siso equals siso and shares the slide rotations") {
  Geometry g = grid_geometry(64, 8, 1, 1);
  Format f = ca_format(g, 1, 1, 1);
  ConvWeights id(1, 1, 3);
  id.at(0, 0, 1, 1) = 1;
  {
    Backend be(tiny(64), Mode::Full);
    Tensor x = random_tensor(1, 8, 8, 2);
    auto p = pack(be, x, f, 6);
    Ct y = siso_sum(be, {p.cts[0]}, f, {id}, true);
    CHECK(be.decrypt(y) == be.decrypt(p.cts[0]));
  }
  std::vector<Tensor> xs;
  std::vector<ConvWeights> ks;
  for (int i = 0; i < 4; ++i) {
    xs.push_back(random_tensor(1, 8, 8, 30 + i));
    ks.push_back(random_conv(1, 1, 3, 40 + i, false));
  }
  auto run = [&](bool reorder, int64_t* slide) {
    Backend be(tiny(64), Mode::Full);
    std::vector<Ct> cts;
    for (auto& x : xs) cts.push_back(pack(be, x, f, 6).cts[0]);
    Ct y = siso_sum(be, cts, f, ks, reorder);
    *slide = tag(be, RotTag::Slide);
    return be.decrypt(y);
  };
  int64_t sn = 0, sr = 0;
  auto naive = run(false, &sn);
  auto re = run(true, &sr);
  CHECK(naive == re);
  CHECK(sn == 32);
  CHECK(sr == 8);
  Tensor ref(1, 8, 8);
  for (int i = 0; i < 4; ++i) ref = add_ref(ref, conv2d_ref(xs[i], ks[i], 1, 1));
  Tensor got(1, 8, 8);
  got.v.assign(naive.begin(), naive.end());
  CHECK(max_abs_diff(got, ref) < 1e-12);
}

TEST_CASE("ras sums cyclic groups") {
  Backend be(tiny(16), Mode::Full);
  std::vector<double> v(16);
  for (int i = 0; i < 16; ++i) v[i] = i;
  Ct c = be.encrypt(v, 3);
  CHECK(be.decrypt(ras(be, c, 1, 4, RotTag::RaS)) == v);
  CHECK(be.ledger().total_rotations() == 0);
  auto s = be.decrypt(ras(be, c, 4, 4, RotTag::RaS));
  CHECK(tag(be, RotTag::RaS) == 2);
  for (int i = 0; i < 16; ++i) CHECK(s[i] == (i % 4) * 4 + 24);
  CHECK_THROWS_AS(ras(be, c, 3, 4, RotTag::RaS), Error);
  Backend big(tiny(4096), Mode::Trace);
  Ct t = big.encrypt_trace(3);
  ras(big, t, 16, 256, RotTag::RaS);
  CHECK(big.ledger().rotations(RotTag::RaS) == 4);
}

TEST_CASE("realignment costs") {
  // replication over a 2-slot cell is one rotation
  Backend be(tiny(64), Mode::Full);
  Geometry g = grid_geometry(64, 4, 1, 2);
  std::vector<double> v(64, 0.0);
  v[g.slot(0, 0, 1, 1, 0)] = 7;
  Ct r = replicate_cell(be, be.encrypt(v, 2), g, 1, 2, RotTag::IR_g);
  CHECK(tag(be, RotTag::IR_g) == 1);
  CHECK(be.decrypt(r)[g.slot(0, 0, 1, 1, 1)] == 7);

  // baseline repacking with m*c_n = 4, d = 2: 3 moves + 1 replication
  Backend mp(tiny(2048), Mode::Full);
  Format f = mp_format(2048, 16, 16, 1, 4);
  REQUIRE(f.geo.reps == 2);
  REQUIRE(f.geo.groups() == 4);
  Tensor x = random_tensor(4, 16, 16, 3);
  ConvWeights k = random_conv(4, 4, 1, 4);
  auto y = mp_conv(mp, pack(mp, x, f, 6), k, 1, f);
  CHECK(tag(mp, RotTag::IR) + tag(mp, RotTag::IR_g) == 4);
  CHECK(max_abs_diff(unpack(mp, y), conv2d_ref(x, k, 1, 0)) < 1e-9);
}

TEST_CASE("zero-shift plans need no rotations") {
  Backend be(tiny(256), Mode::Trace);
  Geometry g = grid_geometry(256, 4, 2, 2);
  RawTensor raw;
  raw.geo = g;
  raw.channels = 4;
  for (int p = 0; p < 4; ++p) {
    raw.cts.push_back(be.encrypt_trace(4));
    raw.items.push_back({{p, 0, -1, 0}});
  }
  // pi_RA(4,1) keeps one channel at t = 0 of every cell
  auto plan = plan_gather(raw, Packing::RA, g, 4, 1);
  CHECK(plan.format.num_cts() == 4);
  CHECK(plan.rotations() == 4 * 2);  // only the replication over m = 4
  for (auto& mv : plan.moves) CHECK(mv.delta == 0);
}

TEST_CASE("mp_conv with c_i = c_o = 2 and two repetitions") {
  Backend be(tiny(4096), Mode::Full);
  Format f = mp_format(4096, 32, 32, 1, 2);
  CHECK(f.geo.reps == 2);
  Tensor x = random_tensor(2, 32, 32, 5);
  ConvWeights k = random_conv(2, 2, 3, 6);
  auto y = mp_conv(be, pack(be, x, f, 6), k, 1, f);
  CHECK(max_abs_diff(unpack(be, y), conv2d_ref(x, k, 1, 1)) < 1e-9);
  CHECK(level_of(y) == 4);
}

TEST_CASE("mp_conv on a 1x1 image with f = 1 needs no rotation") {
  Backend be(tiny(1), Mode::Full);
  Format f = mp_format(1, 1, 1, 1, 1);
  Tensor x(1, 1, 1);
  x.v[0] = 3;
  ConvWeights k(1, 1, 1);
  k.w[0] = 2;
  auto y = mp_conv(be, pack(be, x, f, 6), k, 1, f);
  CHECK(be.ledger().total_rotations() == 0);
  CHECK(unpack(be, y).v[0] == 6);
}

TEST_CASE("caconv with c_n = 2 and a trivial gap matches the oracle") {
  Backend be(tiny(32), Mode::Full);
  Geometry g = grid_geometry(32, 4, 1, 1);
  Tensor x = random_tensor(2, 4, 4, 8);
  ConvWeights k = random_conv(2, 2, 3, 9);
  auto y = caconv(be, pack(be, x, ca_format(g, 1, 1, 2), 6), k);
  CHECK(y.format.kind == Packing::RA);
  CHECK(y.cts.size() == 2);
  CHECK(max_abs_diff(unpack(be, y), conv2d_ref(x, k, 1, 1)) < 1e-9);
  // replicated over both groups
  auto v = be.decrypt(y.cts[1]);
  CHECK(v[g.slot(0, 0, 2, 3, 0)] == v[g.slot(0, 1, 2, 3, 0)]);
}

TEST_CASE("caconv with c_n = m = d = 1 and f = 1 rotates nothing") {
  Backend be(tiny(16), Mode::Full);
  Tensor x = random_tensor(1, 4, 4, 1);
  ConvWeights k = random_conv(1, 1, 1, 2);
  auto y = caconv(be, pack(be, x, ca_format(grid_geometry(16, 4, 1, 1), 1, 1, 1), 6), k);
  CHECK(be.ledger().total_rotations() == 0);
  CHECK(max_abs_diff(unpack(be, y), conv2d_ref(x, k, 1, 0)) < 1e-12);
}

TEST_CASE("caconv f=3 c_n=2 m=2 d=2 counts") {
  Backend be(tiny(128), Mode::Full);
  Geometry g = grid_geometry(128, 4, 2, 2);
  REQUIRE(g.groups() == 2);
  Tensor x = random_tensor(4, 4, 4, 10);
  ConvWeights k = random_conv(4, 4, 3, 11);
  auto y = caconv(be, pack(be, x, ca_format(g, 2, 2, 4), 6), k);
  CHECK(y.cts.size() == 2);
  CHECK(tag(be, RotTag::Slide) == 8);
  CHECK(tag(be, RotTag::RaS) == 2);
  CHECK(tag(be, RotTag::RaS_g) == 2);
  CHECK(tag(be, RotTag::IR) == 0);
  CHECK(tag(be, RotTag::IR_g) == 2);
  CHECK(max_abs_diff(unpack(be, y), conv2d_ref(x, k, 1, 1)) < 1e-9);
}

TEST_CASE("raconv with |R_a| = c_i = c_o = 2") {
  Backend be(tiny(32), Mode::Full);
  Geometry g = grid_geometry(32, 4, 1, 1);
  Tensor x = random_tensor(2, 4, 4, 12);
  ConvWeights k = random_conv(2, 2, 3, 13);
  auto in = pack(be, x, ra_format(g, 1, 1, 2), 6);
  auto y = raconv(be, in, k, raconv_out_format(in.format, 2), true);
  CHECK(y.format.kind == Packing::CA);
  CHECK(tag(be, RotTag::RaS) == 0);
  CHECK(tag(be, RotTag::Slide) == 8);
  CHECK(max_abs_diff(unpack(be, y), conv2d_ref(x, k, 1, 1)) < 1e-9);
}

TEST_CASE("raconv with c_i = 1 has one ledger for both variants") {
  Geometry g = grid_geometry(64, 4, 2, 1);
  Tensor x = random_tensor(1, 4, 4, 14);
  ConvWeights k = random_conv(2, 1, 3, 15);
  Backend a(tiny(64), Mode::Full), b(tiny(64), Mode::Full);
  auto ia = pack(a, x, ra_format(g, 1, 2, 1), 6);
  auto ib = pack(b, x, ra_format(g, 1, 2, 1), 6);
  auto ya = raconv(a, ia, k, raconv_out_format(ia.format, 2), false);
  auto yb = raconv(b, ib, k, raconv_out_format(ib.format, 2), true);
  CHECK(a.ledger().same_counts(b.ledger()));
  CHECK(max_abs_diff(unpack(a, ya), conv2d_ref(x, k, 1, 1)) < 1e-9);
}

TEST_CASE("raconv naive vs reorder with c_n = 4, m = d = 1") {
  Geometry g = grid_geometry(64, 4, 1, 1);
  REQUIRE(g.groups() == 4);
  Tensor x = random_tensor(4, 4, 4, 16);
  ConvWeights k = random_conv(4, 4, 3, 17);
  Backend a(tiny(64), Mode::Full), b(tiny(64), Mode::Full);
  auto ia = pack(a, x, ra_format(g, 1, 1, 4), 6);
  auto ib = pack(b, x, ra_format(g, 1, 1, 4), 6);
  auto ya = raconv(a, ia, k, raconv_out_format(ia.format, 4), false);
  auto yb = raconv(b, ib, k, raconv_out_format(ib.format, 4), true);
  CHECK(tag(a, RotTag::Slide) == 32);
  CHECK(tag(b, RotTag::Slide) == 8);
  REQUIRE(ya.cts.size() == yb.cts.size());
  for (size_t i = 0; i < ya.cts.size(); ++i) CHECK(a.decrypt(ya.cts[i]) == b.decrypt(yb.cts[i]));
  CHECK(max_abs_diff(unpack(b, yb), conv2d_ref(x, k, 1, 1)) < 1e-9);
}

TEST_CASE("caconv then raconv over (m, d) grids matches the oracle") {
  for (auto [m, d] : {std::pair{1, 2}, std::pair{2, 1}, std::pair{2, 2}, std::pair{2, 4}, std::pair{4, 2}}) {
    auto [ch, cw] = cell_of(m, d);
    Geometry g = grid_geometry(1024, 4, ch, cw);
    int c = g.groups() * m;
    Backend be(tiny(1024), Mode::Full);
    Tensor x = random_tensor(c, 4, 4, 100 + m * 10 + d);
    ConvWeights k1 = random_conv(c, c, 3, 200 + m), k2 = random_conv(c, c, 3, 300 + d);
    auto in = pack(be, x, ca_format(g, m, d, c), 6);
    auto y = caconv(be, in, k1);
    CHECK(max_abs_diff(unpack(be, y), conv2d_ref(x, k1, 1, 1)) < 1e-9);
    auto z = raconv(be, y, k2, in.format, true);
    CHECK(same_layout(z.format, in.format));
    CHECK(max_abs_diff(unpack(be, z), conv2d_ref(conv2d_ref(x, k1, 1, 1), k2, 1, 1)) < 1e-8);
    CHECK(level_of(z) == 2);
  }
}

TEST_CASE("strided caconv with gathers into pi_RA and pi_CA") {
  // (1,2) -> (2,4): a 2x1 cell grows to 4x2
  Geometry g = grid_geometry(4096, 8, 2, 1);
  Backend be(tiny(4096), Mode::Full);
  int ci = g.groups(), co = 2 * ci;
  Tensor x = random_tensor(ci, 8, 8, 50);
  ConvWeights k = random_conv(co, ci, 3, 51), p = random_conv(co, ci, 1, 52);
  auto in = pack(be, x, ca_format(g, 1, 2, ci), 6);
  auto raw = caconv_raw(be, in, k, 2);
  CHECK(raw.cts.size() == static_cast<size_t>(co / 2));
  auto plan = plan_gather(raw, Packing::RA, g.strided(), 2, 4);
  auto y = ir(be, raw, plan, 4, 4);
  CHECK(y.format.kind == Packing::RA);
  CHECK(max_abs_diff(unpack(be, y), conv2d_ref(x, k, 2, 1)) < 1e-9);
  auto rawp = caconv_raw(be, in, p, 2);
  auto planp = plan_gather(rawp, Packing::CA, g.strided(), 2, 4);
  auto s = ir(be, rawp, planp, 4, 4);
  CHECK(s.format.kind == Packing::CA);
  CHECK(max_abs_diff(unpack(be, s), conv2d_ref(x, p, 2, 0)) < 1e-9);
  // RAConv writes into the shortcut's channel order
  ConvWeights k2 = random_conv(co, co, 3, 53);
  auto z = raconv(be, square_all(be, y), k2, s.format, true);
  CHECK(same_layout(z.format, s.format));
  auto sum = add_all(be, z, level_down_all(be, s, level_of(z)));
  Tensor ref = add_ref(conv2d_ref(square_ref(conv2d_ref(x, k, 2, 1)), k2, 1, 1), conv2d_ref(x, p, 2, 0));
  CHECK(max_abs_diff(unpack(be, sum), ref) < 1e-8);
}

TEST_CASE("strided mp_conv into a 4-way multiplexed cell") {
  Backend be(tiny(4096), Mode::Full);
  Format fin = mp_format(4096, 16, 16, 1, 4);
  Format fout = mp_format(4096, 16, 8, 4, 8);
  Tensor x = random_tensor(4, 16, 16, 60);
  ConvWeights k = random_conv(8, 4, 3, 61);
  auto y = mp_conv(be, pack(be, x, fin, 6), k, 2, fout);
  CHECK(max_abs_diff(unpack(be, y), conv2d_ref(x, k, 2, 1)) < 1e-9);
}

TEST_CASE("fused block equals caconv, square, raconv") {
  Geometry g = grid_geometry(32768, 32, 2, 1);
  Tensor x = random_tensor(16, 32, 32, 70);
  ConvWeights k1 = random_conv(16, 16, 3, 71), k2 = random_conv(16, 16, 3, 72);
  Backend a(HeParams::set_hyp(), Mode::Full), b(HeParams::set_hyp(), Mode::Full);
  auto ia = pack(a, x, ca_format(g, 1, 2, 16), 6);
  auto ib = pack(b, x, ca_format(g, 1, 2, 16), 6);
  auto ya = raconv(a, square_all(a, caconv(a, ia, k1)), k2, ia.format, true);
  FusedStats st;
  auto yb = fused_block(b, ib, k1, k2, ib.format, &st);
  REQUIRE(ya.cts.size() == yb.cts.size());
  for (size_t i = 0; i < ya.cts.size(); ++i) CHECK(a.decrypt(ya.cts[i]) == b.decrypt(yb.cts[i]));
  CHECK(a.ledger().total_rotations() == b.ledger().total_rotations());
  CHECK(a.ledger().same_counts(b.ledger()));
  const int n_ca = 1, f2 = 9;
  CHECK(st.peak_intermediate <= n_ca * f2 + 4);
  CHECK(st.accumulators == n_ca * f2);
}

TEST_CASE("fused block with n_CA = 1, f = 1") {
  Geometry g = grid_geometry(64, 4, 1, 1);
  Backend be(tiny(64), Mode::Full);
  Tensor x = random_tensor(4, 4, 4, 80);
  ConvWeights k1 = random_conv(4, 4, 1, 81), k2 = random_conv(4, 4, 1, 82);
  auto in = pack(be, x, ca_format(g, 1, 1, 4), 6);
  FusedStats st;
  auto y = fused_block(be, in, k1, k2, in.format, &st);
  CHECK(st.peak_intermediate <= 1 + 4);
  CHECK(st.slide_copies == 0);
  CHECK(max_abs_diff(unpack(be, y), conv2d_ref(square_ref(conv2d_ref(x, k1, 1, 0)), k2, 1, 0)) < 1e-9);
}

TEST_CASE("prcr with one segment is the standard path") {
  Geometry g = grid_geometry(256, 8, 1, 1);
  Tensor x = random_tensor(4, 8, 8, 90);
  ConvWeights k = random_conv(4, 4, 3, 91);
  Backend a(tiny(256), Mode::Full), b(tiny(256), Mode::Full);
  auto ya = caconv(a, pack(a, x, ca_format(g, 1, 1, 4), 6), k);
  auto yb = caconv_prcr(b, pack(b, x, prcr_ca_format(g, 1, 1, 4, 1), 6), k);
  CHECK(unpack(a, ya).v == unpack(b, yb).v);
}

TEST_CASE("prcr with c_i = c_o = 2, f = 1") {
  Geometry g = grid_geometry(16, 4, 1, 1);
  Tensor x = random_tensor(2, 4, 4, 92);
  ConvWeights k = random_conv(2, 2, 1, 93);
  Backend be(tiny(16), Mode::Full);
  auto in = pack(be, x, prcr_ca_format(g, 1, 1, 2, 2), 6);
  REQUIRE(in.cts.size() == 2);
  PrcrStats st;
  auto y = caconv_prcr(be, in, k, &st);
  CHECK(max_abs_diff(unpack(be, y), conv2d_ref(x, k, 1, 0)) < 1e-12);
  CHECK(be.ledger().get(Op::PRot) > 0);
}

TEST_CASE("prcr on a ResNet-18 layer-1 conv with 8 segments") {
  Geometry g = grid_geometry(32768, 56, 1, 1);
  Tensor x = random_tensor(64, 56, 56, 94);
  ConvWeights k = random_conv(64, 64, 3, 95);
  Backend a(HeParams::set_hyp(), Mode::Full), b(HeParams::set_hyp(), Mode::Full);
  auto ya = caconv(a, pack(a, x, ca_format(g, 1, 1, 64), 6), k);
  PrcrStats st;
  auto in = pack(b, x, prcr_ca_format(g, 1, 1, 64, 8), 6);
  auto yb = caconv_prcr(b, in, k, &st);
  Tensor ra = unpack(a, ya), rb = unpack(b, yb);
  CHECK(max_abs_diff(ra, rb) <= 1e-9 * std::max(1.0, max_abs(ra)));
  CHECK(rel_err(rb, conv2d_ref(x, k, 1, 1)) < 1e-9);
  auto std_stats = caconv_weight_stats(ca_format(g, 1, 1, 64), 64, 3);
  CHECK(std_stats.weight_slots == 8 * st.weight_slots);
}

TEST_CASE("square activation") {
  Backend be(tiny(4), Mode::Full);
  auto y = square_activation(be, be.encrypt({0, 1, 2, -3}, 2));
  CHECK(be.decrypt(y) == std::vector<double>{0, 1, 4, 9});
  CHECK(y.level() == 1);
  CHECK(be.decrypt(square_activation(be, be.encrypt({}, 2))) == std::vector<double>(4, 0.0));
  CHECK(be.ledger().get(Op::MulCt) == 2);
  CHECK_THROWS_AS(square_activation(be, be.encrypt({1}, 0)), Error);
  Tensor t = random_tensor(1, 2, 2, 3);
  auto s = be.decrypt(square_activation(be, be.encrypt(t.v, 3)));
  for (int i = 0; i < 4; ++i) CHECK(s[i] == t.v[i] * t.v[i]);
}
