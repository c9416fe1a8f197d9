// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#include <random>

#include "doctest.h"
#include "slotconv/heslot.hpp"

using namespace slotconv;

namespace {
std::vector<double> rnd(size_t n, uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<double> v(n);
  for (auto& x : v) x = u(g);
  return v;
}

HeParams small() {
  HeParams p = HeParams::set_hyp();
  p.slot_count = 16;
  return p;
}
}  // namespace

TEST_CASE("presets hold the parameter table") {
  auto h = HeParams::set_hyp();
  CHECK(h.max_level + 1 == 24);
  CHECK(h.usable_level == 6);
  CHECK(h.dnum == 6);
  CHECK(h.pt_bytes == 5e6);
  auto l = HeParams::set_lc();
  CHECK(l.max_level + 1 == 32);
  CHECK(l.usable_level == 16);
  CHECK(l.evk_bytes == 1056e6);
  HeParams bad = h;
  bad.slot_count = 100;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = h;
  bad.usable_level = 30;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("add_ct") {
  Backend be(HeParams::set_hyp(), Mode::Full);
  std::vector<double> a(32768), b(32768);
  for (int i = 0; i < 32768; ++i) {
    a[i] = i + 1;
    b[i] = i + 3;
  }
  auto c = be.add_ct(be.encrypt(a, 3), be.encrypt(b, 3));
  CHECK(c.level() == 3);
  CHECK(be.decrypt(c)[0] == 4);
  CHECK(be.decrypt(c)[1] == 6);
  auto z = be.add_ct(be.encrypt(a, 3), be.encrypt({}, 3));
  CHECK(be.decrypt(z) == a);
  auto r1 = rnd(32768, 1), r2 = rnd(32768, 2);
  auto s = be.decrypt(be.add_ct(be.encrypt(r1, 2), be.encrypt(r2, 2)));
  for (int i = 0; i < 32768; ++i) REQUIRE(s[i] == r1[i] + r2[i]);
  CHECK_THROWS_AS(be.add_ct(be.encrypt(a, 3), be.encrypt(b, 2)), Error);
  CHECK(be.ledger().get(Op::AddCt) == 3);
}

TEST_CASE("mul_pt, rescale and level exhaustion") {
  Backend be(small(), Mode::Full);
  auto x = rnd(16, 3), y = rnd(16, 4);
  auto ones = be.encode_values(std::vector<double>(16, 1.0), 6);
  auto ct = be.encrypt(x, 6);
  auto p = be.mul_pt(ct, ones);
  CHECK(p.pending());
  CHECK(be.decrypt(p) == x);
  auto r = be.rescale(p);
  CHECK(r.level() == 5);
  std::vector<double> mask(16, 0.0);
  mask[3] = 1;
  auto mm = be.decrypt(be.rescale(be.mul_pt(ct, be.encode_values(mask, 6))));
  CHECK(mm[3] == x[3]);
  CHECK(mm[4] == 0.0);
  auto prod = be.decrypt(be.rescale(be.mul_pt(ct, be.encode_values(y, 6))));
  for (int i = 0; i < 16; ++i) CHECK(prod[i] == x[i] * y[i]);

  // L' = 6 multiplications succeed, the 7th fails
  Ct c = be.encrypt(x, 6);
  int k = 0;
  try {
    for (;; ++k) c = be.rescale(be.mul_pt(c, be.encode_values(std::vector<double>(16, 1.0), c.level())));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LevelExhausted);
  }
  CHECK(k == 6);
  CHECK_THROWS_AS(be.rescale(be.encrypt(x, 3)), Error);
}

TEST_CASE("crot shifts left and always counts") {
  Backend be(small(), Mode::Full);
  std::vector<double> x(16);
  for (int i = 0; i < 16; ++i) x[i] = i;
  auto ct = be.encrypt(x, 2);
  auto r = be.decrypt(be.crot(ct, 1, RotTag::Slide));
  CHECK(r[0] == 1);
  CHECK(r[15] == 0);
  auto n = be.decrypt(be.crot(ct, -1, RotTag::Slide));
  CHECK(n[0] == 15);
  auto z = be.decrypt(be.crot(ct, 0, RotTag::Other));
  CHECK(z == x);
  CHECK(be.ledger().get(Op::CRot) == 3);
  CHECK(be.ledger().zero_rotations() == 1);
  auto rr = be.decrypt(be.crot(be.crot(ct, 5, RotTag::RaS), 16 - 5, RotTag::RaS));
  CHECK(rr == x);
  CHECK(be.ledger().rotation_log().size() == static_cast<size_t>(be.ledger().get(Op::CRot)));
  CHECK(be.ledger().rotations(RotTag::RaS) == 2);
}

TEST_CASE("prot mirrors crot on plaintexts") {
  Backend be(small(), Mode::Full);
  std::vector<double> x(16);
  for (int i = 0; i < 16; ++i) x[i] = i;
  auto p = be.encode_values(x, 2);
  CHECK(be.prot(p, 1).values()[0] == 1);
  CHECK(be.prot(p, 0).values() == x);
  CHECK(be.prot(be.prot(p, 7), 9).values() == x);
  CHECK(be.ledger().get(Op::PRot) == 4);
  CHECK(be.ledger().get(Op::CRot) == 0);
}

TEST_CASE("bootstrap and level_down") {
  Backend be(small(), Mode::Full);
  auto x = rnd(16, 9);
  auto b = be.bootstrap(be.encrypt(x, 0));
  CHECK(b.level() == 6);
  CHECK(be.decrypt(b) == x);
  CHECK(be.bootstrap(be.encrypt(x, 2)).level() == 6);
  CHECK(be.ledger().get(Op::Boot) == 2);
  CHECK(be.level_down(be.encrypt(x, 5), 3).level() == 3);
  CHECK(be.level_down(be.encrypt(x, 3), 3).level() == 3);
  CHECK_THROWS_AS(be.level_down(be.encrypt(x, 2), 4), Error);
  CHECK(be.ledger().get(Op::CRot) == 0);
}

TEST_CASE("full and trace replay give identical ledgers") {
  Backend full(small(), Mode::Full), trace(small(), Mode::Trace);
  for (Backend* be : {&full, &trace}) {
    auto c = be->encrypt(rnd(16, 1), 6);
    auto pt = be->encode(6, [](std::vector<double>& v) { v.assign(v.size(), 0.5); });
    for (int i = 0; i < 3; ++i) c = be->add_ct(c, be->crot(c, i + 1, RotTag::RaS));
    c = be->rescale(be->mul_pt(c, pt));
    c = be->rescale(be->mul_ct(c, c));
    c = be->bootstrap(c);
  }
  CHECK(full.ledger().same_counts(trace.ledger()));
  CHECK(trace.ledger().get(Op::Boot) == 1);
}

TEST_CASE("live ciphertext tally follows handles") {
  Backend be(small(), Mode::Trace);
  {
    auto a = be.encrypt_trace(6);
    auto b = a;
    CHECK(be.ledger().live_cts() == 1);
    auto c = be.add_ct(a, b);
    CHECK(be.ledger().live_cts() == 2);
  }
  CHECK(be.ledger().live_cts() == 0);
  CHECK(be.ledger().peak_cts() == 2);
}
