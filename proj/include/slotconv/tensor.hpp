// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

namespace slotconv {

// Dense C x H x W tensor, row-major.
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, 0.0) {}

  double& at(int ch, int y, int x) { return v[(static_cast<size_t>(ch) * h + y) * w + x]; }
  double at(int ch, int y, int x) const { return v[(static_cast<size_t>(ch) * h + y) * w + x]; }
  size_t size() const { return v.size(); }
};

// Weights indexed [co][ci][ky][kx]; cross-correlation convention.
struct ConvWeights {
  int co = 0, ci = 0, f = 1;
  std::vector<double> w;
  std::vector<double> bias;  // empty means zero bias

  ConvWeights() = default;
  ConvWeights(int co_, int ci_, int f_)
      : co(co_), ci(ci_), f(f_), w(static_cast<size_t>(co_) * ci_ * f_ * f_, 0.0), bias(co_, 0.0) {}

  double& at(int o, int i, int ky, int kx) { return w[((static_cast<size_t>(o) * ci + i) * f + ky) * f + kx]; }
  double at(int o, int i, int ky, int kx) const { return w[((static_cast<size_t>(o) * ci + i) * f + ky) * f + kx]; }
  double b(int o) const { return bias.empty() ? 0.0 : bias[o]; }
};

struct FcWeights {
  int out = 0, in = 0;
  std::vector<double> w;  // [out][in]
  std::vector<double> bias;
  double at(int o, int i) const { return w[static_cast<size_t>(o) * in + i]; }
};

struct ConvShape {
  int ci = 0, co = 0, f = 3, stride = 1, pad = 1;
};

}  // namespace slotconv
