// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>

#include "slotconv/tensor.hpp"

namespace testsupport {

using slotconv::ConvWeights;
using slotconv::Tensor;

inline Tensor random_tensor(int c, int h, int w, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(c, h, w);
  for (auto& v : t.v) v = u(rng);
  return t;
}

inline ConvWeights random_conv(int co, int ci, int f, uint64_t seed, bool bias = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ConvWeights k(co, ci, f);
  for (auto& v : k.w) v = u(rng) / std::sqrt(double(ci * f * f));
  if (bias)
    for (auto& v : k.bias) v = 0.1 * u(rng);
  return k;
}

// Zero-pads the input into a larger buffer and slides the window over it.
inline Tensor brute_conv(const Tensor& x, const ConvWeights& k, int stride, int pad) {
  const int H = x.h + 2 * pad, W = x.w + 2 * pad;
  std::vector<double> buf(static_cast<size_t>(x.c) * H * W, 0.0);
  for (int c = 0; c < x.c; ++c)
    for (int y = 0; y < x.h; ++y)
      for (int z = 0; z < x.w; ++z) buf[(static_cast<size_t>(c) * H + y + pad) * W + z + pad] = x.at(c, y, z);
  const int ho = (H - k.f) / stride + 1, wo = (W - k.f) / stride + 1;
  Tensor out(k.co, ho, wo);
  for (int o = 0; o < k.co; ++o)
    for (int y = 0; y < ho; ++y)
      for (int z = 0; z < wo; ++z) {
        double s = 0;
        for (int c = 0; c < x.c; ++c)
          for (int a = 0; a < k.f; ++a)
            for (int b = 0; b < k.f; ++b)
              s += buf[(static_cast<size_t>(c) * H + y * stride + a) * W + z * stride + b] * k.at(o, c, a, b);
        out.at(o, y, z) = s + k.b(o);
      }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

inline double max_abs(const Tensor& a) {
  double m = 0;
  for (double v : a.v) m = std::max(m, std::abs(v));
  return m;
}

inline double rel_err(const Tensor& got, const Tensor& ref) {
  double s = max_abs(ref);
  return max_abs_diff(got, ref) / (s > 0 ? s : 1.0);
}

}  // namespace testsupport
