// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slotconv/tensor.hpp"

namespace slotconv {

Tensor conv2d_ref(const Tensor& x, const ConvWeights& k, int stride, int pad);
Tensor square_ref(const Tensor& x);
Tensor add_ref(const Tensor& a, const Tensor& b);
// k x k window, stride k.
Tensor avgpool_ref(const Tensor& x, int k);
std::vector<double> global_avg_ref(const Tensor& x);
std::vector<double> fc_ref(const std::vector<double>& v, const FcWeights& fc);

enum class StemKind { None, Conv, Im2col };

struct BlockWeights {
  ConvWeights conv1, conv2;
  std::optional<ConvWeights> proj;  // 1x1 stride-2 shortcut
  int stride = 1;
};

// Reference model: stem conv + square (+ 2x2 average pool for the
// im2col stem), residual blocks y = sq(conv2(sq(conv1(x))) + sc(x)),
// global average pool, FC.
struct ModelWeights {
  StemKind stem_kind = StemKind::Conv;
  ConvWeights stem;
  int stem_stride = 1, stem_pad = 1;
  bool stem_square = true;
  bool stem_pool = false;
  std::vector<BlockWeights> blocks;
  FcWeights fc;
};

struct ForwardTrace {
  Tensor stem_out;
  std::vector<Tensor> block_out;
  std::vector<double> pooled;
};

std::vector<double> forward_ref(const ModelWeights& w, const Tensor& x, ForwardTrace* trace = nullptr);

// Flat little-endian f64 binary plus a JSON manifest:
//   {"file": "data.bin", "tensors": [{"name": "x", "shape": [3,32,32], "offset": 0}]}
// offset counts elements.
struct NamedArray {
  std::vector<int> shape;
  std::vector<double> v;
};
std::map<std::string, NamedArray> load_arrays(const std::string& manifest_path);
void save_arrays(const std::string& manifest_path, const std::string& bin_name,
                 const std::map<std::string, NamedArray>& arrays);
Tensor to_tensor(const NamedArray& a);
NamedArray from_tensor(const Tensor& t);

std::map<std::string, NamedArray> export_weights(const ModelWeights& w);
// Overwrites the arrays present in `arrays`; shapes must match.
void import_weights(ModelWeights& w, const std::map<std::string, NamedArray>& arrays);

}  // namespace slotconv
