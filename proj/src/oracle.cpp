// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#include "slotconv/oracle.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "slotconv/heslot.hpp"

namespace slotconv {

Tensor conv2d_ref(const Tensor& x, const ConvWeights& k, int stride, int pad) {
  if (x.c != k.ci) throw Error(ErrorCode::ShapeMismatch, "conv2d_ref: input channels differ from kernel");
  if (stride < 1) throw Error(ErrorCode::ShapeMismatch, "conv2d_ref: stride must be positive");
  const int ho = (x.h + 2 * pad - k.f) / stride + 1;
  const int wo = (x.w + 2 * pad - k.f) / stride + 1;
  Tensor y(k.co, ho, wo);
  for (int o = 0; o < k.co; ++o)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (int i = 0; i < k.ci; ++i)
          for (int ky = 0; ky < k.f; ++ky) {
            int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < k.f; ++kx) {
              int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= x.w) continue;
              acc += k.at(o, i, ky, kx) * x.at(i, iy, ix);
            }
          }
        y.at(o, oy, ox) = acc + k.b(o);
      }
  return y;
}

Tensor square_ref(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.v) v *= v;
  return y;
}

Tensor add_ref(const Tensor& a, const Tensor& b) {
  if (a.c != b.c || a.h != b.h || a.w != b.w) throw Error(ErrorCode::ShapeMismatch, "add_ref shapes differ");
  Tensor y = a;
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += b.v[i];
  return y;
}

Tensor avgpool_ref(const Tensor& x, int k) {
  Tensor y(x.c, x.h / k, x.w / k);
  const double s = 1.0 / (k * k);
  for (int c = 0; c < y.c; ++c)
    for (int oy = 0; oy < y.h; ++oy)
      for (int ox = 0; ox < y.w; ++ox) {
        double acc = 0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) acc += x.at(c, oy * k + dy, ox * k + dx);
        y.at(c, oy, ox) = acc * s;
      }
  return y;
}

std::vector<double> global_avg_ref(const Tensor& x) {
  std::vector<double> out(x.c, 0.0);
  for (int c = 0; c < x.c; ++c) {
    double acc = 0;
    for (int y = 0; y < x.h; ++y)
      for (int z = 0; z < x.w; ++z) acc += x.at(c, y, z);
    out[c] = acc / (x.h * x.w);
  }
  return out;
}

std::vector<double> fc_ref(const std::vector<double>& v, const FcWeights& fc) {
  if (static_cast<int>(v.size()) != fc.in) throw Error(ErrorCode::ShapeMismatch, "fc_ref input length");
  std::vector<double> out(fc.out, 0.0);
  for (int o = 0; o < fc.out; ++o) {
    double acc = 0;
    for (int i = 0; i < fc.in; ++i) acc += fc.at(o, i) * v[i];
    out[o] = acc + (fc.bias.empty() ? 0.0 : fc.bias[o]);
  }
  return out;
}

std::vector<double> forward_ref(const ModelWeights& w, const Tensor& x, ForwardTrace* trace) {
  Tensor h = x;
  if (w.stem_kind != StemKind::None) {
    h = conv2d_ref(h, w.stem, w.stem_stride, w.stem_pad);
    if (w.stem_square) h = square_ref(h);
    if (w.stem_pool) h = avgpool_ref(h, 2);
  }
  if (trace) trace->stem_out = h;
  for (const auto& b : w.blocks) {
    Tensor a = square_ref(conv2d_ref(h, b.conv1, b.stride, 1));
    Tensor m = conv2d_ref(a, b.conv2, 1, 1);
    Tensor sc = b.proj ? conv2d_ref(h, *b.proj, b.stride, 0) : h;
    h = square_ref(add_ref(m, sc));
    if (trace) trace->block_out.push_back(h);
  }
  auto pooled = global_avg_ref(h);
  if (trace) trace->pooled = pooled;
  return fc_ref(pooled, w.fc);
}

// ---- tensor files ----

std::map<std::string, NamedArray> load_arrays(const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw Error(ErrorCode::IoError, "cannot open manifest " + manifest_path);
  nlohmann::json j;
  try {
    mf >> j;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::IoError, std::string("bad manifest: ") + e.what());
  }
  auto dir = std::filesystem::path(manifest_path).parent_path();
  auto bin = dir / j.at("file").get<std::string>();
  std::ifstream bf(bin, std::ios::binary);
  if (!bf) throw Error(ErrorCode::IoError, "cannot open " + bin.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  const size_t n_total = raw.size() / 8;
  std::map<std::string, NamedArray> out;
  for (const auto& t : j.at("tensors")) {
    NamedArray a;
    a.shape = t.at("shape").get<std::vector<int>>();
    size_t n = 1;
    for (int s : a.shape) n *= static_cast<size_t>(s);
    size_t off = t.at("offset").get<size_t>();
    if (off + n > n_total) throw Error(ErrorCode::IoError, "tensor " + t.at("name").get<std::string>() + " past end of file");
    a.v.resize(n);
    for (size_t i = 0; i < n; ++i) {
      unsigned char b[8];
      std::memcpy(b, raw.data() + (off + i) * 8, 8);
      uint64_t u = 0;
      for (int k = 7; k >= 0; --k) u = (u << 8) | b[k];
      std::memcpy(&a.v[i], &u, 8);
    }
    out[t.at("name").get<std::string>()] = std::move(a);
  }
  return out;
}

void save_arrays(const std::string& manifest_path, const std::string& bin_name,
                 const std::map<std::string, NamedArray>& arrays) {
  auto dir = std::filesystem::path(manifest_path).parent_path();
  std::ofstream bf(dir / bin_name, std::ios::binary);
  if (!bf) throw Error(ErrorCode::IoError, "cannot write " + bin_name);
  nlohmann::json j;
  j["file"] = bin_name;
  j["tensors"] = nlohmann::json::array();
  size_t off = 0;
  for (const auto& [name, a] : arrays) {
    j["tensors"].push_back({{"name", name}, {"shape", a.shape}, {"offset", off}});
    for (double v : a.v) {
      uint64_t u;
      std::memcpy(&u, &v, 8);
      unsigned char b[8];
      for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(u >> (8 * k));
      bf.write(reinterpret_cast<const char*>(b), 8);
    }
    off += a.v.size();
  }
  std::ofstream mf(manifest_path);
  mf << j.dump(2) << "\n";
}

Tensor to_tensor(const NamedArray& a) {
  if (a.shape.size() != 3) throw Error(ErrorCode::ShapeMismatch, "expected a (C,H,W) array");
  Tensor t(a.shape[0], a.shape[1], a.shape[2]);
  t.v = a.v;
  return t;
}

NamedArray from_tensor(const Tensor& t) { return {{t.c, t.h, t.w}, t.v}; }

namespace {
void put_conv(std::map<std::string, NamedArray>& m, const std::string& p, const ConvWeights& c) {
  m[p + ".w"] = {{c.co, c.ci, c.f, c.f}, c.w};
  m[p + ".b"] = {{c.co}, c.bias.empty() ? std::vector<double>(c.co, 0.0) : c.bias};
}

void get_conv(const std::map<std::string, NamedArray>& m, const std::string& p, ConvWeights& c) {
  auto it = m.find(p + ".w");
  if (it != m.end()) {
    std::vector<int> want{c.co, c.ci, c.f, c.f};
    if (it->second.shape != want) throw Error(ErrorCode::ShapeMismatch, "weight " + p + " has the wrong shape");
    c.w = it->second.v;
  }
  it = m.find(p + ".b");
  if (it != m.end()) {
    if (it->second.v.size() != static_cast<size_t>(c.co)) throw Error(ErrorCode::ShapeMismatch, "bias " + p);
    c.bias = it->second.v;
  }
}
}  // namespace

std::map<std::string, NamedArray> export_weights(const ModelWeights& w) {
  std::map<std::string, NamedArray> m;
  if (w.stem_kind != StemKind::None) put_conv(m, "stem", w.stem);
  for (size_t i = 0; i < w.blocks.size(); ++i) {
    std::string p = "block" + std::to_string(i);
    put_conv(m, p + ".conv1", w.blocks[i].conv1);
    put_conv(m, p + ".conv2", w.blocks[i].conv2);
    if (w.blocks[i].proj) put_conv(m, p + ".proj", *w.blocks[i].proj);
  }
  m["fc.w"] = {{w.fc.out, w.fc.in}, w.fc.w};
  m["fc.b"] = {{w.fc.out}, w.fc.bias.empty() ? std::vector<double>(w.fc.out, 0.0) : w.fc.bias};
  return m;
}

void import_weights(ModelWeights& w, const std::map<std::string, NamedArray>& arrays) {
  if (w.stem_kind != StemKind::None) get_conv(arrays, "stem", w.stem);
  for (size_t i = 0; i < w.blocks.size(); ++i) {
    std::string p = "block" + std::to_string(i);
    get_conv(arrays, p + ".conv1", w.blocks[i].conv1);
    get_conv(arrays, p + ".conv2", w.blocks[i].conv2);
    if (w.blocks[i].proj) get_conv(arrays, p + ".proj", *w.blocks[i].proj);
  }
  auto it = arrays.find("fc.w");
  if (it != arrays.end()) {
    if (it->second.v.size() != w.fc.w.size()) throw Error(ErrorCode::ShapeMismatch, "fc.w");
    w.fc.w = it->second.v;
  }
  it = arrays.find("fc.b");
  if (it != arrays.end()) w.fc.bias = it->second.v;
}

}  // namespace slotconv
