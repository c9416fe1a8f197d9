// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#include "slotconv/heslot.hpp"

#include <algorithm>

namespace slotconv {

const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::LevelMismatch: return "LevelMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LevelExhausted: return "LevelExhausted";
    case ErrorCode::InvalidTarget: return "InvalidTarget";
    case ErrorCode::RescalePending: return "RescalePending";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::CapacityExceeded: return "CapacityExceeded";
    case ErrorCode::GapMismatch: return "GapMismatch";
    case ErrorCode::IndivisibleHeight: return "IndivisibleHeight";
    case ErrorCode::NonPowerOfTwoGroups: return "NonPowerOfTwoGroups";
    case ErrorCode::UnsupportedTransition: return "UnsupportedTransition";
    case ErrorCode::FormatMismatch: return "FormatMismatch";
    case ErrorCode::PlanViolation: return "PlanViolation";
    case ErrorCode::InfeasibleBudget: return "InfeasibleBudget";
    case ErrorCode::Unreachable: return "Unreachable";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::UnsupportedAlgo: return "UnsupportedAlgo";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code), detail_(what) {}

HeParams HeParams::set_hyp() {
  HeParams p;
  p.name = "set_hyp";
  p.max_level = 23;
  p.usable_level = 6;
  p.dnum = 6;
  p.ct_bytes = 10e6;
  p.pt_bytes = 5e6;
  p.evk_bytes = 168e6;
  return p;
}

HeParams HeParams::set_lc() {
  HeParams p;
  p.name = "set_lc";
  p.max_level = 31;
  p.usable_level = 16;
  p.dnum = 32;
  p.ct_bytes = 17e6;
  p.pt_bytes = 8.5e6;
  p.evk_bytes = 1056e6;
  return p;
}

HeParams HeParams::by_name(const std::string& name) {
  if (name == "set_hyp" || name == "hyp") return set_hyp();
  if (name == "set_lc" || name == "lc") return set_lc();
  throw Error(ErrorCode::ConfigError, "unknown parameter preset '" + name + "'");
}

void HeParams::validate() const {
  if (slot_count <= 0 || (slot_count & (slot_count - 1)) != 0)
    throw Error(ErrorCode::InvalidParams, "slot_count must be a power of two");
  if (usable_level <= 0 || usable_level > max_level)
    throw Error(ErrorCode::InvalidParams, "need 0 < L' <= L");
  if (!(ct_bytes > 0 && pt_bytes > 0 && evk_bytes > 0))
    throw Error(ErrorCode::InvalidParams, "object sizes must be positive");
}

double HeParams::ct_bytes_at(int level) const {
  return ct_bytes * (level + 1) / (max_level + 1);
}

double HeParams::pt_bytes_at(int level) const {
  return pt_bytes * (level + 1) / (max_level + 1);
}

namespace {
constexpr std::array<const char*, kOpCount> kOpNames = {
    "AddPt", "AddCt", "MulPt", "MulCt", "Rescale", "PRot", "CRot", "Boot"};
constexpr std::array<const char*, kTagCount> kTagNames = {
    "Slide", "RaS", "RaS_g", "IR", "IR_g", "Other"};
}  // namespace

const char* op_name(Op op) { return kOpNames[static_cast<int>(op)]; }
const char* tag_name(RotTag tag) { return kTagNames[static_cast<int>(tag)]; }

std::optional<RotTag> parse_tag(const std::string& s) {
  for (int i = 0; i < kTagCount; ++i)
    if (s == kTagNames[i]) return static_cast<RotTag>(i);
  return std::nullopt;
}

void CostLedger::count(Op op, int64_t n) {
  std::lock_guard<std::mutex> g(mu_);
  ops_[static_cast<int>(op)] += n;
}

void CostLedger::rotation(int64_t amount, RotTag tag) {
  std::lock_guard<std::mutex> g(mu_);
  ops_[static_cast<int>(Op::CRot)] += 1;
  tags_[static_cast<int>(tag)] += 1;
  if (amount % slots_ == 0) ++zero_rot_;
  log_.push_back({amount, tag, scope_stack_.back()});
}

int64_t CostLedger::get(Op op) const {
  std::lock_guard<std::mutex> g(mu_);
  return ops_[static_cast<int>(op)];
}

int64_t CostLedger::rotations(RotTag tag) const {
  std::lock_guard<std::mutex> g(mu_);
  return tags_[static_cast<int>(tag)];
}

int64_t CostLedger::total_rotations() const { return get(Op::CRot); }

int64_t CostLedger::zero_rotations() const {
  std::lock_guard<std::mutex> g(mu_);
  return zero_rot_;
}

std::vector<RotationRecord> CostLedger::rotation_log() const {
  std::lock_guard<std::mutex> g(mu_);
  return log_;
}

int CostLedger::enter(const std::string& name) {
  std::lock_guard<std::mutex> g(mu_);
  int id = static_cast<int>(scope_names_.size());
  scope_names_.push_back(name);
  scope_stack_.push_back(id);
  return id;
}

void CostLedger::leave() {
  std::lock_guard<std::mutex> g(mu_);
  if (scope_stack_.size() > 1) scope_stack_.pop_back();
}

std::vector<std::string> CostLedger::scope_names() const {
  std::lock_guard<std::mutex> g(mu_);
  return scope_names_;
}

int CostLedger::current_scope() const {
  std::lock_guard<std::mutex> g(mu_);
  return scope_stack_.back();
}

void CostLedger::ct_born(double bytes) {
  std::lock_guard<std::mutex> g(mu_);
  ++live_;
  live_b_ += bytes;
  peak_ = std::max(peak_, live_);
  peak_b_ = std::max(peak_b_, live_b_);
}

void CostLedger::ct_died(double bytes) {
  std::lock_guard<std::mutex> g(mu_);
  --live_;
  live_b_ -= bytes;
}

int64_t CostLedger::live_cts() const {
  std::lock_guard<std::mutex> g(mu_);
  return live_;
}

int64_t CostLedger::peak_cts() const {
  std::lock_guard<std::mutex> g(mu_);
  return peak_;
}

double CostLedger::live_bytes() const {
  std::lock_guard<std::mutex> g(mu_);
  return live_b_;
}

double CostLedger::peak_bytes() const {
  std::lock_guard<std::mutex> g(mu_);
  return peak_b_;
}

void CostLedger::reset_peak() {
  std::lock_guard<std::mutex> g(mu_);
  peak_ = live_;
  peak_b_ = live_b_;
}

void CostLedger::mark_level(const std::string& where, int level) {
  std::lock_guard<std::mutex> g(mu_);
  levels_.push_back({where, level});
}

std::vector<LevelMark> CostLedger::level_marks() const {
  std::lock_guard<std::mutex> g(mu_);
  return levels_;
}

void CostLedger::pt_encoded(double) {
  std::lock_guard<std::mutex> g(mu_);
  ++pts_;
}

int64_t CostLedger::pts_encoded() const {
  std::lock_guard<std::mutex> g(mu_);
  return pts_;
}

std::vector<std::array<int64_t, kTagCount>> CostLedger::rotations_by_scope() const {
  std::lock_guard<std::mutex> g(mu_);
  std::vector<std::array<int64_t, kTagCount>> out(scope_names_.size());
  for (auto& a : out) a.fill(0);
  for (const auto& r : log_) out[r.scope][static_cast<int>(r.tag)] += 1;
  return out;
}

bool CostLedger::same_counts(const CostLedger& o) const {
  std::scoped_lock g(mu_, o.mu_);
  if (ops_ != o.ops_ || tags_ != o.tags_ || log_.size() != o.log_.size()) return false;
  for (size_t i = 0; i < log_.size(); ++i)
    if (log_[i].amount != o.log_[i].amount || log_[i].tag != o.log_[i].tag) return false;
  return true;
}

CtBody::~CtBody() {
  if (led) led->ct_died(bytes);
}

int Ct::level() const { return b_->level; }
bool Ct::pending() const { return b_->pending; }
const std::vector<double>& Ct::values() const { return b_->v; }

Backend::Backend(HeParams p, Mode m) : p_(std::move(p)), mode_(m), led_(p_.slot_count) {
  p_.validate();
}

Ct Backend::make(std::vector<double> v, int level, bool pending) {
  auto b = std::make_shared<CtBody>();
  b->v = std::move(v);
  b->level = level;
  b->pending = pending;
  b->led = &led_;
  b->bytes = p_.ct_bytes_at(level);
  led_.ct_born(b->bytes);
  return Ct(std::move(b));
}

Ct Backend::encrypt(const std::vector<double>& v, int level) {
  if (level < 0 || level > p_.max_level) throw Error(ErrorCode::InvalidTarget, "bad level");
  if (!full()) return make({}, level, false);
  if (static_cast<int64_t>(v.size()) > p_.slot_count)
    throw Error(ErrorCode::ShapeMismatch, "message longer than slot count");
  std::vector<double> s(p_.slot_count, 0.0);
  std::copy(v.begin(), v.end(), s.begin());
  return make(std::move(s), level, false);
}

Ct Backend::encrypt_trace(int level) { return encrypt({}, level); }

std::vector<double> Backend::decrypt(const Ct& c) const {
  if (!full()) throw Error(ErrorCode::InvalidParams, "decrypt needs full mode");
  return c.values();
}

Pt Backend::encode(int level, const SlotFill& fill) {
  Pt p;
  p.level_ = level;
  if (full()) {
    auto v = std::make_shared<std::vector<double>>(p_.slot_count, 0.0);
    fill(*v);
    p.v_ = std::move(v);
  }
  led_.pt_encoded(p_.pt_bytes_at(level));
  return p;
}

Pt Backend::encode_values(std::vector<double> v, int level) {
  if (full() && static_cast<int64_t>(v.size()) != p_.slot_count)
    throw Error(ErrorCode::ShapeMismatch, "plaintext length differs from slot count");
  Pt p;
  p.level_ = level;
  if (full()) p.v_ = std::make_shared<const std::vector<double>>(std::move(v));
  led_.pt_encoded(p_.pt_bytes_at(level));
  return p;
}

void Backend::check_ready(const Ct& a) const {
  if (!a.valid()) throw Error(ErrorCode::ShapeMismatch, "empty ciphertext handle");
}

int64_t Backend::wrap(int64_t r) const {
  int64_t n = p_.slot_count;
  return ((r % n) + n) % n;
}

Ct Backend::add_ct(const Ct& a, const Ct& b) {
  check_ready(a);
  check_ready(b);
  if (a.level() != b.level()) throw Error(ErrorCode::LevelMismatch, "add_ct levels differ");
  if (a.pending() != b.pending()) throw Error(ErrorCode::RescalePending, "add_ct scale differs");
  led_.count(Op::AddCt);
  std::vector<double> v;
  if (full()) {
    if (a.values().size() != b.values().size()) throw Error(ErrorCode::ShapeMismatch, "add_ct");
    v = a.values();
    const auto& bv = b.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] += bv[i];
  }
  return make(std::move(v), a.level(), a.pending());
}

Ct Backend::sub_ct(const Ct& a, const Ct& b) {
  check_ready(a);
  check_ready(b);
  if (a.level() != b.level()) throw Error(ErrorCode::LevelMismatch, "sub_ct levels differ");
  if (a.pending() != b.pending()) throw Error(ErrorCode::RescalePending, "sub_ct scale differs");
  led_.count(Op::AddCt);
  std::vector<double> v;
  if (full()) {
    v = a.values();
    const auto& bv = b.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
  }
  return make(std::move(v), a.level(), a.pending());
}

Ct Backend::add_pt(const Ct& a, const Pt& p) {
  check_ready(a);
  if (a.level() != p.level()) throw Error(ErrorCode::LevelMismatch, "add_pt levels differ");
  led_.count(Op::AddPt);
  std::vector<double> v;
  if (full()) {
    v = a.values();
    const auto& pv = p.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] += pv[i];
  }
  return make(std::move(v), a.level(), a.pending());
}

Ct Backend::mul_pt(const Ct& a, const Pt& p) {
  check_ready(a);
  if (a.level() != p.level()) throw Error(ErrorCode::LevelMismatch, "mul_pt levels differ");
  if (a.level() < 1) throw Error(ErrorCode::LevelExhausted, "mul_pt at level 0");
  if (a.pending()) throw Error(ErrorCode::RescalePending, "mul_pt on unrescaled product");
  led_.count(Op::MulPt);
  std::vector<double> v;
  if (full()) {
    v = a.values();
    const auto& pv = p.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] *= pv[i];
  }
  return make(std::move(v), a.level(), true);
}

Ct Backend::mul_ct(const Ct& a, const Ct& b) {
  check_ready(a);
  check_ready(b);
  if (a.level() != b.level()) throw Error(ErrorCode::LevelMismatch, "mul_ct levels differ");
  if (a.level() < 1) throw Error(ErrorCode::LevelExhausted, "mul_ct at level 0");
  if (a.pending() || b.pending()) throw Error(ErrorCode::RescalePending, "mul_ct on unrescaled product");
  led_.count(Op::MulCt);
  std::vector<double> v;
  if (full()) {
    v = a.values();
    const auto& bv = b.values();
    for (size_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
  }
  return make(std::move(v), a.level(), true);
}

Ct Backend::rescale(const Ct& a) {
  check_ready(a);
  if (a.level() < 1) throw Error(ErrorCode::LevelExhausted, "rescale at level 0");
  if (!a.pending()) throw Error(ErrorCode::RescalePending, "rescale without a pending product");
  led_.count(Op::Rescale);
  std::vector<double> v;
  if (full()) v = a.values();
  return make(std::move(v), a.level() - 1, false);
}

Ct Backend::crot(const Ct& a, int64_t r, RotTag tag) {
  check_ready(a);
  led_.rotation(r, tag);
  std::vector<double> v;
  if (full()) {
    const auto& src = a.values();
    int64_t n = static_cast<int64_t>(src.size());
    int64_t s = wrap(r);
    v.resize(n);
    std::copy(src.begin() + s, src.end(), v.begin());
    std::copy(src.begin(), src.begin() + s, v.begin() + (n - s));
  }
  return make(std::move(v), a.level(), a.pending());
}

Pt Backend::prot(const Pt& p, int64_t r) {
  led_.count(Op::PRot);
  Pt out;
  out.level_ = p.level_;
  if (full() && p.v_) {
    const auto& src = *p.v_;
    int64_t n = static_cast<int64_t>(src.size());
    int64_t s = wrap(r);
    auto v = std::make_shared<std::vector<double>>(n);
    std::copy(src.begin() + s, src.end(), v->begin());
    std::copy(src.begin(), src.begin() + s, v->begin() + (n - s));
    out.v_ = std::move(v);
  }
  return out;
}

Ct Backend::bootstrap(const Ct& a) {
  check_ready(a);
  if (a.pending()) throw Error(ErrorCode::RescalePending, "bootstrap on unrescaled product");
  led_.count(Op::Boot);
  std::vector<double> v;
  if (full()) v = a.values();
  return make(std::move(v), p_.usable_level, false);
}

Ct Backend::level_down(const Ct& a, int target) {
  check_ready(a);
  if (target > a.level() || target < 0)
    throw Error(ErrorCode::InvalidTarget, "level_down target above current level");
  if (target == a.level()) return a;
  if (a.pending()) throw Error(ErrorCode::RescalePending, "level_down on unrescaled product");
  std::vector<double> v;
  if (full()) v = a.values();
  return make(std::move(v), target, false);
}

}  // namespace slotconv
