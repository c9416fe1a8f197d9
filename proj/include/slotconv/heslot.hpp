// Copyright (c) 2026 The slotconv Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace slotconv {

enum class ErrorCode {
  LevelMismatch,
  ShapeMismatch,
  LevelExhausted,
  InvalidTarget,
  RescalePending,
  InvalidParams,
  CapacityExceeded,
  GapMismatch,
  IndivisibleHeight,
  NonPowerOfTwoGroups,
  UnsupportedTransition,
  FormatMismatch,
  PlanViolation,
  InfeasibleBudget,
  Unreachable,
  ConfigError,
  IoError,
  UnsupportedAlgo,
};

const char* error_name(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const { return code_; }
  // Message without the code prefix.
  const std::string& detail() const { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

struct HeParams {
  std::string name = "set_hyp";
  int64_t slot_count = 32768;
  int max_level = 23;     // L
  int usable_level = 6;   // L', level right after bootstrapping
  int dnum = 6;
  // sizes at level L'
  double ct_bytes = 10e6;
  double pt_bytes = 5e6;
  double evk_bytes = 168e6;

  static HeParams set_hyp();
  static HeParams set_lc();
  static HeParams by_name(const std::string& name);

  void validate() const;
  double ct_bytes_at(int level) const;
  double pt_bytes_at(int level) const;
};

enum class Mode { Full, Trace };

enum class Op : int { AddPt, AddCt, MulPt, MulCt, Rescale, PRot, CRot, Boot, kCount };
enum class RotTag : int { Slide, RaS, RaS_g, IR, IR_g, Other, kCount };

constexpr int kOpCount = static_cast<int>(Op::kCount);
constexpr int kTagCount = static_cast<int>(RotTag::kCount);

const char* op_name(Op op);
const char* tag_name(RotTag tag);
std::optional<RotTag> parse_tag(const std::string& s);

struct RotationRecord {
  int64_t amount;  // as requested, not reduced
  RotTag tag;
  int scope;
};

struct LevelMark {
  std::string where;
  int level;
};

// Op counts, rotation log and live-ciphertext tally. Thread safe.
class CostLedger {
 public:
  explicit CostLedger(int64_t slot_count = 32768) : slots_(slot_count) {}

  void count(Op op, int64_t n = 1);
  void rotation(int64_t amount, RotTag tag);
  void boot_internal() {}

  int64_t get(Op op) const;
  int64_t rotations(RotTag tag) const;
  int64_t total_rotations() const;
  int64_t zero_rotations() const;
  std::vector<RotationRecord> rotation_log() const;

  // Scopes group records for per-layer reports. Returns the scope id.
  int enter(const std::string& name);
  void leave();
  std::vector<std::string> scope_names() const;
  int current_scope() const;

  void ct_born(double bytes);
  void ct_died(double bytes);
  int64_t live_cts() const;
  int64_t peak_cts() const;
  double live_bytes() const;
  double peak_bytes() const;
  // Restarts peak tracking from the current live count.
  void reset_peak();

  void mark_level(const std::string& where, int level);
  std::vector<LevelMark> level_marks() const;

  void pt_encoded(double bytes);
  int64_t pts_encoded() const;

  // Per-scope per-tag rotation totals.
  std::vector<std::array<int64_t, kTagCount>> rotations_by_scope() const;

  bool same_counts(const CostLedger& o) const;
  int64_t slot_count() const { return slots_; }

 private:
  mutable std::mutex mu_;
  int64_t slots_;
  std::array<int64_t, kOpCount> ops_{};
  std::array<int64_t, kTagCount> tags_{};
  int64_t zero_rot_ = 0;
  std::vector<RotationRecord> log_;
  std::vector<std::string> scope_names_{"root"};
  std::vector<int> scope_stack_{0};
  int64_t live_ = 0, peak_ = 0;
  double live_b_ = 0, peak_b_ = 0;
  std::vector<LevelMark> levels_;
  int64_t pts_ = 0;
};

struct CtBody {
  std::vector<double> v;  // empty in trace mode
  int level = 0;
  bool pending = false;   // product waiting for rescale
  CostLedger* led = nullptr;
  double bytes = 0;
  CtBody() = default;
  CtBody(const CtBody&) = delete;
  CtBody& operator=(const CtBody&) = delete;
  ~CtBody();
};

// Immutable handle. Copies share one body; the live count tracks bodies.
class Ct {
 public:
  Ct() = default;
  bool valid() const { return b_ != nullptr; }
  int level() const;
  bool pending() const;
  const std::vector<double>& values() const;

 private:
  friend class Backend;
  explicit Ct(std::shared_ptr<const CtBody> b) : b_(std::move(b)) {}
  std::shared_ptr<const CtBody> b_;
};

class Pt {
 public:
  Pt() = default;
  int level() const { return level_; }
  bool has_values() const { return v_ != nullptr; }
  const std::vector<double>& values() const { return *v_; }

 private:
  friend class Backend;
  std::shared_ptr<const std::vector<double>> v_;
  int level_ = 0;
};

using SlotFill = std::function<void(std::vector<double>&)>;

class Backend {
 public:
  Backend(HeParams p, Mode m);

  const HeParams& params() const { return p_; }
  Mode mode() const { return mode_; }
  bool full() const { return mode_ == Mode::Full; }
  int64_t slots() const { return p_.slot_count; }
  CostLedger& ledger() { return led_; }
  const CostLedger& ledger() const { return led_; }

  // Client side, not counted.
  Ct encrypt(const std::vector<double>& v, int level);
  Ct encrypt_trace(int level);
  std::vector<double> decrypt(const Ct& c) const;

  // fill is only called in full mode; the vector arrives zeroed.
  Pt encode(int level, const SlotFill& fill);
  Pt encode_values(std::vector<double> v, int level);

  Ct add_ct(const Ct& a, const Ct& b);
  Ct sub_ct(const Ct& a, const Ct& b);
  Ct add_pt(const Ct& a, const Pt& p);
  Ct mul_pt(const Ct& a, const Pt& p);
  Ct mul_ct(const Ct& a, const Ct& b);
  Ct rescale(const Ct& a);
  Ct crot(const Ct& a, int64_t r, RotTag tag);
  Pt prot(const Pt& p, int64_t r);
  Ct bootstrap(const Ct& a);
  Ct level_down(const Ct& a, int target);

 private:
  Ct make(std::vector<double> v, int level, bool pending);
  void check_ready(const Ct& a) const;
  int64_t wrap(int64_t r) const;

  HeParams p_;
  Mode mode_;
  CostLedger led_;
};

// RAII scope marker on a ledger.
class LedgerScope {
 public:
  LedgerScope(CostLedger& l, const std::string& name) : l_(l) { l_.enter(name); }
  ~LedgerScope() { l_.leave(); }
  LedgerScope(const LedgerScope&) = delete;
  LedgerScope& operator=(const LedgerScope&) = delete;

 private:
  CostLedger& l_;
};

}  // namespace slotconv
