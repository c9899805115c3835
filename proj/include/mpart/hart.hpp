#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mpart/isa.hpp"
#include "mpart/pmp.hpp"

namespace mpart::hart {

using pmp::Mode;

namespace cause {
inline constexpr uint64_t kInstructionAccessFault = 1;
inline constexpr uint64_t kIllegalInstruction = 2;
inline constexpr uint64_t kLoadAccessFault = 5;
inline constexpr uint64_t kStoreAccessFault = 7;
inline constexpr uint64_t kEcallFromSupervisor = 9;
inline constexpr uint64_t kEcallFromMachine = 11;
inline constexpr uint64_t kMachineTimer = (uint64_t{1} << 63) | 7;
}  // namespace cause

std::string cause_name(uint64_t mcause);

// mstatus bit positions.
inline constexpr uint64_t kMstatusMie = uint64_t{1} << 3;
inline constexpr uint64_t kMstatusMpie = uint64_t{1} << 7;
inline constexpr unsigned kMstatusMppShift = 11;
// mie.MTIE
inline constexpr uint64_t kMieMtie = uint64_t{1} << 7;

struct TrapCsrs {
  uint64_t mtvec = 0;
  uint64_t mepc = 0;
  uint64_t mcause = 0;
  uint64_t mtval = 0;
  uint64_t mscratch = 0;
  bool mstatus_mie = false;
  bool mstatus_mpie = false;
  Mode mstatus_mpp = Mode::Machine;
  bool mie_timer_enabled = false;

  uint64_t mstatus() const;
  void set_mstatus(uint64_t v);
};

struct HartState {
  Mode mode = Mode::Machine;
  uint64_t pc = 0;
  std::array<uint64_t, 32> gprs{};
  TrapCsrs csrs;
  uint64_t cycle = 0;
  std::optional<uint64_t> pending_timer_at;

  uint64_t reg(unsigned r) const { return r == 0 ? 0 : gprs[r]; }
  void set_reg(unsigned r, uint64_t v) {
    if (r != 0) gprs[r] = v;
  }
};

// Schedules a one-shot machine timer interrupt. It is taken at the first
// step boundary at or after the cycle where it is enabled.
HartState inject_timer(HartState hart, uint64_t at_cycle);

class MemoryError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct MemoryTag {
  std::string name;
  pmp::Interval range;
};

class Memory {
 public:
  Memory(uint64_t base, std::size_t size) : base_(base), contents_(size, 0) {}

  uint64_t base() const { return base_; }
  std::size_t size() const { return contents_.size(); }
  bool contains(uint64_t address, std::size_t size) const;

  // Little-endian access of 1..8 bytes. Out-of-range accesses return nullopt / false.
  std::optional<uint64_t> read(uint64_t address, unsigned size) const;
  bool write(uint64_t address, unsigned size, uint64_t value);

  // Throws MemoryError when the image does not fit.
  void load(uint64_t address, std::span<const uint8_t> bytes);
  std::span<const uint8_t> view(uint64_t address, std::size_t size) const;

  void tag(std::string name, pmp::Interval range) { tags_.push_back({std::move(name), range}); }
  // Name of the first tag covering the address, or "unmapped".
  std::string tag_of(uint64_t address) const;
  const std::vector<MemoryTag>& tags() const { return tags_; }

 private:
  uint64_t base_;
  std::vector<uint8_t> contents_;
  std::vector<MemoryTag> tags_;
};

enum class EventKind { Fetch, Execute, Trap, CsrWrite, MemAccess, ModeSwitch, InterruptTaken, PipelineFlush, Injected };

std::string to_string(EventKind);
std::optional<EventKind> event_kind_from_string(const std::string&);

// One trace record. Fields beyond the common header are meaningful only for
// the kinds noted next to them.
struct TraceEvent {
  uint64_t cycle = 0;
  uint64_t seq = 0;  // global order, strictly increasing
  uint64_t pc = 0;
  std::string instruction;
  Mode mode = Mode::Machine;
  uint64_t pmp_hash = 0;
  bool interrupts_enabled = false;  // mstatus.MIE at the time of the event
  uint64_t mtvec = 0;
  EventKind kind = EventKind::Execute;

  uint64_t cause = 0;                 // Trap, InterruptTaken
  uint16_t csr = 0;                   // CsrWrite
  uint64_t old_value = 0;             // CsrWrite
  uint64_t new_value = 0;             // CsrWrite
  pmp::AccessQuery query;             // Fetch, MemAccess
  bool allowed = true;                // Fetch, MemAccess
  Mode from_mode = Mode::Machine;     // ModeSwitch
  uint64_t target = 0;                // ModeSwitch, Injected: destination pc
  std::string note;                   // free-form detail (injections, flush window)

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

using Trace = std::vector<TraceEvent>;

// Newline-delimited JSON, one event per line.
std::string to_ndjson(const Trace& trace);
class TraceFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
Trace parse_ndjson(const std::string& text);

struct HazardConfig {
  // Instructions fetched after a PMP write before the write is visible to
  // fetch. Zero models instantaneous effect.
  unsigned window = 0;
  // When true, PMP CSRs are treated as hazardous: the pipeline is flushed
  // and refetched after each write. When false the next `window` fetches are
  // checked against the stale configuration.
  bool flush = true;
};

enum class Outcome { Stopped, Stall, StepBudgetExhausted };
std::string to_string(Outcome);

struct RunResult {
  Outcome outcome = Outcome::StepBudgetExhausted;
  uint64_t steps = 0;
};

class Machine {
 public:
  Machine(Memory memory, HazardConfig hazard = {}) : memory_(std::move(memory)), hazard_(hazard) {}

  HartState& hart() { return hart_; }
  const HartState& hart() const { return hart_; }
  Memory& memory() { return memory_; }
  const Memory& memory() const { return memory_; }
  const pmp::PmpState& pmp() const { return pmp_; }
  // Direct state installation for test fixtures and snapshot restore.
  void set_pmp(const pmp::PmpState& s) { pmp_ = s; }
  const Trace& trace() const { return trace_; }
  Trace take_trace() { return std::exchange(trace_, {}); }
  void set_recording(bool on) { recording_ = on; }
  const HazardConfig& hazard() const { return hazard_; }

  // Executes one instruction or takes one trap/interrupt.
  void step();
  RunResult run_until(const std::function<bool(const Machine&)>& stop, uint64_t max_steps);

  // Consecutive trap entries whose handler fetch faulted.
  unsigned faulting_trap_entries() const { return faulting_entries_; }
  bool stalled() const { return faulting_entries_ >= kStallThreshold; }

  // Adversary hook: redirect control and overwrite registers at a step
  // boundary. Recorded as an Injected event.
  void inject(uint64_t pc, const std::vector<std::pair<unsigned, uint64_t>>& gprs, const std::string& note);
  void schedule_timer(uint64_t at_cycle);

  static constexpr unsigned kStallThreshold = 2;

 private:
  TraceEvent event(EventKind kind, uint64_t pc, std::string instr = {}) const;
  void record(TraceEvent e);
  void take_trap(uint64_t mcause, uint64_t epc, uint64_t tval);
  bool try_take_interrupt();
  // Returns false and raises the trap when the CSR access is not permitted.
  bool execute_csr(const isa::Instruction& in);
  bool csr_read(uint16_t csr, uint64_t& out) const;
  bool csr_write(uint16_t csr, uint64_t value);
  bool memory_access(const isa::Instruction& in, uint64_t address, unsigned size, bool store, uint64_t& value);
  void execute(const isa::Instruction& in);

  Memory memory_;
  HazardConfig hazard_;
  HartState hart_;
  pmp::PmpState pmp_;
  Trace trace_;
  bool recording_ = true;
  uint64_t seq_ = 0;
  unsigned faulting_entries_ = 0;
  bool entering_trap_ = false;
  // Stale view used by fetch while an unflushed hazard window is open.
  std::optional<pmp::PmpState> stale_pmp_;
  unsigned stale_fetches_left_ = 0;
};

}  // namespace mpart::hart
