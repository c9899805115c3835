#include "mpart/hart.hpp"

#include <algorithm>
#include <fmt/format.h>

namespace mpart::hart {

using isa::Mnemonic;
using M = isa::Mnemonic;

std::string cause_name(uint64_t mcause) {
  switch (mcause) {
    case cause::kInstructionAccessFault: return "instruction-access-fault";
    case cause::kIllegalInstruction: return "illegal-instruction";
    case cause::kLoadAccessFault: return "load-access-fault";
    case cause::kStoreAccessFault: return "store-access-fault";
    case cause::kEcallFromSupervisor: return "ecall-from-s";
    case cause::kEcallFromMachine: return "ecall-from-m";
    case cause::kMachineTimer: return "machine-timer";
    default: return fmt::format("cause-{:#x}", mcause);
  }
}

uint64_t TrapCsrs::mstatus() const {
  const uint64_t mpp = mstatus_mpp == Mode::Machine ? 3 : 1;
  return (mstatus_mie ? kMstatusMie : 0) | (mstatus_mpie ? kMstatusMpie : 0) | (mpp << kMstatusMppShift);
}

void TrapCsrs::set_mstatus(uint64_t v) {
  mstatus_mie = v & kMstatusMie;
  mstatus_mpie = v & kMstatusMpie;
  // U (0) and S (1) both collapse to the single supervisor/user mode; the
  // reserved value 2 is WARL-mapped there too.
  mstatus_mpp = ((v >> kMstatusMppShift) & 3) == 3 ? Mode::Machine : Mode::SupervisorUser;
}

HartState inject_timer(HartState hart, uint64_t at_cycle) {
  hart.pending_timer_at = at_cycle;
  return hart;
}

bool Memory::contains(uint64_t address, std::size_t size) const {
  return address >= base_ && size <= contents_.size() && address - base_ <= contents_.size() - size;
}

std::optional<uint64_t> Memory::read(uint64_t address, unsigned size) const {
  if (!contains(address, size)) return std::nullopt;
  uint64_t v = 0;
  for (unsigned i = 0; i < size; ++i) v |= uint64_t{contents_[address - base_ + i]} << (8 * i);
  return v;
}

bool Memory::write(uint64_t address, unsigned size, uint64_t value) {
  if (!contains(address, size)) return false;
  for (unsigned i = 0; i < size; ++i) contents_[address - base_ + i] = static_cast<uint8_t>(value >> (8 * i));
  return true;
}

void Memory::load(uint64_t address, std::span<const uint8_t> bytes) {
  if (!contains(address, bytes.size()))
    throw MemoryError(fmt::format("image of {} bytes at {:#x} does not fit memory", bytes.size(), address));
  std::copy(bytes.begin(), bytes.end(), contents_.begin() + static_cast<std::ptrdiff_t>(address - base_));
}

std::span<const uint8_t> Memory::view(uint64_t address, std::size_t size) const {
  if (!contains(address, size)) throw MemoryError(fmt::format("view {:#x}+{} outside memory", address, size));
  return std::span<const uint8_t>(contents_).subspan(address - base_, size);
}

std::string Memory::tag_of(uint64_t address) const {
  for (const auto& t : tags_)
    if (t.range.contains(address)) return t.name;
  return "unmapped";
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::Stopped: return "Stopped";
    case Outcome::Stall: return "Stall";
    case Outcome::StepBudgetExhausted: return "StepBudgetExhausted";
  }
  return "?";
}

TraceEvent Machine::event(EventKind kind, uint64_t pc, std::string instr) const {
  TraceEvent e;
  e.cycle = hart_.cycle;
  e.pc = pc;
  e.instruction = std::move(instr);
  e.mode = hart_.mode;
  e.pmp_hash = pmp_.hash();
  e.interrupts_enabled = hart_.csrs.mstatus_mie;
  e.mtvec = hart_.csrs.mtvec;
  e.kind = kind;
  return e;
}

void Machine::record(TraceEvent e) {
  e.seq = seq_++;
  if (recording_) trace_.push_back(std::move(e));
}

void Machine::take_trap(uint64_t mcause, uint64_t epc, uint64_t tval) {
  const Mode from = hart_.mode;
  auto& c = hart_.csrs;
  c.mepc = epc;
  c.mcause = mcause;
  c.mtval = tval;
  c.mstatus_mpie = c.mstatus_mie;
  c.mstatus_mie = false;
  c.mstatus_mpp = from;
  hart_.mode = Mode::Machine;
  hart_.pc = c.mtvec & ~uint64_t{3};

  TraceEvent t = event(EventKind::Trap, epc, cause_name(mcause));
  t.mode = from;
  t.cause = mcause;
  record(std::move(t));
  if (from != Mode::Machine) {
    TraceEvent s = event(EventKind::ModeSwitch, hart_.pc);
    s.from_mode = from;
    s.target = hart_.pc;
    record(std::move(s));
  }
  entering_trap_ = true;
}

bool Machine::try_take_interrupt() {
  const auto& at = hart_.pending_timer_at;
  if (!at || hart_.cycle < *at || !hart_.csrs.mie_timer_enabled) return false;
  if (hart_.mode == Mode::Machine && !hart_.csrs.mstatus_mie) return false;
  TraceEvent e = event(EventKind::InterruptTaken, hart_.pc);
  e.cause = cause::kMachineTimer;
  record(std::move(e));
  hart_.pending_timer_at.reset();
  take_trap(cause::kMachineTimer, hart_.pc, 0);
  return true;
}

void Machine::schedule_timer(uint64_t at_cycle) { hart_ = inject_timer(hart_, at_cycle); }

void Machine::inject(uint64_t pc, const std::vector<std::pair<unsigned, uint64_t>>& gprs, const std::string& note) {
  TraceEvent e = event(EventKind::Injected, hart_.pc);
  e.target = pc;
  e.note = note;
  record(std::move(e));
  hart_.pc = pc;
  for (auto [r, v] : gprs) hart_.set_reg(r, v);
}

namespace {

constexpr uint64_t kMisa = (uint64_t{2} << 62) | (1u << 2) | (1u << 8) | (1u << 18) | (1u << 20);

bool read_only(uint16_t csr) { return ((csr >> 10) & 3) == 3; }

}  // namespace

bool Machine::csr_read(uint16_t csr, uint64_t& out) const {
  const auto& c = hart_.csrs;
  const isa::CsrAddress a{csr};
  switch (a.classification()) {
    case isa::CsrClass::PmpCfg:
      if (!a.valid_on_rv64()) return false;
      out = a.index() == 0 ? pmp_.cfg_low : a.index() == 2 ? pmp_.cfg_high : 0;
      return true;
    case isa::CsrClass::PmpAddr:
      out = a.index() < pmp::kEntries ? pmp_.address[a.index()] : 0;
      return true;
    case isa::CsrClass::MachineSecurityConfig:
      out = csr == isa::csr::mseccfg ? pmp_.security.to_bits() : 0;
      return true;
    default: break;
  }
  switch (csr) {
    case isa::csr::mstatus: out = c.mstatus(); return true;
    case isa::csr::misa: out = kMisa; return true;
    case isa::csr::mie: out = c.mie_timer_enabled ? kMieMtie : 0; return true;
    case isa::csr::mtvec: out = c.mtvec; return true;
    case isa::csr::mscratch: out = c.mscratch; return true;
    case isa::csr::mepc: out = c.mepc; return true;
    case isa::csr::mcause: out = c.mcause; return true;
    case isa::csr::mtval: out = c.mtval; return true;
    case isa::csr::mip:
      out = hart_.pending_timer_at && hart_.cycle >= *hart_.pending_timer_at ? kMieMtie : 0;
      return true;
    case isa::csr::mhartid: out = 0; return true;
    default: return false;
  }
}

bool Machine::csr_write(uint16_t csr, uint64_t value) {
  auto& c = hart_.csrs;
  const isa::CsrAddress a{csr};
  const auto cls = a.classification();
  if (cls == isa::CsrClass::PmpCfg || cls == isa::CsrClass::PmpAddr || cls == isa::CsrClass::MachineSecurityConfig) {
    const pmp::PmpState before = pmp_;
    if (cls == isa::CsrClass::PmpCfg) {
      if (a.index() == 0) pmp_ = pmp::write_cfg_register(pmp_, pmp::CfgRegister::Low, value);
      if (a.index() == 2) pmp_ = pmp::write_cfg_register(pmp_, pmp::CfgRegister::High, value);
    } else if (cls == isa::CsrClass::PmpAddr) {
      pmp_ = pmp::write_address_register(pmp_, a.index(), value);
    } else if (csr == isa::csr::mseccfg) {
      pmp_ = pmp::write_security_config(pmp_, value);
    }
    if (hazard_.window > 0 && !hazard_.flush) {
      if (!stale_pmp_) stale_pmp_ = before;
      stale_fetches_left_ = hazard_.window;
    }
    return true;
  }
  switch (csr) {
    case isa::csr::mstatus: c.set_mstatus(value); return true;
    case isa::csr::mie: c.mie_timer_enabled = value & kMieMtie; return true;
    case isa::csr::mtvec: c.mtvec = value & ~uint64_t{3}; return true;  // direct mode only
    case isa::csr::mscratch: c.mscratch = value; return true;
    case isa::csr::mepc: c.mepc = value & ~uint64_t{1}; return true;
    case isa::csr::mcause: c.mcause = value; return true;
    case isa::csr::mtval: c.mtval = value; return true;
    case isa::csr::misa:
    case isa::csr::mip: return true;  // WARL, writes ignored
    default: return false;
  }
}

bool Machine::execute_csr(const isa::Instruction& in) {
  const uint16_t csr = in.csr_target->value;
  uint64_t old = 0;
  // Every implemented CSR is machine-level.
  if (hart_.mode != Mode::Machine || !csr_read(csr, old)) return false;
  const bool writes = in.writes_csr();
  if (writes && read_only(csr)) return false;
  if (writes) {
    const uint64_t src = in.source_is_immediate ? static_cast<uint64_t>(in.imm) : hart_.reg(in.rs1);
    uint64_t next = src;
    if (in.kind == isa::Kind::CsrSet) next = old | src;
    if (in.kind == isa::Kind::CsrClear) next = old & ~src;
    csr_write(csr, next);
    uint64_t now = 0;
    csr_read(csr, now);
    TraceEvent e = event(EventKind::CsrWrite, hart_.pc, in.to_string());
    e.csr = csr;
    e.old_value = old;
    e.new_value = now;
    record(std::move(e));
    const auto cls = in.csr_target->classification();
    const bool pmp_csr = cls == isa::CsrClass::PmpCfg || cls == isa::CsrClass::PmpAddr ||
                         cls == isa::CsrClass::MachineSecurityConfig;
    if (pmp_csr && hazard_.window > 0 && hazard_.flush) {
      TraceEvent f = event(EventKind::PipelineFlush, hart_.pc + in.width);
      f.note = fmt::format("refetch after PMP write, window {}", hazard_.window);
      record(std::move(f));
    }
  }
  hart_.set_reg(in.rd, old);
  return true;
}

bool Machine::memory_access(const isa::Instruction& in, uint64_t address, unsigned size, bool store,
                            uint64_t& value) {
  const pmp::AccessQuery q{address, size, store ? pmp::Access::Write : pmp::Access::Read, hart_.mode};
  const bool in_range = memory_.contains(address, size);
  const bool allowed = in_range && pmp::check_access(pmp_, q).allowed;
  TraceEvent e = event(EventKind::MemAccess, hart_.pc, in.to_string());
  e.query = q;
  e.allowed = allowed;
  record(std::move(e));
  if (!allowed) {
    take_trap(store ? cause::kStoreAccessFault : cause::kLoadAccessFault, hart_.pc, address);
    return false;
  }
  if (store) {
    memory_.write(address, size, value);
  } else {
    value = *memory_.read(address, size);
  }
  return true;
}

namespace {

int64_t sext(uint64_t v, unsigned bits) {
  const uint64_t m = uint64_t{1} << (bits - 1);
  v &= (bits == 64) ? ~uint64_t{0} : ((uint64_t{1} << bits) - 1);
  return static_cast<int64_t>((v ^ m) - m);
}

struct MemOp {
  unsigned size;
  bool store;
  bool sign;
};

std::optional<MemOp> mem_op(Mnemonic m) {
  switch (m) {
    case M::Lb: return MemOp{1, false, true};
    case M::Lh: return MemOp{2, false, true};
    case M::Lw: case M::CLw: case M::CLwsp: return MemOp{4, false, true};
    case M::Ld: case M::CLd: case M::CLdsp: return MemOp{8, false, false};
    case M::Lbu: return MemOp{1, false, false};
    case M::Lhu: return MemOp{2, false, false};
    case M::Lwu: return MemOp{4, false, false};
    case M::Sb: return MemOp{1, true, false};
    case M::Sh: return MemOp{2, true, false};
    case M::Sw: case M::CSw: case M::CSwsp: return MemOp{4, true, false};
    case M::Sd: case M::CSd: case M::CSdsp: return MemOp{8, true, false};
    default: return std::nullopt;
  }
}

}  // namespace

void Machine::execute(const isa::Instruction& in) {
  auto& h = hart_;
  const uint64_t pc = h.pc;
  uint64_t next = pc + in.width;
  const uint64_t r1 = h.reg(in.rs1), r2 = h.reg(in.rs2);
  const uint64_t imm = static_cast<uint64_t>(in.imm);
  auto illegal = [&] { take_trap(cause::kIllegalInstruction, pc, in.raw); };

  if (in.csr_target) {
    if (!execute_csr(in)) return illegal();
  } else if (auto op = mem_op(in.mnemonic)) {
    const bool sp_form = in.mnemonic == M::CLwsp || in.mnemonic == M::CLdsp || in.mnemonic == M::CSwsp ||
                         in.mnemonic == M::CSdsp;
    const uint64_t address = (sp_form ? h.reg(isa::reg::sp) : r1) + imm;
    uint64_t value = op->store ? r2 : 0;
    if (!memory_access(in, address, op->size, op->store, value)) return;
    if (!op->store) h.set_reg(in.rd, op->sign ? static_cast<uint64_t>(sext(value, op->size * 8)) : value);
  } else {
    switch (in.mnemonic) {
      case M::Illegal: return illegal();
      case M::Ecall:
        take_trap(h.mode == Mode::Machine ? cause::kEcallFromMachine : cause::kEcallFromSupervisor, pc, 0);
        return;
      case M::Mret: {
        if (h.mode != Mode::Machine) return illegal();
        auto& c = h.csrs;
        const Mode to = c.mstatus_mpp;
        c.mstatus_mie = c.mstatus_mpie;
        c.mstatus_mpie = true;
        c.mstatus_mpp = Mode::SupervisorUser;
        record(event(EventKind::Execute, pc, in.to_string()));
        h.pc = c.mepc;
        if (to != Mode::Machine) {
          h.mode = to;
          TraceEvent s = event(EventKind::ModeSwitch, h.pc);
          s.from_mode = Mode::Machine;
          s.target = h.pc;
          record(std::move(s));
        }
        return;
      }
      case M::Wfi:
      case M::CNop:
      case M::OtherAlu:
      case M::COther: break;
      case M::Jal: h.set_reg(in.rd, next); next = pc + imm; break;
      case M::Jalr: {
        const uint64_t t = (r1 + imm) & ~uint64_t{1};
        h.set_reg(in.rd, next);
        next = t;
        break;
      }
      case M::CJ: next = pc + imm; break;
      case M::CJr: next = r1 & ~uint64_t{1}; break;
      case M::CJalr: h.set_reg(isa::reg::ra, next); next = r1 & ~uint64_t{1}; break;
      case M::Beq: if (r1 == r2) next = pc + imm; break;
      case M::Bne: if (r1 != r2) next = pc + imm; break;
      case M::Blt: if (static_cast<int64_t>(r1) < static_cast<int64_t>(r2)) next = pc + imm; break;
      case M::Bge: if (static_cast<int64_t>(r1) >= static_cast<int64_t>(r2)) next = pc + imm; break;
      case M::Bltu: if (r1 < r2) next = pc + imm; break;
      case M::Bgeu: if (r1 >= r2) next = pc + imm; break;
      case M::CBeqz: if (r1 == 0) next = pc + imm; break;
      case M::CBnez: if (r1 != 0) next = pc + imm; break;
      case M::Addi: h.set_reg(in.rd, r1 + imm); break;
      case M::Slti: h.set_reg(in.rd, static_cast<int64_t>(r1) < in.imm); break;
      case M::Sltiu: h.set_reg(in.rd, r1 < imm); break;
      case M::Xori: h.set_reg(in.rd, r1 ^ imm); break;
      case M::Ori: h.set_reg(in.rd, r1 | imm); break;
      case M::Andi: h.set_reg(in.rd, r1 & imm); break;
      case M::Slli: h.set_reg(in.rd, r1 << (imm & 63)); break;
      case M::Srli: h.set_reg(in.rd, r1 >> (imm & 63)); break;
      case M::Srai: h.set_reg(in.rd, static_cast<uint64_t>(static_cast<int64_t>(r1) >> (imm & 63))); break;
      case M::Add: h.set_reg(in.rd, r1 + r2); break;
      case M::Sub: h.set_reg(in.rd, r1 - r2); break;
      case M::Sll: h.set_reg(in.rd, r1 << (r2 & 63)); break;
      case M::Slt: h.set_reg(in.rd, static_cast<int64_t>(r1) < static_cast<int64_t>(r2)); break;
      case M::Sltu: h.set_reg(in.rd, r1 < r2); break;
      case M::Xor: h.set_reg(in.rd, r1 ^ r2); break;
      case M::Srl: h.set_reg(in.rd, r1 >> (r2 & 63)); break;
      case M::Sra: h.set_reg(in.rd, static_cast<uint64_t>(static_cast<int64_t>(r1) >> (r2 & 63))); break;
      case M::Or: h.set_reg(in.rd, r1 | r2); break;
      case M::And: h.set_reg(in.rd, r1 & r2); break;
      case M::Lui: h.set_reg(in.rd, imm << 12); break;
      case M::Auipc: h.set_reg(in.rd, pc + (imm << 12)); break;
      case M::Addiw: h.set_reg(in.rd, static_cast<uint64_t>(sext(r1 + imm, 32))); break;
      case M::CAddi: h.set_reg(in.rd, h.reg(in.rd) + imm); break;
      case M::CLi: h.set_reg(in.rd, imm); break;
      case M::CMv: h.set_reg(in.rd, r2); break;
      case M::CAdd: h.set_reg(in.rd, h.reg(in.rd) + r2); break;
      default: return illegal();
    }
  }
  record(event(EventKind::Execute, pc, in.to_string()));
  h.pc = next;
}

void Machine::step() {
  if (try_take_interrupt()) {
    ++hart_.cycle;
    return;
  }
  const uint64_t pc = hart_.pc;
  const bool use_stale = stale_fetches_left_ > 0 && stale_pmp_;
  const pmp::PmpState& fetch_pmp = use_stale ? *stale_pmp_ : pmp_;

  const auto half = memory_.read(pc, 2);
  const unsigned width = half && (*half & 3) == 3 ? 4 : 2;
  isa::Instruction in;
  const bool in_range = memory_.contains(pc, width);
  if (in_range) in = isa::decode(memory_.view(pc, width), 0);
  const pmp::AccessQuery q{pc, width, pmp::Access::Execute, hart_.mode};
  const bool allowed = in_range && pmp::check_access(fetch_pmp, q).allowed;

  TraceEvent f = event(EventKind::Fetch, pc, in_range ? in.to_string() : std::string{});
  f.pmp_hash = fetch_pmp.hash();
  f.query = q;
  f.allowed = allowed;
  record(std::move(f));
  if (use_stale && --stale_fetches_left_ == 0) stale_pmp_.reset();

  const bool was_entering = entering_trap_;
  entering_trap_ = false;
  if (!allowed) {
    faulting_entries_ = was_entering ? faulting_entries_ + 1 : 0;
    take_trap(cause::kInstructionAccessFault, pc, pc);
  } else {
    faulting_entries_ = 0;
    execute(in);
  }
  ++hart_.cycle;
}

RunResult Machine::run_until(const std::function<bool(const Machine&)>& stop, uint64_t max_steps) {
  RunResult r;
  while (r.steps < max_steps) {
    if (stop && stop(*this)) {
      r.outcome = Outcome::Stopped;
      return r;
    }
    step();
    ++r.steps;
    if (stalled()) {
      r.outcome = Outcome::Stall;
      return r;
    }
  }
  r.outcome = stop && stop(*this) ? Outcome::Stopped : Outcome::StepBudgetExhausted;
  return r;
}

}  // namespace mpart::hart
