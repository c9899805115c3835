#include <algorithm>

#include <fmt/format.h>

#include "mpart/monitor.hpp"
#include "mpart/program.hpp"

namespace mpart::monitor {

namespace {

using isa::Mnemonic;
using isa::ProgramBuilder;
namespace ops = isa::ops;
namespace csr = isa::csr;
using namespace isa::reg;

constexpr uint64_t kMstatusReturnToSupervisor = uint64_t{1} << hart::kMstatusMppShift;

void sd(ProgramBuilder& b, unsigned rs2, unsigned base, int64_t off) { b.emit(ops::store(Mnemonic::Sd, rs2, base, off)); }
void ld(ProgramBuilder& b, unsigned rd, unsigned base, int64_t off) { b.emit(ops::load(Mnemonic::Ld, rd, base, off)); }
void mv(ProgramBuilder& b, unsigned rd, unsigned rs) { b.emit(ops::alu_imm(Mnemonic::Addi, rd, rs, 0)); }
void addi(ProgramBuilder& b, unsigned rd, unsigned rs, int64_t imm) { b.emit(ops::alu_imm(Mnemonic::Addi, rd, rs, imm)); }
void csrw(ProgramBuilder& b, uint16_t c, unsigned rs) { b.emit(ops::csrw(c, rs)); }
void csrr(ProgramBuilder& b, unsigned rd, uint16_t c) { b.emit(ops::csrr(rd, c)); }
void ret(ProgramBuilder& b) { b.emit(ops::jalr(zero, ra, 0)); }

Image finish(std::string name, const ProgramBuilder& b) {
  return Image{std::move(name), b.base(), b.finish(), b.labels()};
}

// Emits code in P. sp holds the frame base throughout the handler.
class MonitorWriter {
 public:
  MonitorWriter(const CompartmentLayout& l, ProgramBuilder& b) : l_(l), b_(b) {}

  std::string fresh(const std::string& stem) { return fmt::format("{}.{}", stem, counter_++); }

  // Copies a context (31 registers and the pc slot) from src to dst. Uses t4-t6.
  void copy_context(unsigned src, unsigned dst) {
    const auto loop = fresh("copy");
    b_.li(t5, 0);
    b_.label(loop);
    b_.emit(ops::alu(Mnemonic::Add, t6, src, t5));
    ld(b_, t4, t6, 0);
    b_.emit(ops::alu(Mnemonic::Add, t6, dst, t5));
    sd(b_, t4, t6, 0);
    addi(b_, t5, t5, 8);
    b_.li(t6, frame::kPc + 8);
    b_.bltu(t5, t6, loop);
  }

  void zero_context(unsigned dst) {
    const auto loop = fresh("zero");
    b_.li(t5, 0);
    b_.label(loop);
    b_.emit(ops::alu(Mnemonic::Add, t6, dst, t5));
    sd(b_, zero, t6, 0);
    addi(b_, t5, t5, 8);
    b_.li(t6, frame::kPc + 8);
    b_.bltu(t5, t6, loop);
  }

  // t2 = address of the current enclave's context. Uses t0, t1.
  void enclave_context_address() {
    ld(b_, t0, sp, frame::kPrincipal);
    addi(b_, t0, t0, -1);
    b_.emit(ops::alu_imm(Mnemonic::Slli, t1, t0, 8));
    b_.emit(ops::alu_imm(Mnemonic::Slli, t0, t0, 4));
    b_.emit(ops::alu(Mnemonic::Add, t1, t1, t0));
    addi(b_, t1, t1, frame::kEnclaveContexts);
    b_.emit(ops::alu(Mnemonic::Add, t2, sp, t1));
  }

  void apply_os_view() {
    b_.li(t0, cfg_low_monitor(l_, SuView{}));
    csrw(b_, csr::pmpcfg0, t0);
    b_.li(t0, cfg_high(l_, SuView{}));
    csrw(b_, csr::pmpcfg2, t0);
  }

  // Switches the S/U slots to the current principal's enclave view, then
  // continues at `done`. Uses t0, t1.
  void apply_enclave_view(const std::string& done) {
    ld(b_, t0, sp, frame::kPrincipal);
    for (unsigned i = 0; i < l_.enclaves.size(); ++i) {
      const auto next = fresh("view");
      b_.li(t1, i + 1);
      b_.bne(t0, t1, next);
      b_.li(t1, cfg_low_monitor(l_, SuView{i}));
      csrw(b_, csr::pmpcfg0, t1);
      b_.li(t1, cfg_high(l_, SuView{i}));
      csrw(b_, csr::pmpcfg2, t1);
      b_.j(done);
      b_.label(next);
    }
    b_.j(done);
  }

  // t1 = base address of the principal selected by t0 (0 = OS). Uses t3.
  void principal_base(uint64_t offset) {
    const auto done = fresh("base");
    auto next = fresh("base");
    b_.bne(t0, zero, next);
    b_.li(t1, l_.os.base + offset);
    b_.j(done);
    for (unsigned i = 0; i < l_.enclaves.size(); ++i) {
      b_.label(next);
      next = fresh("base");
      b_.li(t3, i + 1);
      b_.bne(t0, t3, next);
      b_.li(t1, l_.enclaves[i].private_region.base + offset);
      b_.j(done);
    }
    b_.label(next);
    b_.li(t1, l_.os.base + offset);
    b_.label(done);
  }

  void firmware_args(std::initializer_list<std::pair<unsigned, int64_t>> from_frame) {
    for (unsigned r = a1; r <= a6; ++r) b_.li(r, 0);
    for (auto [r, off] : from_frame) ld(b_, r, sp, off);
  }

 private:
  const CompartmentLayout& l_;
  ProgramBuilder& b_;
  unsigned counter_ = 0;
};

std::vector<unsigned> used_entries(const CompartmentLayout& l) {
  std::vector<unsigned> out;
  for (const auto& [name, idx] : l.pmp_assignment) out.push_back(idx);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

uint64_t enter_f_stub_address(const CompartmentLayout& l) {
  const uint64_t handler = l.f_code.base + kFirmwareHandlerOffset;
  const uint64_t size = ProgramBuilder::li_size(handler) + 4 + ProgramBuilder::li_size(cfg_low_firmware(l)) + 4;
  return l.p_code.end() - size;
}

uint64_t Image::symbol(const std::string& n) const {
  const auto it = symbols.find(n);
  if (it == symbols.end()) throw std::out_of_range(name + ": no symbol " + n);
  return it->second;
}

Image build_monitor_image(const CompartmentLayout& l) {
  ProgramBuilder b(l.p_code.base);
  MonitorWriter w(l, b);
  const uint64_t pd = l.p_data.base;
  const uint64_t n = l.enclaves.size();

  // ---- reset ----
  b.label("boot");
  b.la(t0, "trap");
  csrw(b, csr::mtvec, t0);
  b.li(t0, pd);
  csrw(b, csr::mscratch, t0);
  b.li(t0, hart::kMieMtie);
  csrw(b, csr::mie, t0);
  // Locked entries stay writable while RLB is set; MML later makes the
  // locked configuration enforce on M-mode.
  b.emit(ops::csrwi(csr::mseccfg, 4));
  const auto addrs = address_registers(l);
  for (unsigned i : used_entries(l)) {
    b.li(t0, addrs[i]);
    csrw(b, static_cast<uint16_t>(csr::pmpaddr0 + i), t0);
  }
  b.li(t0, cfg_high(l, SuView{}));
  csrw(b, csr::pmpcfg2, t0);
  b.li(t0, cfg_low_monitor(l, SuView{}));
  csrw(b, csr::pmpcfg0, t0);
  b.emit(ops::csrwi(csr::mseccfg, kSecurityOperatingPoint));
  b.li(sp, pd);
  sd(b, zero, sp, frame::kPrincipal);
  sd(b, zero, sp, frame::kCreated);
  b.li(t0, continuation::kBoot);
  sd(b, t0, sp, frame::kContinuation);
  b.li(a0, fkind::kInit);
  w.firmware_args({});
  b.j("enter_firmware");

  // ---- trap entry ----
  b.pad_to((b.here() + 3) & ~uint64_t{3});
  b.label("trap");
  b.emit(ops::csrrw(sp, csr::mscratch, sp));
  for (unsigned r = 1; r < 32; ++r)
    if (r != sp) sd(b, r, sp, 8 * r);
  csrr(b, t0, csr::mscratch);
  sd(b, t0, sp, 8 * sp);
  csrw(b, csr::mscratch, sp);
  csrr(b, t0, csr::mepc);
  sd(b, t0, sp, frame::kPc);
  csrr(b, t0, csr::mcause);
  sd(b, t0, sp, frame::kCause);
  b.blt(t0, zero, "interrupt");
  b.li(t1, hart::cause::kEcallFromSupervisor);
  b.beq(t0, t1, "ecall");

  // Other exceptions go to F. Enclave faults carry only the cause.
  b.label("exception");
  b.li(t0, continuation::kFault);
  sd(b, t0, sp, frame::kContinuation);
  b.li(a0, fkind::kTrap);
  w.firmware_args({{a1, frame::kCause}});
  ld(b, t0, sp, frame::kPrincipal);
  b.bne(t0, zero, "enter_firmware");
  ld(b, a2, sp, frame::kPc);
  b.j("enter_firmware");

  b.label("interrupt");
  ld(b, t0, sp, frame::kPrincipal);
  b.bne(t0, zero, "enclave_preempted");
  b.li(t0, continuation::kTimer);
  sd(b, t0, sp, frame::kContinuation);
  b.li(a0, fkind::kTimer);
  w.firmware_args({});
  b.j("enter_firmware");

  b.label("enclave_preempted");
  w.enclave_context_address();
  w.copy_context(sp, t2);
  b.li(t3, static_cast<uint64_t>(status::kEnclaveInterrupted));
  b.j("to_os");

  // t3 = status for the OS; the enclave id goes in a1.
  b.label("to_os");
  ld(b, t4, sp, frame::kPrincipal);
  addi(b, t4, t4, -1);
  sd(b, zero, sp, frame::kPrincipal);
  w.apply_os_view();
  sd(b, t3, sp, frame::kOsContext + 8 * a0);
  sd(b, t4, sp, frame::kOsContext + 8 * a1);
  addi(b, t2, sp, frame::kOsContext);
  b.j("return_to_context");

  // ---- ecall dispatch ----
  b.label("ecall");
  ld(b, t0, sp, frame::kPc);
  addi(b, t0, t0, 4);
  sd(b, t0, sp, frame::kPc);
  ld(b, t1, sp, 8 * a7);
  ld(b, t2, sp, frame::kPrincipal);
  ld(b, t3, sp, 8 * a0);
  const std::pair<uint64_t, const char*> table[] = {
      {request::kFirmwareCall, "req.firmware"}, {request::kEnclaveCreate, "req.create"},
      {request::kEnclaveDelete, "req.delete"},  {request::kEnclaveEnter, "req.enter"},
      {request::kEnclaveExit, "req.exit"},      {request::kEnclaveOcall, "req.ocall"},
      {request::kEnclaveResume, "req.resume"}};
  for (const auto& [id, target] : table) {
    b.li(t0, id);
    b.beq(t1, t0, target);
  }
  b.label("req.unknown");
  b.li(t0, static_cast<uint64_t>(status::kUnknownRequest));
  sd(b, t0, sp, 8 * a0);
  mv(b, t2, sp);
  b.j("return_to_context");
  b.label("req.invalid");
  b.li(t0, static_cast<uint64_t>(status::kInvalidArgument));
  sd(b, t0, sp, 8 * a0);
  mv(b, t2, sp);
  b.j("return_to_context");
  b.label("req.ok");
  sd(b, zero, sp, 8 * a0);
  mv(b, t2, sp);
  b.j("return_to_context");

  b.label("req.firmware");
  b.bne(t2, zero, "req.unknown");
  b.li(t0, continuation::kService);
  sd(b, t0, sp, frame::kContinuation);
  b.li(a0, fkind::kService);
  w.firmware_args({{a1, 8 * a0}, {a2, 8 * a1}, {a3, 8 * a2}, {a4, 8 * a3}, {a5, 8 * a4}});
  b.j("enter_firmware");

  auto check_enclave_id = [&] {
    b.bne(t2, zero, "req.unknown");
    b.li(t4, n);
    b.bgeu(t3, t4, "req.invalid");
  };
  auto check_created = [&] {
    ld(b, t5, sp, frame::kCreated);
    b.emit(ops::alu(Mnemonic::Srl, t5, t5, t3));
    b.emit(ops::alu_imm(Mnemonic::Andi, t5, t5, 1));
    b.beq(t5, zero, "req.invalid");
  };

  b.label("req.create");
  check_enclave_id();
  ld(b, t5, sp, frame::kCreated);
  b.li(t6, 1);
  b.emit(ops::alu(Mnemonic::Sll, t6, t6, t3));
  b.emit(ops::alu(Mnemonic::Or, t5, t5, t6));
  sd(b, t5, sp, frame::kCreated);
  b.j("req.ok");

  b.label("req.delete");
  check_enclave_id();
  ld(b, t5, sp, frame::kCreated);
  b.li(t6, 1);
  b.emit(ops::alu(Mnemonic::Sll, t6, t6, t3));
  b.emit(ops::alu_imm(Mnemonic::Xori, t6, t6, -1));
  b.emit(ops::alu(Mnemonic::And, t5, t5, t6));
  sd(b, t5, sp, frame::kCreated);
  b.j("req.ok");

  for (const bool fresh_entry : {true, false}) {
    b.label(fresh_entry ? "req.enter" : "req.resume");
    check_enclave_id();
    check_created();
    addi(b, t1, sp, frame::kOsContext);
    w.copy_context(sp, t1);
    addi(b, t3, t3, 1);
    sd(b, t3, sp, frame::kPrincipal);
    w.enclave_context_address();
    if (fresh_entry) {
      w.zero_context(t2);
      ld(b, t0, sp, frame::kPrincipal);
      w.principal_base(0);
      sd(b, t1, t2, frame::kPc);
    }
    const auto done = w.fresh("entered");
    w.apply_enclave_view(done);
    b.label(done);
    b.j("return_to_context");
  }

  b.label("req.exit");
  b.beq(t2, zero, "req.unknown");
  b.li(t3, static_cast<uint64_t>(status::kEnclaveExited));
  b.j("to_os");

  b.label("req.ocall");
  b.beq(t2, zero, "req.unknown");
  w.enclave_context_address();
  w.copy_context(sp, t2);
  b.li(t3, static_cast<uint64_t>(status::kEnclaveOcall));
  b.j("to_os");

  // ---- return from F (reached from the SallyPort) ----
  b.label("return");
  b.li(sp, pd);
  csrw(b, csr::mscratch, sp);
  // Clamp the error/value pair; every other register comes from the frame.
  b.li(t0, static_cast<uint64_t>(kMinFirmwareError));
  b.blt(a0, t0, "ret.bad_error");
  b.blt(zero, a0, "ret.bad_error");
  mv(b, t3, a0);
  b.j("ret.error_done");
  b.label("ret.bad_error");
  b.li(t3, static_cast<uint64_t>(status::kFailed));
  b.label("ret.error_done");
  b.li(t0, kMaxFirmwareValue);
  b.bgeu(t0, a1, "ret.value_ok");
  b.li(t4, kMaxFirmwareValue);
  b.j("ret.value_done");
  b.label("ret.value_ok");
  mv(b, t4, a1);
  b.label("ret.value_done");
  ld(b, t0, sp, frame::kContinuation);
  b.li(t1, continuation::kBoot);
  b.beq(t0, t1, "start_os");
  ld(b, t0, sp, frame::kPrincipal);
  b.beq(t0, zero, "ret.view_done");
  w.apply_enclave_view("ret.view_done");
  b.label("ret.view_done");
  ld(b, t0, sp, frame::kContinuation);
  b.li(t1, continuation::kService);
  b.beq(t0, t1, "ret.service");
  b.li(t1, continuation::kFault);
  b.beq(t0, t1, "ret.fault");
  mv(b, t2, sp);
  b.j("return_to_context");

  b.label("ret.service");
  sd(b, t3, sp, 8 * a0);
  sd(b, t4, sp, 8 * a1);
  mv(b, t2, sp);
  b.j("return_to_context");

  b.label("ret.fault");
  ld(b, t0, sp, frame::kCause);
  sd(b, t0, sp, 8 * a0);
  ld(b, t0, sp, frame::kPc);
  sd(b, t0, sp, 8 * a1);
  ld(b, t0, sp, frame::kPrincipal);
  w.principal_base(kFaultEntryOffset);
  sd(b, t1, sp, frame::kPc);
  mv(b, t2, sp);
  b.j("return_to_context");

  b.label("start_os");
  sd(b, zero, sp, frame::kPrincipal);
  b.li(t0, l.os.base);
  sd(b, t0, sp, frame::kOsContext + frame::kPc);
  addi(b, t2, sp, frame::kOsContext);
  b.j("return_to_context");

  // t2 = context to resume in S/U mode. mepc and mstatus always come from
  // P, never from F.
  b.label("return_to_context");
  ld(b, t0, t2, frame::kPc);
  csrw(b, csr::mepc, t0);
  b.li(t0, kMstatusReturnToSupervisor);
  csrw(b, csr::mstatus, t0);
  b.li(t0, hart::kMieMtie);
  csrw(b, csr::mie, t0);
  mv(b, t6, t2);
  for (unsigned r = 1; r < 31; ++r) ld(b, r, t6, 8 * r);
  ld(b, t6, t6, 8 * t6);
  b.label("mret");
  b.emit(ops::mret());

  // Scrub everything except the argument registers, then fall into F.
  b.label("enter_firmware");
  for (unsigned r = 1; r < 32; ++r)
    if (r < a0 || r > a6) b.li(r, 0);
  b.j("enter_f");

  // Must end exactly at p_code's end: the next fetch is f_code.base.
  const uint64_t handler = l.f_code.base + kFirmwareHandlerOffset;
  const uint64_t fview = cfg_low_firmware(l);
  const uint64_t stub = enter_f_stub_address(l);
  if (b.here() > stub)
    throw LayoutError(LayoutErrorKind::Placement, fmt::format("monitor code needs {:#x} bytes, p_code has {:#x}",
                                                              b.here() + l.p_code.end() - stub - l.p_code.base,
                                                              l.p_code.size));
  b.pad_to(stub);
  b.label("enter_f");
  b.li(t0, handler);
  csrw(b, csr::mtvec, t0);
  b.li(t1, fview);
  b.label("enter_f.cfg");
  csrw(b, csr::pmpcfg0, t1);
  return finish("monitor", b);
}

Image build_sallyport_image(const CompartmentLayout& l, const Image& monitor, const MonitorOptions& opt) {
  ProgramBuilder b(l.sallyport.base);
  auto mask = [&] {
    b.label("sp.mask");
    b.emit(ops::csrrci(zero, csr::mstatus, 8));
  };
  auto vector = [&] {
    b.li(t0, monitor.symbol("trap"));
    b.label("sp.mtvec");
    csrw(b, csr::mtvec, t0);
  };
  auto restore = [&] {
    b.li(t1, cfg_low_monitor(l, SuView{}));
    b.label("sp.cfg");
    csrw(b, csr::pmpcfg0, t1);
  };
  b.label("sallyport");
  if (opt.vulnerable_sallyport) {
    restore();
    mask();
    vector();
  } else {
    mask();
    vector();
    restore();
  }
  b.li(t0, monitor.symbol("return"));
  b.label("sp.jump");
  b.emit(ops::jalr(zero, t0, 0));
  if (b.here() > l.sallyport.end()) throw LayoutError(LayoutErrorKind::Placement, "SallyPort code does not fit");
  return finish("sallyport", b);
}

Image build_firmware_image(const CompartmentLayout& l) {
  ProgramBuilder b(l.f_code.base);
  const uint64_t data = l.f_data.base;
  const uint64_t buffer = data + 0x100;

  b.label("entry");
  b.li(sp, l.f_data.end());
  b.label("gadget.mscratch");
  csrw(b, csr::mscratch, sp);
  b.beq(a0, zero, "init");
  b.li(t0, fkind::kService);
  b.beq(a0, t0, "service");
  b.li(t0, fkind::kTimer);
  b.beq(a0, t0, "timer");
  b.li(t0, fkind::kTrap);
  b.beq(a0, t0, "trap_report");
  b.li(a0, static_cast<uint64_t>(-1));
  b.j("exit");
  if (b.here() > l.f_code.base + kFirmwareHandlerOffset) throw std::logic_error("firmware prologue too long");
  b.pad_to(l.f_code.base + kFirmwareHandlerOffset);

  // F's own trap handler: give up and leave through the SPEntry.
  b.label("handler");
  b.li(a0, static_cast<uint64_t>(-1));
  b.li(a1, 0);
  b.j("spentry");

  b.label("init");
  b.li(t0, data);
  b.li(t1, 0x46);
  sd(b, t1, t0, 0);
  b.li(a0, 0);
  b.li(a1, 0);
  b.j("exit");

  b.label("service");
  for (uint64_t fid = 1; fid <= 4; ++fid) {
    b.li(t0, fid);
    b.beq(a1, t0, fmt::format("svc.{}", fid));
  }
  b.li(a0, static_cast<uint64_t>(-2));
  b.li(a1, 0);
  b.j("exit");

  b.label("svc.1");  // add
  b.emit(ops::alu(Mnemonic::Add, a1, a2, a3));
  b.li(a0, 0);
  b.j("exit");

  auto slot = [&] {
    b.emit(ops::alu_imm(Mnemonic::Andi, a2, a2, 63));
    b.emit(ops::alu_imm(Mnemonic::Slli, a2, a2, 3));
    b.li(t1, buffer);
    b.emit(ops::alu(Mnemonic::Add, t1, t1, a2));
  };
  b.label("svc.2");  // read buffer slot a2
  slot();
  b.label("gadget.load");
  ld(b, a1, t1, 0);
  b.li(a0, 0);
  b.j("exit");

  b.label("svc.3");  // write a3 to buffer slot a2
  slot();
  b.label("gadget.store");
  sd(b, a3, t1, 0);
  b.li(a0, 0);
  b.li(a1, 0);
  b.j("exit");

  b.label("svc.4");  // wait for an interrupt
  b.jal(ra, "irq_enable");
  b.emit(ops::wfi());
  b.jal(ra, "irq_disable");
  b.li(a0, 0);
  b.li(a1, 0);
  b.j("exit");

  b.label("irq_enable");
  b.label("gadget.irq_enable");
  b.emit(ops::csrrsi(zero, csr::mstatus, 8));
  b.label("gadget.ret");
  ret(b);
  b.label("irq_disable");
  b.emit(ops::csrrci(zero, csr::mstatus, 8));
  ret(b);

  // Skip the trapped instruction, as an emulation path would.
  b.label("skip_instruction");
  csrr(b, t0, csr::mepc);
  addi(b, t0, t0, 4);
  b.label("gadget.mepc");
  csrw(b, csr::mepc, t0);
  ret(b);

  b.label("timer");
  b.li(t0, data + 8);
  ld(b, t1, t0, 0);
  addi(b, t1, t1, 1);
  sd(b, t1, t0, 0);
  b.li(a0, 0);
  b.li(a1, 0);
  b.j("exit");

  b.label("trap_report");
  b.li(t0, data + 16);
  sd(b, a1, t0, 0);
  b.li(a0, 0);
  b.li(a1, 0);

  b.label("exit");
  b.j("spentry");

  b.pad_to(l.spentry_address());
  b.label("spentry");
  b.emit(ops::csrwi(csr::pmpcfg0, 0));
  return finish("firmware", b);
}

std::string to_string(ActionKind k) {
  switch (k) {
    case ActionKind::FirmwareCall: return "FirmwareCall";
    case ActionKind::EnclaveCreate: return "EnclaveCreate";
    case ActionKind::EnclaveDelete: return "EnclaveDelete";
    case ActionKind::EnclaveEnter: return "EnclaveEnter";
    case ActionKind::EnclaveResume: return "EnclaveResume";
    case ActionKind::EnclaveExit: return "EnclaveExit";
    case ActionKind::EnclaveOcall: return "EnclaveOcall";
    case ActionKind::Ecall: return "Ecall";
    case ActionKind::Fault: return "Fault";
    case ActionKind::SpinForTimer: return "SpinForTimer";
    case ActionKind::AppSyscall: return "AppSyscall";
    case ActionKind::AppSpin: return "AppSpin";
    case ActionKind::Load: return "Load";
    case ActionKind::Store: return "Store";
    case ActionKind::Jump: return "Jump";
    case ActionKind::Code: return "Code";
  }
  return "?";
}

namespace {

void emit_request(ProgramBuilder& b, uint64_t id, std::optional<uint64_t> arg) {
  if (arg) b.li(a0, *arg);
  b.li(a7, id);
  b.emit(ops::ecall());
}

void emit_actions(ProgramBuilder& b, const std::vector<Action>& script, bool is_os) {
  for (std::size_t k = 0; k < script.size(); ++k) {
    const Action& act = script[k];
    const auto after = fmt::format("after.{}", k);
    b.label(fmt::format("step.{}", k));
    auto guarded = [&] { b.la(s2, after); };
    switch (act.kind) {
      case ActionKind::FirmwareCall:
        b.li(a0, act.a).li(a1, act.b).li(a2, act.c);
        emit_request(b, request::kFirmwareCall, std::nullopt);
        break;
      case ActionKind::EnclaveCreate: emit_request(b, request::kEnclaveCreate, act.a); break;
      case ActionKind::EnclaveDelete: emit_request(b, request::kEnclaveDelete, act.a); break;
      case ActionKind::EnclaveEnter: emit_request(b, request::kEnclaveEnter, act.a); break;
      case ActionKind::EnclaveResume: emit_request(b, request::kEnclaveResume, act.a); break;
      case ActionKind::EnclaveExit: emit_request(b, request::kEnclaveExit, std::nullopt); break;
      case ActionKind::EnclaveOcall: emit_request(b, request::kEnclaveOcall, std::nullopt); break;
      case ActionKind::Ecall: emit_request(b, act.a, act.b); break;
      case ActionKind::Fault:
        guarded();
        b.raw32(0);
        break;
      case ActionKind::SpinForTimer: {
        const auto loop = fmt::format("spin.{}", k);
        b.li(t0, act.a);
        b.label(loop);
        addi(b, t0, t0, -1);
        b.bne(t0, zero, loop);
        break;
      }
      case ActionKind::AppSyscall:
        if (!is_os) throw std::invalid_argument("AppSyscall is an OS action");
        b.jal(ra, "app.call");
        break;
      case ActionKind::AppSpin:
        if (!is_os) throw std::invalid_argument("AppSpin is an OS action");
        b.li(a0, act.a);
        b.label(fmt::format("spin.{}", k));
        b.jal(ra, "app.spin");
        break;
      case ActionKind::Load:
        guarded();
        b.li(t0, act.a);
        ld(b, t1, t0, 0);
        break;
      case ActionKind::Store:
        guarded();
        b.li(t0, act.a).li(t1, act.b);
        sd(b, t1, t0, 0);
        break;
      case ActionKind::Jump:
        guarded();
        b.li(t0, act.a);
        b.emit(ops::jalr(ra, t0, 0));
        break;
      case ActionKind::Code:
        guarded();
        for (const auto& d : act.code) b.emit(d);
        break;
    }
    b.label(after);
  }
}

}  // namespace

Image build_os_image(const CompartmentLayout& l, const std::vector<Action>& script) {
  const uint64_t base = l.os.base;
  ProgramBuilder b(base);
  b.label("entry");
  b.j("main");
  b.pad_to(base + kFaultEntryOffset);
  b.label("fault");
  b.emit(ops::jalr(zero, s2, 0));
  b.pad_to(base + kPrincipalMainOffset);
  b.label("main");
  b.li(sp, base + kOsSyscallOffset);
  emit_actions(b, script, true);
  b.label("done");
  b.j("done");
  if (b.here() > base + kOsSyscallOffset) throw std::invalid_argument("OS script too long");

  b.pad_to(base + kOsSyscallOffset);
  b.label("syscall");
  addi(b, a0, a0, 1);
  ret(b);

  b.pad_to(base + kAppOffset);
  b.label("app.call");
  addi(b, sp, sp, -16);
  sd(b, ra, sp, 0);
  b.li(a0, 7);
  b.jal(ra, "syscall");
  ld(b, ra, sp, 0);
  addi(b, sp, sp, 16);
  ret(b);
  b.label("app.spin");
  addi(b, a0, a0, -1);
  b.bne(a0, zero, "app.spin");
  ret(b);
  return finish("os", b);
}

Image build_enclave_image(const CompartmentLayout& l, unsigned id, const std::vector<Action>& script) {
  if (id >= l.enclaves.size()) throw std::out_of_range(fmt::format("no enclave {}", id));
  const Region& r = l.enclaves[id].private_region;
  ProgramBuilder b(r.base);
  b.label("entry");
  b.j("main");
  b.pad_to(r.base + kFaultEntryOffset);
  b.label("fault");
  b.emit(ops::jalr(zero, s2, 0));
  b.pad_to(r.base + kPrincipalMainOffset);
  b.label("main");
  b.li(sp, r.end() - 0x10);
  emit_actions(b, script, false);
  b.label("done");
  emit_request(b, request::kEnclaveExit, std::nullopt);
  b.j("done");
  if (b.here() > r.end() - 0x100) throw std::invalid_argument("enclave script too long");
  return finish(fmt::format("enclave{}", id), b);
}

}  // namespace mpart::monitor
