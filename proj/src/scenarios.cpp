#include <fmt/format.h>

#include "mpart/corpus.hpp"
#include "mpart/harness.hpp"

namespace mpart::harness {

namespace {

using monitor::Action;
using monitor::ActionKind;
using monitor::System;
namespace ops = isa::ops;
namespace csr = isa::csr;
using namespace isa::reg;

Action act(ActionKind k, uint64_t a = 0, uint64_t b = 0, uint64_t c = 0) { return Action{k, a, b, c, {}}; }
Action code(std::vector<isa::Description> d) { return Action{ActionKind::Code, 0, 0, 0, std::move(d)}; }

Expectation blocked(Mechanism m) { return {VerdictKind::Blocked, m}; }

Address at(std::string anchor, int64_t offset = 0) { return Address{std::move(anchor), offset}; }

monitor::SystemConfig base_system(const SuiteConfig& cfg) {
  monitor::SystemConfig c;
  c.layout = cfg.layout;
  c.layout.enclave_count = std::max(c.layout.enclave_count, 2u);
  c.hazard = cfg.hazard;
  c.monitor = cfg.monitor;
  return c;
}

Scenario s_mode(const SuiteConfig& cfg, std::string name, std::string summary, std::vector<Action> script, Mechanism m) {
  Scenario s;
  s.name = std::move(name);
  s.summary = std::move(summary);
  s.system = base_system(cfg);
  s.system.os_script = std::move(script);
  s.expected = blocked(m);
  return s;
}

// F is entered for an ordinary service call; the adversary then takes over
// at the first instruction of F's dispatcher.
Scenario f_attack(const SuiteConfig& cfg, std::string name, std::string summary, std::vector<Injection> adversary,
                  Expectation expected) {
  Scenario s;
  s.name = std::move(name);
  s.summary = std::move(summary);
  s.system = base_system(cfg);
  s.system.os_script = {act(ActionKind::FirmwareCall, 1, 2, 3)};
  s.adversary = std::move(adversary);
  s.expected = expected;
  return s;
}

Injection take_over(std::optional<Address> jump, std::vector<std::pair<unsigned, Address>> gprs, std::string note) {
  return Injection{at("firmware:service"), std::move(jump), std::move(gprs), std::nullopt, std::nullopt, std::move(note)};
}

uint64_t reg(const System& s, unsigned r) { return s.machine.hart().reg(r); }

Scenario planted(const SuiteConfig& cfg, std::string name, std::string summary, const isa::Description& form,
                 bool embedded) {
  Scenario s;
  s.name = std::move(name);
  s.summary = std::move(summary);
  s.system = base_system(cfg);
  const auto l = monitor::build_layout(s.system.layout);
  auto blob = monitor::build_firmware_image(l).bytes;
  const std::size_t offset = blob.size() / 2;  // inside the zero padding before the SPEntry
  blob = embedded ? corpus::plant_embedded(std::move(blob), form, offset).blob
                  : corpus::plant_aligned(std::move(blob), form, offset).blob;
  s.system.firmware_blob = std::move(blob);
  s.expected = blocked(Mechanism::ScanRejected);
  return s;
}

}  // namespace

std::vector<Scenario> builtin_suite(const SuiteConfig& cfg) {
  std::vector<Scenario> out;
  const auto layout = monitor::build_layout(base_system(cfg).layout);

  // ---- S/U-mode adversary: code placed in the OS ----
  out.push_back(s_mode(cfg, "s-mode-pmp-write", "OS writes pmpcfg0", {code({ops::csrw(csr::pmpcfg0, zero)})},
                       Mechanism::IllegalInstruction));
  out.push_back(s_mode(cfg, "s-mode-pmpaddr-write", "OS retargets a PMP address register",
                       {code({ops::csrw(csr::pmpaddr0 + monitor::entry::kMonitorData, t0)})},
                       Mechanism::IllegalInstruction));
  out.push_back(s_mode(cfg, "s-mode-mseccfg-write", "OS clears the lockdown bits",
                       {code({ops::csrwi(csr::mseccfg, 0)})}, Mechanism::IllegalInstruction));
  out.push_back(s_mode(cfg, "s-mode-mtvec-write", "OS points the trap vector at its own code",
                       {code({ops::csrw(csr::mtvec, sp)})}, Mechanism::IllegalInstruction));
  out.push_back(s_mode(cfg, "s-mode-direct-jump-to-F", "OS jumps to the start of F's code",
                       {act(ActionKind::Jump, layout.f_code.base)}, Mechanism::TrapDenied));
  out.push_back(s_mode(cfg, "s-mode-jump-to-sallyport", "OS jumps into the SallyPort",
                       {act(ActionKind::Jump, layout.sallyport.base)}, Mechanism::TrapDenied));
  out.push_back(s_mode(cfg, "s-mode-jump-to-enter-f", "OS jumps to P's F-entry stub",
                       {act(ActionKind::Jump, monitor::enter_f_stub_address(layout))}, Mechanism::TrapDenied));
  out.push_back(s_mode(cfg, "s-mode-read-p-data", "OS reads P's frame",
                       {act(ActionKind::Load, layout.p_data.base)}, Mechanism::TrapDenied));
  out.push_back(s_mode(cfg, "s-mode-write-f-data", "OS writes F's data",
                       {act(ActionKind::Store, layout.f_data.base, 1)}, Mechanism::TrapDenied));
  out.push_back(s_mode(cfg, "os-to-enclave", "OS reads a created enclave's private memory",
                       {act(ActionKind::EnclaveCreate, 0), act(ActionKind::Load, layout.enclaves[0].private_region.base)},
                       Mechanism::TrapDenied));
  {
    auto s = s_mode(cfg, "enclave-to-enclave", "enclave 0 reads enclave 1's private memory",
                    {act(ActionKind::EnclaveCreate, 0), act(ActionKind::EnclaveCreate, 1), act(ActionKind::EnclaveEnter, 0)},
                    Mechanism::TrapDenied);
    s.system.enclave_scripts = {{act(ActionKind::Load, layout.enclaves[1].private_region.base)}};
    out.push_back(std::move(s));
  }
  {
    auto s = s_mode(cfg, "enclave-to-enclave-shared", "enclave 0 writes enclave 1's shared buffer",
                    {act(ActionKind::EnclaveCreate, 0), act(ActionKind::EnclaveEnter, 0)}, Mechanism::TrapDenied);
    s.system.enclave_scripts = {{act(ActionKind::Store, layout.enclaves[1].shared_region.base, 7)}};
    out.push_back(std::move(s));
  }
  {
    auto s = s_mode(cfg, "enclave-to-os", "enclave 0 reads OS memory",
                    {act(ActionKind::EnclaveCreate, 0), act(ActionKind::EnclaveEnter, 0)}, Mechanism::TrapDenied);
    s.system.enclave_scripts = {{act(ActionKind::Load, layout.os.base + 0x100)}};
    out.push_back(std::move(s));
  }

  // ---- F adversary: any pc inside F's code, any register values ----
  struct Target {
    const char* name;
    const char* region;
  };
  const Target targets[] = {{"p-code", "p_code"}, {"p-data", "p_data"}, {"os", "os"}, {"enclave", "enclave0.private"}};
  for (const auto& t : targets) {
    out.push_back(f_attack(cfg, fmt::format("f-read-{}", t.name), fmt::format("F loads from {}", t.region),
                           {take_over(at("firmware:gadget.load"), {{t1, at(t.region, 0x40)}}, "load gadget")},
                           blocked(Mechanism::TrapDenied)));
    out.push_back(f_attack(cfg, fmt::format("f-write-{}", t.name), fmt::format("F stores to {}", t.region),
                           {take_over(at("firmware:gadget.store"), {{t1, at(t.region, 0x40)}, {a3, absolute(0x41)}},
                                      "store gadget")},
                           blocked(Mechanism::TrapDenied)));
    out.push_back(f_attack(cfg, fmt::format("f-execute-{}", t.name), fmt::format("F jumps into {}", t.region),
                           {take_over(at(t.region, 0x900), {}, "jump")}, blocked(Mechanism::TrapDenied)));
  }
  out.push_back(f_attack(cfg, "f-write-own-code", "F patches its own code",
                         {take_over(at("firmware:gadget.store"), {{t1, at("f_code", 0x100)}, {a3, absolute(0x13)}},
                                    "store gadget")},
                         blocked(Mechanism::TrapDenied)));
  out.push_back(f_attack(cfg, "f-execute-own-data", "F jumps into its own data region",
                         {take_over(at("f_data", 0x100), {}, "jump")}, blocked(Mechanism::TrapDenied)));
  out.push_back(f_attack(cfg, "f-jump-past-spentry", "F enters the SallyPort without revoking its access",
                         {take_over(at("sallyport"), {}, "jump")}, blocked(Mechanism::TrapDenied)));
  out.push_back(f_attack(cfg, "f-read-sallyport", "F reads the SallyPort code",
                         {take_over(at("firmware:gadget.load"), {{t1, at("sallyport")}}, "load gadget")},
                         blocked(Mechanism::TrapDenied)));
  {
    auto s = f_attack(cfg, "f-unaligned-rop-sweep", "F jumps to every 2-byte offset of its code with random registers",
                      {take_over(std::nullopt, {}, "sweep")}, {VerdictKind::Blocked, std::nullopt});
    s.adversary[0].randomize_gprs_seed = 0x5eed;
    s.sweep_f_code = true;
    s.max_steps = 4000;
    out.push_back(std::move(s));
  }
  out.push_back(f_attack(cfg, "f-spentry-gadget-abuse", "F jumps straight to the SPEntry with crafted registers",
                         {take_over(at("firmware:spentry"),
                                    {{t0, absolute(0x9F)}, {t1, absolute(0x9F9F9F9F9F9F9F9F)}, {a0, absolute(0x7FFF)},
                                     {ra, at("p_code")}},
                                    "spentry gadget")},
                         blocked(Mechanism::SelfLockout)));
  for (const bool vulnerable : {false, true}) {
    auto s = f_attack(cfg, vulnerable ? "f-timer-race-vulnerable" : "f-timer-race",
                      "F enables interrupts, exits, and a timer fires inside the SallyPort",
                      {take_over(at("firmware:gadget.irq_enable"), {{ra, at("firmware:spentry")}}, "irq_enable gadget"),
                       Injection{at("sallyport:sp.mask"), std::nullopt, {}, std::nullopt, 0, "timer"}},
                      {VerdictKind::UnrecoverableStall, std::nullopt});
    if (vulnerable) s.system.monitor.vulnerable_sallyport = true;
    out.push_back(std::move(s));
  }

  // ---- planted gadgets: caught before F runs ----
  out.push_back(planted(cfg, "f-mtvec-gadget-planted", "firmware image contains an mtvec write",
                        ops::csrw(csr::mtvec, t0), false));
  out.push_back(planted(cfg, "f-pmpaddr-gadget-planted", "firmware image contains a pmpaddr write",
                        ops::csrw(csr::pmpaddr0 + 2, t0), false));
  out.push_back(planted(cfg, "f-mseccfg-gadget-planted", "firmware image contains an mseccfg write",
                        ops::csrrci(zero, csr::mseccfg, 1), false));
  out.push_back(planted(cfg, "f-embedded-pmpcfg-gadget-planted",
                        "firmware hides a pmpcfg write in the upper half of a lui", ops::csrw(csr::pmpcfg2, t1), true));
  out.push_back(planted(cfg, "f-second-spentry-planted", "firmware carries a second SPEntry copy",
                        ops::csrwi(csr::pmpcfg0, 0), false));

  // ---- values F hands back ----
  {
    auto s = f_attack(cfg, "iago-return-values", "F returns out-of-range status and value registers",
                      {take_over(at("firmware:exit"),
                                 {{a0, absolute(0x7FFFFFFFFFFFFFFF)}, {a1, absolute(0xDEADBEEFCAFE)},
                                  {a2, at("enclave0.private")}, {sp, at("f_data")}, {t2, at("f_data")}},
                                 "poisoned return")},
                      blocked(Mechanism::Sanitized));
    s.sanitized = [](const System& sys) {
      return static_cast<int64_t>(reg(sys, a0)) == monitor::status::kFailed && reg(sys, a1) == monitor::kMaxFirmwareValue &&
             reg(sys, a2) == 3 && reg(sys, sp) == sys.layout.os.base + monitor::kOsSyscallOffset &&
             sys.machine.pmp() == monitor::view_state(sys.layout, {monitor::ViewKind::OsView});
    };
    out.push_back(std::move(s));
  }
  {
    auto s = f_attack(cfg, "f-forged-resume-pc", "F rewrites mepc before returning, to redirect the OS",
                      {take_over(at("firmware:gadget.mepc"), {{t0, at("os:done")}, {ra, at("firmware:svc.1")}},
                                 "mepc gadget")},
                      blocked(Mechanism::Sanitized));
    s.system.os_script.push_back(code({ops::alu_imm(isa::Mnemonic::Addi, s4, a1, 0)}));
    s.sanitized = [](const System& sys) { return sys.at_os_done() && reg(sys, s4) == 5; };
    out.push_back(std::move(s));
  }
  {
    auto s = f_attack(cfg, "f-mscratch-poison", "F points mscratch at its own data to capture P's next trap frame",
                      {take_over(at("firmware:gadget.mscratch"), {{sp, at("f_data", 0x800)}}, "mscratch gadget")},
                      blocked(Mechanism::Sanitized));
    s.system.os_script.push_back(act(ActionKind::FirmwareCall, 1, 7, 8));
    s.sanitized = [](const System& sys) {
      return sys.at_os_done() && reg(sys, a1) == 15 && sys.machine.hart().csrs.mscratch == sys.layout.p_data.base;
    };
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const Scenario& x, const Scenario& y) { return x.name < y.name; });
  return out;
}

std::vector<NominalFlow> nominal_flows(const SuiteConfig& cfg) {
  std::vector<NominalFlow> out;
  auto flow = [&](std::string name, std::vector<Action> os, std::vector<std::string> seq) {
    NominalFlow f;
    f.name = std::move(name);
    f.system = base_system(cfg);
    f.system.os_script = std::move(os);
    // One OS instruction after the last step so the final return shows up.
    f.system.os_script.push_back(code({ops::nop()}));
    f.expected_sequence = std::move(seq);
    out.push_back(std::move(f));
    return &out.back();
  };
  const auto timer_at = [](std::string label) {
    return Injection{at(std::move(label)), std::nullopt, {}, std::nullopt, 8, "timer"};
  };

  flow("firmware-call", {act(ActionKind::FirmwareCall, 1, 40, 2)}, {"OS", "P", "F", "P", "OS"})
      ->expected_registers = {{a0, 0}, {a1, 42}};
  flow("enclave-create-delete", {act(ActionKind::EnclaveCreate, 1), act(ActionKind::EnclaveDelete, 1)},
       {"OS", "P", "OS", "P", "OS"})
      ->expected_registers = {{a0, 0}};
  flow("enclave-enter-exit", {act(ActionKind::EnclaveCreate, 0), act(ActionKind::EnclaveEnter, 0)},
       {"OS", "P", "OS", "P", "Encl0", "P", "OS"})
      ->expected_registers = {{a0, static_cast<uint64_t>(monitor::status::kEnclaveExited)}, {a1, 0}};
  {
    auto* f = flow("enclave-ocall",
                   {act(ActionKind::EnclaveCreate, 1), act(ActionKind::EnclaveEnter, 1), act(ActionKind::EnclaveResume, 1)},
                   {"OS", "P", "OS", "P", "Encl1", "P", "OS", "P", "Encl1", "P", "OS"});
    f->system.enclave_scripts = {{}, {act(ActionKind::EnclaveOcall)}};
    f->expected_registers = {{a0, static_cast<uint64_t>(monitor::status::kEnclaveExited)}, {a1, 1}};
  }
  flow("os-fault", {act(ActionKind::Fault)}, {"OS", "P", "F", "P", "OS"});
  flow("os-timer", {act(ActionKind::SpinForTimer, 200)}, {"OS", "P", "F", "P", "OS"})
      ->environment = {timer_at("os:spin.0")};
  {
    auto* f = flow("enclave-timer",
                   {act(ActionKind::EnclaveCreate, 0), act(ActionKind::EnclaveEnter, 0), act(ActionKind::EnclaveResume, 0)},
                   {"OS", "P", "OS", "P", "Encl0", "P", "OS", "P", "Encl0", "P", "OS"});
    f->system.enclave_scripts = {{act(ActionKind::SpinForTimer, 200)}};
    f->environment = {timer_at("enclave0:spin.0")};
    f->expected_registers = {{a0, static_cast<uint64_t>(monitor::status::kEnclaveExited)}};
  }
  {
    auto* f = flow("enclave-fault", {act(ActionKind::EnclaveCreate, 0), act(ActionKind::EnclaveEnter, 0)},
                   {"OS", "P", "OS", "P", "Encl0", "P", "F", "P", "Encl0", "P", "OS"});
    f->system.enclave_scripts = {{act(ActionKind::Fault)}};
  }
  flow("app-syscall", {act(ActionKind::AppSyscall)}, {"OS", "App", "OS", "App", "OS"})->expected_registers = {{a0, 8}};
  flow("app-timer", {act(ActionKind::AppSpin, 200)}, {"OS", "App", "P", "F", "P", "App", "OS"})
      ->environment = {timer_at("os:spin.0")};
  return out;
}

}  // namespace mpart::harness
