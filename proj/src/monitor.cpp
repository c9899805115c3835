#include <fmt/format.h>

#include "mpart/monitor.hpp"

namespace mpart::monitor {

namespace {

Image firmware_from_blob(const CompartmentLayout& l, const std::vector<uint8_t>& blob) {
  Image img{"firmware", l.f_code.base, blob, {}};
  img.symbols["entry"] = l.f_code.base;
  img.symbols["handler"] = l.f_code.base + kFirmwareHandlerOffset;
  img.symbols["spentry"] = l.spentry_address();
  return img;
}

bool in(const Region& r, uint64_t a) { return r.contains(a); }

}  // namespace

bool System::at_os_done() const {
  return machine.hart().mode == hart::Mode::SupervisorUser && machine.hart().pc == os_done();
}

System load_system(const SystemConfig& config) {
  const CompartmentLayout l = build_layout(config.layout);
  Image firmware = config.firmware_blob ? firmware_from_blob(l, *config.firmware_blob) : build_firmware_image(l);
  const auto verdict = scanner::verify_firmware(firmware.bytes, l);
  if (!verdict.pass) throw BootRejected(verdict.report);

  Image monitor = build_monitor_image(l);
  Image sallyport = build_sallyport_image(l, monitor, config.monitor);
  Image os = build_os_image(l, config.os_script);
  std::vector<Image> enclaves;
  for (unsigned i = 0; i < l.enclaves.size(); ++i) {
    static const std::vector<Action> kNone;
    enclaves.push_back(
        build_enclave_image(l, i, i < config.enclave_scripts.size() ? config.enclave_scripts[i] : kNone));
  }

  hart::Memory mem(l.memory_base, l.memory_size);
  for (const Image* img : {&monitor, &sallyport, &firmware, &os}) mem.load(img->base, img->bytes);
  for (const auto& e : enclaves) mem.load(e.base, e.bytes);
  for (const auto& r : l.regions()) mem.tag(r.name, r.interval());

  hart::Machine machine(std::move(mem), config.hazard);
  machine.hart().pc = l.p_code.base;
  const pmp::PmpState reset = machine.pmp();
  return System{l,
                std::move(monitor),
                std::move(sallyport),
                std::move(firmware),
                std::move(os),
                std::move(enclaves),
                std::move(machine),
                reset};
}

hart::RunResult drive(System& s, const std::function<bool(const System&)>& stop, uint64_t max_steps,
                      const StepHook& before_step) {
  hart::RunResult r;
  while (r.steps < max_steps) {
    if (stop(s) || (before_step && !before_step(s))) {
      r.outcome = hart::Outcome::Stopped;
      return r;
    }
    s.machine.step();
    ++r.steps;
    if (s.machine.stalled()) {
      r.outcome = hart::Outcome::Stall;
      return r;
    }
  }
  r.outcome = stop(s) ? hart::Outcome::Stopped : hart::Outcome::StepBudgetExhausted;
  return r;
}

hart::RunResult boot(System& s, uint64_t max_steps) {
  const uint64_t os_entry = s.layout.os.base;
  const auto r = drive(
      s,
      [&](const System& sys) {
        return sys.machine.hart().mode == hart::Mode::SupervisorUser && sys.machine.hart().pc == os_entry;
      },
      max_steps);
  if (r.outcome != hart::Outcome::Stopped)
    throw std::runtime_error(fmt::format("boot did not reach the OS: {} after {} steps at pc {:#x}",
                                         hart::to_string(r.outcome), r.steps, s.machine.hart().pc));
  return r;
}

hart::RunResult run_script(System& s, uint64_t max_steps) {
  const auto booted = boot(s, max_steps);
  auto r = drive(s, [](const System& sys) { return sys.at_os_done(); }, max_steps - booted.steps);
  r.steps += booted.steps;
  return r;
}

std::string compartment_of(const CompartmentLayout& l, uint64_t a) {
  if (in(l.p_code, a) || in(l.p_data, a) || in(l.sallyport, a)) return "P";
  if (in(l.f_code, a) || in(l.f_data, a)) return "F";
  if (a >= l.os.base + kAppOffset && a < l.os.base + kAppOffset + kAppSize) return "App";
  if (in(l.os, a)) return "OS";
  for (std::size_t i = 0; i < l.enclaves.size(); ++i)
    if (in(l.enclaves[i].private_region, a) || in(l.enclaves[i].shared_region, a)) return fmt::format("Encl{}", i);
  return "?";
}

std::vector<std::string> compartment_sequence(const CompartmentLayout& l, const hart::Trace& trace, std::size_t from,
                                              std::size_t to) {
  std::vector<std::string> out;
  for (std::size_t i = from; i < std::min(to, trace.size()); ++i) {
    if (trace[i].kind != hart::EventKind::Execute) continue;
    auto c = compartment_of(l, trace[i].pc);
    if (out.empty() || out.back() != c) out.push_back(std::move(c));
  }
  return out;
}

std::vector<std::string> transition_steps(const System& s, const hart::Trace& trace, std::size_t from,
                                          std::size_t to) {
  const auto& l = s.layout;
  std::vector<std::string> out;
  std::optional<uint64_t> prev_pc;
  for (std::size_t i = from; i < std::min(to, trace.size()); ++i) {
    const auto& e = trace[i];
    if (e.kind != hart::EventKind::CsrWrite && e.kind != hart::EventKind::Execute) continue;
    // A CSR write is recorded before the Execute of the same instruction,
    // so the region change is detected on whichever comes first.
    if (prev_pc) {
      if (in(l.p_code, *prev_pc) && in(l.f_code, e.pc)) out.push_back("fallthrough-to-F");
      if (in(l.f_code, *prev_pc) && in(l.sallyport, e.pc)) out.push_back("fallthrough-to-SP");
      if (in(l.sallyport, *prev_pc) && in(l.p_code, e.pc)) out.push_back("jump-to-P");
    }
    prev_pc = e.pc;
    if (e.kind != hart::EventKind::CsrWrite) continue;
    if (e.csr == isa::csr::mstatus && (e.new_value & hart::kMstatusMie) == 0 && in(l.sallyport, e.pc))
      out.push_back("mask-interrupts");
    else if (e.csr == isa::csr::mtvec)
      out.push_back("mtvec");
    else if (e.csr == isa::csr::pmpcfg0)
      out.push_back(e.new_value == 0 ? "cfg-clear" : "cfg-low");
  }
  return out;
}

TransitionWindows transition_windows(const CompartmentLayout& l, const hart::Trace& trace) {
  TransitionWindows w;
  const uint64_t stub = enter_f_stub_address(l);
  std::optional<std::size_t> entry, exit;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& e = trace[i];
    if (e.kind == hart::EventKind::Execute && e.pc == stub) entry = i;
    if (e.kind == hart::EventKind::CsrWrite && e.pc == l.spentry_address()) exit = i;
    if (e.kind != hart::EventKind::Execute) continue;
    if (entry && in(l.f_code, e.pc)) {
      w.entries.emplace_back(*entry, i + 1);
      entry.reset();
    }
    if (exit && in(l.p_code, e.pc)) {
      w.exits.emplace_back(*exit, i + 1);
      exit.reset();
    }
  }
  return w;
}

}  // namespace mpart::monitor
