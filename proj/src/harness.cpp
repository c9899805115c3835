#include <algorithm>
#include <random>

#include <fmt/format.h>

#include "mpart/harness.hpp"

namespace mpart::harness {

using hart::EventKind;
using monitor::System;

std::string to_string(VerdictKind k) {
  switch (k) {
    case VerdictKind::Blocked: return "Blocked";
    case VerdictKind::UnrecoverableStall: return "UnrecoverableStall";
    case VerdictKind::Breach: return "Breach";
    case VerdictKind::Inconclusive: return "Inconclusive";
  }
  return "?";
}

std::string to_string(Mechanism m) {
  switch (m) {
    case Mechanism::TrapDenied: return "TrapDenied";
    case Mechanism::IllegalInstruction: return "IllegalInstruction";
    case Mechanism::ScanRejected: return "ScanRejected";
    case Mechanism::SelfLockout: return "SelfLockout";
    case Mechanism::Sanitized: return "Sanitized";
  }
  return "?";
}

std::string Verdict::name() const {
  if (kind == VerdictKind::Blocked && mechanism) return fmt::format("Blocked({})", to_string(*mechanism));
  return to_string(kind);
}

bool Expectation::matches(const Verdict& v) const {
  if (v.kind != kind) return false;
  return !mechanism || v.mechanism == mechanism;
}

std::string Expectation::name() const {
  if (kind == VerdictKind::Blocked) return mechanism ? fmt::format("Blocked({})", to_string(*mechanism)) : "Blocked(any)";
  return to_string(kind);
}

Address absolute(uint64_t value) { return Address{"", static_cast<int64_t>(value)}; }

uint64_t resolve(const System& s, const Address& a) {
  const auto off = static_cast<uint64_t>(a.offset);
  if (a.anchor.empty()) return off;
  if (const auto colon = a.anchor.find(':'); colon != std::string::npos) {
    const auto image = a.anchor.substr(0, colon);
    const auto symbol = a.anchor.substr(colon + 1);
    if (image == "monitor") return s.monitor.symbol(symbol) + off;
    if (image == "sallyport") return s.sallyport.symbol(symbol) + off;
    if (image == "firmware") return s.firmware.symbol(symbol) + off;
    if (image == "os") return s.os.symbol(symbol) + off;
    for (const auto& e : s.enclaves)
      if (e.name == image) return e.symbol(symbol) + off;
    throw std::invalid_argument("unknown image in address: " + a.anchor);
  }
  for (const auto& r : s.layout.regions())
    if (r.name == a.anchor) return r.base + off;
  throw std::invalid_argument("unknown region in address: " + a.anchor);
}

namespace {

struct Armed {
  Injection injection;
  uint64_t trigger = 0;
};

struct RunRecord {
  hart::RunResult result;
  std::optional<std::size_t> first_injection;  // trace index
  uint64_t last_injection_step = 0;
};

void apply(System& s, const Injection& inj) {
  std::vector<std::pair<unsigned, uint64_t>> regs;
  if (inj.randomize_gprs_seed) {
    std::mt19937_64 rng(*inj.randomize_gprs_seed);
    for (unsigned r = 1; r < 32; ++r) regs.emplace_back(r, rng());
  }
  for (const auto& [r, a] : inj.gprs) regs.emplace_back(r, resolve(s, a));
  if (inj.jump_to || !regs.empty()) {
    const uint64_t pc = inj.jump_to ? resolve(s, *inj.jump_to) : s.machine.hart().pc;
    s.machine.inject(pc, regs, inj.note);
  }
  if (inj.timer_delay) s.machine.schedule_timer(s.machine.hart().cycle + *inj.timer_delay);
}

// Runs from the current state until the OS parks, applying injections in
// order as their triggers are reached.
RunRecord run_injected(System& s, const std::vector<Injection>& injections, uint64_t max_steps) {
  std::vector<Armed> armed;
  for (const auto& inj : injections) armed.push_back({inj, resolve(s, inj.trigger)});
  std::size_t next = 0;
  RunRecord rec;
  uint64_t step = 0;
  rec.result = monitor::drive(
      s, [](const System& sys) { return sys.at_os_done(); }, max_steps,
      [&](System& sys) {
        while (next < armed.size() && sys.machine.hart().pc == armed[next].trigger) {
          if (!rec.first_injection) rec.first_injection = sys.machine.trace().size();
          apply(sys, armed[next].injection);
          rec.last_injection_step = step;
          ++next;
        }
        ++step;
        return true;
      });
  return rec;
}

Verdict classify(const System& s, const hart::Trace& trace, std::size_t window_start, const std::vector<Violation>& violations,
                 const std::function<bool(const System&)>& sanitized) {
  Verdict v;
  if (!violations.empty()) {
    v.kind = VerdictKind::Breach;
    v.evidence = violations.front();
    v.detail = fmt::format("{}: {}", to_string(violations.front().invariant), violations.front().message);
    return v;
  }
  if (s.machine.stalled()) {
    v.kind = VerdictKind::UnrecoverableStall;
    v.detail = fmt::format("{} consecutive faulting trap entries at pc {:#x}", s.machine.faulting_trap_entries(),
                           s.machine.hart().pc);
    return v;
  }
  bool self_lockout = false;
  for (std::size_t i = window_start; i < trace.size(); ++i) {
    const auto& e = trace[i];
    if ((e.kind == EventKind::Fetch || e.kind == EventKind::MemAccess) && !e.allowed) {
      v.kind = VerdictKind::Blocked;
      v.mechanism = Mechanism::TrapDenied;
      v.detail = fmt::format("{} {:#x} denied in {} mode", pmp::to_string(e.query.access), e.query.address,
                             pmp::to_string(e.mode));
      return v;
    }
    if (e.kind == EventKind::Trap && e.cause == hart::cause::kIllegalInstruction) {
      v.kind = VerdictKind::Blocked;
      v.mechanism = Mechanism::IllegalInstruction;
      v.detail = fmt::format("illegal instruction at {:#x} in {} mode", e.pc, pmp::to_string(e.mode));
      return v;
    }
    if (e.kind == EventKind::CsrWrite && e.csr == isa::csr::pmpcfg0 && e.new_value == 0 &&
        e.pc == s.layout.spentry_address())
      self_lockout = true;
  }
  if (sanitized) {
    if (sanitized(s)) {
      v.kind = VerdictKind::Blocked;
      v.mechanism = Mechanism::Sanitized;
      v.detail = "P discarded the values F returned";
    } else {
      v.kind = VerdictKind::Breach;
      v.detail = "values returned by F reached the caller unchecked";
    }
    return v;
  }
  if (self_lockout) {
    v.kind = VerdictKind::Blocked;
    v.mechanism = Mechanism::SelfLockout;
    v.detail = "F revoked its own access through the SPEntry";
    return v;
  }
  v.detail = "nothing blocked the attack and no invariant was violated";
  return v;
}

int severity(const Verdict& v) {
  switch (v.kind) {
    case VerdictKind::Breach: return 3;
    case VerdictKind::UnrecoverableStall: return 2;
    case VerdictKind::Inconclusive: return 1;
    case VerdictKind::Blocked: return 0;
  }
  return 0;
}

ScenarioResult sweep(const Scenario& sc, System& booted, InvariantChecker checker) {
  ScenarioResult r;
  const Injection& first = sc.adversary.front();
  const uint64_t trigger = resolve(booted, first.trigger);
  const auto reach = monitor::drive(
      booted, [&](const System& sys) { return sys.machine.hart().pc == trigger; }, sc.max_steps);
  if (reach.outcome != hart::Outcome::Stopped) throw std::runtime_error(sc.name + ": sweep trigger never reached");
  checker.feed(booted.machine.take_trace());

  std::vector<Injection> rest(sc.adversary.begin() + 1, sc.adversary.end());
  std::map<std::string, Mechanism> mechanisms;
  std::optional<Verdict> worst;
  const uint64_t base = booted.layout.f_code.base;
  for (uint64_t off = 0; off < booted.layout.f_code.size; off += 2) {
    System s = booted;
    Injection inj = first;
    inj.jump_to = absolute(base + off);
    inj.note = fmt::format("sweep f_code+{:#x}", off);
    if (inj.randomize_gprs_seed) inj.randomize_gprs_seed = *inj.randomize_gprs_seed + off;
    apply(s, inj);
    const auto rec = run_injected(s, rest, sc.max_steps);
    InvariantChecker c = checker;
    c.feed(s.machine.trace());
    const auto v = classify(s, s.machine.trace(), 0, c.violations(), sc.sanitized);
    ++r.sweep_histogram[v.name()];
    if (v.mechanism) mechanisms[v.name()] = *v.mechanism;
    r.steps += reach.steps + rec.result.steps;
    if (!worst || severity(v) > severity(*worst)) {
      worst = v;
      worst->detail = fmt::format("f_code+{:#x}: {}", off, v.detail);
      r.violations = c.violations();
      r.outcome = rec.result.outcome;
    }
  }
  r.verdict = *worst;
  if (r.verdict.kind == VerdictKind::Blocked) {
    // Report the mechanism that stopped most offsets.
    const auto top = std::max_element(r.sweep_histogram.begin(), r.sweep_histogram.end(),
                                      [](const auto& a, const auto& b) { return a.second < b.second; });
    r.verdict.mechanism = mechanisms.at(top->first);
    std::string hist;
    for (const auto& [name, n] : r.sweep_histogram) hist += fmt::format("{}{} {}", hist.empty() ? "" : ", ", name, n);
    r.verdict.detail = fmt::format("{} offsets: {}", booted.layout.f_code.size / 2, hist);
  }
  return r;
}

}  // namespace

ScenarioResult run_scenario(const Scenario& sc) {
  ScenarioResult r;
  std::optional<System> s;
  try {
    s = monitor::load_system(sc.system);
  } catch (const monitor::BootRejected& e) {
    r.verdict.kind = VerdictKind::Blocked;
    r.verdict.mechanism = Mechanism::ScanRejected;
    const auto& f = e.report().findings;
    r.verdict.detail = f.empty() ? "rejected" : fmt::format("{} finding(s), first {} at offset {:#x}", f.size(),
                                                            f.front().mnemonic, f.front().offset);
    r.outcome = hart::Outcome::Stopped;
  }
  if (s) {
    hart::RunResult booted;
    try {
      booted = monitor::boot(*s, sc.max_steps);
    } catch (const std::runtime_error& e) {
      // Boot itself failed; judge whatever ran.
      r.violations = check_invariants(s->machine.trace(), s->layout);
      r.verdict = classify(*s, s->machine.trace(), 0, r.violations, {});
      r.verdict.detail = std::string(e.what()) + "; " + r.verdict.detail;
      r.outcome = s->machine.stalled() ? hart::Outcome::Stall : hart::Outcome::StepBudgetExhausted;
      r.trace = s->machine.take_trace();
      r.name = sc.name;
      r.expected = sc.expected;
      r.matched = false;
      return r;
    }
    const std::size_t boot_events = s->machine.trace().size();
    InvariantChecker checker(s->layout);
    if (sc.sweep_f_code && !sc.adversary.empty()) {
      const uint64_t boot_steps = booted.steps;
      r = sweep(sc, *s, checker);
      r.steps += boot_steps;
    } else {
      const auto rec = run_injected(*s, sc.adversary, sc.max_steps);
      checker.feed(s->machine.trace());
      r.violations = checker.violations();
      r.verdict = classify(*s, s->machine.trace(), rec.first_injection.value_or(boot_events), r.violations, sc.sanitized);
      r.outcome = rec.result.outcome;
      r.steps = booted.steps + rec.result.steps;
      r.steps_after_last_injection = rec.result.steps - rec.last_injection_step;
      r.trace = s->machine.take_trace();
    }
  }
  r.name = sc.name;
  r.expected = sc.expected;
  r.matched = sc.expected.matches(r.verdict);
  return r;
}

NominalResult run_nominal(const NominalFlow& f) {
  NominalResult r;
  r.name = f.name;
  auto s = monitor::load_system(f.system);
  try {
    monitor::boot(s);
  } catch (const std::runtime_error&) {
    r.outcome = s.machine.stalled() ? hart::Outcome::Stall : hart::Outcome::StepBudgetExhausted;
    r.violations = check_invariants(s.machine.trace(), s.layout);
    r.trace = s.machine.take_trace();
    return r;
  }
  r.boot_events = s.machine.trace().size();
  const auto rec = run_injected(s, f.environment, f.max_steps);
  r.outcome = rec.result.outcome;
  r.sequence = monitor::compartment_sequence(s.layout, s.machine.trace(), r.boot_events);
  // The parking instruction is never executed; count where the OS stopped.
  if (r.outcome == hart::Outcome::Stopped) {
    auto parked = monitor::compartment_of(s.layout, s.machine.hart().pc);
    if (r.sequence.empty() || r.sequence.back() != parked) r.sequence.push_back(std::move(parked));
  }
  r.violations = check_invariants(s.machine.trace(), s.layout);
  bool regs_ok = true;
  for (const auto& [reg, value] : f.expected_registers) regs_ok = regs_ok && s.machine.hart().reg(reg) == value;
  r.matched = r.outcome == hart::Outcome::Stopped && r.sequence == f.expected_sequence && regs_ok && r.violations.empty();
  r.trace = s.machine.take_trace();
  return r;
}

}  // namespace mpart::harness
