#include <fmt/format.h>

#include "mpart/harness.hpp"

namespace mpart::harness {

using hart::EventKind;
using hart::Mode;
using monitor::ViewKind;
using monitor::ViewLabel;

std::string to_string(Invariant i) {
  switch (i) {
    case Invariant::EPmp: return "Inv-ePMP";
    case Invariant::EnEx: return "Inv-EnEx";
    case Invariant::Intf: return "Inv-Intf";
    case Invariant::MT: return "Inv-MT";
    case Invariant::MutualExclusion: return "MutualExclusion";
    case Invariant::ViewConformance: return "ViewConformance";
    case Invariant::StaleFetch: return "StaleFetch";
  }
  return "?";
}

struct InvariantChecker::Cache {
  // (pmp hash, mode) → both P and F reachable
  std::map<std::pair<uint64_t, Mode>, bool> overlap;
  // (pmp hash, mode, view name) → mismatch description, empty when conforming
  std::map<std::tuple<uint64_t, Mode, std::string>, std::string> conformance;
};

namespace {

bool any_access(const pmp::PmpState& s, Mode m, const monitor::Region& r) {
  for (uint64_t a : {r.base, r.base + r.size / 2, r.end() - 1})
    for (auto acc : {pmp::Access::Read, pmp::Access::Write, pmp::Access::Execute})
      if (pmp::check_access(s, {a, 1, acc, m}).allowed) return true;
  return false;
}

std::string grant_string(const pmp::Grant& g) {
  return fmt::format("{}{}{}", g.read ? 'r' : '-', g.write ? 'w' : '-', g.execute ? 'x' : '-');
}

bool is_pmp_csr(uint16_t csr) {
  const auto cls = isa::CsrAddress{csr}.classification();
  return cls == isa::CsrClass::PmpCfg || cls == isa::CsrClass::PmpAddr || cls == isa::CsrClass::MachineSecurityConfig;
}

void apply_write(pmp::PmpState& s, uint16_t csr, uint64_t value) {
  if (csr == isa::csr::pmpcfg0) s.cfg_low = value;
  else if (csr == isa::csr::pmpcfg2) s.cfg_high = value;
  else if (csr >= isa::csr::pmpaddr0 && csr < isa::csr::pmpaddr0 + pmp::kEntries) s.address[csr - isa::csr::pmpaddr0] = value;
  else if (csr == isa::csr::mseccfg) s.security = pmp::SecurityConfig::from_bits(value);
}

}  // namespace

InvariantChecker::InvariantChecker(const monitor::CompartmentLayout& layout)
    : l_(layout),
      stub_(monitor::enter_f_stub_address(layout)),
      switch_pc_(monitor::enter_f_switch_address(layout)),
      cache_(std::make_shared<Cache>()),
      pmp_hash_(pmp_.hash()) {}

bool InvariantChecker::is_p_code(uint64_t pc) const { return l_.p_code.contains(pc); }
bool InvariantChecker::is_stub(uint64_t pc) const { return pc >= stub_ && pc < l_.p_code.end(); }

void InvariantChecker::violate(Invariant inv, const hart::TraceEvent& e, std::string msg) {
  violations_.push_back(Violation{inv, count_, e, std::move(msg)});
}

std::optional<ViewLabel> InvariantChecker::expected_view(const hart::TraceEvent& e) const {
  if (e.mode == Mode::SupervisorUser) {
    const auto c = monitor::compartment_of(l_, e.pc);
    if (c == "OS" || c == "App") return ViewLabel{ViewKind::OsView};
    for (unsigned i = 0; i < l_.enclaves.size(); ++i)
      if (c == fmt::format("Encl{}", i)) return ViewLabel{ViewKind::EnclaveView, i};
    return std::nullopt;
  }
  if (is_p_code(e.pc)) return ViewLabel{ViewKind::PView};
  if (l_.f_code.contains(e.pc)) return ViewLabel{ViewKind::FView};
  return std::nullopt;
}

void InvariantChecker::feed(const hart::TraceEvent& e) {
  if (last_seq_ && e.seq <= *last_seq_)
    throw hart::TraceFormatError(fmt::format("event {}: sequence {} does not follow {}", count_, e.seq, *last_seq_));
  last_seq_ = e.seq;

  switch (e.kind) {
    case EventKind::CsrWrite:
      if (is_pmp_csr(e.csr)) {
        const bool from_spentry = e.pc == l_.spentry_address() && e.csr == isa::csr::pmpcfg0 && e.new_value == 0;
        if (!is_p_code(e.pc) && !l_.sallyport.contains(e.pc) && !from_spentry)
          violate(Invariant::EPmp, e, fmt::format("csr {:#x} written from {:#x}", e.csr, e.pc));
        apply_write(pmp_, e.csr, e.new_value);
        pmp_hash_ = pmp_.hash();
      } else if (e.csr == isa::csr::mtvec) {
        if (!is_p_code(e.pc) && !l_.sallyport.contains(e.pc))
          violate(Invariant::MT, e, fmt::format("mtvec written from {:#x}", e.pc));
        mtvec_written_ = true;
      }
      break;
    case EventKind::ModeSwitch:
      if (e.from_mode == Mode::SupervisorUser && e.mode == Mode::Machine && !is_p_code(e.target))
        violate(Invariant::EnEx, e, fmt::format("S/U trap lands at {:#x}, outside P", e.target));
      if (e.from_mode == Mode::Machine && e.mode == Mode::SupervisorUser) {
        const bool via_p = previous_ && previous_->kind == EventKind::Execute && is_p_code(previous_->pc) &&
                           previous_->instruction.starts_with("mret");
        if (!via_p) violate(Invariant::EnEx, e, "drop to S/U not performed by P's mret");
      }
      break;
    case EventKind::Fetch:
      if (e.pmp_hash != 0 && e.pmp_hash != pmp_hash_)
        violate(Invariant::StaleFetch, e, fmt::format("fetch at {:#x} checked against a stale configuration", e.pc));
      break;
    case EventKind::Execute: on_execute(e); break;
    default: break;
  }
  previous_ = e;
  ++count_;
}

void InvariantChecker::on_execute(const hart::TraceEvent& e) {
  const uint64_t pc = e.pc;
  const bool in_f = l_.f_code.contains(pc);

  // Fixed interface: in only through the enter_f switch, out only through the SPEntry.
  if (last_execute_) {
    const bool was_f = l_.f_code.contains(last_execute_->pc);
    if (in_f && !was_f && last_execute_->pc != switch_pc_)
      violate(Invariant::Intf, e, fmt::format("F entered at {:#x} after {:#x}", pc, last_execute_->pc));
    if (!in_f && was_f && (last_execute_->pc != l_.spentry_address() || pc != l_.sallyport.base))
      violate(Invariant::Intf, e, fmt::format("F left from {:#x} to {:#x}", last_execute_->pc, pc));
  } else if (in_f) {
    violate(Invariant::Intf, e, "F runs before P");
  }
  last_execute_ = e;

  const bool exempt = is_stub(pc) || l_.sallyport.contains(pc);
  if (mtvec_written_ && !exempt) {
    if (e.mode == Mode::Machine && is_p_code(pc)) {
      if (!is_p_code(e.mtvec)) violate(Invariant::MT, e, fmt::format("P runs with mtvec {:#x}", e.mtvec));
      if (e.interrupts_enabled) violate(Invariant::MT, e, "P runs with interrupts enabled");
    } else if (e.mode == Mode::Machine && in_f) {
      if (!l_.f_code.contains(e.mtvec)) violate(Invariant::MT, e, fmt::format("F runs with mtvec {:#x}", e.mtvec));
    } else if (e.mode == Mode::SupervisorUser) {
      if (!is_p_code(e.mtvec)) violate(Invariant::MT, e, fmt::format("S/U runs with mtvec {:#x}", e.mtvec));
    }
  }

  if (!pmp_.security.machine_mode_lockdown) return;

  const auto okey = std::pair{pmp_hash_, e.mode};
  auto it = cache_->overlap.find(okey);
  if (it == cache_->overlap.end()) {
    const bool p = any_access(pmp_, e.mode, l_.p_code) || any_access(pmp_, e.mode, l_.p_data) ||
                   any_access(pmp_, e.mode, l_.sallyport);
    const bool f = any_access(pmp_, e.mode, l_.f_code) || any_access(pmp_, e.mode, l_.f_data);
    it = cache_->overlap.emplace(okey, p && f).first;
  }
  if (it->second) violate(Invariant::MutualExclusion, e, "P and F regions both reachable");

  if (exempt || pc == l_.spentry_address()) return;
  const auto view = expected_view(e);
  if (!view) {
    violate(Invariant::ViewConformance, e, fmt::format("no view allows {} code at {:#x}", pmp::to_string(e.mode), pc));
    return;
  }
  const auto ckey = std::tuple{pmp_hash_, e.mode, view->name()};
  auto ct = cache_->conformance.find(ckey);
  if (ct == cache_->conformance.end()) {
    const auto expected = monitor::expected_matrix(l_, *view);
    const auto observed = monitor::observed_matrix(l_, pmp_, e.mode);
    std::string diff;
    for (std::size_t i = 0; i < expected.size() && i < observed.size(); ++i)
      if (!(expected[i].grant == observed[i].grant))
        diff += fmt::format("{}{}: {} expected {}", diff.empty() ? "" : "; ", expected[i].region,
                            grant_string(observed[i].grant), grant_string(expected[i].grant));
    ct = cache_->conformance.emplace(ckey, diff).first;
  }
  if (!ct->second.empty()) violate(Invariant::ViewConformance, e, view->name() + ": " + ct->second);
}

std::vector<Violation> check_invariants(const hart::Trace& trace, const monitor::CompartmentLayout& layout) {
  InvariantChecker c(layout);
  c.feed(trace);
  return c.violations();
}

}  // namespace mpart::harness
