#include <random>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "mpart/harness.hpp"

using namespace mpart;
using namespace mpart::harness;
using hart::EventKind;
using hart::Mode;

namespace {

monitor::System booted_with_call() {
  monitor::SystemConfig c;
  c.layout.enclave_count = 1;
  c.os_script = {monitor::Action{monitor::ActionKind::FirmwareCall, 1, 2, 3, {}}};
  auto s = monitor::load_system(c);
  monitor::run_script(s);
  return s;
}

void renumber(hart::Trace& t) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i].seq = i;
}

SuiteConfig moved_layout() {
  SuiteConfig m;
  auto& l = m.layout;
  l.p_code = {0x10000, 0x2000};
  l.f_code = {0x12000, 0x2000};
  l.sallyport = {0x14000, 0x100};
  l.f_data = {0x18000, 0x2000};
  l.p_data = {0x1A000, 0x2000};
  l.os = {0x80000, 0x40000};
  l.enclave_base = 0x40000;
  return m;
}

std::map<std::string, std::string> verdicts(const SuiteConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& s : builtin_suite(cfg)) out[s.name] = run_scenario(s).verdict.name();
  return out;
}

}  // namespace

TEST_CASE("nominal traces satisfy every invariant") {
  const auto s = booted_with_call();
  CHECK(check_invariants(s.machine.trace(), s.layout).empty());
}

TEST_CASE("a forged PMP write from F is one Inv-ePMP violation") {
  const auto s = booted_with_call();
  auto t = s.machine.trace();
  hart::TraceEvent forged = t.back();
  forged.kind = EventKind::CsrWrite;
  forged.mode = Mode::Machine;
  forged.pc = s.layout.f_code.base + 0x10;
  forged.csr = isa::csr::pmpaddr0 + 3;
  forged.new_value = 0;
  t.push_back(forged);
  renumber(t);
  const auto v = check_invariants(t, s.layout);
  REQUIRE(v.size() == 1);
  CHECK(v[0].invariant == Invariant::EPmp);
  CHECK(v[0].index == t.size() - 1);
}

TEST_CASE("out-of-order sequence numbers are a format error") {
  const auto s = booted_with_call();
  auto t = s.machine.trace();
  std::swap(t[3], t[4]);
  CHECK_THROWS_AS(check_invariants(t, s.layout), hart::TraceFormatError);
}

TEST_CASE("any single forbidden event in a clean trace is caught") {
  const auto s = booted_with_call();
  const auto& clean = s.machine.trace();
  const auto& l = s.layout;
  REQUIRE(check_invariants(clean, l).empty());

  // Positions where P is executing (not the F switch), after lockdown is on.
  std::vector<std::size_t> p_positions;
  bool locked = false;
  for (std::size_t i = 0; i + 1 < clean.size(); ++i) {
    const auto& e = clean[i];
    if (e.kind == EventKind::CsrWrite && e.csr == isa::csr::mseccfg) locked = true;
    if (locked && e.kind == EventKind::Execute && e.mode == Mode::Machine && l.p_code.contains(e.pc) &&
        e.pc < monitor::enter_f_stub_address(l) && !e.instruction.starts_with("mret"))
      p_positions.push_back(i + 1);
  }
  REQUIRE(p_positions.size() > 100);

  using Forge = std::function<hart::TraceEvent(hart::TraceEvent)>;
  const std::vector<std::pair<std::string, Forge>> forgers = {
      {"pmp write from the OS",
       [&](hart::TraceEvent e) {
         e.kind = EventKind::CsrWrite;
         e.pc = l.os.base + 0x900;
         e.csr = isa::csr::pmpcfg2;
         e.new_value = e.old_value = 0;
         return e;
       }},
      {"mtvec write from F",
       [&](hart::TraceEvent e) {
         e.kind = EventKind::CsrWrite;
         e.pc = l.f_code.base + 0x20;
         e.csr = isa::csr::mtvec;
         e.new_value = l.f_code.base;
         return e;
       }},
      {"trap into the OS",
       [&](hart::TraceEvent e) {
         e.kind = EventKind::ModeSwitch;
         e.from_mode = Mode::SupervisorUser;
         e.mode = Mode::Machine;
         e.target = e.pc = l.os.base + 0x40;
         return e;
       }},
      {"drop to S/U without mret",
       [&](hart::TraceEvent e) {
         e.kind = EventKind::ModeSwitch;
         e.from_mode = Mode::Machine;
         e.mode = Mode::SupervisorUser;
         e.target = e.pc = l.os.base;
         return e;
       }},
      {"F entered directly",
       [&](hart::TraceEvent e) {
         e.kind = EventKind::Execute;
         e.pc = l.f_code.base + 0x80;
         e.instruction = "addi zero, zero, 0";
         return e;
       }},
      {"stale fetch",
       [&](hart::TraceEvent e) {
         e.kind = EventKind::Fetch;
         e.pmp_hash ^= 0x5a5a;
         return e;
       }},
      {"M-mode code outside P and F",
       [&](hart::TraceEvent e) {
         e.kind = EventKind::Execute;
         e.mode = Mode::Machine;
         e.pc = l.os.base + 0x900;
         e.instruction = "addi zero, zero, 0";
         return e;
       }},
  };

  std::mt19937_64 rng(17);
  for (const auto& [what, forge] : forgers) {
    for (int n = 0; n < 25; ++n) {
      const std::size_t at = p_positions[rng() % p_positions.size()];
      auto t = clean;
      t.insert(t.begin() + static_cast<std::ptrdiff_t>(at), forge(clean[at - 1]));
      renumber(t);
      CAPTURE(what);
      CAPTURE(at);
      CHECK_FALSE(check_invariants(t, l).empty());
    }
  }
}

TEST_CASE("builtin suite: every scenario gets its expected verdict") {
  const auto suite = builtin_suite();
  CHECK(suite.size() >= 14);
  std::set<std::string> names;
  for (const auto& s : suite) {
    names.insert(s.name);
    CHECK(s.expected.kind != VerdictKind::Breach);
  }
  CHECK(names.size() == suite.size());
  for (const char* required :
       {"s-mode-pmp-write", "s-mode-mtvec-write", "s-mode-direct-jump-to-F", "f-read-p-code", "f-write-p-data",
        "f-execute-os", "f-read-enclave", "f-write-own-code", "f-execute-own-data", "f-unaligned-rop-sweep",
        "f-spentry-gadget-abuse", "f-timer-race-vulnerable", "f-mtvec-gadget-planted", "iago-return-values",
        "enclave-to-enclave"})
    CHECK(names.contains(required));

  for (const auto& s : suite) {
    const auto r = run_scenario(s);
    CAPTURE(s.name);
    CAPTURE(r.verdict.detail);
    CHECK(r.matched);
    CHECK(r.verdict.kind != VerdictKind::Breach);
  }
}

TEST_CASE("the timer race stalls shortly after the timer fires") {
  for (const auto& s : builtin_suite()) {
    if (!s.name.starts_with("f-timer-race")) continue;
    const auto r = run_scenario(s);
    CAPTURE(s.name);
    CHECK(r.verdict.kind == VerdictKind::UnrecoverableStall);
    CHECK(r.violations.empty());
    CHECK(r.steps_after_last_injection <= 50);
  }
}

TEST_CASE("verdicts do not depend on where the regions are placed") {
  CHECK(verdicts({}) == verdicts(moved_layout()));
}

TEST_CASE("a pipeline flush follows every PMP write in hazard mode") {
  SuiteConfig cfg;
  cfg.hazard = {3, true};
  for (const auto& f : nominal_flows(cfg)) {
    const auto r = run_nominal(f);
    CAPTURE(f.name);
    CHECK(r.matched);
    for (std::size_t i = 0; i < r.trace.size(); ++i) {
      const auto& e = r.trace[i];
      if (e.kind != EventKind::CsrWrite) continue;
      const auto cls = isa::CsrAddress{e.csr}.classification();
      if (cls != isa::CsrClass::PmpCfg && cls != isa::CsrClass::PmpAddr && cls != isa::CsrClass::MachineSecurityConfig)
        continue;
      REQUIRE(i + 1 < r.trace.size());
      CHECK(r.trace[i + 1].kind == EventKind::PipelineFlush);
    }
  }
}

TEST_CASE("without the flush, stale fetches are reported") {
  SuiteConfig cfg;
  cfg.hazard = {3, false};
  const auto r = run_nominal(nominal_flows(cfg).front());
  CHECK_FALSE(r.matched);
  bool stale = false;
  for (const auto& v : r.violations) stale = stale || v.invariant == Invariant::StaleFetch;
  CHECK(stale);
}

TEST_CASE("nominal flows route through the expected compartments") {
  const auto flows = nominal_flows();
  CHECK(flows.size() == 10);
  for (const auto& f : flows) {
    const auto r = run_nominal(f);
    CAPTURE(f.name);
    CHECK(r.outcome == hart::Outcome::Stopped);
    CHECK(r.sequence == f.expected_sequence);
    CHECK(r.violations.empty());
    CHECK(r.matched);
  }
}

TEST_CASE("app syscalls never enter machine mode") {
  for (const auto& f : nominal_flows()) {
    if (f.name != "app-syscall") continue;
    const auto r = run_nominal(f);
    for (std::size_t i = r.boot_events; i < r.trace.size(); ++i) CHECK(r.trace[i].mode == Mode::SupervisorUser);
  }
}

TEST_CASE("suite JSON is ordered by name and deterministic") {
  std::vector<ScenarioResult> rs;
  for (const auto& s : builtin_suite())
    if (s.name.starts_with("s-mode") || s.name == "f-mtvec-gadget-planted") rs.push_back(run_scenario(s));
  std::reverse(rs.begin(), rs.end());
  const auto text = suite_json(rs);
  CHECK(text == suite_json(rs));
  const auto j = nlohmann::ordered_json::parse(text);
  REQUIRE(j.is_array());
  REQUIRE(j.size() == rs.size());
  for (std::size_t i = 1; i < j.size(); ++i) CHECK(j[i - 1]["name"] < j[i]["name"]);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j[0].items()) keys.push_back(k);
  CHECK(std::vector<std::string>(keys.begin(), keys.begin() + 3) == std::vector<std::string>{"name", "verdict", "mechanism"});
  CHECK(j[0]["trace_path"].is_null());
}
