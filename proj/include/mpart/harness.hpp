#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mpart/hart.hpp"
#include "mpart/layout.hpp"
#include "mpart/monitor.hpp"

namespace mpart::harness {

// ---- invariant checking ----

enum class Invariant { EPmp, EnEx, Intf, MT, MutualExclusion, ViewConformance, StaleFetch };
std::string to_string(Invariant);

struct Violation {
  Invariant invariant = Invariant::EPmp;
  std::size_t index = 0;  // position of the offending event in the checked trace
  hart::TraceEvent event;
  std::string message;
};

// Streaming checker. Replays the PMP state from CsrWrite events, starting
// from the reset state, so it must see a trace from reset onward. Copies
// are cheap and share the access-matrix cache.
class InvariantChecker {
 public:
  explicit InvariantChecker(const monitor::CompartmentLayout& layout);

  void feed(const hart::TraceEvent& e);
  void feed(const hart::Trace& t) {
    for (const auto& e : t) feed(e);
  }
  const std::vector<Violation>& violations() const { return violations_; }
  std::size_t events_seen() const { return count_; }

 private:
  struct Cache;
  void violate(Invariant inv, const hart::TraceEvent& e, std::string msg);
  void on_execute(const hart::TraceEvent& e);
  bool is_p_code(uint64_t pc) const;
  bool is_stub(uint64_t pc) const;
  std::optional<monitor::ViewLabel> expected_view(const hart::TraceEvent& e) const;

  monitor::CompartmentLayout l_;
  uint64_t stub_ = 0;
  uint64_t switch_pc_ = 0;
  std::shared_ptr<Cache> cache_;
  pmp::PmpState pmp_;
  uint64_t pmp_hash_ = 0;
  bool mtvec_written_ = false;
  std::optional<hart::TraceEvent> last_execute_;
  std::optional<hart::TraceEvent> previous_;
  std::size_t count_ = 0;
  std::optional<uint64_t> last_seq_;
  std::vector<Violation> violations_;
};

// Throws hart::TraceFormatError when sequence numbers do not increase.
std::vector<Violation> check_invariants(const hart::Trace& trace, const monitor::CompartmentLayout& layout);

// ---- verdicts ----

enum class VerdictKind { Blocked, UnrecoverableStall, Breach, Inconclusive };
enum class Mechanism { TrapDenied, IllegalInstruction, ScanRejected, SelfLockout, Sanitized };
std::string to_string(VerdictKind);
std::string to_string(Mechanism);

struct Verdict {
  VerdictKind kind = VerdictKind::Inconclusive;
  std::optional<Mechanism> mechanism;  // Blocked only
  std::optional<Violation> evidence;   // Breach only
  std::string detail;

  std::string name() const;  // "Blocked(TrapDenied)", "Breach", ...
};

// ---- scenarios ----

// Layout-independent address. `anchor` is a region name ("p_data",
// "enclave1.private"), "<image>:<symbol>" ("firmware:gadget.load",
// "sallyport:sp.mask", "enclave0:spin.0"), or empty for an absolute value.
struct Address {
  std::string anchor;
  int64_t offset = 0;
};
Address absolute(uint64_t value);
uint64_t resolve(const monitor::System& s, const Address& a);

// Adversary or environment event, applied at the step boundary where the
// pc first reaches `trigger` (after boot). Only existing code is reachable:
// the adversary picks a pc and register values, it never writes memory or
// PMP state directly.
struct Injection {
  Address trigger;
  std::optional<Address> jump_to;
  std::vector<std::pair<unsigned, Address>> gprs;
  std::optional<uint64_t> randomize_gprs_seed;  // every other GPR gets a random value
  std::optional<uint64_t> timer_delay;          // schedule a timer this many cycles later
  std::string note;
};

struct Expectation {
  VerdictKind kind = VerdictKind::Blocked;
  std::optional<Mechanism> mechanism;  // nullopt = any mechanism
  bool matches(const Verdict& v) const;
  std::string name() const;
};

struct Scenario {
  std::string name;
  std::string summary;
  monitor::SystemConfig system;
  std::vector<Injection> adversary;
  Expectation expected;
  // Holds when P neutralized whatever F handed back; a false result is a breach.
  std::function<bool(const monitor::System&)> sanitized;
  // Replace the first injection's target with every 2-byte offset of f_code.
  bool sweep_f_code = false;
  uint64_t max_steps = 20000;
};

struct ScenarioResult {
  std::string name;
  Verdict verdict;
  Expectation expected;
  bool matched = false;
  hart::Outcome outcome = hart::Outcome::StepBudgetExhausted;
  uint64_t steps = 0;
  // Steps between the last injection and the end of the run.
  uint64_t steps_after_last_injection = 0;
  std::vector<Violation> violations;
  hart::Trace trace;  // empty for sweeps and rejected boots
  std::map<std::string, unsigned> sweep_histogram;  // verdict name → offsets
};

ScenarioResult run_scenario(const Scenario& s);

struct SuiteConfig {
  monitor::LayoutConfig layout;  // enclave_count is raised to at least 2
  hart::HazardConfig hazard;
  monitor::MonitorOptions monitor;
};

std::vector<Scenario> builtin_suite(const SuiteConfig& cfg = {});

// ---- nominal flows ----

struct NominalFlow {
  std::string name;
  monitor::SystemConfig system;
  std::vector<Injection> environment;  // timers
  // Compartments executed after boot, runs collapsed, up to the OS parking.
  std::vector<std::string> expected_sequence;
  // Registers the OS sees when it parks.
  std::vector<std::pair<unsigned, uint64_t>> expected_registers;
  uint64_t max_steps = 50000;  // after boot
};

struct NominalResult {
  std::string name;
  hart::Outcome outcome = hart::Outcome::StepBudgetExhausted;
  std::vector<std::string> sequence;
  bool matched = false;
  std::vector<Violation> violations;
  hart::Trace trace;
  std::size_t boot_events = 0;
};

std::vector<NominalFlow> nominal_flows(const SuiteConfig& cfg = {});
NominalResult run_nominal(const NominalFlow& f);

// ---- reports ----

// JSON array ordered by scenario name. Traces are written as ND-JSON into
// trace_dir when given; trace_path is null otherwise.
std::string suite_json(const std::vector<ScenarioResult>& results, const std::optional<std::string>& trace_dir = {});
std::string suite_text(const std::vector<ScenarioResult>& results);

}  // namespace mpart::harness
