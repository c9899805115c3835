#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpart/hart.hpp"
#include "mpart/isa.hpp"
#include "mpart/layout.hpp"
#include "mpart/scanner.hpp"

namespace mpart::monitor {

// Request ids passed in a7.
namespace request {
inline constexpr uint64_t kFirmwareCall = 0x10;
inline constexpr uint64_t kEnclaveCreate = 0x20;
inline constexpr uint64_t kEnclaveDelete = 0x21;
inline constexpr uint64_t kEnclaveEnter = 0x22;
inline constexpr uint64_t kEnclaveExit = 0x23;
inline constexpr uint64_t kEnclaveOcall = 0x24;
inline constexpr uint64_t kEnclaveResume = 0x25;
}  // namespace request

// Values P returns in a0.
namespace status {
inline constexpr int64_t kOk = 0;
inline constexpr int64_t kFailed = -1;  // F returned an out-of-range error code
inline constexpr int64_t kUnknownRequest = -2;
inline constexpr int64_t kInvalidArgument = -3;
// Reasons an enclave gave control back to the OS (ENTER/RESUME result).
inline constexpr int64_t kEnclaveExited = 0;
inline constexpr int64_t kEnclaveOcall = 1;
inline constexpr int64_t kEnclaveInterrupted = 2;
}  // namespace status

// Reason P enters F, passed in a0.
namespace fkind {
inline constexpr uint64_t kInit = 0;
inline constexpr uint64_t kService = 1;
inline constexpr uint64_t kTimer = 2;
inline constexpr uint64_t kTrap = 3;
}  // namespace fkind

// F's error/value return pair is clamped to these ranges.
inline constexpr int64_t kMinFirmwareError = -8;
inline constexpr uint64_t kMaxFirmwareValue = 0xFFFF;

// Fixed firmware ABI: entry at the start of f_code, trap handler at +0x40.
inline constexpr uint64_t kFirmwareHandlerOffset = 0x40;
// Principals (OS, enclaves) receive faults at base + 0x800.
inline constexpr uint64_t kFaultEntryOffset = 0x800;
inline constexpr uint64_t kPrincipalMainOffset = 0x900;
// App code lives inside the OS region.
inline constexpr uint64_t kAppOffset = 0x4000;
inline constexpr uint64_t kAppSize = 0x1000;
inline constexpr uint64_t kOsSyscallOffset = 0x1000;

// P's per-hart frame at the start of p_data.
namespace frame {
inline constexpr int64_t kRegs = 0;  // x_i at 8*i; doubles as the trap save area
inline constexpr int64_t kPc = 0x100;
inline constexpr int64_t kCause = 0x108;
inline constexpr int64_t kPrincipal = 0x110;  // 0 = OS, 1 + i = enclave i
inline constexpr int64_t kContinuation = 0x118;
inline constexpr int64_t kCreated = 0x120;  // bit i = enclave i created
inline constexpr int64_t kOsContext = 0x200;
inline constexpr int64_t kEnclaveContexts = 0x400;
inline constexpr int64_t kContextStride = 0x110;
}  // namespace frame

// What P does after F returns through the SallyPort.
namespace continuation {
inline constexpr uint64_t kBoot = 0;
inline constexpr uint64_t kService = 1;
inline constexpr uint64_t kTimer = 2;
inline constexpr uint64_t kFault = 3;
}  // namespace continuation

struct Image {
  std::string name;
  uint64_t base = 0;
  std::vector<uint8_t> bytes;
  std::map<std::string, uint64_t> symbols;

  uint64_t symbol(const std::string& name) const;
  bool has_symbol(const std::string& name) const { return symbols.contains(name); }
};

struct MonitorOptions {
  // Reproduces the SallyPort ordering that restores cfg_low before masking
  // interrupts, leaving a window where a timer vectors into F.
  bool vulnerable_sallyport = false;
};

// Start of the enter_f stub: the last instructions of p_code, which set F's
// trap vector and then switch cfg_low to F's view. The switch is the final
// instruction, so execution falls through into f_code.
uint64_t enter_f_stub_address(const CompartmentLayout& l);
inline uint64_t enter_f_switch_address(const CompartmentLayout& l) { return l.p_code.end() - 4; }

Image build_monitor_image(const CompartmentLayout& l);
Image build_sallyport_image(const CompartmentLayout& l, const Image& monitor, const MonitorOptions& opt = {});
// Benign firmware. Contains ordinary helpers an attacker may reuse as
// gadgets; their addresses are exported as gadget.* symbols.
Image build_firmware_image(const CompartmentLayout& l);

// Straight-line behavior of an OS or enclave.
enum class ActionKind {
  FirmwareCall,  // a = function id, b/c = arguments
  EnclaveCreate,
  EnclaveDelete,
  EnclaveEnter,
  EnclaveResume,
  EnclaveExit,   // enclave only
  EnclaveOcall,  // enclave only
  Ecall,         // a7 = a, a0 = b
  Fault,         // illegal instruction
  SpinForTimer,  // a = iterations; the label marks where a timer may land
  AppSyscall,    // OS only: call into the app, which calls back into the OS
  AppSpin,       // OS only: app spins a iterations
  Load,          // from address a
  Store,         // b to address a
  Jump,          // to address a
  Code,          // raw instructions
};

struct Action {
  ActionKind kind = ActionKind::Fault;
  uint64_t a = 0;
  uint64_t b = 0;
  uint64_t c = 0;
  std::vector<isa::Description> code;
};
std::string to_string(ActionKind);

// Principal images. Every action gets a label "step.<k>" and, for spins,
// "spin.<k>". Faults resume at the next action.
Image build_os_image(const CompartmentLayout& l, const std::vector<Action>& script);
Image build_enclave_image(const CompartmentLayout& l, unsigned id, const std::vector<Action>& script);

struct SystemConfig {
  LayoutConfig layout;
  MonitorOptions monitor;
  hart::HazardConfig hazard;
  std::vector<Action> os_script;
  std::vector<std::vector<Action>> enclave_scripts;  // per enclave; missing = just exit
  // Replaces the generated firmware image (must be f_code-sized).
  std::optional<std::vector<uint8_t>> firmware_blob;
};

class BootRejected : public std::runtime_error {
 public:
  BootRejected(scanner::ScanReport report)
      : std::runtime_error("firmware rejected by the boot scanner"), report_(std::move(report)) {}
  const scanner::ScanReport& report() const { return report_; }

 private:
  scanner::ScanReport report_;
};

struct System {
  CompartmentLayout layout;
  Image monitor, sallyport, firmware, os;
  std::vector<Image> enclaves;
  hart::Machine machine;
  pmp::PmpState reset_pmp;

  // Address the OS parks at when its script is done.
  uint64_t os_done() const { return os.symbol("done"); }
  bool at_os_done() const;
};

// Scans the firmware (BootRejected on failure), builds and loads all images
// and places the hart at P's reset vector. Nothing has executed yet.
System load_system(const SystemConfig& config);

// Runs until the OS's first instruction. Throws std::runtime_error if that
// does not happen within the budget.
hart::RunResult boot(System& s, uint64_t max_steps = 5000);

// Hooks observed before each step; returning false stops the run.
using StepHook = std::function<bool(System&)>;
hart::RunResult drive(System& s, const std::function<bool(const System&)>& stop, uint64_t max_steps,
                      const StepHook& before_step = {});
// Boot, then run the OS script until it parks at "done".
hart::RunResult run_script(System& s, uint64_t max_steps = 20000);

// Compartment owning an address: "P" (code, data, SallyPort), "F", "OS",
// "App", "Encl<i>" or "?".
std::string compartment_of(const CompartmentLayout& l, uint64_t address);
// Compartments of consecutive Execute events, runs collapsed.
std::vector<std::string> compartment_sequence(const CompartmentLayout& l, const hart::Trace& trace,
                                              std::size_t from = 0, std::size_t to = SIZE_MAX);

// Transition step names extracted from a trace window, for golden checks:
// "mask-interrupts", "mtvec", "cfg-low", "cfg-clear", "jump-to-P", "fallthrough-to-F",
// "fallthrough-to-SP".
std::vector<std::string> transition_steps(const System& s, const hart::Trace& trace, std::size_t from = 0,
                                          std::size_t to = SIZE_MAX);

// Trace windows [begin, end) of each P→F entry (stub start through F's first
// instruction) and each F→SP→P exit (SPEntry write through P's first instruction).
struct TransitionWindows {
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  std::vector<std::pair<std::size_t, std::size_t>> exits;
};
TransitionWindows transition_windows(const CompartmentLayout& l, const hart::Trace& trace);

}  // namespace mpart::monitor
