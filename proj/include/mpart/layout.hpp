#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpart/pmp.hpp"

namespace mpart::monitor {

struct Region {
  std::string name;
  uint64_t base = 0;
  uint64_t size = 0;
  std::string perms;  // "r-x", "rw-", "rwx", ...

  uint64_t end() const { return base + size; }
  pmp::Interval interval() const { return {base, base + size}; }
  bool contains(uint64_t a) const { return a >= base && a < end(); }
};

struct EnclaveRegions {
  Region private_region;
  Region shared_region;
};

struct RegionSpec {
  uint64_t base = 0;
  uint64_t size = 0;
};

// Input to build_layout. Defaults describe a 1 MiB machine.
struct LayoutConfig {
  uint64_t memory_base = 0;
  uint64_t memory_size = 0x100000;
  RegionSpec p_code{0x0, 0x2000};
  RegionSpec f_code{0x2000, 0x2000};
  RegionSpec sallyport{0x4000, 0x100};
  RegionSpec p_data{0x8000, 0x2000};
  RegionSpec f_data{0xA000, 0x2000};
  RegionSpec os{0x40000, 0x40000};
  unsigned enclave_count = 0;
  uint64_t enclave_base = 0x80000;
  uint64_t enclave_stride = 0x10000;
  uint64_t enclave_private_size = 0x8000;
  uint64_t enclave_shared_size = 0x8000;
  unsigned platform_entries = 16;
  // Multi-firmware placement: one 64 KiB bracket per firmware image.
  uint64_t firmware_bracket_base = 0x10000;
  uint64_t firmware_bracket_size = 0x10000;
};

enum class LayoutErrorKind { Overlap, Misaligned, EntryBudget, Placement, OutOfMemory };
std::string to_string(LayoutErrorKind);

class LayoutError : public std::runtime_error {
 public:
  LayoutError(LayoutErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  LayoutErrorKind kind() const { return kind_; }

 private:
  LayoutErrorKind kind_;
};

// Fixed entry slots.
namespace entry {
inline constexpr unsigned kFirmwareCode = 0;
inline constexpr unsigned kFirmwareData = 1;
inline constexpr unsigned kMonitorData = 2;
// NAPOT span over the monitor code and the SallyPort. Grants P its code and
// denies F the SallyPort while the low configuration register is live.
inline constexpr unsigned kMonitorSpan = 3;
inline constexpr unsigned kOs = 4;
inline constexpr unsigned kFirmwareBracket = 5;  // multi-firmware only
inline constexpr unsigned kSallyPort = 8;
}  // namespace entry

struct CompartmentLayout {
  uint64_t memory_base = 0;
  uint64_t memory_size = 0;
  Region p_code, p_data, f_code, f_data, sallyport, os;
  Region p_span;  // interval matched by the monitor-span entry
  std::vector<EnclaveRegions> enclaves;
  std::map<std::string, unsigned> pmp_assignment;
  uint64_t spentry_offset = 0;  // within f_code
  unsigned f_count = 1;
  unsigned platform_entries = 16;

  uint64_t spentry_address() const { return f_code.base + spentry_offset; }
  std::vector<Region> regions() const;
  // Entries used while the system runs.
  unsigned runtime_entries() const;
  // Smallest platform entry count that can host this layout.
  unsigned required_platform_entries() const;
};

CompartmentLayout build_layout(const LayoutConfig& config);

// Entry indices of the private and shared region of an enclave. The
// multi-firmware layout reserves one extra slot before them.
std::pair<unsigned, unsigned> enclave_entries(unsigned enclave, bool multi_firmware = false);

enum class ViewKind { PView, FView, OsView, EnclaveView };

struct ViewLabel {
  ViewKind kind = ViewKind::OsView;
  unsigned enclave = 0;

  std::string name() const;
  friend bool operator==(const ViewLabel&, const ViewLabel&) = default;
};

// Which supervisor/user view the S/U slots carry.
struct SuView {
  std::optional<unsigned> enclave;  // nullopt = OS
  friend bool operator==(const SuView&, const SuView&) = default;
};

// Static register programming. All constants are derived from the layout.
std::array<uint64_t, pmp::kEntries> address_registers(const CompartmentLayout& l);
uint64_t cfg_low_monitor(const CompartmentLayout& l, SuView su);
uint64_t cfg_low_firmware(const CompartmentLayout& l);
uint64_t cfg_high(const CompartmentLayout& l, SuView su);
inline constexpr uint64_t kSecurityOperatingPoint = 0x3;  // MML | MMWP

// Complete PMP state for a view. PView and FView carry the OS S/U view in
// their S/U slots (FView turns them off).
pmp::PmpState view_state(const CompartmentLayout& l, ViewLabel v);

struct MatrixCell {
  std::string region;
  pmp::Grant grant;
};
// Expected permissions of the executing mode for the view, one cell per region.
std::vector<MatrixCell> expected_matrix(const CompartmentLayout& l, ViewLabel v);
// Permissions actually granted by a PMP state, sampled at the first, middle
// and last byte of each region; a permission counts only if all samples grant it.
std::vector<MatrixCell> observed_matrix(const CompartmentLayout& l, const pmp::PmpState& s, pmp::Mode mode);
pmp::Mode view_mode(ViewLabel v);

// Reprograms only the S/U slots (OS and enclave entries) of `current`.
pmp::PmpState enclave_switch(const CompartmentLayout& l, const pmp::PmpState& current, ViewLabel from, ViewLabel to);

// Multi-firmware extension.
struct FirmwareSlot {
  Region bracket;     // NAPOT block reserved for this firmware
  Region enter_stub;  // P-owned, ends where code begins
  Region code;
  Region exit_stub;  // P-owned SallyPort, begins where code ends
  Region data;
};

struct MultiFirmwareLayout {
  CompartmentLayout base;
  std::vector<FirmwareSlot> slots;
  std::map<std::string, unsigned> pmp_assignment;
  unsigned runtime_entries() const;
};

enum class MultiStage { MonitorView, MonitorEnter, FirmwareView, Cleared };
std::string to_string(MultiStage);

MultiFirmwareLayout build_multi_f_layout(const LayoutConfig& config, unsigned n);
// PMP state at each stage of entering and leaving firmware j.
pmp::PmpState multi_f_state(const MultiFirmwareLayout& l, unsigned j, MultiStage stage);

}  // namespace mpart::monitor
