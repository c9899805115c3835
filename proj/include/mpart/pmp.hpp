#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

namespace mpart::pmp {

inline constexpr unsigned kEntries = 16;
// pmpaddr registers hold physical address bits [55:2].
inline constexpr uint64_t kAddrMask = (uint64_t{1} << 54) - 1;

enum class AddressMode : uint8_t { Off = 0, TopOfRange = 1, NaturallyAligned4 = 2, NaturallyAlignedPowerOf2 = 3 };
enum class Access { Read, Write, Execute };
enum class Mode { Machine, SupervisorUser };

struct EntryConfig {
  bool read = false;
  bool write = false;
  bool execute = false;
  AddressMode address_mode = AddressMode::Off;
  bool locked = false;

  static EntryConfig from_byte(uint8_t b);
  uint8_t to_byte() const;
  friend bool operator==(const EntryConfig&, const EntryConfig&) = default;
};

struct SecurityConfig {
  bool machine_mode_lockdown = false;   // MML
  bool machine_mode_whitelist = false;  // MMWP
  bool rule_lock_bypass = false;        // RLB

  uint64_t to_bits() const;
  static SecurityConfig from_bits(uint64_t v);
  friend bool operator==(const SecurityConfig&, const SecurityConfig&) = default;
};

// Half-open byte interval [begin, end).
struct Interval {
  uint64_t begin = 0;
  uint64_t end = 0;
  bool contains(uint64_t a) const { return a >= begin && a < end; }
  bool empty() const { return end <= begin; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

enum class CfgRegister { Low, High };  // pmpcfg0 / pmpcfg2

// Complete isolation substrate of one hart. Plain value type.
struct PmpState {
  std::array<uint64_t, kEntries> address{};
  uint64_t cfg_low = 0;
  uint64_t cfg_high = 0;
  SecurityConfig security;

  EntryConfig entry(unsigned index) const;
  uint8_t cfg_byte(unsigned index) const;
  uint64_t hash() const;
  friend bool operator==(const PmpState&, const PmpState&) = default;
};

struct AccessQuery {
  uint64_t address = 0;
  unsigned size = 1;  // 1, 2, 4 or 8
  Access access = Access::Read;
  Mode mode = Mode::Machine;
  friend bool operator==(const AccessQuery&, const AccessQuery&) = default;
};

struct Decision {
  bool allowed = false;
  std::string reason;  // empty when allowed
  // Lowest-index entry that decided the first denied byte (or the last allowed byte).
  std::optional<unsigned> matched_entry;
  explicit operator bool() const { return allowed; }
};

// Permission a single matching entry grants to a mode.
struct Grant {
  bool read = false;
  bool write = false;
  bool execute = false;
  bool allows(Access a) const {
    return a == Access::Read ? read : a == Access::Write ? write : execute;
  }
  friend bool operator==(const Grant&, const Grant&) = default;
};

std::optional<Interval> entry_range(const PmpState& state, unsigned index);

// Permission granted by one matching entry under the given security config.
Grant entry_grant(const EntryConfig& cfg, const SecurityConfig& sec, Mode mode);
// Permission for bytes no entry matches.
Grant default_grant(const SecurityConfig& sec, Mode mode);

Decision check_access(const PmpState& state, const AccessQuery& q);

// True if any byte of the interval is accessible with the given access and mode.
bool any_allowed(const PmpState& state, Interval range, Access access, Mode mode);

// Register writes performed by M-mode. All follow WARL rules:
//  * reserved cfg bits 5-6 read as zero;
//  * with MML clear, the reserved R=0/W=1 combination is normalized to R=W=0;
//  * with MML clear and RLB clear, locked entries ignore writes, and the
//    address register below a locked TOR entry ignores writes;
//  * MML and MMWP are sticky; RLB cannot be set while any entry is locked.
PmpState write_cfg_register(const PmpState& state, CfgRegister which, uint64_t value);
PmpState write_address_register(const PmpState& state, unsigned index, uint64_t value);
PmpState write_security_config(const PmpState& state, uint64_t value);

// Helpers for building address register values.
uint64_t napot_address(uint64_t base, uint64_t size);
uint64_t tor_address(uint64_t top);
bool napot_encodable(uint64_t base, uint64_t size);

std::string to_string(Access);
std::string to_string(Mode);

}  // namespace mpart::pmp
