#include "mpart/pmp.hpp"

#include <bit>
#include <vector>
#include <fmt/format.h>

namespace mpart::pmp {

namespace {

constexpr uint8_t kR = 0x01, kW = 0x02, kX = 0x04, kL = 0x80;

bool immutable(uint8_t cfg, const SecurityConfig& sec) {
  return (cfg & kL) && !sec.machine_mode_lockdown && !sec.rule_lock_bypass;
}

const char* access_name(Access a) {
  return a == Access::Read ? "read" : a == Access::Write ? "write" : "execute";
}

}  // namespace

EntryConfig EntryConfig::from_byte(uint8_t b) {
  return EntryConfig{static_cast<bool>(b & kR), static_cast<bool>(b & kW), static_cast<bool>(b & kX),
                     static_cast<AddressMode>((b >> 3) & 3), static_cast<bool>(b & kL)};
}

uint8_t EntryConfig::to_byte() const {
  return static_cast<uint8_t>((read ? kR : 0) | (write ? kW : 0) | (execute ? kX : 0) |
                              (static_cast<uint8_t>(address_mode) << 3) | (locked ? kL : 0));
}

uint64_t SecurityConfig::to_bits() const {
  return (machine_mode_lockdown ? 1u : 0u) | (machine_mode_whitelist ? 2u : 0u) | (rule_lock_bypass ? 4u : 0u);
}

SecurityConfig SecurityConfig::from_bits(uint64_t v) {
  return SecurityConfig{static_cast<bool>(v & 1), static_cast<bool>(v & 2), static_cast<bool>(v & 4)};
}

uint8_t PmpState::cfg_byte(unsigned index) const {
  const uint64_t reg = index < 8 ? cfg_low : cfg_high;
  return static_cast<uint8_t>(reg >> (8 * (index % 8)));
}

EntryConfig PmpState::entry(unsigned index) const { return EntryConfig::from_byte(cfg_byte(index)); }

uint64_t PmpState::hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ull;
    }
  };
  for (uint64_t a : address) mix(a);
  mix(cfg_low);
  mix(cfg_high);
  mix(security.to_bits());
  return h;
}

std::optional<Interval> entry_range(const PmpState& state, unsigned index) {
  const uint64_t a = state.address[index] & kAddrMask;
  switch (state.entry(index).address_mode) {
    case AddressMode::Off: return std::nullopt;
    case AddressMode::TopOfRange: {
      const uint64_t bottom = index == 0 ? 0 : (state.address[index - 1] & kAddrMask) << 2;
      return Interval{bottom, a << 2};
    }
    case AddressMode::NaturallyAligned4: return Interval{a << 2, (a << 2) + 4};
    case AddressMode::NaturallyAlignedPowerOf2: {
      const unsigned ones = static_cast<unsigned>(std::countr_one(a));
      if (ones >= 54) return Interval{0, uint64_t{1} << 56};
      const uint64_t base = (a & ~((uint64_t{1} << (ones + 1)) - 1)) << 2;
      return Interval{base, base + (uint64_t{8} << ones)};
    }
  }
  return std::nullopt;
}

Grant entry_grant(const EntryConfig& c, const SecurityConfig& sec, Mode mode) {
  const bool m = mode == Mode::Machine;
  if (!sec.machine_mode_lockdown) {
    if (m && !c.locked) return Grant{true, true, true};
    return Grant{c.read, c.write, c.execute};
  }
  // Smepmp truth table with mseccfg.MML set.
  const unsigned rwx = (c.read ? 4u : 0u) | (c.write ? 2u : 0u) | (c.execute ? 1u : 0u);
  if (!c.locked) {
    switch (rwx) {
      case 0b010: return m ? Grant{true, true, false} : Grant{true, false, false};
      case 0b011: return Grant{true, true, false};
      default: return m ? Grant{} : Grant{c.read, c.write, c.execute};
    }
  }
  switch (rwx) {
    case 0b010: return Grant{false, false, true};
    case 0b011: return m ? Grant{true, false, true} : Grant{false, false, true};
    case 0b111: return Grant{true, false, false};
    default: return m ? Grant{c.read, c.write, c.execute} : Grant{};
  }
}

Grant default_grant(const SecurityConfig& sec, Mode mode) {
  if (mode == Mode::SupervisorUser) return Grant{};
  if (sec.machine_mode_whitelist) return Grant{};
  if (sec.machine_mode_lockdown) return Grant{true, true, false};
  return Grant{true, true, true};
}

Decision check_access(const PmpState& state, const AccessQuery& q) {
  std::array<std::optional<Interval>, kEntries> ranges;
  for (unsigned i = 0; i < kEntries; ++i) ranges[i] = entry_range(state, i);

  Decision d;
  d.allowed = true;
  for (uint64_t byte = q.address; byte < q.address + q.size; ++byte) {
    std::optional<unsigned> match;
    for (unsigned i = 0; i < kEntries; ++i) {
      if (ranges[i] && ranges[i]->contains(byte)) {
        match = i;
        break;
      }
    }
    const Grant g = match ? entry_grant(state.entry(*match), state.security, q.mode)
                          : default_grant(state.security, q.mode);
    d.matched_entry = match;
    if (!g.allows(q.access)) {
      d.allowed = false;
      d.reason = match ? fmt::format("{} {} denied by entry {} at {:#x}", to_string(q.mode),
                                     access_name(q.access), *match, byte)
                       : fmt::format("{} {} at {:#x} matches no entry", to_string(q.mode),
                                     access_name(q.access), byte);
      return d;
    }
  }
  return d;
}

bool any_allowed(const PmpState& state, Interval range, Access access, Mode mode) {
  if (range.empty()) return false;
  // The decision is constant between entry boundaries, so probing the start
  // of each sub-interval is exact.
  std::vector<uint64_t> probes{range.begin};
  for (unsigned i = 0; i < kEntries; ++i) {
    if (auto r = entry_range(state, i)) {
      for (uint64_t p : {r->begin, r->end})
        if (range.contains(p)) probes.push_back(p);
    }
  }
  for (uint64_t p : probes) {
    if (check_access(state, AccessQuery{p, 1, access, mode}).allowed) return true;
  }
  return false;
}

PmpState write_cfg_register(const PmpState& state, CfgRegister which, uint64_t value) {
  PmpState next = state;
  const unsigned first = which == CfgRegister::Low ? 0 : 8;
  uint64_t result = 0;
  for (unsigned i = 0; i < 8; ++i) {
    const uint8_t old = state.cfg_byte(first + i);
    uint8_t b = static_cast<uint8_t>(value >> (8 * i)) & 0x9F;
    if (!state.security.machine_mode_lockdown && (b & (kR | kW)) == kW) b &= static_cast<uint8_t>(~kW);
    if (immutable(old, state.security)) b = old;
    result |= uint64_t{b} << (8 * i);
  }
  (which == CfgRegister::Low ? next.cfg_low : next.cfg_high) = result;
  return next;
}

PmpState write_address_register(const PmpState& state, unsigned index, uint64_t value) {
  if (index >= kEntries) return state;
  if (immutable(state.cfg_byte(index), state.security)) return state;
  if (index + 1 < kEntries && immutable(state.cfg_byte(index + 1), state.security) &&
      state.entry(index + 1).address_mode == AddressMode::TopOfRange)
    return state;
  PmpState next = state;
  next.address[index] = value & kAddrMask;
  return next;
}

PmpState write_security_config(const PmpState& state, uint64_t value) {
  PmpState next = state;
  const SecurityConfig req = SecurityConfig::from_bits(value);
  next.security.machine_mode_lockdown = state.security.machine_mode_lockdown || req.machine_mode_lockdown;
  next.security.machine_mode_whitelist = state.security.machine_mode_whitelist || req.machine_mode_whitelist;
  bool any_locked = false;
  for (unsigned i = 0; i < kEntries; ++i) any_locked |= state.entry(i).locked;
  next.security.rule_lock_bypass =
      (any_locked && !state.security.rule_lock_bypass) ? state.security.rule_lock_bypass : req.rule_lock_bypass;
  return next;
}

bool napot_encodable(uint64_t base, uint64_t size) {
  return size >= 8 && std::has_single_bit(size) && base % size == 0;
}

uint64_t napot_address(uint64_t base, uint64_t size) { return (base >> 2) | ((size >> 3) - 1); }

uint64_t tor_address(uint64_t top) { return top >> 2; }

std::string to_string(Access a) { return access_name(a); }

std::string to_string(Mode m) { return m == Mode::Machine ? "M" : "SU"; }

}  // namespace mpart::pmp
