// Independent reference models used by the unit and acceptance tests.
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <random>
#include <vector>

#include "mpart/pmp.hpp"

namespace oracle {

using mpart::pmp::Access;
using mpart::pmp::AccessQuery;
using mpart::pmp::Mode;
using mpart::pmp::PmpState;

inline constexpr uint64_t kSpace = 0x10000;  // 64 KiB toy address space

// Permission strings per (L, R, W, X) transcribed from the Smepmp v1.0
// table for mseccfg.MML = 1. Each entry is {machine, supervisor/user}.
struct Perm {
  const char* m;
  const char* su;
};
inline constexpr Perm kLockdownTable[2][8] = {
    // L = 0, index = R<<2 | W<<1 | X
    {{"", ""}, {"", "x"}, {"rw", "r"}, {"rw", "rw"}, {"", "r"}, {"", "rx"}, {"", "rw"}, {"", "rwx"}},
    // L = 1
    {{"", ""}, {"x", ""}, {"x", "x"}, {"rx", "x"}, {"r", ""}, {"rx", ""}, {"rw", ""}, {"r", "r"}},
};

inline bool has(const char* perms, Access a) {
  const char c = a == Access::Read ? 'r' : a == Access::Write ? 'w' : 'x';
  return std::strchr(perms, c) != nullptr;
}

// NAPOT decode by scanning bits one at a time.
inline std::pair<uint64_t, uint64_t> napot_bits(uint64_t reg) {
  unsigned t = 0;
  while (t < 54 && ((reg >> t) & 1)) ++t;
  if (t == 54) return {0, uint64_t{1} << 56};  // whole 56-bit physical space
  uint64_t base = reg;
  for (unsigned i = 0; i <= t && i < 64; ++i) base &= ~(uint64_t{1} << i);
  return {base * 4, uint64_t{8} << t};
}

// Expands every entry into an explicit owner map over the toy space. A byte's
// owner is the lowest-index entry covering it, or -1.
inline std::vector<int8_t> byte_map(const PmpState& s) {
  std::vector<int8_t> owner(kSpace, -1);
  for (int i = 15; i >= 0; --i) {
    const uint8_t cfg = s.cfg_byte(static_cast<unsigned>(i));
    const unsigned a = (cfg >> 3) & 3;
    const uint64_t reg = s.address[static_cast<unsigned>(i)] & mpart::pmp::kAddrMask;
    uint64_t lo = 0, hi = 0;
    if (a == 0) continue;
    if (a == 1) {
      lo = i == 0 ? 0 : (s.address[static_cast<unsigned>(i) - 1] & mpart::pmp::kAddrMask) * 4;
      hi = reg * 4;
    } else if (a == 2) {
      lo = reg * 4;
      hi = lo + 4;
    } else {
      auto [b, sz] = napot_bits(reg);
      lo = b;
      hi = b + sz;
    }
    for (uint64_t x = lo; x < hi && x < kSpace; ++x) owner[x] = static_cast<int8_t>(i);
  }
  return owner;
}

inline bool byte_allowed(const PmpState& s, int owner, Access a, Mode m) {
  const bool machine = m == Mode::Machine;
  const auto& sec = s.security;
  if (owner < 0) {
    if (!machine) return false;
    if (sec.machine_mode_whitelist) return false;
    return sec.machine_mode_lockdown ? a != Access::Execute : true;
  }
  const uint8_t cfg = s.cfg_byte(static_cast<unsigned>(owner));
  const bool l = cfg & 0x80;
  const unsigned rwx = ((cfg & 1) << 2) | (cfg & 2) | ((cfg >> 2) & 1);
  if (sec.machine_mode_lockdown) {
    const Perm p = kLockdownTable[l][rwx];
    return has(machine ? p.m : p.su, a);
  }
  if (machine && !l) return true;
  return a == Access::Read ? (cfg & 1) : a == Access::Write ? (cfg & 2) : (cfg & 4);
}

inline bool check(const PmpState& s, const std::vector<int8_t>& map, const AccessQuery& q) {
  for (uint64_t x = q.address; x < q.address + q.size; ++x)
    if (!byte_allowed(s, map[x], q.access, q.mode)) return false;
  return true;
}

// Random state with at most four active entries inside the toy space.
inline PmpState random_state(std::mt19937_64& rng) {
  PmpState s;
  const unsigned active = 1 + rng() % 4;
  std::array<uint8_t, 16> cfg{};
  for (unsigned n = 0; n < active; ++n) {
    const unsigned idx = rng() % 16;
    const unsigned mode = 1 + rng() % 3;
    uint8_t b = static_cast<uint8_t>((rng() & 0x7) | (mode << 3) | ((rng() & 1) ? 0x80 : 0));
    cfg[idx] = b;
    if (mode == 3) {
      const unsigned t = rng() % 13;  // size 8 .. 32 KiB
      const uint64_t size = uint64_t{8} << t;
      const uint64_t base = (rng() % (kSpace / size)) * size;
      s.address[idx] = mpart::pmp::napot_address(base, size);
    } else {
      s.address[idx] = (rng() % kSpace) / 4;
    }
    if (mode == 1 && idx > 0 && (rng() & 1)) s.address[idx - 1] = (rng() % kSpace) / 4;
  }
  for (unsigned i = 0; i < 8; ++i) {
    s.cfg_low |= uint64_t{cfg[i]} << (8 * i);
    s.cfg_high |= uint64_t{cfg[i + 8]} << (8 * i);
  }
  s.security = mpart::pmp::SecurityConfig::from_bits(rng() & 7);
  return s;
}

inline AccessQuery random_query(std::mt19937_64& rng) {
  AccessQuery q;
  q.size = 1u << (rng() % 4);
  q.address = rng() % (kSpace - q.size + 1);
  q.access = static_cast<Access>(rng() % 3);
  q.mode = (rng() & 1) ? Mode::Machine : Mode::SupervisorUser;
  return q;
}

}  // namespace oracle
