#include <random>

#include "doctest.h"
#include "oracles.hpp"

using namespace mpart::pmp;

namespace {

PmpState with_entry(PmpState s, unsigned i, uint8_t cfg, uint64_t addr) {
  s.address[i] = addr;
  uint64_t& reg = i < 8 ? s.cfg_low : s.cfg_high;
  const unsigned sh = 8 * (i % 8);
  reg = (reg & ~(uint64_t{0xFF} << sh)) | (uint64_t{cfg} << sh);
  return s;
}

constexpr uint8_t kNapot = 0x18, kTor = 0x08, kNa4 = 0x10, kLock = 0x80;
constexpr uint8_t R = 1, W = 2, X = 4;

bool allowed(const PmpState& s, uint64_t a, Access acc, Mode m, unsigned size = 1) {
  return check_access(s, AccessQuery{a, size, acc, m}).allowed;
}

}  // namespace

TEST_CASE("entry_range address modes") {
  PmpState s = with_entry({}, 0, kTor, 0x20000);
  CHECK(*entry_range(s, 0) == Interval{0, 0x80000});
  CHECK_FALSE(entry_range(PmpState{}, 3).has_value());

  s = with_entry({}, 2, kNa4, 0x100);
  CHECK(*entry_range(s, 2) == Interval{0x400, 0x404});

  // 0b...0111 encodes a 64-byte granule-aligned region.
  s = with_entry({}, 1, kNapot, (0x2000 >> 2) | 0b0111);
  CHECK(*entry_range(s, 1) == Interval{0x2000, 0x2040});
  for (uint64_t reg : std::initializer_list<uint64_t>{0x0, 0x5, 0x7FF, 0x12345, (uint64_t{1} << 53) - 1, kAddrMask}) {
    s = with_entry({}, 0, kNapot, reg);
    auto [b, sz] = oracle::napot_bits(reg);
    CHECK(entry_range(s, 0)->begin == b);
    CHECK(entry_range(s, 0)->end - entry_range(s, 0)->begin == sz);
  }
  CHECK(napot_encodable(0x4000, 0x100));
  CHECK_FALSE(napot_encodable(0x4080, 0x100));
  CHECK_FALSE(napot_encodable(0, 0x300));
}

TEST_CASE("legacy defaults") {
  PmpState s;
  CHECK(allowed(s, 0x1234, Access::Execute, Mode::Machine));
  CHECK_FALSE(allowed(s, 0x1234, Access::Read, Mode::SupervisorUser));
}

TEST_CASE("lockdown operating point") {
  PmpState s;
  s = with_entry(s, 0, kNapot | kLock | R | X, napot_address(0x0, 0x1000));
  s = with_entry(s, 1, kNapot | R | W, napot_address(0x1000, 0x1000));
  s.security = SecurityConfig{true, true, false};
  CHECK(allowed(s, 0x10, Access::Execute, Mode::Machine));
  CHECK_FALSE(allowed(s, 0x10, Access::Write, Mode::Machine));
  CHECK_FALSE(allowed(s, 0x10, Access::Read, Mode::SupervisorUser));
  CHECK(allowed(s, 0x1010, Access::Write, Mode::SupervisorUser));
  CHECK_FALSE(allowed(s, 0x1010, Access::Read, Mode::Machine));
  CHECK_FALSE(allowed(s, 0x8000, Access::Read, Mode::Machine));  // MMWP
  // Straddling access is the conjunction over bytes.
  CHECK_FALSE(allowed(s, 0xFFC, Access::Read, Mode::Machine, 8));
  const Decision d = check_access(s, AccessQuery{0x1010, 4, Access::Read, Mode::Machine});
  CHECK_FALSE(d.allowed);
  CHECK(d.matched_entry == 1u);
  CHECK_FALSE(d.reason.empty());
}

TEST_CASE("clearing cfg_low leaves only high entries matching") {
  PmpState s;
  s = with_entry(s, 0, kNapot | kLock | R | X, napot_address(0x2000, 0x2000));
  s = with_entry(s, 3, kNapot | kLock, napot_address(0x0, 0x8000));
  s = with_entry(s, 8, kNapot | kLock | R | X, napot_address(0x4000, 0x100));
  s.security = SecurityConfig{true, true, false};
  CHECK(allowed(s, 0x2000, Access::Execute, Mode::Machine));
  CHECK_FALSE(allowed(s, 0x4000, Access::Execute, Mode::Machine));
  s = write_cfg_register(s, CfgRegister::Low, 0);
  CHECK_FALSE(allowed(s, 0x2000, Access::Execute, Mode::Machine));
  CHECK(allowed(s, 0x4000, Access::Execute, Mode::Machine));
}

TEST_CASE("WARL and lock semantics") {
  PmpState s;
  s = write_cfg_register(s, CfgRegister::Low, 0x60 | kNapot | W);
  CHECK(s.cfg_byte(0) == kNapot);  // bits 5-6 dropped, W-only normalized
  const PmpState again = write_cfg_register(s, CfgRegister::Low, s.cfg_low);
  CHECK(again == s);

  s = write_cfg_register(PmpState{}, CfgRegister::Low, kLock | kTor | R);
  s = write_address_register(s, 0, 0x100);  // locked: ignored
  CHECK(s.address[0] == 0);
  const PmpState before = s;
  s = write_cfg_register(s, CfgRegister::Low, 0);
  CHECK(s == before);
  // The register below a locked TOR entry is also frozen.
  s = write_cfg_register(PmpState{}, CfgRegister::Low, uint64_t{kLock | kTor | R} << 8);
  CHECK(write_address_register(s, 0, 0x40).address[0] == 0);

  // RLB cannot be set while an entry is locked; MML/MMWP are sticky.
  s = write_security_config(s, 4);
  CHECK_FALSE(s.security.rule_lock_bypass);
  s = write_security_config(PmpState{}, 7);
  CHECK(s.security.rule_lock_bypass);
  s = write_security_config(s, 0);
  CHECK(s.security.machine_mode_lockdown);
  CHECK(s.security.machine_mode_whitelist);
  CHECK_FALSE(s.security.rule_lock_bypass);

  // Under lockdown the lock bit selects M-mode rules and does not freeze the entry.
  s.security = SecurityConfig{true, true, false};
  s = write_cfg_register(s, CfgRegister::Low, kLock | kNapot | R | X);
  s = write_cfg_register(s, CfgRegister::Low, 0);
  CHECK(s.cfg_low == 0);
}

TEST_CASE("property: oracle equivalence on random states") {
  std::mt19937_64 rng(0xC0FFEE);
  int queries = 0;
  for (int n = 0; n < 400; ++n) {
    const PmpState s = oracle::random_state(rng);
    const auto map = oracle::byte_map(s);
    for (int k = 0; k < 50; ++k, ++queries) {
      const AccessQuery q = oracle::random_query(rng);
      if (check_access(s, q).allowed != oracle::check(s, map, q))
        FAIL("disagreement at " << q.address << " size " << q.size);
    }
  }
  CHECK(queries == 20000);
}

TEST_CASE("property: lowest matching entry decides") {
  std::mt19937_64 rng(11);
  for (int n = 0; n < 2000; ++n) {
    const unsigned i = rng() % 15, j = i + 1 + rng() % (15 - i);
    const uint8_t ci = static_cast<uint8_t>(kNapot | (rng() & 0x87));
    const uint8_t cj = static_cast<uint8_t>(kNapot | (rng() & 0x87));
    PmpState both = with_entry(with_entry({}, i, ci, napot_address(0x1000, 0x1000)), j, cj,
                               napot_address(0x0, 0x4000));
    both.security = SecurityConfig::from_bits(rng() & 3);
    PmpState only = with_entry({}, i, ci, napot_address(0x1000, 0x1000));
    only.security = both.security;
    const AccessQuery q{0x1000 + rng() % 0x1000, 1, static_cast<Access>(rng() % 3),
                        (rng() & 1) ? Mode::Machine : Mode::SupervisorUser};
    CHECK(check_access(both, q).allowed == check_access(only, q).allowed);
  }
}

TEST_CASE("property: clearing cfg_low never grants machine access under lockdown") {
  std::mt19937_64 rng(12);
  for (int n = 0; n < 2000; ++n) {
    PmpState s = oracle::random_state(rng);
    s.cfg_high = 0;
    s.security.machine_mode_lockdown = true;
    AccessQuery q = oracle::random_query(rng);
    q.mode = Mode::Machine;
    bool covered = true;
    for (uint64_t b = q.address; b < q.address + q.size; ++b) {
      bool hit = false;
      for (unsigned e = 0; e < 8; ++e)
        if (auto r = entry_range(s, e); r && r->contains(b)) hit = true;
      covered &= hit;
    }
    if (!covered || check_access(s, q).allowed) continue;
    const PmpState cleared = write_cfg_register(s, CfgRegister::Low, 0);
    if (!s.security.machine_mode_whitelist && q.access != Access::Execute) continue;  // default R/W
    CHECK_FALSE(check_access(cleared, q).allowed);
  }
}

TEST_CASE("property: mode exclusivity under lockdown for all cfg bytes") {
  const SecurityConfig sec{true, true, false};
  for (unsigned b = 0; b < 256; ++b) {
    const EntryConfig c = EntryConfig::from_byte(static_cast<uint8_t>(b));
    const unsigned rwx = (c.read ? 4 : 0) | (c.write ? 2 : 0) | (c.execute ? 1 : 0);
    const bool shared = (!c.locked && (rwx == 2 || rwx == 3)) || (c.locked && (rwx == 2 || rwx == 3 || rwx == 7));
    const Grant gm = entry_grant(c, sec, Mode::Machine);
    const Grant gs = entry_grant(c, sec, Mode::SupervisorUser);
    bool overlap = false;
    for (Access a : {Access::Read, Access::Write, Access::Execute}) overlap |= gm.allows(a) && gs.allows(a);
    CHECK(overlap == shared);
  }
}

TEST_CASE("any_allowed finds isolated allowed bytes") {
  PmpState s;
  s = with_entry(s, 0, kNa4 | R, 0x1000 >> 2);
  s = with_entry(s, 1, kNapot, napot_address(0x0, 0x8000));
  s.security = SecurityConfig{true, true, false};
  CHECK(any_allowed(s, Interval{0x0, 0x8000}, Access::Read, Mode::SupervisorUser));
  CHECK_FALSE(any_allowed(s, Interval{0x0, 0x1000}, Access::Read, Mode::SupervisorUser));
  CHECK_FALSE(any_allowed(s, Interval{0x1004, 0x8000}, Access::Read, Mode::SupervisorUser));
  CHECK_FALSE(any_allowed(s, Interval{0x0, 0x8000}, Access::Write, Mode::SupervisorUser));
}

TEST_CASE("state hash distinguishes configurations") {
  PmpState a, b;
  b.cfg_high = 1;
  CHECK(a.hash() != b.hash());
  CHECK(a.hash() == PmpState{}.hash());
}
