#include <algorithm>
#include <span>
#include <stdexcept>

#include <fmt/format.h>

#include "mpart/layout.hpp"

namespace mpart::monitor {

namespace {

constexpr uint8_t kLock = 0x80;
constexpr uint8_t kNapot = 0x18;
constexpr uint8_t kR = 0x1, kW = 0x2, kX = 0x4;

constexpr uint8_t kDeny = kLock | kNapot;
constexpr uint8_t kMonitorRx = kLock | kNapot | kR | kX;
constexpr uint8_t kMonitorRw = kLock | kNapot | kR | kW;
constexpr uint8_t kSuRwx = kNapot | kR | kW | kX;
constexpr uint8_t kSuRw = kNapot | kR | kW;
constexpr uint8_t kSuNone = kNapot;

constexpr std::array<unsigned, 10> kEnclaveSlots = {5, 6, 7, 9, 10, 11, 12, 13, 14, 15};
constexpr std::array<unsigned, 9> kEnclaveSlotsMulti = {6, 7, 9, 10, 11, 12, 13, 14, 15};

// Packed low/high configuration registers.
struct PmpCfgs {
  uint64_t low = 0;
  uint64_t high = 0;
};

void set_byte(PmpCfgs& cfgs, unsigned index, uint8_t value) {
  uint64_t& reg = index < 8 ? cfgs.low : cfgs.high;
  const unsigned shift = (index % 8) * 8;
  reg = (reg & ~(uint64_t{0xFF} << shift)) | (uint64_t{value} << shift);
}

Region make_region(std::string name, RegionSpec spec, std::string perms) {
  return Region{std::move(name), spec.base, spec.size, std::move(perms)};
}

void require_napot(const Region& r) {
  if (r.size == 0 || r.size % 4 != 0)
    throw LayoutError(LayoutErrorKind::Misaligned, fmt::format("{} size {:#x} is not a multiple of the 4-byte granule", r.name, r.size));
  if (!pmp::napot_encodable(r.base, r.size))
    throw LayoutError(LayoutErrorKind::Misaligned,
                      fmt::format("{} [{:#x}, +{:#x}) is not a naturally aligned power-of-two region", r.name, r.base, r.size));
}

bool overlaps(const Region& a, const Region& b) { return a.base < b.end() && b.base < a.end(); }

void require_disjoint(const std::vector<Region>& regions) {
  for (std::size_t i = 0; i < regions.size(); ++i)
    for (std::size_t k = i + 1; k < regions.size(); ++k)
      if (overlaps(regions[i], regions[k]))
        throw LayoutError(LayoutErrorKind::Overlap, fmt::format("{} overlaps {}", regions[i].name, regions[k].name));
}

void require_in_memory(const Region& r, uint64_t mem_base, uint64_t mem_size) {
  if (r.base < mem_base || r.end() > mem_base + mem_size || r.end() < r.base)
    throw LayoutError(LayoutErrorKind::OutOfMemory, fmt::format("{} lies outside the {:#x}-byte memory", r.name, mem_size));
}

// Smallest naturally aligned power-of-two block covering [begin, end).
Region covering_napot(std::string name, uint64_t begin, uint64_t end) {
  uint64_t size = 8;
  while (size != 0) {
    const uint64_t base = begin & ~(size - 1);
    if (base + size >= end) return Region{std::move(name), base, size, ""};
    size <<= 1;
  }
  throw LayoutError(LayoutErrorKind::Placement, "no NAPOT block covers " + name);
}

std::vector<EnclaveRegions> make_enclaves(const LayoutConfig& c) {
  std::vector<EnclaveRegions> out;
  for (unsigned i = 0; i < c.enclave_count; ++i) {
    const uint64_t base = c.enclave_base + i * c.enclave_stride;
    EnclaveRegions e;
    e.private_region = Region{fmt::format("enclave{}.private", i), base, c.enclave_private_size, "rwx"};
    e.shared_region = Region{fmt::format("enclave{}.shared", i), base + c.enclave_private_size, c.enclave_shared_size, "rw-"};
    out.push_back(e);
  }
  return out;
}

std::span<const unsigned> enclave_slot_table(bool multi) {
  if (multi) return kEnclaveSlotsMulti;
  return kEnclaveSlots;
}

void require_entry_budget(unsigned enclaves, bool multi, unsigned platform_entries, unsigned required) {
  if (enclaves * 2 > enclave_slot_table(multi).size())
    throw LayoutError(LayoutErrorKind::EntryBudget, fmt::format("{} enclaves need more than the 16 architectural entries", enclaves));
  if (required > platform_entries)
    throw LayoutError(LayoutErrorKind::EntryBudget,
                      fmt::format("layout needs {} PMP entries, platform provides {}", required, platform_entries));
}

uint8_t os_byte(SuView su) { return su.enclave ? kSuNone : kSuRwx; }
uint8_t private_byte(SuView su, unsigned i) { return su.enclave == i ? kSuRwx : kSuNone; }
uint8_t shared_byte(SuView su, unsigned i) { return (!su.enclave || *su.enclave == i) ? kSuRw : kSuNone; }

void set_su_slots(PmpCfgs& cfgs, const std::vector<EnclaveRegions>& enclaves, SuView su, bool multi) {
  set_byte(cfgs, entry::kOs, os_byte(su));
  for (unsigned i = 0; i < enclaves.size(); ++i) {
    const auto [p, s] = enclave_entries(i, multi);
    set_byte(cfgs, p, private_byte(su, i));
    set_byte(cfgs, s, shared_byte(su, i));
  }
}

void set_enclave_addresses(std::array<uint64_t, pmp::kEntries>& a, const std::vector<EnclaveRegions>& enclaves, bool multi) {
  for (unsigned i = 0; i < enclaves.size(); ++i) {
    const auto [p, s] = enclave_entries(i, multi);
    a[p] = pmp::napot_address(enclaves[i].private_region.base, enclaves[i].private_region.size);
    a[s] = pmp::napot_address(enclaves[i].shared_region.base, enclaves[i].shared_region.size);
  }
}

PmpCfgs monitor_cfgs(const CompartmentLayout& l, SuView su) {
  PmpCfgs c;
  set_byte(c, entry::kFirmwareCode, kDeny);
  set_byte(c, entry::kFirmwareData, kDeny);
  set_byte(c, entry::kMonitorData, kMonitorRw);
  set_byte(c, entry::kMonitorSpan, kMonitorRx);
  set_byte(c, entry::kSallyPort, kMonitorRx);
  set_su_slots(c, l.enclaves, su, l.f_count > 1);
  return c;
}

SuView su_of(ViewLabel v) {
  if (v.kind == ViewKind::EnclaveView) return SuView{v.enclave};
  return SuView{};
}

void require_su_label(const CompartmentLayout& l, ViewLabel v) {
  if (v.kind != ViewKind::OsView && v.kind != ViewKind::EnclaveView)
    throw std::invalid_argument("enclave_switch: " + v.name() + " is not a supervisor/user view");
  if (v.kind == ViewKind::EnclaveView && v.enclave >= l.enclaves.size())
    throw std::out_of_range(fmt::format("enclave_switch: unknown enclave {}", v.enclave));
}

pmp::Grant grant_from_perms(const std::string& perms) {
  return pmp::Grant{perms.find('r') != std::string::npos, perms.find('w') != std::string::npos,
                    perms.find('x') != std::string::npos};
}

}  // namespace

std::string to_string(LayoutErrorKind k) {
  switch (k) {
    case LayoutErrorKind::Overlap: return "Overlap";
    case LayoutErrorKind::Misaligned: return "Misaligned";
    case LayoutErrorKind::EntryBudget: return "EntryBudget";
    case LayoutErrorKind::Placement: return "Placement";
    case LayoutErrorKind::OutOfMemory: return "OutOfMemory";
  }
  return "?";
}

std::pair<unsigned, unsigned> enclave_entries(unsigned enclave, bool multi_firmware) {
  const auto slots = enclave_slot_table(multi_firmware);
  if (2 * enclave + 2 > slots.size()) throw std::out_of_range(fmt::format("no PMP entries for enclave {}", enclave));
  return {slots[2 * enclave], slots[2 * enclave + 1]};
}

std::vector<Region> CompartmentLayout::regions() const {
  std::vector<Region> out = {p_code, p_data, f_code, f_data, sallyport, os};
  for (const auto& e : enclaves) {
    out.push_back(e.private_region);
    out.push_back(e.shared_region);
  }
  return out;
}

unsigned CompartmentLayout::runtime_entries() const {
  return (f_count > 1 ? 7 : 6) + 2 * static_cast<unsigned>(enclaves.size());
}

unsigned CompartmentLayout::required_platform_entries() const {
  unsigned highest = entry::kSallyPort;
  for (const auto& [name, index] : pmp_assignment) highest = std::max(highest, index);
  return highest + 1;
}

CompartmentLayout build_layout(const LayoutConfig& c) {
  CompartmentLayout l;
  l.memory_base = c.memory_base;
  l.memory_size = c.memory_size;
  l.platform_entries = c.platform_entries;
  l.p_code = make_region("p_code", c.p_code, "r-x");
  l.f_code = make_region("f_code", c.f_code, "r-x");
  l.sallyport = make_region("sallyport", c.sallyport, "r-x");
  l.p_data = make_region("p_data", c.p_data, "rw-");
  l.f_data = make_region("f_data", c.f_data, "rw-");
  l.os = make_region("os", c.os, "rwx");
  l.enclaves = make_enclaves(c);

  if (l.p_code.size == 0 || l.p_code.size % 4 != 0)
    throw LayoutError(LayoutErrorKind::Misaligned, "p_code size is not a multiple of the 4-byte granule");
  for (const Region& r : {l.f_code, l.sallyport, l.p_data, l.f_data, l.os}) require_napot(r);
  for (const auto& e : l.enclaves) {
    require_napot(e.private_region);
    require_napot(e.shared_region);
  }
  const auto all = l.regions();
  require_disjoint(all);
  for (const auto& r : all) require_in_memory(r, c.memory_base, c.memory_size);

  if (l.p_code.end() != l.f_code.base)
    throw LayoutError(LayoutErrorKind::Placement, "p_code must end where f_code begins");
  if (l.sallyport.base != l.f_code.end())
    throw LayoutError(LayoutErrorKind::Placement, "sallyport must begin where f_code ends");

  l.p_span = covering_napot("p_span", l.p_code.base, l.sallyport.end());
  for (const auto& r : all) {
    if (r.name == "p_code" || r.name == "f_code" || r.name == "sallyport") continue;
    if (overlaps(l.p_span, r))
      throw LayoutError(LayoutErrorKind::Placement,
                        fmt::format("monitor span [{:#x}, +{:#x}) would cover {}", l.p_span.base, l.p_span.size, r.name));
  }

  l.spentry_offset = l.f_code.size - 4;
  l.f_count = 1;
  l.pmp_assignment = {{"f_code", entry::kFirmwareCode}, {"f_data", entry::kFirmwareData},
                      {"p_data", entry::kMonitorData},  {"p_span", entry::kMonitorSpan},
                      {"os", entry::kOs},               {"sallyport", entry::kSallyPort}};
  const unsigned n = static_cast<unsigned>(l.enclaves.size());
  if (2 * n > kEnclaveSlots.size()) require_entry_budget(n, false, c.platform_entries, 17);
  for (unsigned i = 0; i < n; ++i) {
    const auto [p, s] = enclave_entries(i);
    l.pmp_assignment[l.enclaves[i].private_region.name] = p;
    l.pmp_assignment[l.enclaves[i].shared_region.name] = s;
  }
  require_entry_budget(n, false, c.platform_entries, l.required_platform_entries());
  return l;
}

std::array<uint64_t, pmp::kEntries> address_registers(const CompartmentLayout& l) {
  std::array<uint64_t, pmp::kEntries> a{};
  a[entry::kFirmwareCode] = pmp::napot_address(l.f_code.base, l.f_code.size);
  a[entry::kFirmwareData] = pmp::napot_address(l.f_data.base, l.f_data.size);
  a[entry::kMonitorData] = pmp::napot_address(l.p_data.base, l.p_data.size);
  a[entry::kMonitorSpan] = pmp::napot_address(l.p_span.base, l.p_span.size);
  a[entry::kOs] = pmp::napot_address(l.os.base, l.os.size);
  a[entry::kSallyPort] = pmp::napot_address(l.sallyport.base, l.sallyport.size);
  set_enclave_addresses(a, l.enclaves, l.f_count > 1);
  return a;
}

uint64_t cfg_low_monitor(const CompartmentLayout& l, SuView su) { return monitor_cfgs(l, su).low; }

uint64_t cfg_low_firmware(const CompartmentLayout& /*l*/) {
  PmpCfgs c;
  set_byte(c, entry::kFirmwareCode, kMonitorRx);
  set_byte(c, entry::kFirmwareData, kMonitorRw);
  set_byte(c, entry::kMonitorData, kDeny);
  set_byte(c, entry::kMonitorSpan, kDeny);
  return c.low;
}

uint64_t cfg_high(const CompartmentLayout& l, SuView su) { return monitor_cfgs(l, su).high; }

std::string ViewLabel::name() const {
  switch (kind) {
    case ViewKind::PView: return "PView";
    case ViewKind::FView: return "FView";
    case ViewKind::OsView: return "OsView";
    case ViewKind::EnclaveView: return fmt::format("EnclaveView{{{}}}", enclave);
  }
  return "?";
}

pmp::Mode view_mode(ViewLabel v) {
  return v.kind == ViewKind::PView || v.kind == ViewKind::FView ? pmp::Mode::Machine : pmp::Mode::SupervisorUser;
}

pmp::PmpState view_state(const CompartmentLayout& l, ViewLabel v) {
  if (v.kind == ViewKind::EnclaveView && v.enclave >= l.enclaves.size())
    throw std::out_of_range(fmt::format("unknown enclave {}", v.enclave));
  pmp::PmpState s;
  s.address = address_registers(l);
  s.security = pmp::SecurityConfig::from_bits(kSecurityOperatingPoint);
  const SuView su = su_of(v);
  s.cfg_low = v.kind == ViewKind::FView ? cfg_low_firmware(l) : cfg_low_monitor(l, su);
  s.cfg_high = cfg_high(l, su);
  return s;
}

std::vector<MatrixCell> expected_matrix(const CompartmentLayout& l, ViewLabel v) {
  std::vector<MatrixCell> out;
  for (const auto& r : l.regions()) {
    std::string perms = "---";
    switch (v.kind) {
      case ViewKind::PView:
        if (r.name == "p_code" || r.name == "sallyport") perms = "r-x";
        if (r.name == "p_data") perms = "rw-";
        break;
      case ViewKind::FView:
        if (r.name == "f_code") perms = "r-x";
        if (r.name == "f_data") perms = "rw-";
        break;
      case ViewKind::OsView:
        if (r.name == "os") perms = "rwx";
        if (r.name.ends_with(".shared")) perms = "rw-";
        break;
      case ViewKind::EnclaveView:
        if (r.name == fmt::format("enclave{}.private", v.enclave)) perms = "rwx";
        if (r.name == fmt::format("enclave{}.shared", v.enclave)) perms = "rw-";
        break;
    }
    out.push_back({r.name, grant_from_perms(perms)});
  }
  return out;
}

std::vector<MatrixCell> observed_matrix(const CompartmentLayout& l, const pmp::PmpState& s, pmp::Mode mode) {
  std::vector<MatrixCell> out;
  for (const auto& r : l.regions()) {
    const uint64_t samples[] = {r.base, r.base + r.size / 2, r.end() - 1};
    auto all = [&](pmp::Access a) {
      for (uint64_t addr : samples)
        if (!pmp::check_access(s, {addr, 1, a, mode}).allowed) return false;
      return true;
    };
    out.push_back({r.name, pmp::Grant{all(pmp::Access::Read), all(pmp::Access::Write), all(pmp::Access::Execute)}});
  }
  return out;
}

pmp::PmpState enclave_switch(const CompartmentLayout& l, const pmp::PmpState& current, ViewLabel from, ViewLabel to) {
  require_su_label(l, from);
  require_su_label(l, to);
  PmpCfgs c{current.cfg_low, current.cfg_high};
  set_su_slots(c, l.enclaves, su_of(to), l.f_count > 1);
  pmp::PmpState next = current;
  next.cfg_low = c.low;
  next.cfg_high = c.high;
  return next;
}

// ---- multi-firmware ----

std::string to_string(MultiStage s) {
  switch (s) {
    case MultiStage::MonitorView: return "MonitorView";
    case MultiStage::MonitorEnter: return "MonitorEnter";
    case MultiStage::FirmwareView: return "FirmwareView";
    case MultiStage::Cleared: return "Cleared";
  }
  return "?";
}

unsigned MultiFirmwareLayout::runtime_entries() const {
  if (slots.size() <= 1) return base.runtime_entries();
  return 7 + 2 * static_cast<unsigned>(base.enclaves.size());
}

MultiFirmwareLayout build_multi_f_layout(const LayoutConfig& c, unsigned n) {
  if (n == 0) throw std::invalid_argument("build_multi_f_layout: need at least one firmware image");
  MultiFirmwareLayout m;
  if (n == 1) {
    m.base = build_layout(c);
    const auto& b = m.base;
    m.slots.push_back(FirmwareSlot{b.p_span, Region{"enter_stub", b.p_code.end() - 0x10, 0x10, "r-x"}, b.f_code,
                                   b.sallyport, b.f_data});
    m.pmp_assignment = b.pmp_assignment;
    return m;
  }

  CompartmentLayout& l = m.base;
  l.memory_base = c.memory_base;
  l.memory_size = c.memory_size;
  l.platform_entries = c.platform_entries;
  l.p_code = make_region("p_code", c.p_code, "r-x");
  l.p_data = make_region("p_data", c.p_data, "rw-");
  l.os = make_region("os", c.os, "rwx");
  l.enclaves = make_enclaves(c);
  l.f_count = n;

  const uint64_t bs = c.firmware_bracket_size;
  if (bs < 0x1000 || !pmp::napot_encodable(c.firmware_bracket_base, bs))
    throw LayoutError(LayoutErrorKind::Misaligned, "firmware bracket must be a naturally aligned power of two of at least 4 KiB");
  for (unsigned j = 0; j < n; ++j) {
    const uint64_t b = c.firmware_bracket_base + j * bs;
    FirmwareSlot s;
    s.bracket = Region{fmt::format("f{}.bracket", j), b, bs, ""};
    s.enter_stub = Region{fmt::format("f{}.enter_stub", j), b + bs / 4 - 0x100, 0x100, "r-x"};
    s.code = Region{fmt::format("f{}.code", j), b + bs / 4, bs / 4, "r-x"};
    s.exit_stub = Region{fmt::format("f{}.exit_stub", j), b + bs / 2, 0x100, "r-x"};
    s.data = Region{fmt::format("f{}.data", j), b + 3 * bs / 4, bs / 4, "rw-"};
    m.slots.push_back(s);
  }
  l.f_code = m.slots[0].code;
  l.f_data = m.slots[0].data;
  l.sallyport = m.slots[0].exit_stub;
  l.spentry_offset = l.f_code.size - 4;
  l.p_span = covering_napot("p_span", l.p_code.base, l.p_code.end());

  std::vector<Region> all = {l.p_code, l.p_data, l.os};
  for (const auto& e : l.enclaves) {
    all.push_back(e.private_region);
    all.push_back(e.shared_region);
  }
  for (const auto& s : m.slots) all.push_back(s.bracket);
  for (const Region& r : {l.p_data, l.os}) require_napot(r);
  require_disjoint(all);
  for (const auto& r : all) require_in_memory(r, c.memory_base, c.memory_size);
  for (const auto& r : all)
    if (r.name != "p_code" && overlaps(l.p_span, r))
      throw LayoutError(LayoutErrorKind::Placement, "monitor span would cover " + r.name);

  m.pmp_assignment = {{"f_code", entry::kFirmwareCode}, {"f_data", entry::kFirmwareData},
                      {"p_data", entry::kMonitorData},  {"p_span", entry::kMonitorSpan},
                      {"os", entry::kOs},               {"f_bracket", entry::kFirmwareBracket},
                      {"exit_stub", entry::kSallyPort}};
  const unsigned ne = static_cast<unsigned>(l.enclaves.size());
  if (2 * ne > kEnclaveSlotsMulti.size()) require_entry_budget(ne, true, c.platform_entries, 17);
  for (unsigned i = 0; i < ne; ++i) {
    const auto [p, s] = enclave_entries(i, true);
    m.pmp_assignment[l.enclaves[i].private_region.name] = p;
    m.pmp_assignment[l.enclaves[i].shared_region.name] = s;
  }
  l.pmp_assignment = m.pmp_assignment;
  require_entry_budget(ne, true, c.platform_entries, l.required_platform_entries());
  return m;
}

pmp::PmpState multi_f_state(const MultiFirmwareLayout& m, unsigned j, MultiStage stage) {
  if (j >= m.slots.size()) throw std::out_of_range(fmt::format("no firmware slot {}", j));
  const auto& l = m.base;
  const auto& s = m.slots[j];
  const bool multi = m.slots.size() > 1;
  pmp::PmpState st;
  st.security = pmp::SecurityConfig::from_bits(kSecurityOperatingPoint);
  st.address[entry::kFirmwareCode] = pmp::napot_address(s.code.base, s.code.size);
  st.address[entry::kFirmwareData] = pmp::napot_address(s.data.base, s.data.size);
  st.address[entry::kMonitorData] = pmp::napot_address(l.p_data.base, l.p_data.size);
  st.address[entry::kMonitorSpan] = pmp::napot_address(l.p_span.base, l.p_span.size);
  st.address[entry::kOs] = pmp::napot_address(l.os.base, l.os.size);
  if (multi) st.address[entry::kFirmwareBracket] = pmp::napot_address(s.bracket.base, s.bracket.size);
  st.address[entry::kSallyPort] = pmp::napot_address(s.exit_stub.base, s.exit_stub.size);
  set_enclave_addresses(st.address, l.enclaves, multi);

  PmpCfgs c = monitor_cfgs(l, SuView{});
  switch (stage) {
    case MultiStage::MonitorView: break;
    case MultiStage::MonitorEnter:
      if (multi) set_byte(c, entry::kFirmwareBracket, kMonitorRx);
      break;
    case MultiStage::FirmwareView:
      c.low = cfg_low_firmware(l);
      if (multi) set_byte(c, entry::kFirmwareBracket, kDeny);
      break;
    case MultiStage::Cleared: c.low = 0; break;
  }
  st.cfg_low = c.low;
  st.cfg_high = c.high;
  return st;
}

}  // namespace mpart::monitor
