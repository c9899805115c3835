#include "doctest.h"
#include "mpart/layout.hpp"

using namespace mpart;
using namespace mpart::monitor;
using pmp::Access;
using pmp::Mode;

namespace {

bool can(const pmp::PmpState& s, Mode m, uint64_t a, Access acc) {
  return pmp::check_access(s, {a, 1, acc, m}).allowed;
}

bool any_access(const pmp::PmpState& s, Mode m, const Region& r) {
  for (uint64_t a : {r.base, r.base + r.size / 2, r.end() - 1})
    for (Access acc : {Access::Read, Access::Write, Access::Execute})
      if (can(s, m, a, acc)) return true;
  return false;
}

std::vector<ViewLabel> all_views(const CompartmentLayout& l) {
  std::vector<ViewLabel> v = {{ViewKind::PView}, {ViewKind::FView}, {ViewKind::OsView}};
  for (unsigned i = 0; i < l.enclaves.size(); ++i) v.push_back({ViewKind::EnclaveView, i});
  return v;
}

}  // namespace

TEST_CASE("default layout uses six runtime entries") {
  const auto l = build_layout({});
  CHECK(l.runtime_entries() == 6);
  CHECK(l.required_platform_entries() == 9);
  CHECK(l.spentry_offset == l.f_code.size - 4);
  CHECK(l.p_span.base == 0);
  CHECK(l.p_span.size == 0x8000);
}

TEST_CASE("each enclave costs two entries") {
  LayoutConfig c;
  c.enclave_count = 2;
  const auto l = build_layout(c);
  CHECK(l.runtime_entries() == 10);
  CHECK(enclave_entries(0) == std::pair{5u, 6u});
  CHECK(enclave_entries(1) == std::pair{7u, 9u});
  CHECK(enclave_entries(0, true) == std::pair{6u, 7u});
  c.enclave_count = 6;
  CHECK_THROWS_AS(build_layout(c), LayoutError);
  c.enclave_count = 5;
  CHECK(build_layout(c).required_platform_entries() == 16);
}

TEST_CASE("bad placements are rejected with a reason") {
  auto kind_of = [](const LayoutConfig& c) {
    try {
      build_layout(c);
    } catch (const LayoutError& e) {
      return std::optional(e.kind());
    }
    return std::optional<LayoutErrorKind>();
  };
  LayoutConfig c;
  c.f_data = {0x8000, 0x2000};
  CHECK(kind_of(c) == LayoutErrorKind::Overlap);
  c = {};
  c.p_data = {0x9000, 0x2000};
  CHECK(kind_of(c) == LayoutErrorKind::Misaligned);
  c = {};
  c.os = {0x100000, 0x40000};
  CHECK(kind_of(c) == LayoutErrorKind::OutOfMemory);
  c = {};
  c.sallyport = {0x6000, 0x100};
  CHECK(kind_of(c) == LayoutErrorKind::Placement);
  c = {};
  c.enclave_count = 1;
  c.platform_entries = 8;
  CHECK(kind_of(c) == LayoutErrorKind::EntryBudget);
}

TEST_CASE("every view grants exactly its expected matrix") {
  LayoutConfig c;
  c.enclave_count = 3;
  const auto l = build_layout(c);
  for (const auto& v : all_views(l)) {
    CAPTURE(v.name());
    const auto expected = expected_matrix(l, v);
    const auto observed = observed_matrix(l, view_state(l, v), view_mode(v));
    REQUIRE(expected.size() == observed.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CAPTURE(expected[i].region);
      CHECK(expected[i].region == observed[i].region);
      CHECK(expected[i].grant == observed[i].grant);
    }
  }
}

TEST_CASE("P and F never share a region in machine mode") {
  LayoutConfig c;
  c.enclave_count = 2;
  const auto l = build_layout(c);
  for (auto kind : {ViewKind::PView, ViewKind::FView}) {
    const auto s = view_state(l, {kind});
    const bool p = any_access(s, Mode::Machine, l.p_code) || any_access(s, Mode::Machine, l.p_data);
    const bool f = any_access(s, Mode::Machine, l.f_code) || any_access(s, Mode::Machine, l.f_data);
    CHECK(p != f);
    CHECK(can(s, Mode::Machine, l.sallyport.base, Access::Execute) == (kind == ViewKind::PView));
    for (const auto& e : l.enclaves) CHECK_FALSE(any_access(s, Mode::Machine, e.private_region));
  }
  // After the SPEntry clears the low register only the SallyPort is reachable.
  auto cleared = view_state(l, {ViewKind::FView});
  cleared.cfg_low = 0;
  for (const auto& r : l.regions()) CHECK(any_access(cleared, Mode::Machine, r) == (r.name == "sallyport"));
}

TEST_CASE("enclave_switch only touches the S/U slots") {
  LayoutConfig c;
  c.enclave_count = 3;
  const auto l = build_layout(c);
  const auto os = view_state(l, {ViewKind::OsView});
  for (unsigned i = 0; i < 3; ++i) {
    const auto s = enclave_switch(l, os, {ViewKind::OsView}, {ViewKind::EnclaveView, i});
    CHECK(s == view_state(l, {ViewKind::EnclaveView, i}));
    CHECK(s.address == os.address);
    for (unsigned e : {0u, 1u, 2u, 3u, 8u}) CHECK(s.cfg_byte(e) == os.cfg_byte(e));
    CHECK(enclave_switch(l, s, {ViewKind::EnclaveView, i}, {ViewKind::OsView}) == os);
    for (unsigned j = 0; j < 3; ++j) {
      CHECK(any_access(s, Mode::SupervisorUser, l.enclaves[j].private_region) == (i == j));
      CHECK(any_access(s, Mode::SupervisorUser, l.enclaves[j].shared_region) == (i == j));
    }
    CHECK_FALSE(any_access(s, Mode::SupervisorUser, l.os));
  }
  CHECK_THROWS(enclave_switch(l, os, {ViewKind::PView}, {ViewKind::OsView}));
  CHECK_THROWS(enclave_switch(l, os, {ViewKind::OsView}, {ViewKind::EnclaveView, 3}));
}

TEST_CASE("multi-firmware layout keeps images apart") {
  LayoutConfig c;
  c.enclave_count = 1;
  const auto one = build_multi_f_layout(c, 1);
  CHECK(one.base.runtime_entries() == build_layout(c).runtime_entries());

  c.enclave_count = 2;
  const auto m = build_multi_f_layout(c, 2);
  CHECK(m.runtime_entries() == 11);
  REQUIRE(m.slots.size() == 2);
  for (unsigned j = 0; j < 2; ++j) {
    const auto& slot = m.slots[j];
    CHECK(slot.enter_stub.end() == slot.code.base);
    CHECK(slot.exit_stub.base == slot.code.end());
    const auto fview = multi_f_state(m, j, MultiStage::FirmwareView);
    const auto cleared = multi_f_state(m, j, MultiStage::Cleared);
    const auto entering = multi_f_state(m, j, MultiStage::MonitorEnter);
    CHECK(can(fview, Mode::Machine, slot.code.base, Access::Execute));
    CHECK(can(fview, Mode::Machine, slot.data.base, Access::Write));
    CHECK_FALSE(can(fview, Mode::Machine, slot.exit_stub.base, Access::Execute));
    CHECK_FALSE(can(fview, Mode::Machine, m.base.p_data.base, Access::Read));
    CHECK(can(entering, Mode::Machine, slot.enter_stub.base, Access::Execute));
    CHECK(can(cleared, Mode::Machine, slot.exit_stub.base, Access::Execute));
    CHECK_FALSE(can(cleared, Mode::Machine, slot.code.base, Access::Execute));
    const auto& other = m.slots[1 - j];
    for (const auto* st : {&fview, &cleared, &entering}) {
      CHECK_FALSE(any_access(*st, Mode::Machine, other.code));
      CHECK_FALSE(any_access(*st, Mode::Machine, other.data));
    }
  }
}
