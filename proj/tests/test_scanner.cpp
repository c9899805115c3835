#include <random>

#include "doctest.h"
#include "json.hpp"
#include "mpart/corpus.hpp"
#include "mpart/hart.hpp"
#include "mpart/scanner.hpp"

using namespace mpart;
using scanner::ScanPolicy;
using scanner::Verdict;

namespace {

std::vector<uint8_t> bytes_of(const isa::Description& d) { return isa::encode(d); }

std::vector<uint8_t> concat(std::initializer_list<std::vector<uint8_t>> parts) {
  std::vector<uint8_t> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

monitor::CompartmentLayout default_layout() { return monitor::build_layout({}); }

}  // namespace

TEST_CASE("empty blob is clean and hashes to the empty-string digest") {
  const auto r = scanner::scan({});
  CHECK(r.verdict == Verdict::Clean);
  CHECK(r.findings.empty());
  CHECK(r.blob_digest == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("SPEntry is allowed only at the declared offset and only in immediate form") {
  const auto spentry = bytes_of(isa::ops::csrwi(isa::csr::pmpcfg0, 0));
  CHECK(spentry == std::vector<uint8_t>(scanner::kSpEntryEncoding.begin(), scanner::kSpEntryEncoding.end()));
  const auto blob = concat({bytes_of(isa::ops::nop()), bytes_of(isa::ops::nop()), spentry});

  ScanPolicy at_end;
  at_end.allowed_spentry_offset = 8;
  CHECK(scanner::scan(blob, at_end).verdict == Verdict::Clean);

  ScanPolicy elsewhere;
  elsewhere.allowed_spentry_offset = 4;
  const auto r = scanner::scan(blob, elsewhere);
  REQUIRE(r.findings.size() == 1);
  CHECK(r.findings[0].offset == 8);
  CHECK(r.findings[0].sensitivity == isa::Sensitivity::PmpWrite);

  const auto reg_form = concat({bytes_of(isa::ops::nop()), bytes_of(isa::ops::nop()),
                                bytes_of(isa::ops::csrw(isa::csr::pmpcfg0, isa::reg::t0))});
  CHECK(scanner::scan(reg_form, at_end).verdict == Verdict::Rejected);
}

TEST_CASE("embedded tail halfword of a lui is found at offset+2") {
  // lui t0, 0x50730 ; .2byte 0x3a00  (bytes from the reference assembler)
  const std::vector<uint8_t> blob = {0xb7, 0x02, 0x73, 0x50, 0x00, 0x3a};
  CHECK(isa::decode(blob, 0).describe() == isa::ops::lui(isa::reg::t0, 0x50730));
  const auto r = scanner::scan(blob);
  REQUIRE(r.findings.size() == 1);
  CHECK(r.findings[0].offset == 2);
  CHECK(r.findings[0].width == 4);
  CHECK(r.findings[0].mnemonic == "csrrwi zero, pmpcfg0, 0");
  CHECK(r.verdict == Verdict::Rejected);
}

TEST_CASE("trap vector writes are rejected anywhere") {
  std::mt19937_64 rng(3);
  auto blob = corpus::benign_blob(rng, 256);
  const auto planted = corpus::plant_aligned(blob, isa::ops::csrw(isa::csr::mtvec, isa::reg::t0), 100);
  const auto r = scanner::scan(planted.blob);
  REQUIRE(r.findings.size() >= 1);
  bool at = false;
  for (const auto& f : r.findings) at = at || (f.offset == 100 && f.sensitivity == isa::Sensitivity::TrapVectorWrite);
  CHECK(at);

  ScanPolicy lax;
  lax.forbid_trap_vector_writes = false;
  CHECK(scanner::scan(planted.blob, lax).verdict == Verdict::Clean);
}

TEST_CASE("policy offset must be aligned and inside the blob") {
  const std::vector<uint8_t> blob(16, 0x13);
  ScanPolicy p;
  p.allowed_spentry_offset = 3;
  CHECK_THROWS_AS(scanner::scan(blob, p), scanner::ConfigurationError);
  p.allowed_spentry_offset = 14;
  CHECK_THROWS_AS(scanner::scan(blob, p), scanner::ConfigurationError);
}

TEST_CASE("verify_firmware derives the policy from the layout") {
  auto layout = default_layout();
  std::mt19937_64 rng(11);
  auto blob = corpus::benign_blob(rng, layout.f_code.size - 4);
  const auto spentry = bytes_of(isa::ops::csrwi(isa::csr::pmpcfg0, 0));
  blob.insert(blob.end(), spentry.begin(), spentry.end());
  const auto ok = scanner::verify_firmware(blob, layout);
  CHECK(ok.pass);
  CHECK(ok.report.verdict == Verdict::Clean);

  auto bad = blob;
  const auto reg_form = bytes_of(isa::ops::csrw(isa::csr::pmpcfg0, isa::reg::zero));
  std::copy(reg_form.begin(), reg_form.end(), bad.end() - 4);
  CHECK_FALSE(scanner::verify_firmware(bad, layout).pass);

  auto wrong = layout;
  wrong.spentry_offset -= 4;
  CHECK_THROWS_AS(scanner::verify_firmware(blob, wrong), scanner::ConfigurationError);
  CHECK_THROWS_AS(scanner::verify_firmware(std::span(blob).first(64), layout), scanner::ConfigurationError);
}

TEST_CASE("recall over every sensitive form, aligned and embedded") {
  std::mt19937_64 rng(21);
  const auto base = corpus::benign_blob(rng, 128);
  REQUIRE(scanner::scan(base).verdict == Verdict::Clean);
  for (const auto& form : corpus::sensitive_forms()) {
    for (bool embedded : {false, true}) {
      const auto p = embedded ? corpus::plant_embedded(base, form, 62) : corpus::plant_aligned(base, form, 62);
      const auto r = scanner::scan(p.blob);
      bool found = false;
      for (const auto& f : r.findings) found = found || (f.offset == 62 && f.width == 4);
      CHECK_MESSAGE(found, isa::decode_word(isa::decode(isa::encode(form), 0).raw).to_string());
    }
  }
}

TEST_CASE("report is deterministic and serializes in a stable field order") {
  std::mt19937_64 rng(5);
  auto blob = corpus::benign_blob(rng, 512);
  blob = corpus::plant_aligned(blob, isa::ops::csrwi(0x3B4, 1), 40).blob;
  blob = corpus::plant_embedded(blob, isa::ops::csrw(isa::csr::mtvec, 9), 300).blob;
  const auto a = scanner::scan(blob);
  const auto b = scanner::scan(blob);
  CHECK(a == b);
  for (std::size_t i = 1; i < a.findings.size(); ++i) CHECK(a.findings[i - 1].offset <= a.findings[i].offset);
  const auto j = nlohmann::ordered_json::parse(scanner::to_json(a));
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"verdict", "digest_algorithm", "blob_digest", "findings"});
  CHECK(j["findings"][0]["offset"] == 40);
  CHECK(j["findings"][0]["sensitivity"] == "PmpWrite");
  CHECK(scanner::to_json(a) == scanner::to_json(b));
}

TEST_CASE("clean blobs never retire a sensitive CSR write from any 2-byte offset") {
  std::mt19937_64 rng(99);
  constexpr uint64_t kBase = 0x1000;
  for (int n = 0; n < 6; ++n) {
    const auto blob = corpus::benign_blob(rng, 192);
    REQUIRE(scanner::scan(blob).verdict == Verdict::Clean);
    hart::Memory mem(0, 0x10000);
    mem.load(kBase, blob);
    hart::Machine base_machine(std::move(mem));
    pmp::PmpState open;
    open.address[0] = pmp::napot_address(0, 0x10000);
    open.cfg_low = 0x1F;
    base_machine.set_pmp(open);
    for (std::size_t o = 0; o < blob.size(); o += 2) {
      hart::Machine m = base_machine;
      m.hart().pc = kBase + o;
      m.hart().csrs.mtvec = 0x8000;  // outside the blob; zeros there stall
      for (unsigned r = 1; r < 32; ++r) m.hart().set_reg(r, rng());
      m.run_until([&](const hart::Machine& mm) { return mm.hart().pc < kBase || mm.hart().pc >= kBase + blob.size(); }, 64);
      for (const auto& e : m.trace()) {
        if (e.kind != hart::EventKind::CsrWrite) continue;
        const auto cls = isa::CsrAddress{e.csr}.classification();
        CHECK(cls == isa::CsrClass::Other);
      }
    }
  }
}
