#include <array>
#include <random>

#include "doctest.h"
#include "mpart/isa.hpp"

using namespace mpart::isa;
using M = Mnemonic;

namespace {

std::array<uint8_t, 4> le(uint32_t w) {
  return {static_cast<uint8_t>(w), static_cast<uint8_t>(w >> 8), static_cast<uint8_t>(w >> 16),
          static_cast<uint8_t>(w >> 24)};
}

uint32_t word_of(const std::vector<uint8_t>& b) {
  uint32_t w = 0;
  for (std::size_t i = 0; i < b.size(); ++i) w |= uint32_t{b[i]} << (8 * i);
  return w;
}

struct Golden {
  const char* text;
  uint32_t encoding;
  Description desc;
};

// Encodings produced by clang --target=riscv64-unknown-elf -march=rv64gc.
const Golden kGolden[] = {
    {"csrwi pmpcfg0, 0", 0x3a005073, ops::csrwi(csr::pmpcfg0, 0)},
    {"csrw mtvec, t0", 0x30529073, ops::csrw(csr::mtvec, reg::t0)},
    {"csrw pmpaddr3, t1", 0x3b331073, ops::csrw(0x3B3, reg::t1)},
    {"csrr t0, pmpcfg0", 0x3a0022f3, ops::csrr(reg::t0, csr::pmpcfg0)},
    {"ecall", 0x00000073, ops::ecall()},
    {"mret", 0x30200073, ops::mret()},
    {"wfi", 0x10500073, ops::wfi()},
    {"csrrs a0, mseccfg, a1", 0x7475a573, ops::csrrs(reg::a0, csr::mseccfg, reg::a1)},
    {"csrrci zero, pmpcfg2, 5", 0x3a22f073, ops::csrrci(0, csr::pmpcfg2, 5)},
    {"csrrc t2, pmpaddr15, zero", 0x3bf033f3, ops::csrrc(reg::t2, 0x3BF, 0)},
    {"ld a0, 16(sp)", 0x01013503, ops::load(M::Ld, reg::a0, reg::sp, 16)},
    {"sd ra, -8(s0)", 0xfe143c23, ops::store(M::Sd, reg::ra, reg::s0, -8)},
    {"lbu t1, 0(a2)", 0x00064303, ops::load(M::Lbu, reg::t1, reg::a2, 0)},
    {"jal ra, 2048", 0x001000ef, ops::jal(reg::ra, 2048)},
    {"jalr zero, 0(ra)", 0x00008067, ops::jalr(0, reg::ra, 0)},
    {"beq a0, a1, -16", 0xfeb508e3, ops::branch(M::Beq, reg::a0, reg::a1, -16)},
    {"bgeu t0, t1, 64", 0x0462f063, ops::branch(M::Bgeu, reg::t0, reg::t1, 64)},
    {"addi sp, sp, -32", 0xfe010113, ops::alu_imm(M::Addi, reg::sp, reg::sp, -32)},
    {"lui t0, 0x80000", 0x800002b7, ops::lui(reg::t0, -0x80000)},
    {"auipc a0, 1", 0x00001517, Description{M::Auipc, reg::a0, 0, 0, 1}},
    {"addiw a0, a0, -1", 0xfff5051b, ops::alu_imm(M::Addiw, reg::a0, reg::a0, -1)},
    {"srai t0, t1, 63", 0x43f35293, ops::alu_imm(M::Srai, reg::t0, reg::t1, 63)},
    {"sub a0, a1, a2", 0x40c58533, ops::alu(M::Sub, reg::a0, reg::a1, reg::a2)},
    {"slli a0, a0, 12", 0x00c51513, ops::alu_imm(M::Slli, reg::a0, reg::a0, 12)},
    {"c.j 8", 0xa021, ops::c_j(8)},
    {"c.nop", 0x0001, Description{M::CNop}},
    {"c.li a0, -3", 0x5575, Description{M::CLi, reg::a0, 0, 0, -3}},
    {"c.beqz a0, -4", 0xdd75, Description{M::CBeqz, 0, reg::a0, 0, -4}},
    {"c.jr ra", 0x8082, Description{M::CJr, 0, reg::ra}},
    {"c.ldsp ra, 8(sp)", 0x60a2, Description{M::CLdsp, reg::ra, 0, 0, 8}},
    {"c.sdsp ra, 8(sp)", 0xe406, Description{M::CSdsp, 0, 0, reg::ra, 8}},
    {"c.add a0, a1", 0x952e, Description{M::CAdd, reg::a0, 0, reg::a1}},
    {"c.mv a0, a1", 0x852e, Description{M::CMv, reg::a0, 0, reg::a1}},
};

}  // namespace

TEST_CASE("encodings match the reference assembler") {
  for (const auto& g : kGolden) {
    CAPTURE(g.text);
    const auto bytes = encode(g.desc);
    CHECK(word_of(bytes) == g.encoding);
    CHECK(bytes.size() == ((g.encoding & 3) == 3 ? 4u : 2u));
    CHECK(decode(bytes, 0).describe() == g.desc);
  }
}

TEST_CASE("decode classifies CSR instructions") {
  const auto a = le(0x3a005073);
  const Instruction i = decode(a, 0);
  CHECK(i.kind == Kind::CsrReadWriteImmediate);
  CHECK(i.width == 4);
  REQUIRE(i.csr_target);
  CHECK(i.csr_target->classification() == CsrClass::PmpCfg);
  CHECK(i.csr_target->index() == 0);
  CHECK(i.source_is_immediate);

  const Instruction w = decode_word(0x30529073);
  CHECK(w.kind == Kind::CsrReadWrite);
  CHECK(w.csr_target->classification() == CsrClass::TrapVector);
  CHECK_FALSE(w.source_is_immediate);

  CHECK(decode_word(0x7475a573).kind == Kind::CsrSet);
  CHECK(decode_word(0x3bf033f3).kind == Kind::CsrClear);
  CHECK(decode_word(0x7475a573).csr_target->classification() == CsrClass::MachineSecurityConfig);
}

TEST_CASE("all-zero bytes are illegal and out-of-range offsets throw") {
  const std::array<uint8_t, 4> z{};
  CHECK(decode(z, 0).kind == Kind::Illegal);
  CHECK(decode(z, 0).width == 2);
  CHECK_THROWS_AS(decode(z, 3), std::out_of_range);
  // A 32-bit opcode with only two bytes left decodes as Illegal.
  const auto a = le(0x3a005073);
  CHECK(decode(std::span<const uint8_t>(a.data(), 2), 0).kind == Kind::Illegal);
}

TEST_CASE("odd pmpcfg registers are invalid on RV64") {
  for (uint16_t c = 0x3A0; c <= 0x3AF; ++c) {
    CsrAddress a{c};
    CHECK(a.classification() == CsrClass::PmpCfg);
    CHECK(a.valid_on_rv64() == (c % 2 == 0));
  }
  CHECK(CsrAddress{0x3B0}.classification() == CsrClass::PmpAddr);
  CHECK(CsrAddress{0x3EF}.classification() == CsrClass::PmpAddr);
  CHECK(CsrAddress{0x3F0}.classification() == CsrClass::Other);
  CHECK(CsrAddress{csr::mseccfgh}.classification() == CsrClass::MachineSecurityConfig);
}

TEST_CASE("sensitivity of the documented examples") {
  CHECK(is_isolation_sensitive(decode_word(0x3a0022f3)) == Sensitivity::None);
  CHECK(is_isolation_sensitive(decode_word(0x3b331073)) == Sensitivity::PmpWrite);
  CHECK(is_isolation_sensitive(decode_word(0x30529073)) == Sensitivity::TrapVectorWrite);
  CHECK(is_isolation_sensitive(decode_word(0x3a005073)) == Sensitivity::PmpWrite);
  CHECK(is_isolation_sensitive(decode_word(0x3bf033f3)) == Sensitivity::None);  // csrrc with x0
}

TEST_CASE("property: width rule holds for every first halfword") {
  for (uint32_t h = 0; h < 0x10000; ++h) {
    const std::array<uint8_t, 4> b{static_cast<uint8_t>(h), static_cast<uint8_t>(h >> 8), 0x00, 0x00};
    const Instruction i = decode(b, 0);
    const unsigned expected = (h & 3) == 3 ? 4 : 2;
    if (i.width != expected) FAIL("width mismatch at " << h);
    if (i.csr_target.has_value() != (i.kind == Kind::CsrReadWrite || i.kind == Kind::CsrReadWriteImmediate ||
                                     i.kind == Kind::CsrSet || i.kind == Kind::CsrClear))
      FAIL("csr_target presence mismatch at " << h);
    if (expected == 2 && is_isolation_sensitive(i) != Sensitivity::None) FAIL("compressed sensitive at " << h);
  }
}

TEST_CASE("property: every write-capable form on every protected CSR is sensitive") {
  const M forms[] = {M::Csrrw, M::Csrrs, M::Csrrc, M::Csrrwi, M::Csrrsi, M::Csrrci};
  for (uint32_t c = 0; c < 0x1000; ++c) {
    const CsrClass cls = CsrAddress{static_cast<uint16_t>(c)}.classification();
    for (M m : forms) {
      for (unsigned src : {0u, 1u, 17u, 31u}) {
        for (unsigned rd : {0u, 5u}) {
          const bool imm = m == M::Csrrwi || m == M::Csrrsi || m == M::Csrrci;
          Description d{m, rd, imm ? 0u : src, 0, imm ? static_cast<int64_t>(src) : 0, static_cast<uint16_t>(c)};
          const Instruction i = decode(encode(d), 0);
          const bool writes = m == M::Csrrw || m == M::Csrrwi || src != 0;
          Sensitivity expected = Sensitivity::None;
          if (writes && (cls == CsrClass::PmpCfg || cls == CsrClass::PmpAddr ||
                         cls == CsrClass::MachineSecurityConfig))
            expected = Sensitivity::PmpWrite;
          if (writes && cls == CsrClass::TrapVector) expected = Sensitivity::TrapVectorWrite;
          if (is_isolation_sensitive(i) != expected) FAIL("csr " << c << " form " << mnemonic_name(m));
        }
      }
    }
  }
}

TEST_CASE("property: decode(encode(d)) == d over random descriptions") {
  std::mt19937_64 rng(7);
  auto r = [&](uint64_t n) { return static_cast<unsigned>(rng() % n); };
  auto simm = [&](int bits) {
    const int64_t span = int64_t{1} << bits;
    return static_cast<int64_t>(rng() % span) - span / 2;
  };
  const M loads[] = {M::Lb, M::Lh, M::Lw, M::Ld, M::Lbu, M::Lhu, M::Lwu};
  const M stores[] = {M::Sb, M::Sh, M::Sw, M::Sd};
  const M branches[] = {M::Beq, M::Bne, M::Blt, M::Bge, M::Bltu, M::Bgeu};
  const M imms[] = {M::Addi, M::Slti, M::Sltiu, M::Xori, M::Ori, M::Andi, M::Addiw};
  const M shifts[] = {M::Slli, M::Srli, M::Srai};
  const M alus[] = {M::Add, M::Sub, M::Sll, M::Slt, M::Sltu, M::Xor, M::Srl, M::Sra, M::Or, M::And};
  const M csrs[] = {M::Csrrw, M::Csrrs, M::Csrrc};
  const M csris[] = {M::Csrrwi, M::Csrrsi, M::Csrrci};
  for (int n = 0; n < 20000; ++n) {
    Description d;
    switch (r(12)) {
      case 0: d = ops::load(loads[r(7)], r(32), r(32), simm(12)); break;
      case 1: d = ops::store(stores[r(4)], r(32), r(32), simm(12)); break;
      case 2: d = ops::branch(branches[r(6)], r(32), r(32), simm(13) & ~int64_t{1}); break;
      case 3: d = ops::jal(r(32), simm(21) & ~int64_t{1}); break;
      case 4: d = ops::jalr(r(32), r(32), simm(12)); break;
      case 5: d = ops::alu_imm(imms[r(7)], r(32), r(32), simm(12)); break;
      case 6: d = ops::alu_imm(shifts[r(3)], r(32), r(32), r(64)); break;
      case 7: d = ops::alu(alus[r(10)], r(32), r(32), r(32)); break;
      case 8: d = Description{csrs[r(3)], r(32), r(32), 0, 0, static_cast<uint16_t>(r(4096))}; break;
      case 9: d = Description{csris[r(3)], r(32), 0, 0, r(32), static_cast<uint16_t>(r(4096))}; break;
      case 10: d = ops::lui(r(32), simm(20)); break;
      default: d = ops::c_j(simm(12) & ~int64_t{1}); break;
    }
    const auto bytes = encode(d);
    if (decode(bytes, 0).describe() != d) FAIL("round trip failed for " << mnemonic_name(d.mnemonic));
  }
}

TEST_CASE("encode rejects descriptions outside the subset") {
  CHECK_THROWS_AS(encode(Description{M::Illegal}), UnsupportedInstruction);
  CHECK_THROWS_AS(encode(ops::alu_imm(M::Addi, 1, 1, 5000)), UnsupportedInstruction);
  CHECK_THROWS_AS(encode(ops::jal(1, 3)), UnsupportedInstruction);
  CHECK_THROWS_AS(encode(ops::csrwi(csr::pmpcfg0, 32)), UnsupportedInstruction);
}
