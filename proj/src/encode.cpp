#include <fmt/format.h>

#include "mpart/isa.hpp"

namespace mpart::isa {

namespace {

[[noreturn]] void unsupported(const Description& d, const char* why) {
  throw UnsupportedInstruction(fmt::format("cannot encode {}: {}", mnemonic_name(d.mnemonic), why));
}

void need_reg(const Description& d, unsigned r) {
  if (r > 31) unsupported(d, "register out of range");
}

void need_range(const Description& d, int64_t v, int64_t lo, int64_t hi, int64_t align = 1) {
  if (v < lo || v > hi || v % align != 0) unsupported(d, "immediate out of range or misaligned");
}

unsigned need_compact(const Description& d, unsigned r) {
  if (r < 8 || r > 15) unsupported(d, "compressed form needs a register in x8..x15");
  return r - 8;
}

uint32_t b(int64_t v, unsigned hi, unsigned lo) {
  return static_cast<uint32_t>((static_cast<uint64_t>(v) >> lo) & ((uint64_t{1} << (hi - lo + 1)) - 1));
}

uint32_t i_type(unsigned op, unsigned f3, unsigned rd, unsigned rs1, int64_t imm) {
  return (b(imm, 11, 0) << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | op;
}

uint32_t s_type(unsigned op, unsigned f3, unsigned rs1, unsigned rs2, int64_t imm) {
  return (b(imm, 11, 5) << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | (b(imm, 4, 0) << 7) | op;
}

uint32_t r_type(unsigned op, unsigned f3, unsigned f7, unsigned rd, unsigned rs1, unsigned rs2) {
  return (f7 << 25) | (rs2 << 20) | (rs1 << 15) | (f3 << 12) | (rd << 7) | op;
}

std::vector<uint8_t> word(uint32_t w) {
  return {static_cast<uint8_t>(w), static_cast<uint8_t>(w >> 8), static_cast<uint8_t>(w >> 16),
          static_cast<uint8_t>(w >> 24)};
}

std::vector<uint8_t> half(uint32_t h) { return {static_cast<uint8_t>(h), static_cast<uint8_t>(h >> 8)}; }

}  // namespace

std::vector<uint8_t> encode(const Description& d) {
  using M = Mnemonic;
  need_reg(d, d.rd);
  need_reg(d, d.rs1);
  need_reg(d, d.rs2);

  switch (d.mnemonic) {
    case M::Csrrw: case M::Csrrs: case M::Csrrc: {
      if (d.csr > 0xFFF) unsupported(d, "csr out of range");
      const unsigned f3 = d.mnemonic == M::Csrrw ? 1 : d.mnemonic == M::Csrrs ? 2 : 3;
      return word((uint32_t{d.csr} << 20) | (d.rs1 << 15) | (f3 << 12) | (d.rd << 7) | 0x73);
    }
    case M::Csrrwi: case M::Csrrsi: case M::Csrrci: {
      if (d.csr > 0xFFF) unsupported(d, "csr out of range");
      need_range(d, d.imm, 0, 31);
      const unsigned f3 = d.mnemonic == M::Csrrwi ? 5 : d.mnemonic == M::Csrrsi ? 6 : 7;
      return word((uint32_t{d.csr} << 20) | (b(d.imm, 4, 0) << 15) | (f3 << 12) | (d.rd << 7) | 0x73);
    }
    case M::Lb: case M::Lh: case M::Lw: case M::Ld: case M::Lbu: case M::Lhu: case M::Lwu: {
      need_range(d, d.imm, -2048, 2047);
      const unsigned f3 = static_cast<unsigned>(d.mnemonic) - static_cast<unsigned>(M::Lb);
      return word(i_type(0x03, f3, d.rd, d.rs1, d.imm));
    }
    case M::Sb: case M::Sh: case M::Sw: case M::Sd: {
      need_range(d, d.imm, -2048, 2047);
      const unsigned f3 = static_cast<unsigned>(d.mnemonic) - static_cast<unsigned>(M::Sb);
      return word(s_type(0x23, f3, d.rs1, d.rs2, d.imm));
    }
    case M::Jal: {
      need_range(d, d.imm, -(1 << 20), (1 << 20) - 2, 2);
      const int64_t o = d.imm;
      return word((b(o, 20, 20) << 31) | (b(o, 10, 1) << 21) | (b(o, 11, 11) << 20) |
                  (b(o, 19, 12) << 12) | (d.rd << 7) | 0x6f);
    }
    case M::Jalr:
      need_range(d, d.imm, -2048, 2047);
      return word(i_type(0x67, 0, d.rd, d.rs1, d.imm));
    case M::Beq: case M::Bne: case M::Blt: case M::Bge: case M::Bltu: case M::Bgeu: {
      need_range(d, d.imm, -4096, 4094, 2);
      static constexpr unsigned f3s[] = {0, 1, 4, 5, 6, 7};
      const unsigned f3 = f3s[static_cast<unsigned>(d.mnemonic) - static_cast<unsigned>(M::Beq)];
      const int64_t o = d.imm;
      return word((b(o, 12, 12) << 31) | (b(o, 10, 5) << 25) | (d.rs2 << 20) | (d.rs1 << 15) |
                  (f3 << 12) | (b(o, 4, 1) << 8) | (b(o, 11, 11) << 7) | 0x63);
    }
    case M::Ecall: return word(0x00000073);
    case M::Mret: return word(0x30200073);
    case M::Wfi: return word(0x10500073);
    case M::Addi: case M::Slti: case M::Sltiu: case M::Xori: case M::Ori: case M::Andi: {
      need_range(d, d.imm, -2048, 2047);
      static constexpr unsigned f3s[] = {0, 2, 3, 4, 6, 7};
      return word(i_type(0x13, f3s[static_cast<unsigned>(d.mnemonic) - static_cast<unsigned>(M::Addi)],
                         d.rd, d.rs1, d.imm));
    }
    case M::Slli: case M::Srli: case M::Srai: {
      need_range(d, d.imm, 0, 63);
      const unsigned f3 = d.mnemonic == M::Slli ? 1 : 5;
      const int64_t hi = d.mnemonic == M::Srai ? 0x400 : 0;
      return word(i_type(0x13, f3, d.rd, d.rs1, hi | d.imm));
    }
    case M::Add: case M::Sub: case M::Sll: case M::Slt: case M::Sltu:
    case M::Xor: case M::Srl: case M::Sra: case M::Or: case M::And: {
      static constexpr unsigned f3s[] = {0, 0, 1, 2, 3, 4, 5, 5, 6, 7};
      const unsigned idx = static_cast<unsigned>(d.mnemonic) - static_cast<unsigned>(M::Add);
      const unsigned f7 = (d.mnemonic == M::Sub || d.mnemonic == M::Sra) ? 0x20 : 0;
      return word(r_type(0x33, f3s[idx], f7, d.rd, d.rs1, d.rs2));
    }
    case M::Lui: case M::Auipc:
      need_range(d, d.imm, -(1 << 19), (1 << 19) - 1);
      return word((b(d.imm, 19, 0) << 12) | (d.rd << 7) | (d.mnemonic == M::Lui ? 0x37 : 0x17));
    case M::Addiw:
      need_range(d, d.imm, -2048, 2047);
      return word(i_type(0x1b, 0, d.rd, d.rs1, d.imm));

    case M::CNop: return half(0x0001);
    case M::CAddi: case M::CLi: {
      if (d.rd == 0) unsupported(d, "rd must be nonzero");
      need_range(d, d.imm, -32, 31);
      const unsigned f3 = d.mnemonic == M::CAddi ? 0 : 2;
      return half((f3 << 13) | (b(d.imm, 5, 5) << 12) | (d.rd << 7) | (b(d.imm, 4, 0) << 2) | 1);
    }
    case M::CMv: case M::CAdd:
      if (d.rd == 0 || d.rs2 == 0) unsupported(d, "registers must be nonzero");
      return half((4u << 13) | ((d.mnemonic == M::CAdd ? 1u : 0u) << 12) | (d.rd << 7) | (d.rs2 << 2) | 2);
    case M::CJr: case M::CJalr:
      if (d.rs1 == 0) unsupported(d, "rs1 must be nonzero");
      return half((4u << 13) | ((d.mnemonic == M::CJalr ? 1u : 0u) << 12) | (d.rs1 << 7) | 2);
    case M::CJ: {
      need_range(d, d.imm, -2048, 2046, 2);
      const int64_t o = d.imm;
      return half((5u << 13) | (b(o, 11, 11) << 12) | (b(o, 4, 4) << 11) | (b(o, 9, 8) << 9) |
                  (b(o, 10, 10) << 8) | (b(o, 6, 6) << 7) | (b(o, 7, 7) << 6) | (b(o, 3, 1) << 3) |
                  (b(o, 5, 5) << 2) | 1);
    }
    case M::CBeqz: case M::CBnez: {
      need_range(d, d.imm, -256, 254, 2);
      const unsigned r = need_compact(d, d.rs1);
      const int64_t o = d.imm;
      const unsigned f3 = d.mnemonic == M::CBeqz ? 6 : 7;
      return half((f3 << 13) | (b(o, 8, 8) << 12) | (b(o, 4, 3) << 10) | (r << 7) |
                  (b(o, 7, 6) << 5) | (b(o, 2, 1) << 3) | (b(o, 5, 5) << 2) | 1);
    }
    case M::CLw: case M::CSw: {
      need_range(d, d.imm, 0, 124, 4);
      const unsigned base = need_compact(d, d.rs1);
      const unsigned data = need_compact(d, d.mnemonic == M::CLw ? d.rd : d.rs2);
      const unsigned f3 = d.mnemonic == M::CLw ? 2 : 6;
      return half((f3 << 13) | (b(d.imm, 5, 3) << 10) | (base << 7) | (b(d.imm, 2, 2) << 6) |
                  (b(d.imm, 6, 6) << 5) | (data << 2));
    }
    case M::CLd: case M::CSd: {
      need_range(d, d.imm, 0, 248, 8);
      const unsigned base = need_compact(d, d.rs1);
      const unsigned data = need_compact(d, d.mnemonic == M::CLd ? d.rd : d.rs2);
      const unsigned f3 = d.mnemonic == M::CLd ? 3 : 7;
      return half((f3 << 13) | (b(d.imm, 5, 3) << 10) | (base << 7) | (b(d.imm, 7, 6) << 5) | (data << 2));
    }
    case M::CLwsp:
      if (d.rd == 0) unsupported(d, "rd must be nonzero");
      need_range(d, d.imm, 0, 252, 4);
      return half((2u << 13) | (b(d.imm, 5, 5) << 12) | (d.rd << 7) | (b(d.imm, 4, 2) << 4) |
                  (b(d.imm, 7, 6) << 2) | 2);
    case M::CLdsp:
      if (d.rd == 0) unsupported(d, "rd must be nonzero");
      need_range(d, d.imm, 0, 504, 8);
      return half((3u << 13) | (b(d.imm, 5, 5) << 12) | (d.rd << 7) | (b(d.imm, 4, 3) << 5) |
                  (b(d.imm, 8, 6) << 2) | 2);
    case M::CSwsp:
      need_range(d, d.imm, 0, 252, 4);
      return half((6u << 13) | (b(d.imm, 5, 2) << 9) | (b(d.imm, 7, 6) << 7) | (d.rs2 << 2) | 2);
    case M::CSdsp:
      need_range(d, d.imm, 0, 504, 8);
      return half((7u << 13) | (b(d.imm, 5, 3) << 10) | (b(d.imm, 8, 6) << 7) | (d.rs2 << 2) | 2);

    case M::Illegal:
    case M::OtherAlu:
    case M::COther: break;
  }
  unsupported(d, "not in the encodable subset");
}

namespace ops {

namespace {
Description desc(Mnemonic m, unsigned rd, unsigned rs1, unsigned rs2, int64_t imm, uint16_t csr = 0) {
  return Description{m, rd, rs1, rs2, imm, csr};
}
}  // namespace

Description csrrw(unsigned rd, uint16_t c, unsigned rs1) { return desc(Mnemonic::Csrrw, rd, rs1, 0, 0, c); }
Description csrrs(unsigned rd, uint16_t c, unsigned rs1) { return desc(Mnemonic::Csrrs, rd, rs1, 0, 0, c); }
Description csrrc(unsigned rd, uint16_t c, unsigned rs1) { return desc(Mnemonic::Csrrc, rd, rs1, 0, 0, c); }
Description csrrwi(unsigned rd, uint16_t c, unsigned z) { return desc(Mnemonic::Csrrwi, rd, 0, 0, z, c); }
Description csrrsi(unsigned rd, uint16_t c, unsigned z) { return desc(Mnemonic::Csrrsi, rd, 0, 0, z, c); }
Description csrrci(unsigned rd, uint16_t c, unsigned z) { return desc(Mnemonic::Csrrci, rd, 0, 0, z, c); }
Description load(Mnemonic m, unsigned rd, unsigned rs1, int64_t imm) { return desc(m, rd, rs1, 0, imm); }
Description store(Mnemonic m, unsigned rs2, unsigned rs1, int64_t imm) { return desc(m, 0, rs1, rs2, imm); }
Description jal(unsigned rd, int64_t offset) { return desc(Mnemonic::Jal, rd, 0, 0, offset); }
Description jalr(unsigned rd, unsigned rs1, int64_t imm) { return desc(Mnemonic::Jalr, rd, rs1, 0, imm); }
Description branch(Mnemonic m, unsigned rs1, unsigned rs2, int64_t offset) { return desc(m, 0, rs1, rs2, offset); }
Description alu_imm(Mnemonic m, unsigned rd, unsigned rs1, int64_t imm) { return desc(m, rd, rs1, 0, imm); }
Description alu(Mnemonic m, unsigned rd, unsigned rs1, unsigned rs2) { return desc(m, rd, rs1, rs2, 0); }
Description lui(unsigned rd, int64_t imm20) { return desc(Mnemonic::Lui, rd, 0, 0, imm20); }
Description ecall() { return desc(Mnemonic::Ecall, 0, 0, 0, 0); }
Description mret() { return desc(Mnemonic::Mret, 0, 0, 0, 0); }
Description wfi() { return desc(Mnemonic::Wfi, 0, 0, 0, 0); }
Description nop() { return desc(Mnemonic::Addi, 0, 0, 0, 0); }
Description c_j(int64_t offset) { return desc(Mnemonic::CJ, 0, 0, 0, offset); }

}  // namespace ops

}  // namespace mpart::isa
