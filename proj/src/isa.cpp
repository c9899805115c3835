#include "mpart/isa.hpp"

#include <array>
#include <fmt/format.h>

namespace mpart::isa {

namespace {

constexpr uint32_t bits(uint32_t v, unsigned hi, unsigned lo) {
  return (v >> lo) & ((1u << (hi - lo + 1)) - 1);
}

constexpr int64_t sext(uint64_t v, unsigned width) {
  const uint64_t m = uint64_t{1} << (width - 1);
  v &= (m << 1) - 1;
  return static_cast<int64_t>((v ^ m) - m);
}

constexpr std::array kAbiNames = {"zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2",
                                  "s0",   "s1", "a0", "a1", "a2", "a3", "a4", "a5",
                                  "a6",   "a7", "s2", "s3", "s4", "s5", "s6", "s7",
                                  "s8",   "s9", "s10", "s11", "t3", "t4", "t5", "t6"};

Kind kind_of(Mnemonic m) {
  using M = Mnemonic;
  switch (m) {
    case M::Illegal: return Kind::Illegal;
    case M::Csrrw: return Kind::CsrReadWrite;
    case M::Csrrwi: return Kind::CsrReadWriteImmediate;
    case M::Csrrs:
    case M::Csrrsi: return Kind::CsrSet;
    case M::Csrrc:
    case M::Csrrci: return Kind::CsrClear;
    case M::Lb: case M::Lh: case M::Lw: case M::Ld: case M::Lbu: case M::Lhu: case M::Lwu:
    case M::CLw: case M::CLd: case M::CLwsp: case M::CLdsp:
      return Kind::Load;
    case M::Sb: case M::Sh: case M::Sw: case M::Sd:
    case M::CSw: case M::CSd: case M::CSwsp: case M::CSdsp:
      return Kind::Store;
    case M::Jal: case M::CJ: return Kind::Jump;
    case M::Jalr: case M::CJr: case M::CJalr: return Kind::JumpRegister;
    case M::Beq: case M::Bne: case M::Blt: case M::Bge: case M::Bltu: case M::Bgeu:
    case M::CBeqz: case M::CBnez:
      return Kind::Branch;
    case M::Ecall: return Kind::Ecall;
    case M::Mret: return Kind::Mret;
    case M::Wfi: return Kind::Wfi;
    default: return Kind::ArithmeticOrOther;
  }
}

Instruction make(Mnemonic m, unsigned width, uint32_t raw) {
  Instruction i;
  i.mnemonic = m;
  i.kind = kind_of(m);
  i.width = width;
  i.raw = raw;
  return i;
}

Instruction illegal(unsigned width, uint32_t raw) { return make(Mnemonic::Illegal, width, raw); }

Instruction decode_compressed(uint16_t h) {
  using M = Mnemonic;
  if (h == 0) return illegal(2, h);
  const unsigned quadrant = h & 3;
  const unsigned funct3 = bits(h, 15, 13);
  const unsigned rd = bits(h, 11, 7);
  const unsigned rs2 = bits(h, 6, 2);
  const unsigned rdp = bits(h, 4, 2) + 8;
  const unsigned rs1p = bits(h, 9, 7) + 8;
  const int64_t ci_imm = sext((bits(h, 12, 12) << 5) | bits(h, 6, 2), 6);
  auto with = [&](M m, unsigned d, unsigned s1, unsigned s2, int64_t imm) {
    Instruction i = make(m, 2, h);
    i.rd = d;
    i.rs1 = s1;
    i.rs2 = s2;
    i.imm = imm;
    return i;
  };
  const uint32_t lw_imm = (bits(h, 12, 10) << 3) | (bits(h, 6, 6) << 2) | (bits(h, 5, 5) << 6);
  const uint32_t ld_imm = (bits(h, 12, 10) << 3) | (bits(h, 6, 5) << 6);

  switch (quadrant) {
    case 0:
      switch (funct3) {
        case 0: {
          const uint32_t nzuimm = (bits(h, 12, 11) << 4) | (bits(h, 10, 7) << 6) |
                                  (bits(h, 6, 6) << 2) | (bits(h, 5, 5) << 3);
          return nzuimm == 0 ? illegal(2, h) : make(M::COther, 2, h);
        }
        case 2: return with(M::CLw, rdp, rs1p, 0, lw_imm);
        case 3: return with(M::CLd, rdp, rs1p, 0, ld_imm);
        case 6: return with(M::CSw, 0, rs1p, rdp, lw_imm);
        case 7: return with(M::CSd, 0, rs1p, rdp, ld_imm);
        default: return illegal(2, h);
      }
    case 1:
      switch (funct3) {
        case 0:
          if (rd == 0) return ci_imm == 0 ? with(M::CNop, 0, 0, 0, 0) : make(M::COther, 2, h);
          return with(M::CAddi, rd, 0, 0, ci_imm);
        case 1: return rd == 0 ? illegal(2, h) : make(M::COther, 2, h);
        case 2: return rd == 0 ? make(M::COther, 2, h) : with(M::CLi, rd, 0, 0, ci_imm);
        case 3: return ci_imm == 0 ? illegal(2, h) : make(M::COther, 2, h);
        case 4: return make(M::COther, 2, h);
        case 5: {
          const uint32_t off = (bits(h, 12, 12) << 11) | (bits(h, 11, 11) << 4) |
                               (bits(h, 10, 9) << 8) | (bits(h, 8, 8) << 10) |
                               (bits(h, 7, 7) << 6) | (bits(h, 6, 6) << 7) |
                               (bits(h, 5, 3) << 1) | (bits(h, 2, 2) << 5);
          return with(M::CJ, 0, 0, 0, sext(off, 12));
        }
        default: {
          const uint32_t off = (bits(h, 12, 12) << 8) | (bits(h, 11, 10) << 3) |
                               (bits(h, 6, 5) << 6) | (bits(h, 4, 3) << 1) | (bits(h, 2, 2) << 5);
          return with(funct3 == 6 ? M::CBeqz : M::CBnez, 0, rs1p, 0, sext(off, 9));
        }
      }
    case 2:
      switch (funct3) {
        case 0: return make(M::COther, 2, h);
        case 2: {
          if (rd == 0) return illegal(2, h);
          const uint32_t off = (bits(h, 12, 12) << 5) | (bits(h, 6, 4) << 2) | (bits(h, 3, 2) << 6);
          return with(M::CLwsp, rd, 0, 0, off);
        }
        case 3: {
          if (rd == 0) return illegal(2, h);
          const uint32_t off = (bits(h, 12, 12) << 5) | (bits(h, 6, 5) << 3) | (bits(h, 4, 2) << 6);
          return with(M::CLdsp, rd, 0, 0, off);
        }
        case 4:
          if (bits(h, 12, 12) == 0) {
            if (rs2 == 0) return rd == 0 ? illegal(2, h) : with(M::CJr, 0, rd, 0, 0);
            return rd == 0 ? make(M::COther, 2, h) : with(M::CMv, rd, 0, rs2, 0);
          }
          if (rs2 == 0) return rd == 0 ? illegal(2, h) : with(M::CJalr, 0, rd, 0, 0);
          return rd == 0 ? make(M::COther, 2, h) : with(M::CAdd, rd, 0, rs2, 0);
        case 6: {
          const uint32_t off = (bits(h, 12, 9) << 2) | (bits(h, 8, 7) << 6);
          return with(M::CSwsp, 0, 0, rs2, off);
        }
        case 7: {
          const uint32_t off = (bits(h, 12, 10) << 3) | (bits(h, 9, 7) << 6);
          return with(M::CSdsp, 0, 0, rs2, off);
        }
        default: return illegal(2, h);
      }
    default: return illegal(2, h);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// CSR addresses

CsrClass CsrAddress::classification() const {
  if (value >= 0x3A0 && value <= 0x3AF) return CsrClass::PmpCfg;
  if (value >= 0x3B0 && value <= 0x3EF) return CsrClass::PmpAddr;
  if (value == csr::mseccfg || value == csr::mseccfgh) return CsrClass::MachineSecurityConfig;
  if (value == csr::mtvec) return CsrClass::TrapVector;
  return CsrClass::Other;
}

unsigned CsrAddress::index() const {
  switch (classification()) {
    case CsrClass::PmpCfg: return value - 0x3A0;
    case CsrClass::PmpAddr: return value - 0x3B0;
    default: return 0;
  }
}

bool CsrAddress::valid_on_rv64() const {
  return classification() != CsrClass::PmpCfg || index() % 2 == 0;
}

std::string CsrAddress::name() const {
  switch (classification()) {
    case CsrClass::PmpCfg: return fmt::format("pmpcfg{}", index());
    case CsrClass::PmpAddr: return fmt::format("pmpaddr{}", index());
    case CsrClass::MachineSecurityConfig: return value == csr::mseccfg ? "mseccfg" : "mseccfgh";
    case CsrClass::TrapVector: return "mtvec";
    case CsrClass::Other: break;
  }
  switch (value) {
    case csr::mstatus: return "mstatus";
    case csr::misa: return "misa";
    case csr::mie: return "mie";
    case csr::mscratch: return "mscratch";
    case csr::mepc: return "mepc";
    case csr::mcause: return "mcause";
    case csr::mtval: return "mtval";
    case csr::mip: return "mip";
    case csr::mhartid: return "mhartid";
    default: return fmt::format("csr{:#05x}", value);
  }
}

// ---------------------------------------------------------------------------
// Decode

Instruction decode(std::span<const uint8_t> bytes, std::size_t offset) {
  if (offset + 2 > bytes.size()) throw std::out_of_range("decode: offset past end of buffer");
  const uint16_t lo = static_cast<uint16_t>(bytes[offset] | (bytes[offset + 1] << 8));
  if ((lo & 3) != 3) return decode_compressed(lo);
  if (offset + 4 > bytes.size()) return illegal(4, lo);
  const uint32_t hi = static_cast<uint32_t>(bytes[offset + 2] | (bytes[offset + 3] << 8));
  return decode_word(lo | (hi << 16));
}

Instruction decode_word(uint32_t w) {
  using M = Mnemonic;
  if ((w & 3) != 3) return decode_compressed(static_cast<uint16_t>(w));
  // 48-bit and longer encodings are outside the ISA subset.
  if ((w & 0x1f) == 0x1f) return illegal(4, w);

  const unsigned opcode = bits(w, 6, 0);
  const unsigned rd = bits(w, 11, 7);
  const unsigned funct3 = bits(w, 14, 12);
  const unsigned rs1 = bits(w, 19, 15);
  const unsigned rs2 = bits(w, 24, 20);
  const unsigned funct7 = bits(w, 31, 25);
  const int64_t i_imm = sext(bits(w, 31, 20), 12);
  const int64_t s_imm = sext((bits(w, 31, 25) << 5) | bits(w, 11, 7), 12);
  const int64_t b_imm = sext((bits(w, 31, 31) << 12) | (bits(w, 7, 7) << 11) |
                                 (bits(w, 30, 25) << 5) | (bits(w, 11, 8) << 1),
                             13);
  const int64_t j_imm = sext((bits(w, 31, 31) << 20) | (bits(w, 19, 12) << 12) |
                                 (bits(w, 20, 20) << 11) | (bits(w, 30, 21) << 1),
                             21);
  const int64_t u_imm = sext(bits(w, 31, 12), 20);

  auto with = [&](M m, unsigned d, unsigned s1, unsigned s2, int64_t imm) {
    Instruction i = make(m, 4, w);
    i.rd = d;
    i.rs1 = s1;
    i.rs2 = s2;
    i.imm = imm;
    return i;
  };

  switch (opcode) {
    case 0x03: {
      static constexpr std::array<M, 8> loads = {M::Lb, M::Lh, M::Lw, M::Ld,
                                                 M::Lbu, M::Lhu, M::Lwu, M::Illegal};
      if (loads[funct3] == M::Illegal) return illegal(4, w);
      return with(loads[funct3], rd, rs1, 0, i_imm);
    }
    case 0x23: {
      static constexpr std::array<M, 4> stores = {M::Sb, M::Sh, M::Sw, M::Sd};
      if (funct3 > 3) return illegal(4, w);
      return with(stores[funct3], 0, rs1, rs2, s_imm);
    }
    case 0x6f: return with(M::Jal, rd, 0, 0, j_imm);
    case 0x67: return funct3 == 0 ? with(M::Jalr, rd, rs1, 0, i_imm) : illegal(4, w);
    case 0x63: {
      static constexpr std::array<M, 8> br = {M::Beq, M::Bne, M::Illegal, M::Illegal,
                                              M::Blt, M::Bge, M::Bltu, M::Bgeu};
      if (br[funct3] == M::Illegal) return illegal(4, w);
      return with(br[funct3], 0, rs1, rs2, b_imm);
    }
    case 0x73: {
      if (funct3 == 0) {
        if (w == 0x00000073) return make(M::Ecall, 4, w);
        if (w == 0x30200073) return make(M::Mret, 4, w);
        if (w == 0x10500073) return make(M::Wfi, 4, w);
        return illegal(4, w);
      }
      static constexpr std::array<M, 8> csrs = {M::Illegal, M::Csrrw,  M::Csrrs,  M::Csrrc,
                                                M::Illegal, M::Csrrwi, M::Csrrsi, M::Csrrci};
      if (csrs[funct3] == M::Illegal) return illegal(4, w);
      const bool immediate = funct3 >= 5;
      Instruction i = immediate ? with(csrs[funct3], rd, 0, 0, rs1) : with(csrs[funct3], rd, rs1, 0, 0);
      i.csr_target = CsrAddress{static_cast<uint16_t>(bits(w, 31, 20))};
      i.source_is_immediate = immediate;
      return i;
    }
    case 0x13: {
      switch (funct3) {
        case 0: return with(M::Addi, rd, rs1, 0, i_imm);
        case 2: return with(M::Slti, rd, rs1, 0, i_imm);
        case 3: return with(M::Sltiu, rd, rs1, 0, i_imm);
        case 4: return with(M::Xori, rd, rs1, 0, i_imm);
        case 6: return with(M::Ori, rd, rs1, 0, i_imm);
        case 7: return with(M::Andi, rd, rs1, 0, i_imm);
        case 1:
          return bits(w, 31, 26) == 0 ? with(M::Slli, rd, rs1, 0, bits(w, 25, 20)) : illegal(4, w);
        default:
          if (bits(w, 31, 26) == 0) return with(M::Srli, rd, rs1, 0, bits(w, 25, 20));
          if (bits(w, 31, 26) == 0x10) return with(M::Srai, rd, rs1, 0, bits(w, 25, 20));
          return illegal(4, w);
      }
    }
    case 0x33: {
      if (funct7 == 0x01) return make(M::OtherAlu, 4, w);
      if (funct7 == 0) {
        static constexpr std::array<M, 8> ops = {M::Add, M::Sll, M::Slt, M::Sltu,
                                                 M::Xor, M::Srl, M::Or,  M::And};
        return with(ops[funct3], rd, rs1, rs2, 0);
      }
      if (funct7 == 0x20 && funct3 == 0) return with(M::Sub, rd, rs1, rs2, 0);
      if (funct7 == 0x20 && funct3 == 5) return with(M::Sra, rd, rs1, rs2, 0);
      return illegal(4, w);
    }
    case 0x37: return with(M::Lui, rd, 0, 0, u_imm);
    case 0x17: return with(M::Auipc, rd, 0, 0, u_imm);
    case 0x1b:
      if (funct3 == 0) return with(M::Addiw, rd, rs1, 0, i_imm);
      return make(M::OtherAlu, 4, w);
    case 0x3b:
    case 0x0f:
      return make(M::OtherAlu, 4, w);
    default: return illegal(4, w);
  }
}

// ---------------------------------------------------------------------------
// Description / classification

Description Instruction::describe() const {
  Description d;
  d.mnemonic = mnemonic;
  d.rd = rd;
  d.rs1 = rs1;
  d.rs2 = rs2;
  d.imm = imm;
  d.csr = csr_target ? csr_target->value : 0;
  return d;
}

bool Instruction::writes_csr() const {
  switch (mnemonic) {
    case Mnemonic::Csrrw:
    case Mnemonic::Csrrwi: return true;
    case Mnemonic::Csrrs:
    case Mnemonic::Csrrc: return rs1 != 0;
    case Mnemonic::Csrrsi:
    case Mnemonic::Csrrci: return imm != 0;
    default: return false;
  }
}

Sensitivity is_isolation_sensitive(const Instruction& instr) {
  if (!instr.csr_target || !instr.writes_csr()) return Sensitivity::None;
  switch (instr.csr_target->classification()) {
    case CsrClass::PmpCfg:
    case CsrClass::PmpAddr:
    case CsrClass::MachineSecurityConfig: return Sensitivity::PmpWrite;
    case CsrClass::TrapVector: return Sensitivity::TrapVectorWrite;
    case CsrClass::Other: break;
  }
  return Sensitivity::None;
}

std::string to_string(Kind k) {
  switch (k) {
    case Kind::CsrReadWrite: return "CsrReadWrite";
    case Kind::CsrReadWriteImmediate: return "CsrReadWriteImmediate";
    case Kind::CsrSet: return "CsrSet";
    case Kind::CsrClear: return "CsrClear";
    case Kind::Load: return "Load";
    case Kind::Store: return "Store";
    case Kind::Jump: return "Jump";
    case Kind::JumpRegister: return "JumpRegister";
    case Kind::Branch: return "Branch";
    case Kind::Ecall: return "Ecall";
    case Kind::Mret: return "Mret";
    case Kind::Wfi: return "Wfi";
    case Kind::ArithmeticOrOther: return "ArithmeticOrOther";
    case Kind::Illegal: return "Illegal";
  }
  return "?";
}

std::string to_string(Sensitivity s) {
  switch (s) {
    case Sensitivity::None: return "None";
    case Sensitivity::PmpWrite: return "PmpWrite";
    case Sensitivity::TrapVectorWrite: return "TrapVectorWrite";
  }
  return "?";
}

std::string mnemonic_name(Mnemonic m) {
  using M = Mnemonic;
  switch (m) {
    case M::Illegal: return "illegal";
    case M::Csrrw: return "csrrw";
    case M::Csrrs: return "csrrs";
    case M::Csrrc: return "csrrc";
    case M::Csrrwi: return "csrrwi";
    case M::Csrrsi: return "csrrsi";
    case M::Csrrci: return "csrrci";
    case M::Lb: return "lb";
    case M::Lh: return "lh";
    case M::Lw: return "lw";
    case M::Ld: return "ld";
    case M::Lbu: return "lbu";
    case M::Lhu: return "lhu";
    case M::Lwu: return "lwu";
    case M::Sb: return "sb";
    case M::Sh: return "sh";
    case M::Sw: return "sw";
    case M::Sd: return "sd";
    case M::Jal: return "jal";
    case M::Jalr: return "jalr";
    case M::Beq: return "beq";
    case M::Bne: return "bne";
    case M::Blt: return "blt";
    case M::Bge: return "bge";
    case M::Bltu: return "bltu";
    case M::Bgeu: return "bgeu";
    case M::Ecall: return "ecall";
    case M::Mret: return "mret";
    case M::Wfi: return "wfi";
    case M::Addi: return "addi";
    case M::Slti: return "slti";
    case M::Sltiu: return "sltiu";
    case M::Xori: return "xori";
    case M::Ori: return "ori";
    case M::Andi: return "andi";
    case M::Slli: return "slli";
    case M::Srli: return "srli";
    case M::Srai: return "srai";
    case M::Add: return "add";
    case M::Sub: return "sub";
    case M::Sll: return "sll";
    case M::Slt: return "slt";
    case M::Sltu: return "sltu";
    case M::Xor: return "xor";
    case M::Srl: return "srl";
    case M::Sra: return "sra";
    case M::Or: return "or";
    case M::And: return "and";
    case M::Lui: return "lui";
    case M::Auipc: return "auipc";
    case M::Addiw: return "addiw";
    case M::OtherAlu: return "alu.other";
    case M::CNop: return "c.nop";
    case M::CAddi: return "c.addi";
    case M::CLi: return "c.li";
    case M::CMv: return "c.mv";
    case M::CAdd: return "c.add";
    case M::CJ: return "c.j";
    case M::CJr: return "c.jr";
    case M::CJalr: return "c.jalr";
    case M::CBeqz: return "c.beqz";
    case M::CBnez: return "c.bnez";
    case M::CLw: return "c.lw";
    case M::CLd: return "c.ld";
    case M::CSw: return "c.sw";
    case M::CSd: return "c.sd";
    case M::CLwsp: return "c.lwsp";
    case M::CLdsp: return "c.ldsp";
    case M::CSwsp: return "c.swsp";
    case M::CSdsp: return "c.sdsp";
    case M::COther: return "c.other";
  }
  return "?";
}

std::string Instruction::to_string() const {
  const std::string name = mnemonic_name(mnemonic);
  auto r = [](unsigned n) { return std::string(kAbiNames[n & 31]); };
  switch (kind) {
    case Kind::CsrReadWrite:
    case Kind::CsrSet:
    case Kind::CsrClear:
    case Kind::CsrReadWriteImmediate:
      if (source_is_immediate)
        return fmt::format("{} {}, {}, {}", name, r(rd), csr_target->name(), imm);
      return fmt::format("{} {}, {}, {}", name, r(rd), csr_target->name(), r(rs1));
    case Kind::Load:
      return fmt::format("{} {}, {}({})", name, r(rd), imm, r(mnemonic == Mnemonic::CLwsp ||
                                                                   mnemonic == Mnemonic::CLdsp
                                                               ? reg::sp
                                                               : rs1));
    case Kind::Store:
      return fmt::format("{} {}, {}({})", name, r(rs2), imm, r(mnemonic == Mnemonic::CSwsp ||
                                                                    mnemonic == Mnemonic::CSdsp
                                                                ? reg::sp
                                                                : rs1));
    case Kind::Jump:
      return mnemonic == Mnemonic::CJ ? fmt::format("{} {}", name, imm)
                                      : fmt::format("{} {}, {}", name, r(rd), imm);
    case Kind::JumpRegister:
      if (mnemonic == Mnemonic::Jalr) return fmt::format("{} {}, {}({})", name, r(rd), imm, r(rs1));
      return fmt::format("{} {}", name, r(rs1));
    case Kind::Branch:
      if (mnemonic == Mnemonic::CBeqz || mnemonic == Mnemonic::CBnez)
        return fmt::format("{} {}, {}", name, r(rs1), imm);
      return fmt::format("{} {}, {}, {}", name, r(rs1), r(rs2), imm);
    case Kind::Ecall:
    case Kind::Mret:
    case Kind::Wfi: return name;
    case Kind::Illegal: return fmt::format("illegal {:#x}", raw);
    case Kind::ArithmeticOrOther: break;
  }
  switch (mnemonic) {
    case Mnemonic::Add: case Mnemonic::Sub: case Mnemonic::Sll: case Mnemonic::Slt:
    case Mnemonic::Sltu: case Mnemonic::Xor: case Mnemonic::Srl: case Mnemonic::Sra:
    case Mnemonic::Or: case Mnemonic::And:
      return fmt::format("{} {}, {}, {}", name, r(rd), r(rs1), r(rs2));
    case Mnemonic::CAdd: return fmt::format("{} {}, {}", name, r(rd), r(rs2));
    case Mnemonic::CMv: return fmt::format("{} {}, {}", name, r(rd), r(rs2));
    case Mnemonic::Lui:
    case Mnemonic::Auipc:
    case Mnemonic::CLi:
    case Mnemonic::CAddi: return fmt::format("{} {}, {}", name, r(rd), imm);
    case Mnemonic::CNop: return name;
    case Mnemonic::OtherAlu:
    case Mnemonic::COther: return fmt::format("{} {:#x}", name, raw);
    default: return fmt::format("{} {}, {}, {}", name, r(rd), r(rs1), imm);
  }
}

}  // namespace mpart::isa
