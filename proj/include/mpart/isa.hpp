#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpart::isa {

// Register numbers used by generated code.
namespace reg {
inline constexpr unsigned zero = 0, ra = 1, sp = 2, gp = 3, tp = 4;
inline constexpr unsigned t0 = 5, t1 = 6, t2 = 7, s0 = 8, s1 = 9;
inline constexpr unsigned a0 = 10, a1 = 11, a2 = 12, a3 = 13, a4 = 14, a5 = 15, a6 = 16, a7 = 17;
inline constexpr unsigned s2 = 18, s3 = 19, s4 = 20, s5 = 21, s6 = 22, s7 = 23, s8 = 24, s9 = 25, s10 = 26, s11 = 27;
inline constexpr unsigned t3 = 28, t4 = 29, t5 = 30, t6 = 31;
}  // namespace reg

namespace csr {
inline constexpr uint16_t mstatus = 0x300;
inline constexpr uint16_t misa = 0x301;
inline constexpr uint16_t mie = 0x304;
inline constexpr uint16_t mtvec = 0x305;
inline constexpr uint16_t mscratch = 0x340;
inline constexpr uint16_t mepc = 0x341;
inline constexpr uint16_t mcause = 0x342;
inline constexpr uint16_t mtval = 0x343;
inline constexpr uint16_t mip = 0x344;
inline constexpr uint16_t pmpcfg0 = 0x3A0;
inline constexpr uint16_t pmpcfg2 = 0x3A2;
inline constexpr uint16_t pmpaddr0 = 0x3B0;
inline constexpr uint16_t mseccfg = 0x747;
inline constexpr uint16_t mseccfgh = 0x757;
inline constexpr uint16_t mhartid = 0xF14;
}  // namespace csr

enum class CsrClass { PmpCfg, PmpAddr, MachineSecurityConfig, TrapVector, Other };

struct CsrAddress {
  uint16_t value = 0;

  CsrClass classification() const;
  // Register index for PmpCfg (0..15) and PmpAddr (0..63); 0 otherwise.
  unsigned index() const;
  // pmpcfg1, pmpcfg3, ... do not exist on RV64.
  bool valid_on_rv64() const;
  std::string name() const;

  friend bool operator==(const CsrAddress&, const CsrAddress&) = default;
};

enum class Kind {
  CsrReadWrite,
  CsrReadWriteImmediate,
  CsrSet,
  CsrClear,
  Load,
  Store,
  Jump,
  JumpRegister,
  Branch,
  Ecall,
  Mret,
  Wfi,
  ArithmeticOrOther,
  Illegal,
};

// Every concrete form the decoder distinguishes. Compressed forms carry a C prefix.
enum class Mnemonic {
  Illegal,
  Csrrw, Csrrs, Csrrc, Csrrwi, Csrrsi, Csrrci,
  Lb, Lh, Lw, Ld, Lbu, Lhu, Lwu,
  Sb, Sh, Sw, Sd,
  Jal, Jalr,
  Beq, Bne, Blt, Bge, Bltu, Bgeu,
  Ecall, Mret, Wfi,
  Addi, Slti, Sltiu, Xori, Ori, Andi, Slli, Srli, Srai,
  Add, Sub, Sll, Slt, Sltu, Xor, Srl, Sra, Or, And,
  Lui, Auipc, Addiw,
  // 32-bit encodings in an integer opcode space that the simulator treats as opaque.
  OtherAlu,
  CNop, CAddi, CLi, CMv, CAdd, CJ, CJr, CJalr, CBeqz, CBnez,
  CLw, CLd, CSw, CSd, CLwsp, CLdsp, CSwsp, CSdsp,
  // Valid compressed encodings outside the executed subset.
  COther,
};

// Operand-level description of an instruction; the input of encode() and
// the output of Instruction::describe().
struct Description {
  Mnemonic mnemonic = Mnemonic::Illegal;
  unsigned rd = 0;
  unsigned rs1 = 0;
  unsigned rs2 = 0;
  int64_t imm = 0;  // sign-extended immediate, or zimm for Csr*i forms
  uint16_t csr = 0;

  friend bool operator==(const Description&, const Description&) = default;
};

struct Instruction {
  Kind kind = Kind::Illegal;
  Mnemonic mnemonic = Mnemonic::Illegal;
  unsigned width = 4;  // bytes, 2 or 4
  std::optional<CsrAddress> csr_target;
  bool source_is_immediate = false;
  uint32_t raw = 0;
  unsigned rd = 0;
  unsigned rs1 = 0;
  unsigned rs2 = 0;
  int64_t imm = 0;

  Description describe() const;
  // Whether executing this instruction architecturally writes its CSR.
  bool writes_csr() const;
  std::string to_string() const;
};

enum class Sensitivity { None, PmpWrite, TrapVectorWrite };

std::string to_string(Kind);
std::string to_string(Sensitivity);
std::string mnemonic_name(Mnemonic);

class UnsupportedInstruction : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

Instruction decode(std::span<const uint8_t> bytes, std::size_t offset);
Instruction decode_word(uint32_t word);

std::vector<uint8_t> encode(const Description& d);

Sensitivity is_isolation_sensitive(const Instruction& instr);

// Convenience constructors for descriptions.
namespace ops {
Description csrrw(unsigned rd, uint16_t csr, unsigned rs1);
Description csrrs(unsigned rd, uint16_t csr, unsigned rs1);
Description csrrc(unsigned rd, uint16_t csr, unsigned rs1);
Description csrrwi(unsigned rd, uint16_t csr, unsigned zimm);
Description csrrsi(unsigned rd, uint16_t csr, unsigned zimm);
Description csrrci(unsigned rd, uint16_t csr, unsigned zimm);
inline Description csrw(uint16_t csr, unsigned rs1) { return csrrw(0, csr, rs1); }
inline Description csrr(unsigned rd, uint16_t csr) { return csrrs(rd, csr, 0); }
inline Description csrwi(uint16_t csr, unsigned zimm) { return csrrwi(0, csr, zimm); }
Description load(Mnemonic m, unsigned rd, unsigned rs1, int64_t imm);
Description store(Mnemonic m, unsigned rs2, unsigned rs1, int64_t imm);
Description jal(unsigned rd, int64_t offset);
Description jalr(unsigned rd, unsigned rs1, int64_t imm);
Description branch(Mnemonic m, unsigned rs1, unsigned rs2, int64_t offset);
Description alu_imm(Mnemonic m, unsigned rd, unsigned rs1, int64_t imm);
Description alu(Mnemonic m, unsigned rd, unsigned rs1, unsigned rs2);
Description lui(unsigned rd, int64_t imm20);
Description ecall();
Description mret();
Description wfi();
Description nop();
Description c_j(int64_t offset);
}  // namespace ops

}  // namespace mpart::isa
